#include <doctest.h>

#include "msdnn/gradcheck.hpp"
#include "msdnn/nnops.hpp"
#include "msdnn/rng.hpp"
#include "test_util.hpp"

using namespace msdnn;
using namespace msdnn::test;

TEST_SUITE_BEGIN("nnops");

TEST_CASE("conv2d: all-ones 2x2 kernel sums four ones") {
    Tensor x({1, 1, 3, 3}, 1.0);
    ConvParams p{Tensor({1, 1, 2, 2}, 1.0), Tensor({1}, 0.0), 1, 0};
    Tensor y = conv2d(x, p);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == 4);
}

TEST_CASE("conv2d: 1x1 identity kernel") {
    Rng rng(21);
    Tensor x = random_tensor({2, 1, 4, 4}, rng);
    ConvParams p{Tensor({1, 1, 1, 1}, 1.0), Tensor({1}, 0.0), 1, 0};
    CHECK(bitwise_equal(conv2d(x, p), x));
}

TEST_CASE("conv2d matches the six-loop reference") {
    Rng rng(22);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    ConvParams p{random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng), 1, 1};
    CHECK(max_abs_diff(conv2d(x, p), conv2d_reference(x, p)) < 1e-12);

    SUBCASE("stride 2, no padding") {
        ConvParams q{random_tensor({2, 2, 3, 3}, rng), random_tensor({2}, rng), 2, 0};
        Tensor x2 = random_tensor({2, 2, 7, 7}, rng);
        CHECK(max_abs_diff(conv2d(x2, q), conv2d_reference(x2, q)) < 1e-12);
    }
}

TEST_CASE("conv2d shape errors") {
    Tensor x({1, 2, 5, 5}, 0.0);
    // 5 - 2 = 3 not divisible by stride 2
    ConvParams bad_stride{Tensor({1, 2, 2, 2}, 0.0), Tensor({1}, 0.0), 2, 0};
    CHECK_THROWS_AS(conv2d(x, bad_stride), ShapeError);
    ConvParams bad_channels{Tensor({1, 3, 3, 3}, 0.0), Tensor({1}, 0.0), 1, 1};
    CHECK_THROWS_AS(conv2d(x, bad_channels), ShapeError);
    ConvParams too_big{Tensor({1, 2, 7, 7}, 0.0), Tensor({1}, 0.0), 1, 0};
    CHECK_THROWS_AS(conv2d(x, too_big), ShapeError);
}

TEST_CASE("conv2d_backward: zero grad_out gives zero gradients") {
    Rng rng(23);
    Tensor x = random_tensor({1, 2, 4, 4}, rng);
    ConvParams p{random_tensor({2, 2, 3, 3}, rng), random_tensor({2}, rng), 1, 1};
    ConvGrads g = conv2d_backward(x, p, Tensor({1, 2, 4, 4}, 0.0));
    CHECK(reduce_sum(map_unary(g.grad_input, [](real v) { return std::abs(v); })) == 0);
    CHECK(reduce_sum(map_unary(g.grad_weights, [](real v) { return std::abs(v); })) == 0);
    CHECK(reduce_sum(map_unary(g.grad_bias, [](real v) { return std::abs(v); })) == 0);
}

TEST_CASE("conv2d_backward: scalar case grad_weight = input * grad_out") {
    Tensor x({1, 1, 1, 1}, 3.0);
    ConvParams p{Tensor({1, 1, 1, 1}, 2.0), Tensor({1}, 0.0), 1, 0};
    ConvGrads g = conv2d_backward(x, p, Tensor({1, 1, 1, 1}, 5.0));
    CHECK(g.grad_weights[0] == 15);
    CHECK(g.grad_input[0] == 10);
    CHECK(g.grad_bias[0] == 5);
}

TEST_CASE("conv2d_backward: grad_bias sums grad_out per channel") {
    Rng rng(24);
    Tensor x = random_tensor({2, 1, 4, 4}, rng);
    ConvParams p{random_tensor({3, 1, 3, 3}, rng), random_tensor({3}, rng), 1, 1};
    Tensor go = random_tensor({2, 3, 4, 4}, rng);
    ConvGrads g = conv2d_backward(x, p, go);
    for (int c = 0; c < 3; ++c) {
        double want = 0;
        for (int n = 0; n < 2; ++n)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 4; ++w) want += static_cast<double>(go(n, c, h, w));
        CHECK(std::abs(static_cast<double>(g.grad_bias[c]) - want) < 1e-12);
    }
}

TEST_CASE("transposed_conv2d: single pixel scatters the kernel") {
    Tensor x({1, 1, 1, 1}, 2.5);
    DeconvParams p{Tensor({1, 1, 2, 2}, 1.0), Tensor({1}, 0.0), 2};
    Tensor y = transposed_conv2d(x, p);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (std::int64_t i = 0; i < 4; ++i) CHECK(y[i] == real(2.5));
}

TEST_CASE("transposed_conv2d: kernel 16 stride 16 maps 14x14 to 224x224") {
    Tensor x({1, 2, 14, 14}, 0.0);
    DeconvParams p{Tensor({2, 1, 16, 16}, 0.0), Tensor({1}, 0.0), 16};
    Tensor y = transposed_conv2d(x, p);
    CHECK(y.shape() == Shape{1, 1, 224, 224});
}

TEST_CASE("transposed_conv2d matches the scatter reference") {
    Rng rng(25);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    DeconvParams p{random_tensor({3, 2, 3, 3}, rng), random_tensor({2}, rng), 2};
    CHECK(max_abs_diff(transposed_conv2d(x, p), transposed_conv2d_reference(x, p)) < 1e-12);
}

TEST_CASE("transposed_conv2d forward is bitwise conv2d's input gradient") {
    Rng rng(26);
    // deconv weights [Cin,Cout,kh,kw] reread as conv weights [Cout',Cin',kh,kw]
    Tensor w = random_tensor({3, 2, 4, 4}, rng);
    Tensor b0({2}, 0.0);
    Tensor src = random_tensor({1, 3, 5, 5}, rng);
    Tensor via_deconv = transposed_conv2d(src, DeconvParams{w, b0, 2});

    const int Hout = (5 - 1) * 2 + 4;
    Tensor dummy_input({1, 2, Hout, Hout}, 0.0);
    ConvGrads g = conv2d_backward(dummy_input, ConvParams{w, Tensor({3}, 0.0), 2, 0}, src);
    CHECK(bitwise_equal(via_deconv, g.grad_input));
}

TEST_CASE("adjoint identities <Lx,y> == <x,L'y>") {
    Rng rng(27);
    SUBCASE("conv2d") {
        Tensor x = random_tensor({1, 2, 6, 6}, rng);
        ConvParams p{random_tensor({3, 2, 3, 3}, rng), Tensor({3}, 0.0), 1, 1};
        Tensor y = random_tensor({1, 3, 6, 6}, rng);
        const double lhs = dot(conv2d(x, p), y);
        const double rhs = dot(x, conv2d_backward(x, p, y).grad_input);
        CHECK(std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1.0}) < 1e-10);
    }
    SUBCASE("transposed_conv2d") {
        Tensor x = random_tensor({1, 2, 4, 4}, rng);
        DeconvParams p{random_tensor({2, 3, 2, 2}, rng), Tensor({3}, 0.0), 2};
        Tensor y = random_tensor({1, 3, 8, 8}, rng);
        const double lhs = dot(transposed_conv2d(x, p), y);
        const double rhs = dot(x, transposed_conv2d_backward(x, p, y).grad_input);
        CHECK(std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1.0}) < 1e-10);
    }
    SUBCASE("fully_connected") {
        Tensor x = random_tensor({3, 5}, rng);
        Tensor w = random_tensor({4, 5}, rng);
        Tensor y = random_tensor({3, 4}, rng);
        const double lhs = dot(fully_connected(x, w, Tensor({4}, 0.0)), y);
        const double rhs = dot(x, fully_connected_backward(x, w, y).grad_input);
        CHECK(std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1.0}) < 1e-10);
    }
    SUBCASE("concat/split") {
        Tensor a = random_tensor({1, 2, 3, 3}, rng);
        Tensor b = random_tensor({1, 3, 3, 3}, rng);
        Tensor y = random_tensor({1, 5, 3, 3}, rng);
        const double lhs = dot(concat_channels(a, b), y);
        auto parts = split_channels(y, {2, 3});
        const double rhs = dot(a, parts[0]) + dot(b, parts[1]);
        CHECK(std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1.0}) < 1e-10);
    }
}

TEST_CASE("max_pool2 basics") {
    Tensor x({1, 1, 2, 2}, std::vector<real>{1, 2, 3, 4});
    MaxPoolResult r = max_pool2(x);
    CHECK(r.output.size() == 1);
    CHECK(r.output[0] == 4);
    CHECK(r.argmax[0] == 3); // bottom-right

    SUBCASE("ties route to the first window index") {
        Tensor c({1, 1, 4, 4}, 7.0);
        MaxPoolResult rc = max_pool2(c);
        for (std::int64_t i = 0; i < rc.output.size(); ++i) CHECK(rc.output[i] == 7);
        CHECK(rc.argmax[0] == 0); // top-left of the first window
        Tensor go({1, 1, 2, 2}, 1.0);
        Tensor gi = max_pool2_backward(rc, c.shape(), go);
        CHECK(gi[0] == 1);
        CHECK(gi[1] == 0);
        CHECK(gi[4] == 0);
    }

    SUBCASE("odd sizes rejected") {
        CHECK_THROWS_AS(max_pool2(Tensor({1, 1, 3, 4}, 0.0)), ShapeError);
        CHECK_THROWS_AS(max_pool2(Tensor({1, 1, 4, 5}, 0.0)), ShapeError);
    }
}

TEST_CASE("max_pool2 matches a brute-force window max") {
    Rng rng(28);
    Tensor x = random_tensor({1, 1, 6, 6}, rng);
    MaxPoolResult r = max_pool2(x);
    for (int oh = 0; oh < 3; ++oh)
        for (int ow = 0; ow < 3; ++ow) {
            real want = x(0, 0, 2 * oh, 2 * ow);
            want = std::max(want, x(0, 0, 2 * oh, 2 * ow + 1));
            want = std::max(want, x(0, 0, 2 * oh + 1, 2 * ow));
            want = std::max(want, x(0, 0, 2 * oh + 1, 2 * ow + 1));
            CHECK(r.output(0, 0, oh, ow) == want);
        }
}

TEST_CASE("max_pool2 backward conserves gradient mass") {
    Rng rng(29);
    Tensor x = random_tensor({2, 3, 8, 8}, rng);
    MaxPoolResult r = max_pool2(x);
    Tensor go = random_tensor(r.output.shape(), rng);
    Tensor gi = max_pool2_backward(r, x.shape(), go);
    CHECK(std::abs(static_cast<double>(reduce_sum(gi)) - static_cast<double>(reduce_sum(go))) < 1e-12);
}

TEST_CASE("fully_connected basics") {
    SUBCASE("identity weights") {
        Rng rng(30);
        Tensor x = random_tensor({2, 3}, rng);
        Tensor w({3, 3}, 0.0);
        for (int i = 0; i < 3; ++i) w(i, i) = 1;
        CHECK(bitwise_equal(fully_connected(x, w, Tensor({3}, 0.0)), x));
    }
    SUBCASE("hand arithmetic") {
        Tensor x({1, 2}, std::vector<real>{1, 2});
        Tensor w({1, 2}, std::vector<real>{3, 4});
        Tensor b({1}, std::vector<real>{1});
        Tensor y = fully_connected(x, w, b);
        CHECK(y[0] == 12);
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(fully_connected(Tensor({1, 3}, 0.0), Tensor({2, 4}, 0.0), Tensor({2}, 0.0)), ShapeError);
    }
}

TEST_CASE("activations") {
    Tensor x({3}, std::vector<real>{-1, 0, 2});
    Tensor r = relu(x);
    CHECK(r[0] == 0);
    CHECK(r[1] == 0);
    CHECK(r[2] == 2);

    CHECK(sigmoid(Tensor({1}, 0.0))[0] == real(0.5));

    SUBCASE("relu subgradient at zero is zero") {
        Tensor go({3}, 1.0);
        Tensor gi = relu_backward(x, go);
        CHECK(gi[0] == 0);
        CHECK(gi[1] == 0);
        CHECK(gi[2] == 1);
    }
    SUBCASE("sigmoid saturates without overflow") {
        Tensor big({2}, std::vector<real>{500, -500});
        Tensor s = sigmoid(big);
        CHECK(s[0] == doctest::Approx(1.0));
        CHECK(s[1] == doctest::Approx(0.0));
        CHECK(all_finite(s));
    }
}

TEST_CASE("concat places channels in order; split inverts") {
    Tensor a({1, 1, 2, 2}, 0.0);
    Tensor b({1, 1, 2, 2}, 1.0);
    Tensor c = concat_channels(a, b);
    CHECK(c.shape() == Shape{1, 2, 2, 2});
    CHECK(c(0, 0, 0, 0) == 0);
    CHECK(c(0, 1, 0, 0) == 1);

    Rng rng(31);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor y = random_tensor({2, 2, 4, 4}, rng);
    auto parts = split_channels(concat_channels(x, y), {3, 2});
    CHECK(bitwise_equal(parts[0], x));
    CHECK(bitwise_equal(parts[1], y));

    SUBCASE("four single-channel maps make four channels") {
        std::vector<Tensor> maps(4, Tensor({2, 1, 8, 8}, 0.5));
        CHECK(concat_channels(maps).shape() == Shape{2, 4, 8, 8});
    }
    SUBCASE("spatial mismatch rejected") {
        CHECK_THROWS_AS(concat_channels(Tensor({1, 1, 2, 2}, 0.0), Tensor({1, 1, 3, 3}, 0.0)), ShapeError);
    }
}

TEST_CASE("grad_check validates every kernel backward") {
    const auto suite = kernel_grad_suite({41, 42, 43}, 1e-4);
    CHECK(suite.size() == 11);
    for (const auto& k : suite) {
        INFO(k.kernel, " max rel err ", k.report.max_rel_error, " worst ", k.report.worst);
        CHECK(k.report.pass);
    }
}

TEST_CASE("grad_check is exact for linear kernels") {
    Rng rng(44);
    Tensor x = random_tensor({1, 1, 3, 3}, rng);
    ConvParams p{random_tensor({2, 1, 1, 1}, rng), random_tensor({2}, rng), 1, 0};
    Tensor r = random_tensor({1, 2, 3, 3}, rng);
    const ScalarFn f = [&](const std::vector<Tensor>& v) {
        Tensor out = conv2d(v[0], ConvParams{v[1], v[2], 1, 0});
        return test::dot(out, r);
    };
    ConvGrads g = conv2d_backward(x, p, r);
    GradCheckReport rep = grad_check(f, {x, p.weights, p.bias}, {g.grad_input, g.grad_weights, g.grad_bias});
    CHECK(rep.pass);
    CHECK(rep.max_rel_error < 1e-9);
}

TEST_CASE("grad_check flags a corrupted backward") {
    Rng rng(45);
    Tensor x = random_tensor({1, 2, 4, 4}, rng);
    ConvParams p{random_tensor({2, 2, 3, 3}, rng), random_tensor({2}, rng), 1, 1};
    Tensor r = random_tensor({1, 2, 4, 4}, rng);
    const ScalarFn f = [&](const std::vector<Tensor>& v) {
        return test::dot(conv2d(v[0], ConvParams{v[1], v[2], 1, 1}), r);
    };
    ConvGrads g = conv2d_backward(x, p, r);
    GradCheckReport rep = grad_check(f, {x, p.weights, p.bias},
                                     {scale(g.grad_input, 1.01), scale(g.grad_weights, 1.01), scale(g.grad_bias, 1.01)},
                                     1e-5, 1e-4);
    CHECK_FALSE(rep.pass);
}

TEST_SUITE_END();
