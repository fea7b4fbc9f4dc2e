#include <doctest.h>

#include "msdnn/gradcheck.hpp"
#include "msdnn/rcl.hpp"
#include "msdnn/rng.hpp"
#include "test_util.hpp"

using namespace msdnn;
using namespace msdnn::test;

namespace {

RclConfig small_cfg(int timesteps, int channels_in = 2, int channels_out = 2) {
    RclConfig c;
    c.in_channels = channels_in;
    c.out_channels = channels_out;
    c.kernel_size = 3;
    c.timesteps = timesteps;
    c.padding = 1;
    return c;
}

RclParams random_params(const RclConfig& cfg, Rng& rng) {
    return RclParams{random_tensor({cfg.out_channels, cfg.in_channels, cfg.kernel_size, cfg.kernel_size}, rng, -0.5, 0.5),
                     random_tensor({cfg.out_channels, cfg.out_channels, cfg.kernel_size, cfg.kernel_size}, rng, -0.5, 0.5),
                     random_tensor({cfg.out_channels}, rng, -0.5, 0.5)};
}

// spatial spread of the response to a single-pixel perturbation
int perturbation_diameter(int timesteps) {
    RclConfig cfg = small_cfg(timesteps, 1, 1);
    RclParams p{Tensor({1, 1, 3, 3}, 0.1), Tensor({1, 1, 3, 3}, 0.1), Tensor({1}, 0.1)};
    const int S = 15;
    Tensor base({1, 1, S, S}, 0.2);
    Tensor poked = base;
    poked(0, 0, S / 2, S / 2) += real(0.5);
    const Tensor y0 = rcl_output(rcl_forward(base, p, cfg));
    const Tensor y1 = rcl_output(rcl_forward(poked, p, cfg));
    int lo_h = S, hi_h = -1, lo_w = S, hi_w = -1;
    for (int h = 0; h < S; ++h)
        for (int w = 0; w < S; ++w)
            if (std::abs(static_cast<double>(y1(0, 0, h, w)) - static_cast<double>(y0(0, 0, h, w))) > 1e-12) {
                lo_h = std::min(lo_h, h);
                hi_h = std::max(hi_h, h);
                lo_w = std::min(lo_w, w);
                hi_w = std::max(hi_w, w);
            }
    return std::max(hi_h - lo_h + 1, hi_w - lo_w + 1);
}

} // namespace

TEST_SUITE_BEGIN("rcl");

TEST_CASE("T=0 forward is bitwise conv2d + relu") {
    Rng rng(51);
    RclConfig cfg = small_cfg(0);
    RclParams p = random_params(cfg, rng);
    Tensor u = random_tensor({1, 2, 6, 6}, rng);
    Tensor direct = relu(conv2d(u, ConvParams{p.w_f, p.b, 1, 1}));
    CHECK(bitwise_equal(rcl_output(rcl_forward(u, p, cfg)), direct));
}

TEST_CASE("scalar recursion x0=1, x1=1.5, x2=1.75") {
    RclConfig cfg;
    cfg.in_channels = 1;
    cfg.out_channels = 1;
    cfg.kernel_size = 1;
    cfg.timesteps = 2;
    cfg.padding = 0;
    RclParams p{Tensor({1, 1, 1, 1}, 1.0), Tensor({1, 1, 1, 1}, 0.5), Tensor({1}, 0.0)};
    Tensor u({1, 1, 1, 1}, 1.0);
    RclCache c = rcl_forward(u, p, cfg);
    REQUIRE(c.states.size() == 3);
    CHECK(c.states[0][0] == real(1.0));
    CHECK(c.states[1][0] == real(1.5));
    CHECK(c.states[2][0] == real(1.75));
}

TEST_CASE("zero weights with positive bias is a fixed point") {
    RclConfig cfg = small_cfg(3, 1, 1);
    RclParams p{Tensor({1, 1, 3, 3}, 0.0), Tensor({1, 1, 3, 3}, 0.0), Tensor({1}, 0.7)};
    Rng rng(52);
    Tensor u = random_tensor({1, 1, 4, 4}, rng);
    RclCache c = rcl_forward(u, p, cfg);
    for (const Tensor& s : c.states)
        for (std::int64_t i = 0; i < s.size(); ++i) CHECK(s[i] == real(0.7));
}

TEST_CASE("unfolding equivalence: hand-built tied chain") {
    Rng rng(53);
    RclConfig cfg = small_cfg(3);
    RclParams p = random_params(cfg, rng);
    Tensor u = random_tensor({1, 2, 5, 5}, rng);

    const ConvParams ff{p.w_f, p.b, 1, 1};
    const ConvParams rec{p.w_r, Tensor({2}, 0.0), 1, 1};
    Tensor chain = relu(conv2d(u, ff));
    for (int t = 1; t <= cfg.timesteps; ++t) chain = relu(add(conv2d(u, ff), conv2d(chain, rec)));

    CHECK(max_abs_diff(rcl_output(rcl_forward(u, p, cfg)), chain) < 1e-12);
}

TEST_CASE("T=0 backward equals plain conv2d_backward") {
    Rng rng(54);
    RclConfig cfg = small_cfg(0);
    RclParams p = random_params(cfg, rng);
    Tensor u = random_tensor({1, 2, 5, 5}, rng);
    RclCache c = rcl_forward(u, p, cfg);
    Tensor go = random_tensor(rcl_output(c).shape(), rng);

    RclGrads rg = rcl_backward(c, p, cfg, go);
    Tensor gz = relu_backward(c.states[0], go);
    ConvGrads cg = conv2d_backward(u, ConvParams{p.w_f, p.b, 1, 1}, gz);
    CHECK(max_abs_diff(rg.grad_input, cg.grad_input) < 1e-14);
    CHECK(max_abs_diff(rg.grad_w_f, cg.grad_weights) < 1e-14);
    CHECK(max_abs_diff(rg.grad_b, cg.grad_bias) < 1e-14);
    CHECK(reduce_sum(map_unary(rg.grad_w_r, [](real v) { return std::abs(v); })) == 0);
}

TEST_CASE("zero grad_out gives zero gradients") {
    Rng rng(55);
    RclConfig cfg = small_cfg(2);
    RclParams p = random_params(cfg, rng);
    Tensor u = random_tensor({1, 2, 4, 4}, rng);
    RclCache c = rcl_forward(u, p, cfg);
    RclGrads g = rcl_backward(c, p, cfg, Tensor(rcl_output(c).shape(), 0.0));
    CHECK(reduce_sum(map_unary(g.grad_input, [](real v) { return std::abs(v); })) == 0);
    CHECK(reduce_sum(map_unary(g.grad_w_f, [](real v) { return std::abs(v); })) == 0);
    CHECK(reduce_sum(map_unary(g.grad_w_r, [](real v) { return std::abs(v); })) == 0);
    CHECK(reduce_sum(map_unary(g.grad_b, [](real v) { return std::abs(v); })) == 0);
}

TEST_CASE("shared-weight gradient equals summed untied-copy gradients") {
    Rng rng(56);
    RclConfig cfg = small_cfg(3);
    RclParams p = random_params(cfg, rng);
    Tensor u = random_tensor({1, 2, 5, 5}, rng);
    RclCache cache = rcl_forward(u, p, cfg);
    Tensor go = random_tensor(rcl_output(cache).shape(), rng);
    RclGrads tied = rcl_backward(cache, p, cfg, go);

    // Unfold by hand with per-step weight copies; their gradients summed must
    // reproduce the shared-weight gradient.
    const ConvParams ff{p.w_f, p.b, 1, 1};
    const ConvParams rec{p.w_r, Tensor({2}, 0.0), 1, 1};
    Tensor g_wf(p.w_f.shape()), g_wr(p.w_r.shape()), g_b(p.b.shape()), g_u(u.shape());
    Tensor gx = go;
    for (int t = cfg.timesteps; t >= 1; --t) {
        Tensor gz = relu_backward(cache.states[static_cast<std::size_t>(t)], gx);
        ConvGrads rgrad = conv2d_backward(cache.states[static_cast<std::size_t>(t) - 1], rec, gz);
        ConvGrads fgrad = conv2d_backward(u, ff, gz);
        add_inplace(g_wr, rgrad.grad_weights);
        add_inplace(g_wf, fgrad.grad_weights);
        add_inplace(g_b, fgrad.grad_bias);
        add_inplace(g_u, fgrad.grad_input);
        gx = rgrad.grad_input;
    }
    Tensor gz0 = relu_backward(cache.states[0], gx);
    ConvGrads fgrad = conv2d_backward(u, ff, gz0);
    add_inplace(g_wf, fgrad.grad_weights);
    add_inplace(g_b, fgrad.grad_bias);
    add_inplace(g_u, fgrad.grad_input);

    CHECK(max_abs_diff(tied.grad_w_f, g_wf) < 1e-10);
    CHECK(max_abs_diff(tied.grad_w_r, g_wr) < 1e-10);
    CHECK(max_abs_diff(tied.grad_b, g_b) < 1e-10);
    CHECK(max_abs_diff(tied.grad_input, g_u) < 1e-10);
}

TEST_CASE("random instance passes the finite-difference check") {
    Rng rng(57);
    RclConfig cfg = small_cfg(3);
    RclParams p = random_params(cfg, rng);
    Tensor u = random_tensor({1, 2, 5, 5}, rng);
    RclCache cache = rcl_forward(u, p, cfg);
    Tensor r = random_tensor(rcl_output(cache).shape(), rng);
    const ScalarFn f = [&](const std::vector<Tensor>& v) {
        return dot(rcl_output(rcl_forward(v[0], RclParams{v[1], v[2], v[3]}, cfg)), r);
    };
    RclGrads g = rcl_backward(cache, p, cfg, r);
    GradCheckReport rep =
        grad_check(f, {u, p.w_f, p.w_r, p.b}, {g.grad_input, g.grad_w_f, g.grad_w_r, g.grad_b}, 1e-5, 1e-4);
    INFO("max rel err ", rep.max_rel_error, " at ", rep.worst);
    CHECK(rep.pass);
}

TEST_CASE("receptive field grows with T") {
    const int d0 = perturbation_diameter(0);
    const int d1 = perturbation_diameter(1);
    const int d2 = perturbation_diameter(2);
    const int d3 = perturbation_diameter(3);
    CHECK(d0 == 3); // one 3x3 convolution
    CHECK(d1 >= d0);
    CHECK(d2 >= d1);
    CHECK(d3 >= d2);
    CHECK(d2 > d0);
}

TEST_CASE("effective depth formula") {
    RclConfig cfg = small_cfg(3);
    CHECK(effective_depth(cfg, 4) == 18); // 4*(3+1)+2
    cfg.timesteps = 0;
    CHECK(effective_depth(cfg, 4) == 6);
    cfg.timesteps = 1;
    CHECK(effective_depth(cfg, 4) == 10);
}

TEST_CASE("config validation") {
    RclConfig even = small_cfg(1);
    even.kernel_size = 4;
    even.padding = 1;
    CHECK_THROWS_AS(even.validate(), ShapeError);
    RclConfig negative = small_cfg(-1);
    CHECK_THROWS_AS(negative.validate(), ShapeError);
}

TEST_SUITE_END();
