#include <doctest.h>

#include "msdnn/rng.hpp"
#include "msdnn/tensor.hpp"
#include "test_util.hpp"

using namespace msdnn;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("new tensor with fill") {
    Tensor z({2, 2}, 0);
    CHECK(z.size() == 4);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(z[i] == 0);

    Tensor ones({1, 1, 2, 2}, 1);
    CHECK(ones.size() == 4);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(ones[i] == 1);

    Tensor halves({3}, 0.5);
    CHECK(halves.size() == 3);
    for (std::int64_t i = 0; i < 3; ++i) CHECK(halves[i] == real(0.5));
}

TEST_CASE("invalid shapes rejected") {
    CHECK_THROWS_AS(Tensor({0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, -1}), ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{}), ShapeError);
}

TEST_CASE("elementwise arithmetic") {
    Tensor a({2}, std::vector<real>{1, 2});
    Tensor b({2}, std::vector<real>{3, 4});
    Tensor s = add(a, b);
    CHECK(s[0] == 4);
    CHECK(s[1] == 6);

    Tensor m = mul(Tensor({2}, std::vector<real>{2, 3}), Tensor({2}, std::vector<real>{0, 1}));
    CHECK(m[0] == 0);
    CHECK(m[1] == 3);

    Tensor u = map_unary(Tensor({2}, std::vector<real>{-1, 2}), [](real x) { return std::abs(x); });
    CHECK(u[0] == 1);
    CHECK(u[1] == 2);

    CHECK_THROWS_AS(add(a, Tensor({3}, 0.0)), ShapeError);
}

TEST_CASE("reductions") {
    CHECK(reduce_mean(Tensor({2}, std::vector<real>{0, 1})) == real(0.5));
    CHECK(reduce_sum(Tensor({3}, std::vector<real>{1, 2, 3})) == 6);
    CHECK(reduce_max(Tensor({3}, std::vector<real>{-5, 2, 1})) == 2);
}

TEST_CASE("reshape keeps row-major order") {
    std::vector<real> data{1, 2, 3, 4, 5, 6};
    Tensor t({6}, data);
    Tensor r = t.reshape({2, 3});
    CHECK(r(0, 0) == 1);
    CHECK(r(0, 2) == 3);
    CHECK(r(1, 0) == 4);
    CHECK(r(1, 2) == 6);
}

TEST_CASE("reshape element count checks") {
    Tensor fc({6272}, 0.0);
    CHECK_NOTHROW(fc.reshape({32, 14, 14})); // 32*14*14 == 6272
    CHECK_THROWS_AS(fc.reshape({64, 28, 28}), ShapeError); // 50176 != 6272
}

TEST_CASE("reshape round trip is exact") {
    Rng rng(11);
    Tensor t = test::random_tensor({3, 4, 5}, rng);
    Tensor back = t.reshape({60}).reshape({5, 12}).reshape({3, 4, 5});
    CHECK(test::bitwise_equal(t, back));
}

TEST_CASE("add commutes exactly in double precision") {
    Rng rng(12);
    Tensor a = test::random_tensor({64}, rng);
    Tensor b = test::random_tensor({64}, rng);
    CHECK(test::bitwise_equal(add(a, b), add(b, a)));
}

TEST_CASE("mean of constant fill equals the fill") {
    // dyadic fill keeps every partial sum representable
    Tensor t({7, 3}, 0.375);
    CHECK(reduce_mean(t) == real(0.375));
    Tensor h({13}, 0.5);
    CHECK(reduce_mean(h) == real(0.5));
}

TEST_CASE("row-major flat index layout") {
    Tensor t({2, 3, 4, 5});
    t(1, 2, 3, 4) = 9;
    CHECK(t[((1 * 3 + 2) * 4 + 3) * 5 + 4] == 9);
}

TEST_CASE("operations keep finite values finite") {
    Rng rng(13);
    Tensor a = test::random_tensor({100}, rng, -1e6, 1e6);
    Tensor b = test::random_tensor({100}, rng, -1e6, 1e6);
    CHECK(all_finite(add(a, b)));
    CHECK(all_finite(mul(a, b)));
    CHECK(all_finite(scale(a, 1e-3)));
}

TEST_SUITE_END();
