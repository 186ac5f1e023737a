#include <doctest.h>

#include <vector>

#include "hr3d/common.hpp"
#include "hr3d/rng.hpp"
#include "hr3d/tensor.hpp"

using namespace hr3d;

TEST_CASE("shape strides and flat index are row-major") {
    Shape s{2, 3, 4};
    CHECK(s.numel() == 24);
    auto st = s.strides();
    CHECK(st == std::vector<std::int64_t>{12, 4, 1});
    CHECK(s.flat_index({1, 2, 3}) == 23);
    CHECK(s.flat_index({0, 0, 0}) == 0);
    CHECK(s.flat_index({1, 0, 2}) == 14);
}

TEST_CASE("shape rejects non-positive extents") {
    CHECK_THROWS_AS(Shape({2, 0, 3}), DataError);
    CHECK_THROWS_AS(Shape({-1}), DataError);
}

TEST_CASE("rank-0 shape is a scalar holder") {
    Shape s(std::vector<std::int64_t>{});
    CHECK(s.rank() == 0);
    CHECK(s.numel() == 1);
    TensorT<float> t(s);
    CHECK(t.numel() == 1);
}

TEST_CASE("default shape is an empty placeholder") {
    Shape s;
    CHECK(s.numel() == 0);
}

TEST_CASE("elementwise ops match hand loops") {
    Shape s{2, 3};
    Tensor a(s), b(s);
    for (int i = 0; i < 6; ++i) {
        a[i] = static_cast<float>(i - 3);
        b[i] = static_cast<float>(2 * i);
    }
    Tensor c = add(a, b);
    Tensor d = mul(a, b);
    Tensor e = max0(a);
    Tensor f = add_scalar(a, 1.5f);
    Tensor g = mul_scalar(a, -2.0f);
    for (int i = 0; i < 6; ++i) {
        CHECK(c[i] == a[i] + b[i]);
        CHECK(d[i] == a[i] * b[i]);
        CHECK(e[i] == (a[i] > 0 ? a[i] : 0.0f));
        CHECK(f[i] == a[i] + 1.5f);
        CHECK(g[i] == a[i] * -2.0f);
    }
}

TEST_CASE("binary ops reject shape mismatches") {
    Tensor a(Shape{2, 3}), b(Shape{3, 2});
    CHECK_THROWS_AS(add(a, b), DataError);
    CHECK_THROWS_AS(mul(a, b), DataError);
}

TEST_CASE("reduce_sum over axes matches a nested-loop oracle") {
    Shape s{2, 3, 4};
    Tensor t(s);
    Rng rng(21);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform(-1, 1));

    // oracle: reduce axis 1
    Tensor r = reduce_sum(t, {1});
    CHECK(r.shape() == Shape{2, 4});
    for (std::int64_t i = 0; i < 2; ++i) {
        for (std::int64_t k = 0; k < 4; ++k) {
            float want = 0;
            for (std::int64_t j = 0; j < 3; ++j) want += t.at({i, j, k});
            CHECK(r.at({i, k}) == doctest::Approx(want).epsilon(1e-6));
        }
    }

    // oracle: reduce axes 0 and 2
    Tensor r2 = reduce_sum(t, {0, 2});
    CHECK(r2.shape() == Shape{3});
    for (std::int64_t j = 0; j < 3; ++j) {
        float want = 0;
        for (std::int64_t i = 0; i < 2; ++i)
            for (std::int64_t k = 0; k < 4; ++k) want += t.at({i, j, k});
        CHECK(r2.at({j}) == doctest::Approx(want).epsilon(1e-6));
    }

    // full reduction
    Tensor r3 = reduce_sum(t);
    CHECK(r3.shape().rank() == 0);
    double want = 0;
    for (std::int64_t i = 0; i < t.numel(); ++i) want += t[i];
    CHECK(r3[0] == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("reduce_mean divides by the reduced count") {
    Tensor t(Shape{2, 2});
    t[0] = 1;
    t[1] = 2;
    t[2] = 3;
    t[3] = 4;
    Tensor m = reduce_mean(t, {0});
    CHECK(m.shape() == Shape{2});
    CHECK(m[0] == doctest::Approx(2.0));
    CHECK(m[1] == doctest::Approx(3.0));
    Tensor all = reduce_mean(t);
    CHECK(all[0] == doctest::Approx(2.5));
}

TEST_CASE("reduce_max picks largest per slice") {
    Tensor t(Shape{2, 3});
    float vals[6] = {5, -1, 2, 0, 7, -3};
    for (int i = 0; i < 6; ++i) t[i] = vals[i];
    Tensor m = reduce_max(t, {1});
    CHECK(m.shape() == Shape{2});
    CHECK(m[0] == 5.0f);
    CHECK(m[1] == 7.0f);
}

TEST_CASE("argmax takes the lowest index on ties") {
    Tensor t(Shape{2, 4});
    float vals[8] = {1, 3, 3, 0, -2, -2, -5, -2};
    for (int i = 0; i < 8; ++i) t[i] = vals[i];
    TensorI a = argmax(t, 1);
    CHECK(a.shape() == Shape{2});
    CHECK(a[0] == 1);
    CHECK(a[1] == 0);

    TensorI a0 = argmax(t, 0);
    CHECK(a0.shape() == Shape{4});
    CHECK(a0[0] == 0);
    CHECK(a0[1] == 0);
    CHECK(a0[2] == 0);
    CHECK(a0[3] == 0);
}

TEST_CASE("argmax_flat agrees with a single-axis argmax on rank 1") {
    Tensor t(Shape{5});
    float vals[5] = {0, 9, 9, 1, -4};
    for (int i = 0; i < 5; ++i) t[i] = vals[i];
    CHECK(argmax_flat(t) == 1);
}

TEST_CASE("random_fill is deterministic for a fixed seed") {
    Rng r1(77), r2(77);
    Tensor a = random_fill<float>(r1, Dist::kUniform, -1, 1, Shape{3, 3});
    Tensor b = random_fill<float>(r2, Dist::kUniform, -1, 1, Shape{3, 3});
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        CHECK(a[i] >= -1.0f);
        CHECK(a[i] < 1.0f);
    }

    Rng r3(78);
    Tensor c = random_fill<float>(r3, Dist::kNormal, 0, 1, Shape{3, 3});
    bool any_diff = false;
    for (std::int64_t i = 0; i < c.numel(); ++i) any_diff |= (c[i] != a[i]);
    CHECK(any_diff);
}
