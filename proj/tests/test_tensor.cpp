#include <doctest.h>

#include "splitgen/tensor.hpp"

using namespace splitgen;

TEST_SUITE("tensor") {

    TEST_CASE("construction and indexing") {
        Tensor<float> t(Shape{2, 3, 4, 5}, 0.f);
        CHECK(t.size() == 120);
        CHECK(t.ndim() == 4);
        t.at(1, 2, 3, 4) = 7.f;
        CHECK(t[119] == 7.f);
        t.at(0, 0, 0, 1) = 3.f;
        CHECK(t[1] == 3.f);

        Tensor<float> m(Shape{3, 4});
        m.at(2, 1) = 9.f;
        CHECK(m[2 * 4 + 1] == 9.f);
    }

    TEST_CASE("from vector and reshape") {
        auto t = Tensor<int>::from(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
        auto r = t.reshaped(Shape{3, 2});
        CHECK(r.at(2, 1) == 6);
        CHECK_THROWS(t.reshaped(Shape{4, 2}));
    }

    TEST_CASE("cast and comparisons") {
        auto a = Tensor<double>::from(Shape{3}, {1.0, 2.0, 3.0});
        auto b = a.cast<float>();
        CHECK(b[2] == 3.f);

        auto c = a;
        CHECK(bit_equal(a, c));
        c[1] += 1e-9;
        CHECK(!bit_equal(a, c));
        CHECK(max_abs_diff(a, c) == doctest::Approx(1e-9));
    }

    TEST_CASE("all_finite") {
        Tensor<float> t(Shape{4}, 1.f);
        CHECK(t.all_finite());
        t[2] = std::numeric_limits<float>::quiet_NaN();
        CHECK(!t.all_finite());
        t[2] = std::numeric_limits<float>::infinity();
        CHECK(!t.all_finite());
    }
}
