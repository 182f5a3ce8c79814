#include <doctest.h>

#include <algorithm>
#include <map>
#include <sstream>

#include "splitgen/rng.hpp"

using namespace splitgen;

TEST_SUITE("rng") {

    TEST_CASE("deterministic and seed sensitive") {
        RngStream a(42), b(42), c(43);
        for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
        bool differs = false;
        RngStream a2(42);
        for (int i = 0; i < 10; ++i) differs = differs || (a2.next_u64() != c.next_u64());
        CHECK(differs);
    }

    TEST_CASE("named streams are independent") {
        auto a = RngStream::named(7, "init");
        auto b = RngStream::named(7, "data-order");
        auto a2 = RngStream::named(7, "init");
        CHECK(a.next_u64() == a2.next_u64());
        CHECK(a.next_u64() != b.next_u64());
    }

    TEST_CASE("uniform stays in [0,1)") {
        RngStream r(1);
        for (int i = 0; i < 10000; ++i) {
            const double u = r.uniform();
            CHECK(u >= 0.0);
            CHECK(u < 1.0);
        }
    }

    TEST_CASE("below is in range and roughly uniform") {
        RngStream r(2);
        std::vector<int> hist(7, 0);
        const int n = 70000;
        for (int i = 0; i < n; ++i) {
            const auto v = r.below(7);
            REQUIRE(v < 7);
            ++hist[static_cast<int>(v)];
        }
        // chi-square with 6 dof; 22.46 is the 0.999 quantile
        double chi2 = 0;
        for (int h : hist) {
            const double e = n / 7.0;
            chi2 += (h - e) * (h - e) / e;
        }
        CHECK(chi2 < 22.46);
    }

    TEST_CASE("normal moments") {
        RngStream r(3);
        const int n = 1000000;
        double s = 0, s2 = 0;
        for (int i = 0; i < n; ++i) {
            const double x = r.normal();
            s += x;
            s2 += x * x;
        }
        const double mean = s / n;
        const double var = s2 / n - mean * mean;
        CHECK(std::abs(mean) < 0.005);
        CHECK(std::abs(var - 1.0) < 0.01);
    }

    TEST_CASE("save/load preserves stream including box-muller spare") {
        RngStream r(4);
        r.normal(); // leaves a spare cached
        std::stringstream ss;
        r.save(ss);
        RngStream q;
        q.load(ss);
        CHECK(q == r);
        for (int i = 0; i < 5; ++i) CHECK(r.normal() == q.normal());
        for (int i = 0; i < 5; ++i) CHECK(r.next_u64() == q.next_u64());
    }

    TEST_CASE("permutation is a permutation and roughly uniform") {
        RngStream r(5);
        auto p = r.permutation(100);
        auto q = p;
        std::sort(q.begin(), q.end());
        for (int i = 0; i < 100; ++i) CHECK(q[i] == i);

        // all 24 orderings of n=4 should appear with similar frequency
        std::map<std::vector<int>, int> counts;
        const int trials = 24000;
        for (int t = 0; t < trials; ++t) ++counts[r.permutation(4)];
        REQUIRE(counts.size() == 24);
        double chi2 = 0;
        for (const auto& [k, v] : counts) {
            const double e = trials / 24.0;
            chi2 += (v - e) * (v - e) / e;
        }
        CHECK(chi2 < 49.73); // 0.999 quantile, 23 dof
    }

    TEST_CASE("gumbel and logistic tensors are finite") {
        RngStream r(6);
        auto g = r.gumbel_tensor<float>(Shape{1000});
        auto l = r.logistic_tensor<float>(Shape{1000});
        CHECK(g.all_finite());
        CHECK(l.all_finite());
    }
}
