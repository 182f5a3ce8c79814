#include <doctest.h>

#include "fd_check.hpp"
#include "splitgen/distributions.hpp"
#include "splitgen/spatial.hpp"

using namespace splitgen;
using sgtest::fd_check;

TEST_SUITE("distributions") {

    TEST_CASE("kl against standard normal: known values") {
        Tape<double> tp;
        auto mu0 = tp.leaf(Tensor<double>(Shape{1, 1}, 0.0));
        auto sc1 = tp.leaf(Tensor<double>(Shape{1, 1}, 1.0));
        CHECK(scalar_value(kl_std_normal(mu0, sc1)) == doctest::Approx(0.0).epsilon(1e-12));

        auto mu1 = tp.leaf(Tensor<double>(Shape{1, 1}, 1.0));
        CHECK(scalar_value(kl_std_normal(mu1, sc1)) == doctest::Approx(0.5));
    }

    TEST_CASE("kl is nonnegative and zero iff q equals p") {
        RngStream rng(1);
        Tape<double> tp;
        auto mu = tp.leaf(rng.normal_tensor<double>(Shape{16, 8}));
        auto sc = tp.leaf(rng.uniform_tensor<double>(Shape{16, 8}, 0.3, 2.0));
        const auto& kl = tp.val(kl_diag_gaussian(mu, sc, mu, sc));
        for (int n = 0; n < 16; ++n) CHECK(std::abs(kl[n]) < 1e-12);

        auto mu2 = tp.leaf(rng.normal_tensor<double>(Shape{16, 8}));
        const auto& kl2 = tp.val(kl_diag_gaussian(mu, sc, mu2, sc));
        for (int n = 0; n < 16; ++n) CHECK(kl2[n] >= 0.0);
    }

    TEST_CASE("kl matches monte carlo on random 8-d gaussians") {
        RngStream rng(2);
        const int D = 8;
        Tensor<double> mq(Shape{1, D}), sq(Shape{1, D}), mp(Shape{1, D}), sp(Shape{1, D});
        for (int d = 0; d < D; ++d) {
            mq[d] = rng.uniform(-1.5, 1.5);
            sq[d] = rng.uniform(0.4, 1.6);
            mp[d] = rng.uniform(-1.5, 1.5);
            sp[d] = rng.uniform(0.4, 1.6);
        }
        Tape<double> tp;
        const double closed = tp.val(kl_diag_gaussian(tp.leaf(mq), tp.leaf(sq), tp.leaf(mp),
                                                      tp.leaf(sp)))[0];
        REQUIRE(closed > 0.3); // meaningful target for a 1% comparison

        // E_q[log q(z) - log p(z)] by sampling z ~ q
        const int S = 1000000;
        double acc = 0;
        for (int s = 0; s < S; ++s) {
            double lq = 0, lp = 0;
            for (int d = 0; d < D; ++d) {
                const double z = mq[d] + sq[d] * rng.normal();
                const double aq = (z - mq[d]) / sq[d], ap = (z - mp[d]) / sp[d];
                lq += -0.5 * aq * aq - std::log(sq[d]);
                lp += -0.5 * ap * ap - std::log(sp[d]);
            }
            acc += lq - lp;
        }
        const double mc = acc / S;
        CHECK(std::abs(mc - closed) / closed < 0.01);
    }

    TEST_CASE("kl gradients") {
        RngStream rng(3);
        auto mu = rng.normal_tensor<double>(Shape{4, 6});
        auto raw = rng.normal_tensor<double>(Shape{4, 6});
        auto mp = rng.normal_tensor<double>(Shape{4, 6});
        auto rawp = rng.normal_tensor<double>(Shape{4, 6});
        auto rep = fd_check(
            {mu, raw, mp, rawp},
            [](Tape<double>& tp, const std::vector<Var<double>>& v) {
                auto sq = addc(softplus(v[1]), 1e-6);
                auto sp = addc(softplus(v[3]), 1e-6);
                return sum_all(kl_diag_gaussian(v[0], sq, v[2], sp));
            },
            60, rng);
        CHECK(rep.max_rel_err < 1e-6);

        auto rep2 = fd_check(
            {mu, raw},
            [](Tape<double>& tp, const std::vector<Var<double>>& v) {
                return sum_all(kl_std_normal(v[0], addc(softplus(v[1]), 1e-6)));
            },
            40, rng);
        CHECK(rep2.max_rel_err < 1e-6);
    }

    TEST_CASE("scale positivity is enforced") {
        Tape<double> tp;
        auto mu = tp.leaf(Tensor<double>(Shape{1, 2}, 0.0));
        auto bad = tp.leaf(Tensor<double>::from(Shape{1, 2}, {1.0, 0.0}));
        CHECK_THROWS_AS((void)kl_std_normal(mu, bad), error);
    }

    TEST_CASE("reparameterize basics and moments") {
        Tape<double> tp;
        RngStream rng(4);
        auto mu = tp.leaf(rng.normal_tensor<double>(Shape{3, 4}));
        auto sc = tp.leaf(rng.uniform_tensor<double>(Shape{3, 4}, 0.5, 1.5));
        auto zero = tp.leaf(Tensor<double>(Shape{3, 4}, 0.0));
        auto z_nonoise = reparameterize(mu, sc, zero);  // build before val(): val refs don't survive node pushes
        CHECK(max_abs_diff(tp.val(z_nonoise), tp.val(mu)) == 0.0);

        auto tiny = tp.leaf(Tensor<double>(Shape{3, 4}, 0.0));
        auto noise = tp.leaf(rng.normal_tensor<double>(Shape{3, 4}));
        auto z_noscale = reparameterize(mu, tiny, noise);
        CHECK(max_abs_diff(tp.val(z_noscale), tp.val(mu)) == 0.0);

        // empirical mean/std of a single coordinate over 1e5 draws
        const double m = 0.7, s = 1.3;
        const int S = 100000;
        double acc = 0, acc2 = 0;
        for (int i = 0; i < S; ++i) {
            Tape<double> t2;
            auto z = reparameterize(t2.leaf(Tensor<double>(Shape{1, 1}, m)),
                                    t2.leaf(Tensor<double>(Shape{1, 1}, s)),
                                    t2.leaf(rng.normal_tensor<double>(Shape{1, 1})));
            const double v = t2.val(z)[0];
            acc += v;
            acc2 += v * v;
        }
        const double mean = acc / S;
        const double sd = std::sqrt(acc2 / S - mean * mean);
        const double se_mean = s / std::sqrt(double(S));
        const double se_sd = s / std::sqrt(2.0 * S);
        CHECK(std::abs(mean - m) < 3 * se_mean);
        CHECK(std::abs(sd - s) < 3 * se_sd);
    }

    TEST_CASE("gumbel softmax simplex and limits") {
        Tape<double> tp;
        RngStream rng(5);
        const int K = 6;
        auto logits = tp.leaf(rng.normal_tensor<double>(Shape{8, K}, 2.0));
        auto noise = tp.leaf(rng.gumbel_tensor<double>(Shape{8, K}));
        const auto& y = tp.val(gumbel_softmax(logits, 0.4, noise));
        for (int n = 0; n < 8; ++n) {
            double sum = 0;
            for (int k = 0; k < K; ++k) {
                CHECK(y.at(n, k) > 0.0);
                sum += y.at(n, k);
            }
            CHECK(sum == doctest::Approx(1.0));
        }

        auto uni = tp.leaf(Tensor<double>(Shape{1, K}, 0.37));
        auto zero = tp.leaf(Tensor<double>(Shape{1, K}, 0.0));
        const auto& u = tp.val(gumbel_softmax(uni, 1.0, zero));
        for (int k = 0; k < K; ++k) CHECK(u[k] == doctest::Approx(1.0 / K));

        // zero noise, tau -> 0: one-hot at argmax
        auto lg = tp.leaf(Tensor<double>::from(Shape{1, 3}, {0.2, 1.7, -0.4}));
        auto z3 = tp.leaf(Tensor<double>(Shape{1, 3}, 0.0));
        const auto& h = tp.val(gumbel_softmax(lg, 0.005, z3));
        CHECK(h[1] == doctest::Approx(1.0).epsilon(1e-9));

        CHECK_THROWS_AS((void)gumbel_softmax(lg, 0.0, z3), error);
    }

    TEST_CASE("gumbel-max property: argmax histogram follows softmax(logits)") {
        RngStream rng(6);
        const int K = 6, S = 100000;
        Tensor<double> logits(Shape{1, K});
        for (int k = 0; k < K; ++k) logits[k] = rng.uniform(-1.0, 1.0);
        double zsum = 0;
        std::vector<double> p(K);
        for (int k = 0; k < K; ++k) zsum += std::exp(logits[k]);
        for (int k = 0; k < K; ++k) p[k] = std::exp(logits[k]) / zsum;

        std::vector<int> hist(K, 0);
        for (int s = 0; s < S; ++s) {
            Tape<double> tp;
            auto y = gumbel_softmax(tp.leaf(logits), 0.4,
                                    tp.leaf(rng.gumbel_tensor<double>(Shape{1, K})));
            const auto& v = tp.val(y);
            int arg = 0;
            for (int k = 1; k < K; ++k)
                if (v[k] > v[arg]) arg = k;
            ++hist[arg];
        }
        double chi2 = 0;
        for (int k = 0; k < K; ++k) {
            const double e = S * p[k];
            chi2 += (hist[k] - e) * (hist[k] - e) / e;
        }
        CHECK(chi2 < 15.086); // chi-square 0.99 quantile, 5 dof
    }

    TEST_CASE("categorical kl known values and oracle") {
        Tape<double> tp;
        const int K = 5;
        const std::vector<double> uniform(K, 1.0 / K);

        auto eq = tp.leaf(Tensor<double>(Shape{1, K}, 0.9)); // equal logits -> uniform q
        CHECK(std::abs(scalar_value(categorical_kl(eq, uniform))) < 1e-12);

        Tensor<double> hot(Shape{1, K}, -40.0);
        hot[2] = 40.0;
        CHECK(scalar_value(categorical_kl(tp.leaf(hot), uniform)) ==
              doctest::Approx(std::log(double(K))));

        // high-precision summation oracle
        RngStream rng(7);
        Tensor<double> logits = rng.normal_tensor<double>(Shape{3, K}, 1.5);
        std::vector<double> prior(K);
        double psum = 0;
        for (int k = 0; k < K; ++k) psum += (prior[k] = rng.uniform(0.05, 1.0));
        for (int k = 0; k < K; ++k) prior[k] /= psum;

        const auto& got = tp.val(categorical_kl(tp.leaf(logits), prior));
        for (int n = 0; n < 3; ++n) {
            long double z = 0;
            for (int k = 0; k < K; ++k) z += std::exp(static_cast<long double>(logits.at(n, k)));
            long double want = 0;
            for (int k = 0; k < K; ++k) {
                const long double q = std::exp(static_cast<long double>(logits.at(n, k))) / z;
                want += q * (std::log(q) - std::log(static_cast<long double>(prior[k])));
            }
            CHECK(std::abs(got[n] - static_cast<double>(want)) < 1e-10);
        }

        std::vector<double> zero_prior(K, 0.25);
        zero_prior[1] = 0.0;
        CHECK_THROWS_AS((void)categorical_kl(eq, zero_prior), error);
    }

    TEST_CASE("categorical kl gradient") {
        RngStream rng(8);
        auto logits = rng.normal_tensor<double>(Shape{4, 5});
        const std::vector<double> prior{0.1, 0.3, 0.2, 0.25, 0.15};
        auto rep = fd_check(
            {logits},
            [&](Tape<double>& tp, const std::vector<Var<double>>& v) {
                return sum_all(categorical_kl(v[0], prior));
            },
            40, rng);
        CHECK(rep.max_rel_err < 1e-6);
    }

    TEST_CASE("bernoulli kl") {
        Tape<double> tp;
        auto q = tp.leaf(Tensor<double>(Shape{1, 1}, 0.3));
        CHECK(std::abs(scalar_value(bernoulli_kl(q, 0.3))) < 1e-12);

        auto q2 = tp.leaf(Tensor<double>(Shape{1, 1}, 0.8));
        const double want = 0.8 * std::log(0.8 / 0.1) + 0.2 * std::log(0.2 / 0.9);
        CHECK(scalar_value(bernoulli_kl(q2, 0.1)) == doctest::Approx(want));

        RngStream rng(9);
        auto probs = rng.uniform_tensor<double>(Shape{3, 4}, 0.05, 0.95);
        auto rep = fd_check(
            {probs},
            [](Tape<double>& tp2, const std::vector<Var<double>>& v) {
                return sum_all(bernoulli_kl(v[0], 0.2));
            },
            30, rng);
        CHECK(rep.max_rel_err < 1e-6);
    }

    TEST_CASE("reconstruction log likelihood closed forms") {
        const double sigma = 0.1;
        Tape<double> tp;
        RngStream rng(10);
        auto x = rng.uniform_tensor<double>(Shape{2, 3, 4, 4});
        auto same = tp.val(recon_log_likelihood(tp.leaf(x), tp.leaf(x), sigma));
        const double want0 = -0.5 * 48 * std::log(2 * std::numbers::pi * sigma * sigma);
        CHECK(same[0] == doctest::Approx(want0));
        CHECK(same[1] == doctest::Approx(want0));

        // doubling one residual of size d changes ll by -3 d^2 / (2 sigma^2)
        const double d = 0.07;
        Tensor<double> mean1 = x;
        mean1[5] += d;
        Tensor<double> mean2 = x;
        mean2[5] += 2 * d;
        const double l1 = tp.val(recon_log_likelihood(tp.leaf(mean1), tp.leaf(x), sigma))[0];
        const double l2 = tp.val(recon_log_likelihood(tp.leaf(mean2), tp.leaf(x), sigma))[0];
        CHECK(l2 - l1 == doctest::Approx(-3 * d * d / (2 * sigma * sigma)));

        // high-precision oracle on random inputs
        auto mean = rng.uniform_tensor<double>(Shape{2, 3, 4, 4});
        const auto& got = tp.val(recon_log_likelihood(tp.leaf(mean), tp.leaf(x), sigma));
        for (int n = 0; n < 2; ++n) {
            long double acc = 0;
            for (int i = 0; i < 48; ++i) {
                const long double r = mean[n * 48 + i] - x[n * 48 + i];
                acc += -r * r / (2.0L * sigma * sigma) -
                       0.5L * std::log(2.0L * std::numbers::pi_v<long double> * sigma * sigma);
            }
            CHECK(std::abs(got[n] - static_cast<double>(acc)) < 1e-8);
        }

        auto wrong = tp.leaf(Tensor<double>(Shape{2, 3, 4, 5}, 0.0));
        CHECK_THROWS_AS((void)recon_log_likelihood(wrong, tp.leaf(x), sigma), error);
    }

    TEST_CASE("glimpse translation consistency on a linear ramp") {
        // shifting the center by one output-pixel equivalent shifts the
        // sampled grid by exactly one glimpse pixel
        const int S = 16, G = 4;
        Tensor<double> ramp(Shape{1, 1, S, S});
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) ramp[static_cast<std::int64_t>(y) * S + x] = x * 0.01;

        const double sx = 0.45, cx = -0.1;
        Tensor<double> t1(Shape{1, 4});
        t1[0] = sx;
        t1[1] = 0.5;
        t1[2] = cx;
        t1[3] = 0.05;
        Tensor<double> t2 = t1;
        t2[2] = cx + sx * 2.0 / G;

        Tape<double> tp;
        auto e1 = glimpse_extract(tp.leaf(ramp), tp.leaf(t1), G, G);
        auto e2 = glimpse_extract(tp.leaf(ramp), tp.leaf(t2), G, G);
        const auto& g1 = tp.val(e1);
        const auto& g2 = tp.val(e2);
        for (int y = 0; y < G; ++y)
            for (int x = 0; x + 1 < G; ++x)
                CHECK(g2.at(0, 0, y, x) == doctest::Approx(g1.at(0, 0, y, x + 1)).epsilon(1e-12));
    }

    TEST_CASE("glimpse half-pixel sampling equals 4-neighbor average") {
        // 2x2 image; a glimpse centered on the middle samples all four pixels
        // with equal weight
        Tensor<double> img = Tensor<double>::from(Shape{1, 1, 2, 2}, {1.0, 3.0, 5.0, 7.0});
        Tensor<double> t(Shape{1, 4});
        t[0] = 0.5; // one output pixel across the image center
        t[1] = 0.5;
        t[2] = 0.0;
        t[3] = 0.0;
        Tape<double> tp;
        const auto& g = tp.val(glimpse_extract(tp.leaf(img), tp.leaf(t), 1, 1));
        CHECK(g[0] == doctest::Approx(4.0)); // mean of 1,3,5,7
    }

    TEST_CASE("extract then paste round trip on a smooth image") {
        const int S = 16, G = 8;
        Tensor<double> img(Shape{1, 1, S, S});
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x)
                img[static_cast<std::int64_t>(y) * S + x] =
                    0.5 + 0.3 * std::sin(0.35 * x) * std::cos(0.3 * y);
        Tensor<double> t(Shape{1, 4});
        t[0] = 0.4;
        t[1] = 0.4;
        t[2] = 0.15;
        t[3] = -0.2;
        Tape<double> tp;
        auto g = glimpse_extract(tp.leaf(img), tp.leaf(t), G, G);
        auto back = glimpse_paste(g, tp.leaf(t), S, S);
        // compare inside the pasted window, away from its border
        const auto& B = tp.val(back);
        int checked = 0;
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const double u = (2 * x + 1.0) / S - 1.0, v = (2 * y + 1.0) / S - 1.0;
                if (std::abs(u - t[2]) < t[0] * 0.8 && std::abs(v - t[3]) < t[1] * 0.8) {
                    CHECK(std::abs(B.at(0, 0, y, x) - img.at(0, 0, y, x)) < 1e-2);
                    ++checked;
                }
            }
        CHECK(checked > 10);
    }
}
