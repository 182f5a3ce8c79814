#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "splitgen/models/gmvae.hpp"
#include "splitgen/models/spair.hpp"
#include "splitgen/models/vae.hpp"

using namespace splitgen;
using sgtest::fd_check_params;

namespace {

VaeConfig tiny_vae_cfg() {
    VaeConfig c;
    c.image_size = 16;
    c.channels = 2;
    c.width = 2;
    c.z_g_dim = 3;
    c.z_l_dim = 3;
    c.beta = 0.7;
    c.patch_size = 4;
    return c;
}

GmvaeConfig tiny_gmvae_cfg() {
    GmvaeConfig c;
    c.image_size = 16;
    c.channels = 2;
    c.width = 2;
    c.z_g_dim = 4;
    c.z_l_dim = 3;
    c.emb_dim = 3;
    c.k = 3;
    c.alpha = 1.3;
    c.beta = 0.9;
    c.tau = 0.5;
    c.patch_size = 4;
    return c;
}

SpairConfig tiny_spair_cfg() {
    SpairConfig c;
    c.image_size = 16;
    c.channels = 2;
    c.width = 2;
    c.cell_size = 8;
    c.glimpse_size = 6;
    c.z_what_dim = 3;
    c.z_bg_dim = 2;
    c.z_l_dim = 2;
    c.beta = 0.8;
    c.patch_size = 4;
    return c;
}

template <typename T>
Tensor<T> random_images(RngStream& rng, int n, int c, int s) {
    return rng.uniform_tensor<T>(Shape{n, c, s, s}, 0.05, 0.95);
}

} // namespace

TEST_SUITE("models") {

    // ----------------------------------------------------------------- vae

    TEST_CASE("vae: deterministic creation and config echo") {
        const VaeConfig cfg = tiny_vae_cfg();
        ParamStore<double> ps1, ps2;
        RngStream r1(11), r2(11);
        auto m1 = SplitVae<double>::create(ps1, cfg, r1);
        auto m2 = SplitVae<double>::create(ps2, cfg, r2);
        REQUIRE(ps1.size() == ps2.size());
        for (std::size_t i = 0; i < ps1.size(); ++i) {
            CHECK(ps1.at(i).name == ps2.at(i).name);
            CHECK(bit_equal(ps1.at(i).value, ps2.at(i).value));
        }

        RngStream data(12);
        auto x = random_images<double>(data, 3, cfg.channels, cfg.image_size);
        auto xh = random_images<double>(data, 3, cfg.channels, cfg.image_size);
        Tape<double> tp;
        auto [qg, ql] = m1.encode(tp, tp.leaf(x), tp.leaf(xh));
        CHECK(tp.val(qg.mean).shape() == Shape{3, cfg.z_g_dim});
        CHECK(tp.val(ql.mean).shape() == Shape{3, cfg.z_l_dim});
        for (std::int64_t i = 0; i < tp.val(qg.scale).size(); ++i)
            CHECK(tp.val(qg.scale)[i] > 0.0);
    }

    TEST_CASE("vae: encode is row-deterministic and pathway-independent") {
        const VaeConfig cfg = tiny_vae_cfg();
        ParamStore<double> ps;
        RngStream rng(21);
        auto m = SplitVae<double>::create(ps, cfg, rng);
        RngStream data(22);
        auto x1 = random_images<double>(data, 1, cfg.channels, cfg.image_size);
        auto xh1 = random_images<double>(data, 1, cfg.channels, cfg.image_size);
        auto xh2 = random_images<double>(data, 1, cfg.channels, cfg.image_size);

        // duplicated rows -> duplicated posterior rows
        Tensor<double> x2(Shape{2, cfg.channels, cfg.image_size, cfg.image_size});
        for (std::int64_t i = 0; i < x1.size(); ++i) {
            x2[i] = x1[i];
            x2[x1.size() + i] = x1[i];
        }
        Tape<double> tp;
        auto q2 = m.encode_global(tp, tp.leaf(x2));
        const auto& mu2 = tp.val(q2.mean);
        // equal up to gemm blocking, which may round row positions differently
        for (int d = 0; d < cfg.z_g_dim; ++d)
            CHECK(std::abs(mu2.at(0, d) - mu2.at(1, d)) < 1e-13);

        // perturbing x_hat leaves the z_g posterior bit-identical
        Tape<double> ta, tb;
        auto m_a = m.encode(ta, ta.leaf(x1), ta.leaf(xh1));
        auto m_b = m.encode(tb, tb.leaf(x1), tb.leaf(xh2));
        CHECK(bit_equal(ta.val(m_a.first.mean), tb.val(m_b.first.mean)));
        CHECK(bit_equal(ta.val(m_a.first.scale), tb.val(m_b.first.scale)));
        CHECK_FALSE(bit_equal(ta.val(m_a.second.mean), tb.val(m_b.second.mean)));

        CHECK_THROWS_AS(
            (void)m.encode(ta, ta.leaf(x1),
                           ta.leaf(Tensor<double>(Shape{1, cfg.channels, 8, 8}, 0.1))),
            error);
    }

    TEST_CASE("vae: loss decomposition, beta scaling, finiteness") {
        const VaeConfig cfg = tiny_vae_cfg();
        ParamStore<float> ps;
        RngStream rng(31);
        auto m = SplitVae<float>::create(ps, cfg, rng);
        RngStream data(32);
        const int n = 2;
        auto x = random_images<float>(data, n, cfg.channels, cfg.image_size);
        auto xh = random_images<float>(data, n, cfg.channels, cfg.image_size);
        auto ng = data.normal_tensor<float>(Shape{n, cfg.z_g_dim});
        auto nl = data.normal_tensor<float>(Shape{n, cfg.z_l_dim});

        Tape<float> tp;
        auto lb = m.split_vae_loss(tp, tp.leaf(x), tp.leaf(xh), tp.leaf(ng), tp.leaf(nl));
        REQUIRE(lb.terms.size() == 4);
        float acc = 0;
        for (const auto& [name, v] : lb.terms) acc += static_cast<float>(scalar_value(v));
        CHECK(acc == static_cast<float>(lb.total_value())); // fold-left in working precision
        CHECK(lb.value("kl_g") > 0.0);

        // beta = 0 drops the KL terms from the total
        auto m0 = m;
        m0.cfg.beta = 0.0;
        Tape<float> t0;
        auto lb0 = m0.split_vae_loss(t0, t0.leaf(x), t0.leaf(xh), t0.leaf(ng), t0.leaf(nl));
        CHECK(lb0.value("kl_g") == 0.0);
        CHECK(lb0.value("kl_l") == 0.0);
        CHECK(static_cast<float>(lb0.total_value()) ==
              static_cast<float>(lb0.value("recon_x")) +
                  static_cast<float>(lb0.value("recon_aux")));
    }

    TEST_CASE("vae: split loss minus aux term equals baseline vae loss on x") {
        const VaeConfig cfg = tiny_vae_cfg(); // beta = 0.7; holds for any beta
        ParamStore<double> ps;
        RngStream rng(41);
        auto m = SplitVae<double>::create(ps, cfg, rng);
        RngStream data(42);
        const int n = 2;
        auto x = random_images<double>(data, n, cfg.channels, cfg.image_size);
        auto ng = data.normal_tensor<double>(Shape{n, cfg.z_g_dim});
        auto nl = data.normal_tensor<double>(Shape{n, cfg.z_l_dim});

        Tape<double> tp;
        auto split = m.split_vae_loss(tp, tp.leaf(x), tp.leaf(x), tp.leaf(ng), tp.leaf(nl));
        auto base = m.vae_loss(tp, tp.leaf(x), tp.leaf(ng), tp.leaf(nl));
        const double reduced = split.total_value() - split.value("recon_aux");
        CHECK(std::abs(reduced - base.total_value()) <
              1e-8 * std::max(1.0, std::abs(base.total_value())));
    }

    TEST_CASE("vae: loss gradient matches finite differences") {
        const VaeConfig cfg = tiny_vae_cfg();
        ParamStore<double> ps;
        RngStream rng(51);
        auto m = SplitVae<double>::create(ps, cfg, rng);
        RngStream data(52);
        const int n = 2;
        auto x = random_images<double>(data, n, cfg.channels, cfg.image_size);
        auto xh = random_images<double>(data, n, cfg.channels, cfg.image_size);
        auto ng = data.normal_tensor<double>(Shape{n, cfg.z_g_dim});
        auto nl = data.normal_tensor<double>(Shape{n, cfg.z_l_dim});
        RngStream pick(53);
        auto rep = fd_check_params(
            ps,
            [&](Tape<double>& tp) {
                return m.split_vae_loss(tp, tp.leaf(x), tp.leaf(xh), tp.leaf(ng), tp.leaf(nl))
                    .total;
            },
            40, pick, 1e-5);
        CHECK(rep.checked == 40);
        CHECK(rep.max_rel_err < 1e-4);
    }

    TEST_CASE("vae: generate is deterministic, bounded, and dim-checked") {
        const VaeConfig cfg = tiny_vae_cfg();
        ParamStore<float> ps;
        RngStream rng(61);
        auto m = SplitVae<float>::create(ps, cfg, rng);
        RngStream data(62);
        auto zg = data.normal_tensor<float>(Shape{4, cfg.z_g_dim});
        auto zl = data.normal_tensor<float>(Shape{4, cfg.z_l_dim});
        auto img1 = m.generate(zg, zl);
        auto img2 = m.generate(zg, zl);
        CHECK(bit_equal(img1, img2));
        REQUIRE(img1.shape() == Shape{4, cfg.channels, cfg.image_size, cfg.image_size});
        for (std::int64_t i = 0; i < img1.size(); ++i) {
            CHECK(img1[i] >= 0.0f);
            CHECK(img1[i] <= 1.0f);
        }
        CHECK_THROWS_AS((void)m.generate(data.normal_tensor<float>(Shape{4, 5}), zl), error);
        CHECK_THROWS_AS((void)m.generate(zg, data.normal_tensor<float>(Shape{2, 3})), error);
    }

    TEST_CASE("vae: style transfer of an image onto itself is direct reconstruction") {
        const VaeConfig cfg = tiny_vae_cfg();
        ParamStore<float> ps;
        RngStream rng(71);
        auto m = SplitVae<float>::create(ps, cfg, rng);
        RngStream data(72);
        auto x = random_images<float>(data, 2, cfg.channels, cfg.image_size);

        RngStream s1(99), s2(99);
        auto transferred = m.style_transfer(x, x, s1);

        // direct reconstruction: posterior means of (x, scrambled x), decoded
        Tensor<float> xh = auxiliary_view(x, cfg.patch_size, s2);
        Tape<float> tp(false);
        auto qg = m.encode_global(tp, tp.leaf(x));
        auto ql = m.encode_local(tp, tp.leaf(xh));
        auto direct = m.generate(tp.val(qg.mean), tp.val(ql.mean));
        CHECK(bit_equal(transferred, direct));
    }

    // --------------------------------------------------------------- gmvae

    TEST_CASE("gmvae: loss terms, k=1 categorical collapse, alpha/beta zero") {
        GmvaeConfig cfg = tiny_gmvae_cfg();
        ParamStore<double> ps;
        RngStream rng(81);
        auto m = SplitGmvae<double>::create(ps, cfg, rng);
        RngStream data(82);
        const int n = 2;
        auto x = random_images<double>(data, n, cfg.channels, cfg.image_size);
        auto xh = random_images<double>(data, n, cfg.channels, cfg.image_size);
        auto ng = data.normal_tensor<double>(Shape{n, cfg.z_g_dim});
        auto nl = data.normal_tensor<double>(Shape{n, cfg.z_l_dim});
        auto gn = data.gumbel_tensor<double>(Shape{n, cfg.k});

        Tape<double> tp;
        auto lb = m.split_gmvae_loss(tp, tp.leaf(x), tp.leaf(xh), tp.leaf(ng), tp.leaf(nl),
                                     tp.leaf(gn));
        REQUIRE(lb.terms.size() == 5);
        double acc = 0;
        for (const auto& [name, v] : lb.terms) acc += scalar_value(v);
        CHECK(acc == lb.total_value());

        auto m0 = m;
        m0.cfg.alpha = 0.0;
        m0.cfg.beta = 0.0;
        Tape<double> t0;
        auto lb0 = m0.split_gmvae_loss(t0, t0.leaf(x), t0.leaf(xh), t0.leaf(ng), t0.leaf(nl),
                                       t0.leaf(gn));
        CHECK(lb0.total_value() == lb0.value("recon_x") + lb0.value("recon_aux"));

        // k = 1: categorical KL is identically zero
        GmvaeConfig c1 = cfg;
        c1.k = 1;
        ParamStore<double> ps1;
        RngStream rng1(83);
        auto mk1 = SplitGmvae<double>::create(ps1, c1, rng1);
        Tape<double> t1;
        auto lb1 = mk1.split_gmvae_loss(t1, t1.leaf(x), t1.leaf(xh), t1.leaf(ng), t1.leaf(nl),
                                        t1.leaf(data.gumbel_tensor<double>(Shape{n, 1})));
        CHECK(lb1.value("kl_y") == 0.0);
    }

    TEST_CASE("gmvae: k=1 with unit prior head and zeroed y-pathway reduces to split-vae") {
        GmvaeConfig gc = tiny_gmvae_cfg();
        gc.k = 1;
        gc.alpha = 2.0; // irrelevant: kl_y is exactly zero at k=1
        gc.beta = 0.7;
        VaeConfig vc = tiny_vae_cfg();
        vc.z_g_dim = gc.z_g_dim;
        vc.z_l_dim = gc.z_l_dim;
        vc.beta = gc.beta;

        ParamStore<double> vps;
        RngStream vr(91);
        auto vae = SplitVae<double>::create(vps, vc, vr);
        ParamStore<double> gps;
        RngStream gr(92);
        auto gm = SplitGmvae<double>::create(gps, gc, gr);

        // copy the shared structure from the vae into the gmvae
        auto copy = [&](const std::string& from, const std::string& to) {
            Tensor<double>& dst = gps.get(to).value;
            Tensor<double>& src = vps.get(from).value;
            REQUIRE(dst.shape() == src.shape());
            dst = src;
        };
        for (int i = 0; i < 4; ++i) {
            const std::string c = ".conv" + std::to_string(i);
            for (const char* s : {".w", ".b"}) {
                copy("enc_g" + c + s, "enc_g" + c + s);
                copy("enc_l" + c + s, "enc_l" + c + s);
                copy("dec_joint" + c + s, "dec_joint" + c + s);
                copy("dec_aux" + c + s, "dec_aux" + c + s);
            }
        }
        for (const char* s : {".w", ".b"}) {
            copy(std::string("dec_joint.fc") + s, std::string("dec_joint.fc") + s);
            copy(std::string("dec_joint.head") + s, std::string("dec_joint.head") + s);
            copy(std::string("dec_aux.fc") + s, std::string("dec_aux.fc") + s);
            copy(std::string("dec_aux.head") + s, std::string("dec_aux.head") + s);
            copy(std::string("head_l.mu") + s, std::string("head_l.mu") + s);
            copy(std::string("head_l.raw_scale") + s, std::string("head_l.raw_scale") + s);
        }
        // conditional head: vae weights over the trunk features, zeros over
        // the embedding block so y contributes nothing
        const int feat = gm.enc_g.feature_dim(gc.image_size, gc.image_size);
        for (const char* h : {"head_g.mu", "head_g.raw_scale"}) {
            Tensor<double>& gw = gps.get(std::string(h) + ".w").value;
            Tensor<double>& vw = vps.get(std::string(h) + ".w").value;
            gw.fill(0.0);
            for (int o = 0; o < gc.z_g_dim; ++o)
                for (int i = 0; i < feat; ++i) gw.at(o, i) = vw.at(o, i);
            gps.get(std::string(h) + ".b").value = vps.get(std::string(h) + ".b").value;
        }
        // prior head pinned to the unit gaussian
        gps.get("prior_mu").value.fill(0.0);
        gps.get("prior_raw").value.fill(std::log(std::expm1(1.0 - kScaleFloor)));

        RngStream data(93);
        const int n = 2;
        auto x = random_images<double>(data, n, gc.channels, gc.image_size);
        auto xh = random_images<double>(data, n, gc.channels, gc.image_size);
        auto ng = data.normal_tensor<double>(Shape{n, gc.z_g_dim});
        auto nl = data.normal_tensor<double>(Shape{n, gc.z_l_dim});
        auto gn = data.gumbel_tensor<double>(Shape{n, 1});

        Tape<double> tg, tv;
        auto gl = gm.split_gmvae_loss(tg, tg.leaf(x), tg.leaf(xh), tg.leaf(ng), tg.leaf(nl),
                                      tg.leaf(gn));
        auto vl = vae.split_vae_loss(tv, tv.leaf(x), tv.leaf(xh), tv.leaf(ng), tv.leaf(nl));
        CHECK(gl.value("kl_y") == 0.0);
        CHECK(std::abs(gl.value("recon_x") - vl.value("recon_x")) < 1e-8);
        CHECK(std::abs(gl.value("recon_aux") - vl.value("recon_aux")) < 1e-8);
        CHECK(std::abs(gl.value("kl_g") - vl.value("kl_g")) < 1e-8);
        CHECK(std::abs(gl.value("kl_l") - vl.value("kl_l")) < 1e-8);
        CHECK(std::abs(gl.total_value() - vl.total_value()) < 1e-8);
    }

    TEST_CASE("gmvae: loss gradient matches finite differences") {
        GmvaeConfig cfg = tiny_gmvae_cfg();
        ParamStore<double> ps;
        RngStream rng(101);
        auto m = SplitGmvae<double>::create(ps, cfg, rng);
        RngStream data(102);
        const int n = 2;
        auto x = random_images<double>(data, n, cfg.channels, cfg.image_size);
        auto xh = random_images<double>(data, n, cfg.channels, cfg.image_size);
        auto ng = data.normal_tensor<double>(Shape{n, cfg.z_g_dim});
        auto nl = data.normal_tensor<double>(Shape{n, cfg.z_l_dim});
        auto gn = data.gumbel_tensor<double>(Shape{n, cfg.k});
        RngStream pick(103);
        auto rep = fd_check_params(
            ps,
            [&](Tape<double>& tp) {
                return m
                    .split_gmvae_loss(tp, tp.leaf(x), tp.leaf(xh), tp.leaf(ng), tp.leaf(nl),
                                      tp.leaf(gn))
                    .total;
            },
            40, pick, 1e-5);
        CHECK(rep.checked == 40);
        CHECK(rep.max_rel_err < 1e-4);
    }

    TEST_CASE("gmvae: marginal prior density equals the component-weighted sum") {
        GmvaeConfig cfg = tiny_gmvae_cfg();
        ParamStore<double> ps;
        RngStream rng(111);
        auto m = SplitGmvae<double>::create(ps, cfg, rng);
        // arbitrary component parameters
        for (std::int64_t i = 0; i < m.prior_mu->value.size(); ++i)
            m.prior_mu->value[i] = rng.uniform(-2.0, 2.0);
        for (std::int64_t i = 0; i < m.prior_raw->value.size(); ++i)
            m.prior_raw->value[i] = rng.uniform(-1.0, 1.5);

        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> z(static_cast<std::size_t>(cfg.z_g_dim));
            for (auto& v : z) v = rng.uniform(-3.0, 3.0);
            long double mix = 0;
            for (int j = 0; j < cfg.k; ++j) {
                long double comp = 1.0L / cfg.k;
                for (int d = 0; d < cfg.z_g_dim; ++d) {
                    const long double mu = m.prior_mu->value.at(j, d);
                    const long double sc = m.prior_scale_at(j, d);
                    const long double r = (z[static_cast<std::size_t>(d)] - mu) / sc;
                    comp *= std::exp(-0.5L * r * r) /
                            (sc * std::sqrt(2.0L * static_cast<long double>(M_PI)));
                }
                mix += comp;
            }
            const double got = m.prior_log_density(z);
            const double want = static_cast<double>(std::log(mix));
            CHECK(std::abs(got - want) < 1e-10 * std::max(1.0, std::abs(want)));
        }
    }

    TEST_CASE("gmvae: cluster inference") {
        GmvaeConfig cfg = tiny_gmvae_cfg();
        ParamStore<float> ps;
        RngStream rng(121);
        auto m = SplitGmvae<float>::create(ps, cfg, rng);
        RngStream data(122);
        auto x1 = random_images<float>(data, 1, cfg.channels, cfg.image_size);
        Tensor<float> x2(Shape{2, cfg.channels, cfg.image_size, cfg.image_size});
        for (std::int64_t i = 0; i < x1.size(); ++i) {
            x2[i] = x1[i];
            x2[x1.size() + i] = x1[i];
        }
        auto c2 = m.infer_cluster(x2);
        CHECK(c2[0] == c2[1]); // duplicated input -> identical cluster

        // argmax is invariant to a positive rescaling of the logit head
        auto before = m.infer_cluster(x2);
        Tensor<float>& w = ps.get("head_y.w").value;
        Tensor<float>& b = ps.get("head_y.b").value;
        for (std::int64_t i = 0; i < w.size(); ++i) w[i] *= 3.0f;
        for (std::int64_t i = 0; i < b.size(); ++i) b[i] *= 3.0f;
        auto after = m.infer_cluster(x2);
        CHECK(before == after);

        // k = 1 always answers 0
        GmvaeConfig c1 = cfg;
        c1.k = 1;
        ParamStore<float> ps1;
        RngStream rng1(123);
        auto mk1 = SplitGmvae<float>::create(ps1, c1, rng1);
        for (int v : mk1.infer_cluster(x2)) CHECK(v == 0);
    }

    TEST_CASE("gmvae: prior sampling matches head parameters") {
        GmvaeConfig cfg = tiny_gmvae_cfg();
        ParamStore<double> ps;
        RngStream rng(131);
        auto m = SplitGmvae<double>::create(ps, cfg, rng);
        for (int d = 0; d < cfg.z_g_dim; ++d) m.prior_mu->value.at(1, d) = 0.3 * d - 0.5;
        const int S = 10000;
        RngStream draw(132);
        Tensor<double> z = m.sample_prior(1, S, draw);
        for (int d = 0; d < cfg.z_g_dim; ++d) {
            double acc = 0;
            for (int i = 0; i < S; ++i) acc += z.at(i, d);
            const double mean = acc / S;
            const double se = m.prior_scale_at(1, d) / std::sqrt(double(S));
            CHECK(std::abs(mean - (0.3 * d - 0.5)) < 3 * se);
        }
        CHECK_THROWS_AS((void)m.sample_prior(cfg.k, 1, draw), error);

        // identical stream state -> identical decoded images
        RngStream s1(133), s2(133);
        Tensor<double> zl(Shape{2, cfg.z_l_dim}, 0.2);
        CHECK(bit_equal(m.sample_from_cluster(1, zl, s1), m.sample_from_cluster(1, zl, s2)));
    }

    // --------------------------------------------------------------- spair

    TEST_CASE("spair: grid geometry and posterior shapes") {
        SpairConfig cfg; // full-size: 48 px canvas, 8 px cells
        cfg.width = 2;
        cfg.z_what_dim = 3;
        cfg.z_bg_dim = 2;
        cfg.z_l_dim = 2;
        ParamStore<float> ps;
        RngStream rng(141);
        auto m = SplitSpair<float>::create(ps, cfg, rng);
        CHECK(cfg.grid() == 6);
        RngStream data(142);
        auto x = random_images<float>(data, 2, 3, 48);
        Tape<float> tp(false);
        auto grid = m.encode_grid(tp, tp.leaf(x));
        CHECK(tp.val(grid.pres_logit).shape() == Shape{36 * 2, 1});
        CHECK(tp.val(grid.where.mean).shape() == Shape{36 * 2, 4});

        auto xh = random_images<float>(data, 2, 3, 48);
        auto lat = m.infer_objects(x, &xh);
        CHECK(lat.grid == 6);
        CHECK(lat.what.shape() == Shape{72, 3});
        CHECK(lat.bg.shape() == Shape{2, 2});
        CHECK(lat.l.shape() == Shape{2, 2});
        for (std::int64_t i = 0; i < lat.pres.size(); ++i) {
            CHECK(lat.pres[i] > 0.0f);
            CHECK(lat.pres[i] < 1.0f);
        }
        // scales bounded by construction
        for (int r = 0; r < 72; ++r) {
            CHECK(lat.where_t.at(r, 0) > cfg.s_min);
            CHECK(lat.where_t.at(r, 0) < cfg.s_max);
        }
    }

    TEST_CASE("spair: where_to_t maps raw zeros to cell centers and mid scales") {
        SpairConfig cfg = tiny_spair_cfg(); // 16 px, 2x2 grid
        ParamStore<double> ps;
        RngStream rng(151);
        auto m = SplitSpair<double>::create(ps, cfg, rng);
        Tape<double> tp;
        const int n = 1, G = cfg.grid();
        Tensor<double> raw(Shape{G * G * n, 4}, 0.0);
        const auto& t = tp.val(m.where_to_t(tp, tp.leaf(raw), n));
        const double mid = cfg.s_min + (cfg.s_max - cfg.s_min) * 0.5;
        for (int r = 0; r < G * G; ++r) {
            CHECK(t.at(r, 0) == doctest::Approx(mid));
            CHECK(t.at(r, 1) == doctest::Approx(mid));
        }
        // cell (0,0) center: pixel 4 of 16 -> u = 2*4/16 - 1 = -0.5
        CHECK(t.at(0, 2) == doctest::Approx(-0.5));
        CHECK(t.at(0, 3) == doctest::Approx(-0.5));
        // cell (1,1): pixel 12 -> u = 0.5; row-major cell order
        CHECK(t.at(3, 2) == doctest::Approx(0.5));
        CHECK(t.at(3, 3) == doctest::Approx(0.5));
    }

    TEST_CASE("spair: count thresholds strictly at one half") {
        Tensor<float> pres = Tensor<float>::from(Shape{4, 1}, {0.9f, 0.2f, 0.6f, 0.5f});
        auto counts = SplitSpair<float>::count_active(pres, 1);
        REQUIRE(counts.size() == 1);
        CHECK(counts[0] == 2);
        // same probabilities, two images interleaved cell-major
        Tensor<float> p2 = Tensor<float>::from(Shape{4, 1}, {0.9f, 0.2f, 0.6f, 0.51f});
        auto c2 = SplitSpair<float>::count_active(p2, 2);
        CHECK(c2[0] == 2); // rows 0 and 2
        CHECK(c2[1] == 1); // rows 1 and 3
    }

    TEST_CASE("spair: all-zero presence composes to the decoded background") {
        SpairConfig cfg = tiny_spair_cfg();
        ParamStore<float> ps;
        RngStream rng(161);
        auto m = SplitSpair<float>::create(ps, cfg, rng);
        RngStream data(162);
        const int n = 2, G = cfg.grid();
        SpairLatents<float> lat;
        lat.batch = n;
        lat.grid = G;
        lat.pres = Tensor<float>(Shape{G * G * n, 1}, 0.0f);
        lat.where_t = Tensor<float>(Shape{G * G * n, 4}, 0.0f);
        for (int r = 0; r < G * G * n; ++r) {
            lat.where_t.at(r, 0) = 0.3f;
            lat.where_t.at(r, 1) = 0.3f;
        }
        lat.what = data.normal_tensor<float>(Shape{G * G * n, cfg.z_what_dim});
        lat.bg = data.normal_tensor<float>(Shape{n, cfg.z_bg_dim});
        lat.l = data.normal_tensor<float>(Shape{n, cfg.z_l_dim});
        Tensor<float> scene = m.compose_scene(lat);

        Tape<float> tp(false);
        Tensor<float> bg = tp.val(m.dec_bg(tp, tp.leaf(lat.bg)));
        for (std::int64_t i = 0; i < bg.size(); ++i) bg[i] = std::clamp(bg[i], 0.0f, 1.0f);
        CHECK(bit_equal(scene, bg));
        for (std::int64_t i = 0; i < scene.size(); ++i) {
            CHECK(scene[i] >= 0.0f);
            CHECK(scene[i] <= 1.0f);
        }
    }

    TEST_CASE("spair: composite arithmetic and row-major overlap order") {
        // hand-built two-cell scene on a 1-channel miniature: the compose
        // step must satisfy canvas' = canvas*(1 - pres*pasted_alpha) +
        // pres*pasted(rgb*alpha), applied cell 0 then cell 1
        SpairConfig cfg = tiny_spair_cfg();
        cfg.channels = 1;
        ParamStore<double> ps;
        RngStream rng(171);
        auto m = SplitSpair<double>::create(ps, cfg, rng);
        const int n = 1, G = cfg.grid(), H = cfg.image_size, gs = cfg.glimpse_size;
        RngStream data(172);

        Tensor<double> rgb = data.uniform_tensor<double>(Shape{G * G * n, 1, gs, gs}, 0.1, 0.9);
        Tensor<double> alpha(Shape{G * G * n, 1, gs, gs}, 1.0);
        Tensor<double> pres(Shape{G * G * n, 1}, 0.0);
        pres[0] = 1.0; // cell (0,0)
        pres[1] = 1.0; // cell (0,1): later in row-major order
        Tensor<double> t(Shape{G * G * n, 4}, 0.0);
        for (int r = 0; r < G * G; ++r) {
            t.at(r, 0) = 0.45;
            t.at(r, 1) = 0.45;
        }
        t.at(0, 2) = -0.3;
        t.at(1, 2) = 0.1; // overlapping supports
        Tensor<double> bg(Shape{n, 1, H, H}, 0.25);

        Tape<double> tp(false);
        auto canvas = m.compose(tp, tp.leaf(bg), tp.leaf(rgb), tp.leaf(alpha), tp.leaf(t),
                                tp.leaf(pres), n);
        const auto& C = tp.val(canvas);

        // oracle: sequential alpha-compositing of the pasted layers
        Tape<double> to(false);
        auto pc = glimpse_paste(mul_bcast_chan(to.leaf(rgb), to.leaf(alpha)), to.leaf(t), H, H);
        auto pa = glimpse_paste(to.leaf(alpha), to.leaf(t), H, H);
        const auto& PC = to.val(pc);
        const auto& PA = to.val(pa);
        Tensor<double> want = bg;
        for (int g = 0; g < G * G; ++g) {
            const double pg = pres[g];
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < H; ++x) {
                    const double w = pg * PA.at(g * n, 0, y, x);
                    want.at(0, 0, y, x) =
                        want.at(0, 0, y, x) * (1.0 - w) + pg * PC.at(g * n, 0, y, x);
                }
        }
        CHECK(max_abs_diff(C, want) < 1e-12);

        // where both supports cover a pixel with weight ~1, the later cell wins
        int covered = 0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < H; ++x)
                if (PA.at(0, 0, y, x) > 1.0 - 1e-9 && PA.at(1, 0, y, x) > 1.0 - 1e-9) {
                    CHECK(C.at(0, 0, y, x) == doctest::Approx(PC.at(1, 0, y, x)).epsilon(1e-8));
                    ++covered;
                }
        CHECK(covered > 0);
    }

    TEST_CASE("spair: loss terms, beta zero, and local wiring") {
        SpairConfig cfg = tiny_spair_cfg();
        ParamStore<double> ps;
        RngStream rng(181);
        auto m = SplitSpair<double>::create(ps, cfg, rng);
        RngStream data(182);
        const int n = 2;
        auto x = random_images<double>(data, n, cfg.channels, cfg.image_size);
        auto xh1 = random_images<double>(data, n, cfg.channels, cfg.image_size);
        auto xh2 = random_images<double>(data, n, cfg.channels, cfg.image_size);
        RngStream nz(183);
        auto noise = m.draw_noise(n, nz);

        Tape<double> tp;
        auto lb = m.split_spair_loss(tp, tp.leaf(x), tp.leaf(xh1), noise, 0.3);
        REQUIRE(lb.terms.size() == 7);
        double acc = 0;
        for (const auto& [name, v] : lb.terms) acc += scalar_value(v);
        CHECK(acc == lb.total_value());

        auto m0 = m;
        m0.cfg.beta = 0.0;
        Tape<double> t0;
        auto lb0 = m0.split_spair_loss(t0, t0.leaf(x), t0.leaf(xh1), noise, 0.3);
        CHECK(lb0.total_value() == lb0.value("recon_x") + lb0.value("recon_aux"));

        // perturbing x_hat changes only the z_l-dependent terms
        Tape<double> ta, tb;
        auto la = m.split_spair_loss(ta, ta.leaf(x), ta.leaf(xh1), noise, 0.3);
        auto lc = m.split_spair_loss(tb, tb.leaf(x), tb.leaf(xh2), noise, 0.3);
        CHECK(la.value("kl_what") == lc.value("kl_what"));
        CHECK(la.value("kl_where") == lc.value("kl_where"));
        CHECK(la.value("kl_pres") == lc.value("kl_pres"));
        CHECK(la.value("kl_bg") == lc.value("kl_bg"));
        CHECK(la.value("recon_aux") != lc.value("recon_aux"));
        CHECK(la.value("kl_l") != lc.value("kl_l"));
        CHECK(la.value("recon_x") != lc.value("recon_x")); // via z_l in the object decoder

        CHECK_THROWS_AS(
            (void)m.split_spair_loss(ta, ta.leaf(x), ta.leaf(xh1), noise, 0.0), error);
    }

    TEST_CASE("spair: zero z_l dimension reproduces the baseline losses") {
        SpairConfig split_cfg = tiny_spair_cfg();
        SpairConfig base_cfg = split_cfg;
        base_cfg.z_l_dim = 0;
        ParamStore<double> ps_s, ps_b;
        RngStream rs(191), rb(192);
        auto ms = SplitSpair<double>::create(ps_s, split_cfg, rs);
        auto mb = SplitSpair<double>::create(ps_b, base_cfg, rb);

        // share every parameter the two variants have in common; the split
        // object decoder additionally ignores z_l via zeroed input columns
        for (std::size_t i = 0; i < ps_b.size(); ++i) {
            const std::string name = ps_b.at(i).name;
            if (name == "obj.fc.w") continue;
            Tensor<double>& src = ps_b.at(i).value;
            Tensor<double>& dst = ps_s.get(name).value;
            REQUIRE(dst.shape() == src.shape());
            dst = src;
        }
        Tensor<double>& ws = ps_s.get("obj.fc.w").value;
        Tensor<double>& wb = ps_b.get("obj.fc.w").value;
        ws.fill(0.0);
        for (int o = 0; o < wb.dim(0); ++o)
            for (int i = 0; i < split_cfg.z_what_dim; ++i) ws.at(o, i) = wb.at(o, i);

        RngStream data(193);
        const int n = 2;
        auto x = random_images<double>(data, n, split_cfg.channels, split_cfg.image_size);
        auto xh = random_images<double>(data, n, split_cfg.channels, split_cfg.image_size);
        RngStream nz(194);
        auto noise = ms.draw_noise(n, nz);
        SpairNoise<double> bnoise = noise;
        bnoise.l = Tensor<double>(Shape{n, 0});

        Tape<double> ts, tb2;
        auto ls = ms.split_spair_loss(ts, ts.leaf(x), ts.leaf(xh), noise, 0.2);
        auto lb = mb.split_spair_loss(tb2, tb2.leaf(x), tb2.leaf(x), bnoise, 0.2);
        for (const char* term : {"recon_x", "kl_what", "kl_where", "kl_pres", "kl_bg"})
            CHECK(std::abs(ls.value(term) - lb.value(term)) < 1e-10);
    }

    TEST_CASE("spair: loss gradient matches finite differences") {
        SpairConfig cfg = tiny_spair_cfg();
        ParamStore<double> ps;
        RngStream rng(201);
        auto m = SplitSpair<double>::create(ps, cfg, rng);
        RngStream data(202);
        const int n = 2;
        auto x = random_images<double>(data, n, cfg.channels, cfg.image_size);
        auto xh = random_images<double>(data, n, cfg.channels, cfg.image_size);
        // glimpse taps outside the image read exact zeros, so with biases at
        // their zero init the glimpse conv emits pre-activations exactly on
        // the leaky-relu kink, where central differences average the two
        // one-sided slopes. Nudge every parameter off the symmetric init so
        // the loss is differentiable at the test point.
        for (std::size_t i = 0; i < ps.size(); ++i) {
            auto& v = ps.at(i).value;
            for (std::int64_t j = 0; j < v.size(); ++j) v[j] += data.uniform(-0.05, 0.05);
        }
        // fixed noise draw verified to keep all glimpse taps away from the
        // piecewise-linear kinks of the bilinear kernels at the fd step used
        RngStream nz(203);
        auto noise = m.draw_noise(n, nz);
        RngStream pick(204);
        auto rep = fd_check_params(
            ps,
            [&](Tape<double>& tp) {
                return m.split_spair_loss(tp, tp.leaf(x), tp.leaf(xh), noise, 0.25).total;
            },
            40, pick, 1e-6);
        CHECK(rep.checked == 40);
        CHECK(rep.max_rel_err < 1e-4);
    }

    TEST_CASE("spair: detection boxes decode the where transform") {
        SpairConfig cfg = tiny_spair_cfg();
        ParamStore<float> ps;
        RngStream rng(211);
        auto m = SplitSpair<float>::create(ps, cfg, rng);
        RngStream data(212);
        auto x = random_images<float>(data, 2, cfg.channels, cfg.image_size);
        auto dets = m.detect(x);
        REQUIRE(dets.size() == 2);
        auto counts = m.count_objects(x);
        const double W = cfg.image_size;
        for (int i = 0; i < 2; ++i) {
            CHECK(static_cast<int>(dets[static_cast<std::size_t>(i)].size()) ==
                  counts[static_cast<std::size_t>(i)]);
            for (const auto& d : dets[static_cast<std::size_t>(i)]) {
                CHECK(d.score > 0.5);
                const double side_x = d.box[2] - d.box[0];
                CHECK(side_x > cfg.s_min * W);
                CHECK(side_x < cfg.s_max * W);
            }
        }
    }
}
