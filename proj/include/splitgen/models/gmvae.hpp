#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "splitgen/models/common.hpp"
#include "splitgen/scramble.hpp"

namespace splitgen {

struct GmvaeConfig {
    int image_size = 32;
    int channels = 3;
    int width = 32;
    int z_g_dim = 32;
    int z_l_dim = 32;  // 0 drops the local pathway (baseline GMVAE)
    int emb_dim = 16;  // embedding of the relaxed y fed to the conditional encoder
    int k = 10;
    double alpha = 40.0;
    double beta = 40.0;
    double tau = 0.4;
    double sigma = 0.1;
    int patch_size = 4;

    void validate() const {
        SG_CHECK(image_size > 0 && image_size % 16 == 0,
                 "gmvae: image_size must be a positive multiple of 16");
        SG_CHECK(channels > 0 && width > 0, "gmvae: channels and width must be positive");
        SG_CHECK(z_g_dim > 0 && z_l_dim >= 0 && emb_dim > 0, "gmvae: bad latent dims");
        SG_CHECK(k >= 1, "gmvae: k must be at least 1");
        SG_CHECK(alpha >= 0.0 && beta >= 0.0, "gmvae: weights must be nonnegative");
        SG_CHECK(tau > 0.0, "gmvae: tau must be positive");
        SG_CHECK(sigma > 0.0, "gmvae: sigma must be positive");
        SG_CHECK(patch_size > 0 && image_size % patch_size == 0,
                 "gmvae: patch_size must divide image_size");
    }
};

// Mixture-of-gaussians prior over z_g selected by a relaxed categorical y.
// The cluster encoder reads x and produces y logits; the conditional encoder
// reads x plus an embedding of the relaxed y; per-component prior heads give
// p(z_g|y). The local pathway and auxiliary decoder mirror SplitVae.
template <typename T>
struct SplitGmvae {
    GmvaeConfig cfg;
    ConvTrunk<T> enc_y, enc_g, enc_l;
    Linear<T> head_y, emb_y;
    GaussianHead<T> head_g, head_l;
    ConvDecoder<T> dec_joint, dec_aux;
    Parameter<T>* prior_mu = nullptr;  // [k, z_g_dim]
    Parameter<T>* prior_raw = nullptr; // [k, z_g_dim], scale = softplus + floor

    bool has_local() const { return cfg.z_l_dim > 0; }

    static SplitGmvae create(ParamStore<T>& ps, const GmvaeConfig& cfg, RngStream& rng) {
        cfg.validate();
        SplitGmvae m;
        m.cfg = cfg;
        m.enc_y = ConvTrunk<T>::create(ps, "enc_y", cfg.channels, cfg.width, rng);
        m.enc_g = ConvTrunk<T>::create(ps, "enc_g", cfg.channels, cfg.width, rng);
        const int feat = m.enc_g.feature_dim(cfg.image_size, cfg.image_size);
        m.head_y = Linear<T>::create(ps, "head_y", feat, cfg.k, rng);
        m.emb_y = Linear<T>::create(ps, "emb_y", cfg.k, cfg.emb_dim, rng);
        m.head_g = GaussianHead<T>::create(ps, "head_g", feat + cfg.emb_dim, cfg.z_g_dim, rng);
        if (m.has_local()) {
            m.enc_l = ConvTrunk<T>::create(ps, "enc_l", cfg.channels, cfg.width, rng);
            m.head_l = GaussianHead<T>::create(ps, "head_l", feat, cfg.z_l_dim, rng);
            m.dec_aux = ConvDecoder<T>::create(ps, "dec_aux", cfg.z_l_dim, cfg.channels,
                                               cfg.image_size, cfg.width, rng);
        }
        m.dec_joint = ConvDecoder<T>::create(ps, "dec_joint", cfg.z_g_dim + cfg.z_l_dim,
                                             cfg.channels, cfg.image_size, cfg.width, rng);
        m.prior_mu = &ps.make("prior_mu", Shape{cfg.k, cfg.z_g_dim});
        m.prior_raw = &ps.make("prior_raw", Shape{cfg.k, cfg.z_g_dim});
        // spread component means so clusters can specialise from the start
        for (std::int64_t i = 0; i < m.prior_mu->value.size(); ++i)
            m.prior_mu->value[i] = static_cast<T>(rng.normal() * 0.5);
        // softplus(0.541...) ~= 1: components start near the unit gaussian
        m.prior_raw->value.fill(static_cast<T>(std::log(std::exp(1.0) - 1.0)));
        return m;
    }

    void check_image(const Tensor<T>& x) const {
        SG_CHECK(x.ndim() == 4 && x.dim(1) == cfg.channels && x.dim(2) == cfg.image_size &&
                     x.dim(3) == cfg.image_size,
                 "gmvae: bad image batch shape ", shape_str(x.shape()));
    }

    Var<T> cluster_logits(Tape<T>& tp, Var<T> x) const {
        check_image(tp.val(x));
        return head_y(tp, enc_y(tp, x));
    }

    // Prior head parameters as graph vars: ([k,D] means, [k,D] positive scales).
    std::pair<Var<T>, Var<T>> prior_heads(Tape<T>& tp) const {
        Var<T> mu = tp.param(*prior_mu);
        Var<T> sc = addc(softplus(tp.param(*prior_raw)), T(kScaleFloor));
        return {mu, sc};
    }

    // q(z_g | x, y) for a relaxed (or one-hot) y on the simplex.
    GaussianPosterior<T> encode_conditional(Tape<T>& tp, Var<T> x, Var<T> y) const {
        Var<T> feat = enc_g(tp, x);
        return head_g(tp, concat_cols(feat, emb_y(tp, y)));
    }

    GaussianPosterior<T> encode_local(Tape<T>& tp, Var<T> x_hat) const {
        SG_CHECK(has_local(), "gmvae: model has no local pathway");
        return head_l(tp, enc_l(tp, x_hat));
    }

    Var<T> decode_joint(Tape<T>& tp, Var<T> z_g, Var<T> z_l) const {
        if (!has_local()) return dec_joint(tp, z_g);
        return dec_joint(tp, concat_cols(z_g, z_l));
    }

    // -log p(x|z_g,z_l) - log p(x_hat|z_l) + alpha*KL(q(y|x)||uniform)
    // + beta*[KL(q(z_g|x,y)||p(z_g|y)) + KL(q(z_l)||N)], with y a
    // gumbel-softmax sample and the prior heads mixed by the simplex weights.
    LossBreakdown<T> split_gmvae_loss(Tape<T>& tp, Var<T> x, Var<T> x_hat, Var<T> noise_g,
                                      Var<T> noise_l, Var<T> gumbel) const {
        check_image(tp.val(x));
        const int n = tp.val(x).dim(0);
        Var<T> logits = cluster_logits(tp, x);
        Var<T> y = gumbel_softmax(logits, T(cfg.tau), gumbel);
        GaussianPosterior<T> qg = encode_conditional(tp, x, y);
        Var<T> z_g = reparameterize(qg.mean, qg.scale, noise_g);

        auto [pmu, psc] = prior_heads(tp);
        Var<T> prior_mean = matmul(y, pmu);
        Var<T> prior_scale = matmul(y, psc);
        Var<T> kl_g = batch_mean(kl_diag_gaussian(qg.mean, qg.scale, prior_mean, prior_scale), n);
        Var<T> kl_y = batch_mean(
            categorical_kl(logits, std::vector<double>(cfg.k, 1.0 / cfg.k)), n);

        std::vector<std::pair<std::string, Var<T>>> terms;
        if (has_local()) {
            check_image(tp.val(x_hat));
            SG_CHECK(tp.val(x_hat).dim(0) == n, "gmvae: x and x_hat batch sizes differ");
            GaussianPosterior<T> ql = encode_local(tp, x_hat);
            Var<T> z_l = reparameterize(ql.mean, ql.scale, noise_l);
            Var<T> recon_x = neg(batch_mean(
                recon_log_likelihood(decode_joint(tp, z_g, z_l), x, T(cfg.sigma)), n));
            Var<T> recon_aux = neg(batch_mean(
                recon_log_likelihood(dec_aux(tp, z_l), x_hat, T(cfg.sigma)), n));
            Var<T> kl_l = batch_mean(kl_std_normal(ql.mean, ql.scale), n);
            terms = {{"recon_x", recon_x},
                     {"recon_aux", recon_aux},
                     {"kl_y", mulc(kl_y, T(cfg.alpha))},
                     {"kl_g", mulc(kl_g, T(cfg.beta))},
                     {"kl_l", mulc(kl_l, T(cfg.beta))}};
        } else {
            Var<T> recon_x = neg(batch_mean(
                recon_log_likelihood(dec_joint(tp, z_g), x, T(cfg.sigma)), n));
            terms = {{"recon_x", recon_x},
                     {"kl_y", mulc(kl_y, T(cfg.alpha))},
                     {"kl_g", mulc(kl_g, T(cfg.beta))}};
        }
        auto lb = fold_terms<T>(std::move(terms));
        lb.check_finite(has_local() ? "split-gmvae" : "gmvae");
        return lb;
    }

    // argmax of the cluster posterior; ties resolve to the lowest index.
    std::vector<int> infer_cluster(const Tensor<T>& x) const {
        Tape<T> tp(false);
        const Tensor<T>& lg = tp.val(cluster_logits(tp, tp.leaf(x)));
        std::vector<int> out(static_cast<std::size_t>(lg.dim(0)));
        for (int i = 0; i < lg.dim(0); ++i) {
            int arg = 0;
            for (int j = 1; j < cfg.k; ++j)
                if (lg.at(i, j) > lg.at(i, arg)) arg = j;
            out[static_cast<std::size_t>(i)] = arg;
        }
        return out;
    }

    double prior_scale_at(int j, int d) const {
        const double raw = prior_raw->value.at(j, d);
        return (raw > 20.0 ? raw : std::log1p(std::exp(raw))) + kScaleFloor;
    }

    // log p(z_g) of the marginal mixture prior, log-sum-exp over components.
    double prior_log_density(const std::vector<double>& z) const {
        SG_CHECK(static_cast<int>(z.size()) == cfg.z_g_dim, "prior_log_density: dim mismatch");
        std::vector<double> comp(static_cast<std::size_t>(cfg.k));
        for (int j = 0; j < cfg.k; ++j) {
            double lp = -std::log(static_cast<double>(cfg.k));
            for (int d = 0; d < cfg.z_g_dim; ++d) {
                const double mu = prior_mu->value.at(j, d);
                const double sc = prior_scale_at(j, d);
                const double r = (z[static_cast<std::size_t>(d)] - mu) / sc;
                lp += -0.5 * r * r - std::log(sc) - 0.5 * std::log(2.0 * M_PI);
            }
            comp[static_cast<std::size_t>(j)] = lp;
        }
        const double m = *std::max_element(comp.begin(), comp.end());
        double acc = 0;
        for (double c : comp) acc += std::exp(c - m);
        return m + std::log(acc);
    }

    // z_g draws from prior component y.
    Tensor<T> sample_prior(int y, int n, RngStream& rng) const {
        SG_CHECK(y >= 0 && y < cfg.k, "sample_prior: index ", y, " out of range");
        Tensor<T> z_g(Shape{n, cfg.z_g_dim});
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < cfg.z_g_dim; ++d)
                z_g.at(i, d) = static_cast<T>(prior_mu->value.at(y, d) +
                                              prior_scale_at(y, d) * rng.normal());
        return z_g;
    }

    // Draw z_g ~ p(z_g|y) for a fixed component and decode with the given z_l.
    Tensor<T> sample_from_cluster(int y, const Tensor<T>& z_l, RngStream& rng) const {
        SG_CHECK(z_l.ndim() == 2 && z_l.dim(1) == cfg.z_l_dim, "sample_from_cluster: z_l shape");
        const int n = z_l.dim(0);
        Tensor<T> z_g = sample_prior(y, n, rng);
        Tape<T> tp(false);
        Tensor<T> img = tp.val(decode_joint(tp, tp.leaf(z_g), tp.leaf(z_l)));
        for (std::int64_t i = 0; i < img.size(); ++i)
            img[i] = std::clamp(img[i], T(0), T(1));
        return img;
    }
};

} // namespace splitgen
