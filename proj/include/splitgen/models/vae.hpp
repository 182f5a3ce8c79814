#pragma once

#include <algorithm>
#include <utility>

#include "splitgen/models/common.hpp"
#include "splitgen/scramble.hpp"

namespace splitgen {

struct VaeConfig {
    int image_size = 32;
    int channels = 3;
    int width = 32;     // base channel count of the conv stacks
    int z_g_dim = 32;
    int z_l_dim = 32;
    double beta = 1.0;
    double sigma = 0.1; // fixed gaussian likelihood scale
    int patch_size = 4; // scramble patch edge for the auxiliary view

    void validate() const {
        SG_CHECK(image_size > 0 && image_size % 16 == 0, "vae: image_size must be a positive multiple of 16");
        SG_CHECK(channels > 0 && width > 0, "vae: channels and width must be positive");
        SG_CHECK(z_g_dim > 0 && z_l_dim > 0, "vae: latent dims must be positive");
        SG_CHECK(beta >= 0.0, "vae: beta must be nonnegative");
        SG_CHECK(sigma > 0.0, "vae: sigma must be positive");
        SG_CHECK(patch_size > 0 && image_size % patch_size == 0,
                 "vae: patch_size must divide image_size");
    }
};

// Parallel global/local encoders, a joint decoder over (z_g, z_l), and an
// auxiliary decoder reconstructing the scrambled view from z_l alone. The
// baseline VAE objective is the same graph with both encoders reading x and
// the auxiliary term dropped.
template <typename T>
struct SplitVae {
    VaeConfig cfg;
    ConvTrunk<T> enc_g, enc_l;
    GaussianHead<T> head_g, head_l;
    ConvDecoder<T> dec_joint, dec_aux;

    static SplitVae create(ParamStore<T>& ps, const VaeConfig& cfg, RngStream& rng) {
        cfg.validate();
        SplitVae m;
        m.cfg = cfg;
        m.enc_g = ConvTrunk<T>::create(ps, "enc_g", cfg.channels, cfg.width, rng);
        m.enc_l = ConvTrunk<T>::create(ps, "enc_l", cfg.channels, cfg.width, rng);
        const int feat = m.enc_g.feature_dim(cfg.image_size, cfg.image_size);
        m.head_g = GaussianHead<T>::create(ps, "head_g", feat, cfg.z_g_dim, rng);
        m.head_l = GaussianHead<T>::create(ps, "head_l", feat, cfg.z_l_dim, rng);
        m.dec_joint = ConvDecoder<T>::create(ps, "dec_joint", cfg.z_g_dim + cfg.z_l_dim,
                                             cfg.channels, cfg.image_size, cfg.width, rng);
        m.dec_aux = ConvDecoder<T>::create(ps, "dec_aux", cfg.z_l_dim, cfg.channels,
                                           cfg.image_size, cfg.width, rng);
        return m;
    }

    void check_image(const Tensor<T>& x) const {
        SG_CHECK(x.ndim() == 4 && x.dim(1) == cfg.channels && x.dim(2) == cfg.image_size &&
                     x.dim(3) == cfg.image_size,
                 "vae: bad image batch shape ", shape_str(x.shape()));
    }

    GaussianPosterior<T> encode_global(Tape<T>& tp, Var<T> x) const {
        return head_g(tp, enc_g(tp, x));
    }

    GaussianPosterior<T> encode_local(Tape<T>& tp, Var<T> x_hat) const {
        return head_l(tp, enc_l(tp, x_hat));
    }

    // q(z_g|x) and q(z_l|x_hat); the pathways share nothing.
    std::pair<GaussianPosterior<T>, GaussianPosterior<T>> encode(Tape<T>& tp, Var<T> x,
                                                                 Var<T> x_hat) const {
        check_image(tp.val(x));
        check_image(tp.val(x_hat));
        SG_CHECK(tp.val(x).dim(0) == tp.val(x_hat).dim(0), "vae: x and x_hat batch sizes differ");
        return {encode_global(tp, x), encode_local(tp, x_hat)};
    }

    Var<T> decode_joint(Tape<T>& tp, Var<T> z_g, Var<T> z_l) const {
        SG_CHECK(tp.val(z_g).ndim() == 2 && tp.val(z_g).dim(1) == cfg.z_g_dim,
                 "vae: z_g shape ", shape_str(tp.val(z_g).shape()));
        SG_CHECK(tp.val(z_l).ndim() == 2 && tp.val(z_l).dim(1) == cfg.z_l_dim,
                 "vae: z_l shape ", shape_str(tp.val(z_l).shape()));
        return dec_joint(tp, concat_cols(z_g, z_l));
    }

    Var<T> decode_aux(Tape<T>& tp, Var<T> z_l) const { return dec_aux(tp, z_l); }

    // -log p(x|z_g,z_l) - log p(x_hat|z_l) + beta*[KL(q(z_g)||N) + KL(q(z_l)||N)],
    // one monte carlo sample, mean over the batch.
    LossBreakdown<T> split_vae_loss(Tape<T>& tp, Var<T> x, Var<T> x_hat, Var<T> noise_g,
                                    Var<T> noise_l) const {
        auto [qg, ql] = encode(tp, x, x_hat);
        Var<T> z_g = reparameterize(qg.mean, qg.scale, noise_g);
        Var<T> z_l = reparameterize(ql.mean, ql.scale, noise_l);
        const int n = tp.val(x).dim(0);
        Var<T> recon_x = neg(batch_mean(
            recon_log_likelihood(decode_joint(tp, z_g, z_l), x, T(cfg.sigma)), n));
        Var<T> recon_aux =
            neg(batch_mean(recon_log_likelihood(decode_aux(tp, z_l), x_hat, T(cfg.sigma)), n));
        Var<T> kl_g = batch_mean(kl_std_normal(qg.mean, qg.scale), n);
        Var<T> kl_l = batch_mean(kl_std_normal(ql.mean, ql.scale), n);
        auto lb = fold_terms<T>({{"recon_x", recon_x},
                                 {"recon_aux", recon_aux},
                                 {"kl_g", mulc(kl_g, T(cfg.beta))},
                                 {"kl_l", mulc(kl_l, T(cfg.beta))}});
        lb.check_finite("split-vae");
        return lb;
    }

    // Standard negative ELBO on x: both encoders read x, no auxiliary term.
    LossBreakdown<T> vae_loss(Tape<T>& tp, Var<T> x, Var<T> noise_g, Var<T> noise_l) const {
        check_image(tp.val(x));
        GaussianPosterior<T> qg = encode_global(tp, x);
        GaussianPosterior<T> ql = encode_local(tp, x);
        Var<T> z_g = reparameterize(qg.mean, qg.scale, noise_g);
        Var<T> z_l = reparameterize(ql.mean, ql.scale, noise_l);
        const int n = tp.val(x).dim(0);
        Var<T> recon_x = neg(batch_mean(
            recon_log_likelihood(decode_joint(tp, z_g, z_l), x, T(cfg.sigma)), n));
        Var<T> kl_g = batch_mean(kl_std_normal(qg.mean, qg.scale), n);
        Var<T> kl_l = batch_mean(kl_std_normal(ql.mean, ql.scale), n);
        auto lb = fold_terms<T>({{"recon_x", recon_x},
                                 {"kl_g", mulc(kl_g, T(cfg.beta))},
                                 {"kl_l", mulc(kl_l, T(cfg.beta))}});
        lb.check_finite("vae");
        return lb;
    }

    // Joint decoder mean for explicit latents, clipped to [0,1].
    Tensor<T> generate(const Tensor<T>& z_g, const Tensor<T>& z_l) const {
        SG_CHECK(z_g.ndim() == 2 && z_g.dim(1) == cfg.z_g_dim, "generate: z_g dim mismatch");
        SG_CHECK(z_l.ndim() == 2 && z_l.dim(1) == cfg.z_l_dim, "generate: z_l dim mismatch");
        SG_CHECK(z_g.dim(0) == z_l.dim(0), "generate: batch sizes differ");
        Tape<T> tp(false);
        Tensor<T> img = tp.val(decode_joint(tp, tp.leaf(z_g), tp.leaf(z_l)));
        for (std::int64_t i = 0; i < img.size(); ++i)
            img[i] = std::clamp(img[i], T(0), T(1));
        return img;
    }

    // z_g from the content posterior mean, z_l from the scrambled style's
    // posterior mean.
    Tensor<T> style_transfer(const Tensor<T>& content, const Tensor<T>& style,
                             RngStream& rng) const {
        check_image(content);
        check_image(style);
        SG_CHECK(content.dim(0) == style.dim(0), "style_transfer: batch sizes differ");
        Tensor<T> style_hat = auxiliary_view(style, cfg.patch_size, rng);
        Tape<T> tp(false);
        GaussianPosterior<T> qg = encode_global(tp, tp.leaf(content));
        GaussianPosterior<T> ql = encode_local(tp, tp.leaf(style_hat));
        return generate(tp.val(qg.mean), tp.val(ql.mean));
    }
};

} // namespace splitgen
