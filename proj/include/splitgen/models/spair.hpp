#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "splitgen/models/common.hpp"
#include "splitgen/scramble.hpp"
#include "splitgen/spatial.hpp"

namespace splitgen {

struct SpairConfig {
    int image_size = 48;
    int channels = 3;
    int width = 32;
    int cell_size = 8;     // grid = image_size / cell_size
    int glimpse_size = 14; // decoded object patch edge
    int z_what_dim = 32;
    int z_bg_dim = 8;
    int z_l_dim = 16; // 0 drops the local pathway (baseline SPAIR)
    double s_min = 0.1, s_max = 0.5; // object scale bounds, fraction of canvas
    double pres_temp = 0.5;          // relaxed bernoulli temperature
    double beta = 1.0;
    double sigma = 0.1;
    int patch_size = 4;

    int grid() const { return image_size / cell_size; }

    void validate() const {
        SG_CHECK(image_size > 0 && image_size % 16 == 0,
                 "spair: image_size must be a positive multiple of 16");
        SG_CHECK(channels > 0 && width > 0, "spair: channels and width must be positive");
        SG_CHECK(cell_size >= 2 && (cell_size & (cell_size - 1)) == 0,
                 "spair: cell_size must be a power of two, got ", cell_size);
        SG_CHECK(image_size % cell_size == 0, "spair: cell_size must divide image_size");
        SG_CHECK(glimpse_size >= 4 && glimpse_size % 2 == 0,
                 "spair: glimpse_size must be even and at least 4");
        SG_CHECK(z_what_dim > 0 && z_bg_dim > 0 && z_l_dim >= 0, "spair: bad latent dims");
        SG_CHECK(s_min > 0.0 && s_max > s_min && s_max <= 1.0, "spair: bad scale bounds");
        SG_CHECK(pres_temp > 0.0, "spair: pres_temp must be positive");
        SG_CHECK(beta >= 0.0 && sigma > 0.0, "spair: bad loss weights");
        SG_CHECK(patch_size > 0 && image_size % patch_size == 0,
                 "spair: patch_size must divide image_size");
    }
};

// Per-image latents at posterior means; rows of per-cell arrays are
// cell-major (row g*N + n, g = gy*grid + gx), matching cells_to_rows.
template <typename T>
struct SpairLatents {
    int batch = 0;
    int grid = 0;
    Tensor<T> pres;    // [G*G*N, 1] presence probabilities
    Tensor<T> where_t; // [G*G*N, 4] glimpse transforms (sx, sy, cx, cy)
    Tensor<T> what;    // [G*G*N, z_what]
    Tensor<T> bg;      // [N, z_bg]
    Tensor<T> l;       // [N, z_l] (empty in the baseline variant)
};

template <typename T>
struct SpairNoise {
    Tensor<T> where;    // normal, [G*G*N, 4]
    Tensor<T> what;     // normal, [G*G*N, z_what]
    Tensor<T> pres;     // logistic, [G*G*N, 1]
    Tensor<T> bg;       // normal, [N, z_bg]
    Tensor<T> l;        // normal, [N, z_l]
};

struct Detection {
    std::array<double, 4> box{}; // x0, y0, x1, y1 in pixels
    double score = 0.0;
};

// Convolutional grid of object latents (z_what, z_where, z_pres) over a
// scene background latent z_bg; the SPLIT variant concatenates a shared z_l
// from the scrambled view into the object decoder and reconstructs the
// scrambled view from z_l alone.
template <typename T>
struct SplitSpair {
    SpairConfig cfg;
    std::vector<Conv2d<T>> grid_convs;
    Conv2d<T> grid_head;     // 1x1, per-cell [pres logit | where mu | where raw]
    Conv2d<T> glimpse_conv;  // glimpse feature extractor for z_what
    GaussianHead<T> head_what;
    Linear<T> obj_fc;        // object decoder: latent -> small feature map
    Conv2d<T> obj_conv, obj_head;
    ConvTrunk<T> enc_bg;
    GaussianHead<T> head_bg;
    ConvDecoder<T> dec_bg;
    ConvTrunk<T> enc_l;
    GaussianHead<T> head_l;
    ConvDecoder<T> dec_aux;

    bool has_local() const { return cfg.z_l_dim > 0; }

    static SplitSpair create(ParamStore<T>& ps, const SpairConfig& cfg, RngStream& rng) {
        cfg.validate();
        SplitSpair m;
        m.cfg = cfg;
        int nconv = 0;
        while ((1 << nconv) < cfg.cell_size) ++nconv;
        int c = cfg.channels;
        for (int i = 0; i < nconv; ++i) {
            const int oc = cfg.width << i;
            m.grid_convs.push_back(Conv2d<T>::create(
                ps, "grid.conv" + std::to_string(i), c, oc, 4, 2, 1, rng));
            c = oc;
        }
        m.grid_head = Conv2d<T>::create(ps, "grid.head", c, 1 + 8, 1, 1, 0, rng);

        const int gw = 2 * cfg.width;
        m.glimpse_conv = Conv2d<T>::create(ps, "what.conv", cfg.channels, gw, 4, 2, 1, rng);
        const int gh = cfg.glimpse_size / 2;
        m.head_what = GaussianHead<T>::create(ps, "what.head", gw * gh * gh, cfg.z_what_dim, rng);

        m.obj_fc = Linear<T>::create(ps, "obj.fc", cfg.z_what_dim + cfg.z_l_dim,
                                     gw * gh * gh, rng);
        m.obj_conv = Conv2d<T>::create(ps, "obj.conv", gw, gw, 3, 1, 1, rng);
        m.obj_head = Conv2d<T>::create(ps, "obj.head", gw, cfg.channels + 1, 3, 1, 1, rng);

        m.enc_bg = ConvTrunk<T>::create(ps, "enc_bg", cfg.channels, cfg.width, rng);
        const int feat = m.enc_bg.feature_dim(cfg.image_size, cfg.image_size);
        m.head_bg = GaussianHead<T>::create(ps, "head_bg", feat, cfg.z_bg_dim, rng);
        m.dec_bg = ConvDecoder<T>::create(ps, "dec_bg", cfg.z_bg_dim, cfg.channels,
                                          cfg.image_size, cfg.width, rng);
        if (m.has_local()) {
            m.enc_l = ConvTrunk<T>::create(ps, "enc_l", cfg.channels, cfg.width, rng);
            m.head_l = GaussianHead<T>::create(ps, "head_l", feat, cfg.z_l_dim, rng);
            m.dec_aux = ConvDecoder<T>::create(ps, "dec_aux", cfg.z_l_dim, cfg.channels,
                                               cfg.image_size, cfg.width, rng);
        }
        return m;
    }

    void check_image(const Tensor<T>& x) const {
        SG_CHECK(x.ndim() == 4 && x.dim(1) == cfg.channels && x.dim(2) == cfg.image_size &&
                     x.dim(3) == cfg.image_size,
                 "spair: bad image batch shape ", shape_str(x.shape()));
    }

    struct GridPosteriors {
        Var<T> pres_logit;          // [G*G*N, 1]
        GaussianPosterior<T> where; // over the raw (unbounded) transform, [G*G*N, 4]
    };

    GridPosteriors encode_grid(Tape<T>& tp, Var<T> x) const {
        check_image(tp.val(x));
        Var<T> h = x;
        for (const auto& cv : grid_convs) h = leaky_relu(cv(tp, h), T(kLeakySlope));
        Var<T> rows = cells_to_rows(grid_head(tp, h)); // [G*G*N, 9]
        GridPosteriors g;
        g.pres_logit = slice_cols(rows, 0, 1);
        g.where.mean = slice_cols(rows, 1, 5);
        g.where.scale = addc(softplus(slice_cols(rows, 5, 9)), T(kScaleFloor));
        return g;
    }

    // Map a raw where sample to glimpse transforms t = (sx, sy, cx, cy):
    // scale = s_min + (s_max - s_min) * sigmoid(raw), center = cell center
    // shifted by up to 0.75 cell sizes via tanh.
    Var<T> where_to_t(Tape<T>& tp, Var<T> raw, int batch) const {
        const int G = cfg.grid();
        SG_CHECK(tp.val(raw).ndim() == 2 && tp.val(raw).dim(0) == G * G * batch &&
                     tp.val(raw).dim(1) == 4,
                 "where_to_t: bad raw shape ", shape_str(tp.val(raw).shape()));
        Tensor<T> cu(Shape{G * G * batch, 1}), cv(Shape{G * G * batch, 1});
        const double w = cfg.image_size;
        for (int gy = 0; gy < G; ++gy)
            for (int gx = 0; gx < G; ++gx)
                for (int n = 0; n < batch; ++n) {
                    const std::int64_t r = (static_cast<std::int64_t>(gy) * G + gx) * batch + n;
                    cu[r] = static_cast<T>(2.0 * (gx + 0.5) * cfg.cell_size / w - 1.0);
                    cv[r] = static_cast<T>(2.0 * (gy + 0.5) * cfg.cell_size / w - 1.0);
                }
        const T srange = T(cfg.s_max - cfg.s_min);
        Var<T> sx = addc(mulc(sigmoid(slice_cols(raw, 0, 1)), srange), T(cfg.s_min));
        Var<T> sy = addc(mulc(sigmoid(slice_cols(raw, 1, 2)), srange), T(cfg.s_min));
        const T camp = T(2.0 * 0.75 * cfg.cell_size / w); // center shift amplitude, t units
        Var<T> cx = add(tp.constant(std::move(cu)), mulc(vtanh(slice_cols(raw, 2, 3)), camp));
        Var<T> cy = add(tp.constant(std::move(cv)), mulc(vtanh(slice_cols(raw, 3, 4)), camp));
        return concat_cols(std::vector<Var<T>>{sx, sy, cx, cy});
    }

    // q(z_what | glimpse of x at t), one glimpse per cell row.
    GaussianPosterior<T> encode_what(Tape<T>& tp, Var<T> x, Var<T> t) const {
        const int n = tp.val(x).dim(0);
        const int rows = tp.val(t).dim(0);
        SG_CHECK(rows == cfg.grid() * cfg.grid() * n, "encode_what: t rows mismatch");
        Var<T> xr = repeat_batch(x, cfg.grid() * cfg.grid());
        Var<T> g = glimpse_extract(xr, t, cfg.glimpse_size, cfg.glimpse_size);
        Var<T> f = leaky_relu(glimpse_conv(tp, g), T(kLeakySlope));
        const int gh = cfg.glimpse_size / 2;
        return head_what(tp, reshape(f, Shape{rows, 2 * cfg.width * gh * gh}));
    }

    // Object decoder: per-cell latent -> color+alpha glimpse in (0,1).
    std::pair<Var<T>, Var<T>> decode_object(Tape<T>& tp, Var<T> z) const {
        const int rows = tp.val(z).dim(0);
        const int gh = cfg.glimpse_size / 2, gw = 2 * cfg.width;
        Var<T> h = reshape(leaky_relu(obj_fc(tp, z), T(kLeakySlope)), Shape{rows, gw, gh, gh});
        h = leaky_relu(obj_conv(tp, upsample_nearest2(h)), T(kLeakySlope));
        Var<T> o = sigmoid(obj_head(tp, h)); // [rows, channels+1, gs, gs]
        return {slice_chan(o, 0, cfg.channels), slice_chan(o, cfg.channels, cfg.channels + 1)};
    }

    // Composite pres-weighted pasted glimpses over the background, cells in
    // row-major order so later cells paint over earlier ones.
    Var<T> compose(Tape<T>& tp, Var<T> background, Var<T> rgb, Var<T> alpha, Var<T> t,
                   Var<T> pres, int batch) const {
        const int G = cfg.grid(), H = cfg.image_size;
        Var<T> pc = glimpse_paste(mul_bcast_chan(rgb, alpha), t, H, H);
        Var<T> pa = glimpse_paste(alpha, t, H, H);
        Var<T> canvas = background;
        for (int g = 0; g < G * G; ++g) {
            Var<T> pc_g = slice_rows(pc, g * batch, (g + 1) * batch);
            Var<T> pa_g = slice_rows(pa, g * batch, (g + 1) * batch);
            Var<T> pr_g = slice_rows(pres, g * batch, (g + 1) * batch);
            Var<T> w = reshape(
                mul_rows_scalar(reshape(pa_g, Shape{batch, H * H}), pr_g),
                Shape{batch, 1, H, H});
            Var<T> colored = reshape(
                mul_rows_scalar(reshape(pc_g, Shape{batch, cfg.channels * H * H}), pr_g),
                Shape{batch, cfg.channels, H, H});
            canvas = add(sub(canvas, mul_bcast_chan(canvas, w)), colored);
        }
        return canvas;
    }

    // -log p(x|latents) - log p(x_hat|z_l) + beta * [KL(z_what) + KL(z_where)
    // + KL(z_pres || Bern(pres_prior)) + KL(z_bg) + KL(z_l)], one sample.
    LossBreakdown<T> split_spair_loss(Tape<T>& tp, Var<T> x, Var<T> x_hat,
                                      const SpairNoise<T>& noise, double pres_prior) const {
        check_image(tp.val(x));
        SG_CHECK(pres_prior > 0.0 && pres_prior < 1.0, "spair: pres_prior must be in (0,1)");
        const int n = tp.val(x).dim(0);
        const int G = cfg.grid();

        GridPosteriors grid = encode_grid(tp, x);
        Var<T> z_where = reparameterize(grid.where.mean, grid.where.scale,
                                        tp.constant(noise.where));
        Var<T> t = where_to_t(tp, z_where, n);
        GaussianPosterior<T> qwhat = encode_what(tp, x, t);
        Var<T> z_what = reparameterize(qwhat.mean, qwhat.scale, tp.constant(noise.what));

        // relaxed bernoulli: sigmoid((logit + logistic) / temperature)
        Var<T> pres = sigmoid(mulc(add(grid.pres_logit, tp.constant(noise.pres)),
                                   T(1.0 / cfg.pres_temp)));

        GaussianPosterior<T> qbg = head_bg(tp, enc_bg(tp, x));
        Var<T> z_bg = reparameterize(qbg.mean, qbg.scale, tp.constant(noise.bg));
        Var<T> background = dec_bg(tp, z_bg);

        Var<T> obj_in = z_what;
        GaussianPosterior<T> ql;
        Var<T> z_l;
        if (has_local()) {
            check_image(tp.val(x_hat));
            SG_CHECK(tp.val(x_hat).dim(0) == n, "spair: x and x_hat batch sizes differ");
            ql = head_l(tp, enc_l(tp, x_hat));
            z_l = reparameterize(ql.mean, ql.scale, tp.constant(noise.l));
            obj_in = concat_cols(z_what, repeat_batch(z_l, G * G));
        }
        auto [rgb, alpha] = decode_object(tp, obj_in);
        Var<T> canvas = compose(tp, background, rgb, alpha, t, pres, n);

        Var<T> recon_x = neg(batch_mean(recon_log_likelihood(canvas, x, T(cfg.sigma)), n));
        Var<T> kl_what = batch_mean(kl_std_normal(qwhat.mean, qwhat.scale), n);
        Var<T> kl_where = batch_mean(kl_std_normal(grid.where.mean, grid.where.scale), n);
        Var<T> kl_pres =
            batch_mean(bernoulli_kl(sigmoid(grid.pres_logit), T(pres_prior)), n);
        Var<T> kl_bg = batch_mean(kl_std_normal(qbg.mean, qbg.scale), n);

        std::vector<std::pair<std::string, Var<T>>> terms;
        terms.emplace_back("recon_x", recon_x);
        if (has_local()) {
            Var<T> recon_aux = neg(batch_mean(
                recon_log_likelihood(dec_aux(tp, z_l), x_hat, T(cfg.sigma)), n));
            terms.emplace_back("recon_aux", recon_aux);
        }
        terms.emplace_back("kl_what", mulc(kl_what, T(cfg.beta)));
        terms.emplace_back("kl_where", mulc(kl_where, T(cfg.beta)));
        terms.emplace_back("kl_pres", mulc(kl_pres, T(cfg.beta)));
        terms.emplace_back("kl_bg", mulc(kl_bg, T(cfg.beta)));
        if (has_local()) {
            Var<T> kl_l = batch_mean(kl_std_normal(ql.mean, ql.scale), n);
            terms.emplace_back("kl_l", mulc(kl_l, T(cfg.beta)));
        }
        auto lb = fold_terms<T>(std::move(terms));
        lb.check_finite(has_local() ? "split-spair" : "spair");
        return lb;
    }

    // Posterior means for every latent; where is reported in t space.
    SpairLatents<T> infer_objects(const Tensor<T>& x, const Tensor<T>* x_hat = nullptr) const {
        check_image(x);
        const int n = x.dim(0);
        Tape<T> tp(false);
        Var<T> xv = tp.leaf(x);
        GridPosteriors grid = encode_grid(tp, xv);
        Var<T> t = where_to_t(tp, grid.where.mean, n);
        GaussianPosterior<T> qwhat = encode_what(tp, xv, t);
        SpairLatents<T> lat;
        lat.batch = n;
        lat.grid = cfg.grid();
        lat.pres = tp.val(sigmoid(grid.pres_logit));
        lat.where_t = tp.val(t);
        lat.what = tp.val(qwhat.mean);
        lat.bg = tp.val(head_bg(tp, enc_bg(tp, xv)).mean);
        if (has_local()) {
            SG_CHECK(x_hat != nullptr, "infer_objects: split variant needs x_hat");
            lat.l = tp.val(head_l(tp, enc_l(tp, tp.leaf(*x_hat))).mean);
        }
        return lat;
    }

    // Decode and composite explicit latents; output clamped to [0,1].
    Tensor<T> compose_scene(const SpairLatents<T>& lat) const {
        const int n = lat.batch, G = cfg.grid();
        SG_CHECK(lat.pres.ndim() == 2 && lat.pres.dim(0) == G * G * n,
                 "compose_scene: bad pres shape");
        Tape<T> tp(false);
        Var<T> background = dec_bg(tp, tp.leaf(lat.bg));
        Var<T> obj_in = tp.leaf(lat.what);
        if (has_local())
            obj_in = concat_cols(obj_in, repeat_batch(tp.leaf(lat.l), G * G));
        auto [rgb, alpha] = decode_object(tp, obj_in);
        Var<T> canvas = compose(tp, background, rgb, alpha, tp.leaf(lat.where_t),
                                tp.leaf(lat.pres), n);
        Tensor<T> img = tp.val(canvas);
        for (std::int64_t i = 0; i < img.size(); ++i)
            img[i] = std::clamp(img[i], T(0), T(1));
        return img;
    }

    // Cells whose presence probability strictly exceeds 1/2, per image.
    // pres is [cells*N, 1] cell-major.
    static std::vector<int> count_active(const Tensor<T>& pres, int batch) {
        SG_CHECK(pres.ndim() == 2 && pres.dim(1) == 1 && pres.dim(0) % batch == 0,
                 "count_active: bad pres shape ", shape_str(pres.shape()));
        std::vector<int> counts(static_cast<std::size_t>(batch), 0);
        for (std::int64_t r = 0; r < pres.dim(0); ++r)
            if (pres[r] > T(0.5)) ++counts[static_cast<std::size_t>(r % batch)];
        return counts;
    }

    std::vector<int> count_objects(const Tensor<T>& x) const {
        check_image(x);
        Tape<T> tp(false);
        GridPosteriors grid = encode_grid(tp, tp.leaf(x));
        return count_active(tp.val(sigmoid(grid.pres_logit)), x.dim(0));
    }

    // Pixel-space boxes for active cells, decoded from the where means. The
    // activity rule is the count_objects rule, evaluated identically.
    std::vector<std::vector<Detection>> detect(const Tensor<T>& x) const {
        check_image(x);
        const int n = x.dim(0), G = cfg.grid();
        const double W = cfg.image_size;
        Tape<T> tp(false);
        GridPosteriors grid = encode_grid(tp, tp.leaf(x));
        Var<T> prob = sigmoid(grid.pres_logit);
        Var<T> t = where_to_t(tp, grid.where.mean, n);
        const Tensor<T>& pr = tp.val(prob);
        const Tensor<T>& tt = tp.val(t);
        std::vector<std::vector<Detection>> out(static_cast<std::size_t>(n));
        for (int g = 0; g < G * G; ++g)
            for (int i = 0; i < n; ++i) {
                const std::int64_t r = static_cast<std::int64_t>(g) * n + i;
                if (!(pr[r] > T(0.5))) continue;
                const double sx = tt.at(r, 0), sy = tt.at(r, 1);
                const double cx = (tt.at(r, 2) + 1.0) * W / 2.0;
                const double cy = (tt.at(r, 3) + 1.0) * W / 2.0;
                Detection d;
                d.box = {cx - sx * W / 2.0, cy - sy * W / 2.0, cx + sx * W / 2.0,
                         cy + sy * W / 2.0};
                d.score = pr[r];
                out[static_cast<std::size_t>(i)].push_back(d);
            }
        return out;
    }

    SpairNoise<T> draw_noise(int batch, RngStream& rng) const {
        const int cells = cfg.grid() * cfg.grid() * batch;
        SpairNoise<T> nz;
        nz.where = rng.normal_tensor<T>(Shape{cells, 4});
        nz.what = rng.normal_tensor<T>(Shape{cells, cfg.z_what_dim});
        nz.pres = rng.logistic_tensor<T>(Shape{cells, 1});
        nz.bg = rng.normal_tensor<T>(Shape{batch, cfg.z_bg_dim});
        nz.l = has_local() ? rng.normal_tensor<T>(Shape{batch, cfg.z_l_dim})
                           : Tensor<T>(Shape{batch, 0});
        return nz;
    }
};

} // namespace splitgen
