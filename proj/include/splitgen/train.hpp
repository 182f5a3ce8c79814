#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "splitgen/checkpoint.hpp"
#include "splitgen/config.hpp"
#include "splitgen/datasets.hpp"
#include "splitgen/models/gmvae.hpp"
#include "splitgen/models/spair.hpp"
#include "splitgen/models/vae.hpp"
#include "splitgen/nn.hpp"
#include "splitgen/scramble.hpp"

namespace splitgen {

// CSV column names, fixed per kind. The first computed loss is checked
// against this list so the header can never drift from the logged terms.
inline std::vector<std::string> loss_term_names(const RunConfig& cfg) {
    const std::string fam = cfg.family();
    if (fam == "vae") {
        if (cfg.is_split()) return {"recon_x", "recon_aux", "kl_g", "kl_l"};
        return {"recon_x", "kl_g", "kl_l"};
    }
    if (fam == "gmvae") {
        if (cfg.is_split()) return {"recon_x", "recon_aux", "kl_y", "kl_g", "kl_l"};
        return {"recon_x", "kl_y", "kl_g"};
    }
    if (cfg.is_split())
        return {"recon_x", "recon_aux", "kl_what", "kl_where", "kl_pres", "kl_bg", "kl_l"};
    return {"recon_x", "kl_what", "kl_where", "kl_pres", "kl_bg"};
}

// Object presence prior, annealed 0.5 -> 0.05 over the first third of the
// budget and held there; a loose early prior lets boxes latch onto objects
// before sparsity pressure kicks in.
inline double spair_pres_prior(std::uint64_t step, std::uint64_t total_steps) {
    const double hi = 0.5, lo = 0.05;
    const double third = static_cast<double>(total_steps) / 3.0;
    if (third <= 0.0 || static_cast<double>(step) >= third) return lo;
    return hi + (lo - hi) * (static_cast<double>(step) / third);
}

inline std::string resolve_dataset_dir(const std::string& dataset, const std::string& data_root) {
    if (dataset.empty() || dataset.front() == '/' || data_root.empty()) return dataset;
    if (std::filesystem::exists(std::filesystem::path(dataset) / "manifest.json")) return dataset;
    return (std::filesystem::path(data_root) / dataset).string();
}

struct TrainResult {
    std::string out_dir;
    std::string final_checkpoint; // last checkpoint written (final or last-good)
    std::string curve_csv;
    std::uint64_t steps_done = 0;
    bool aborted_non_finite = false;
};

// Runs (or resumes) one training run. Fully deterministic: the master seed
// fans out to named streams for init, data order, scrambling and latent
// noise, so identical configs produce bitwise identical curves and weights.
inline TrainResult train(const RunConfig& cfg, const std::string& data_root = "",
                         const std::string& resume_path = "") {
    cfg.validate();
    SG_CHECK(!cfg.out.empty(), "train: out directory is required");
    const std::string canonical = canonical_config_text(cfg);

    const std::string ds_dir = resolve_dataset_dir(cfg.dataset, data_root);
    Dataset ds = load_dataset(ds_dir);
    SG_CHECK(ds.size() > 0, "train: dataset ", ds_dir, " is empty");

    const std::string fam = cfg.family();
    const Shape& ish = ds.images.shape();
    const int want_c = fam == "vae"    ? cfg.vae.channels
                       : fam == "gmvae" ? cfg.gmvae.channels
                                        : cfg.spair.channels;
    const int want_s = fam == "vae"    ? cfg.vae.image_size
                       : fam == "gmvae" ? cfg.gmvae.image_size
                                        : cfg.spair.image_size;
    SG_CHECK(ish[1] == want_c && ish[2] == want_s && ish[3] == want_s,
             "train: dataset images are ", shape_str(ish), " but the ", cfg.kind,
             " config wants ", want_c, "x", want_s, "x", want_s);

    std::filesystem::create_directories(cfg.out);
    {
        std::ofstream os(std::filesystem::path(cfg.out) / "config.txt");
        os << canonical;
        std::ofstream vs(std::filesystem::path(cfg.out) / "version.txt");
        vs << "checkpoint-format " << kCkptVersion << "\n"
           << "config-digest " << digest_hex(fnv1a64(canonical)) << "\n";
    }

    // named streams fanned out from the master seed
    RngStream init = RngStream::named(cfg.seed, "init");
    RngStream order = RngStream::named(cfg.seed, "data-order");
    RngStream scramble = RngStream::named(cfg.seed, "scramble");
    RngStream latent = RngStream::named(cfg.seed, "latent-noise");

    ParamStore<float> ps;
    std::optional<SplitVae<float>> vae_m;
    std::optional<SplitGmvae<float>> gmvae_m;
    std::optional<SplitSpair<float>> spair_m;
    int patch = 0;
    if (fam == "vae") {
        vae_m.emplace(SplitVae<float>::create(ps, cfg.vae, init));
        patch = cfg.vae.patch_size;
    } else if (fam == "gmvae") {
        gmvae_m.emplace(SplitGmvae<float>::create(ps, cfg.gmvae, init));
        patch = cfg.gmvae.patch_size;
    } else {
        spair_m.emplace(SplitSpair<float>::create(ps, cfg.spair, init));
        patch = cfg.spair.patch_size;
    }

    Adam<float> opt;
    opt.lr = cfg.lr;
    std::uint64_t start = 0;
    if (!resume_path.empty()) {
        Checkpoint ck = load_checkpoint(resume_path);
        SG_CHECK(ck.config_text == canonical,
                 "resume: checkpoint was trained with a different config; refusing");
        restore_params(ps, ck);
        opt.t = ck.adam_t;
        order = ck.order;
        scramble = ck.scramble;
        latent = ck.latent;
        start = ck.step;
        SG_CHECK(start <= static_cast<std::uint64_t>(cfg.steps), "resume: checkpoint is at step ",
                 start, ", past the configured budget ", cfg.steps);
    }

    const std::vector<std::string> names = loss_term_names(cfg);
    const std::string csv_path = (std::filesystem::path(cfg.out) / "loss.csv").string();
    const bool append = !resume_path.empty() && std::filesystem::exists(csv_path);
    std::ofstream csv(csv_path, append ? std::ios::app : std::ios::trunc);
    SG_CHECK(csv.good(), "train: cannot open ", csv_path);
    if (!append) {
        csv << "step,total";
        for (const auto& n : names) csv << "," << n;
        csv << "\n";
    }

    auto ckpt_name = [&](std::uint64_t s) {
        return (std::filesystem::path(cfg.out) / ("ckpt-" + std::to_string(s) + ".bin")).string();
    };
    auto save_at = [&](const std::string& path, std::uint64_t s) {
        save_checkpoint(path, cfg, ps, opt.t, order, scramble, latent, s);
        return path;
    };

    TrainResult res;
    res.out_dir = cfg.out;
    res.curve_csv = csv_path;
    res.final_checkpoint = save_at(ckpt_name(start), start); // last-good from the outset

    const int n = cfg.batch;
    char buf[40];
    for (std::uint64_t step = start; step < static_cast<std::uint64_t>(cfg.steps); ++step) {
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = order.below_int(static_cast<int>(ds.size()));
        const Tensor<float> xb = ds.batch(idx);

        Tape<float> tp;
        LossBreakdown<float> lb;
        try {
            if (fam == "vae") {
                const Tensor<float> ng = latent.normal_tensor<float>(Shape{n, cfg.vae.z_g_dim});
                const Tensor<float> nl = latent.normal_tensor<float>(Shape{n, cfg.vae.z_l_dim});
                Var<float> x = tp.constant(xb);
                if (cfg.is_split()) {
                    Var<float> xh = tp.constant(auxiliary_view(xb, patch, scramble));
                    lb = vae_m->split_vae_loss(tp, x, xh, tp.constant(ng), tp.constant(nl));
                } else {
                    lb = vae_m->vae_loss(tp, x, tp.constant(ng), tp.constant(nl));
                }
            } else if (fam == "gmvae") {
                const Tensor<float> ng = latent.normal_tensor<float>(Shape{n, cfg.gmvae.z_g_dim});
                const Tensor<float> nl = latent.normal_tensor<float>(Shape{n, cfg.gmvae.z_l_dim});
                const Tensor<float> gn = latent.gumbel_tensor<float>(Shape{n, cfg.gmvae.k});
                Var<float> x = tp.constant(xb);
                Var<float> xh = cfg.is_split()
                                    ? tp.constant(auxiliary_view(xb, patch, scramble))
                                    : x; // unused by the baseline loss
                lb = gmvae_m->split_gmvae_loss(tp, x, xh, tp.constant(ng), tp.constant(nl),
                                               tp.constant(gn));
            } else {
                const auto nz = spair_m->draw_noise(n, latent);
                Var<float> x = tp.constant(xb);
                Var<float> xh = cfg.is_split()
                                    ? tp.constant(auxiliary_view(xb, patch, scramble))
                                    : x;
                lb = spair_m->split_spair_loss(
                    tp, x, xh, nz,
                    spair_pres_prior(step, static_cast<std::uint64_t>(cfg.steps)));
            }
        } catch (const error& e) {
            // a diverged run shows up as a non-finite loss term, as a scale
            // head underflowing to zero (softplus of a huge negative weight),
            // or as a validation error thrown on non-finite weights; anything
            // else is a genuine bug and propagates
            const std::string what = e.what();
            bool diverged = what.find("finite") != std::string::npos ||
                            what.find("non-positive scale") != std::string::npos;
            for (std::size_t i = 0; i < ps.size() && !diverged; ++i) {
                const auto& v = ps.at(i).value;
                for (std::int64_t j = 0; j < v.size() && !diverged; ++j)
                    diverged = !std::isfinite(static_cast<double>(v[j]));
            }
            if (!diverged) throw;
            // stop and leave the last periodic checkpoint in place
            res.aborted_non_finite = true;
            res.steps_done = step - start;
            return res;
        }

        if (step == start) {
            SG_CHECK(lb.terms.size() == names.size(), "train: loss term count drifted");
            for (std::size_t i = 0; i < names.size(); ++i)
                SG_CHECK(lb.terms[i].first == names[i], "train: loss term order drifted");
        }

        std::snprintf(buf, sizeof(buf), "%.9g", lb.total_value());
        csv << (step + 1) << "," << buf;
        for (const auto& [nm, v] : lb.terms) {
            std::snprintf(buf, sizeof(buf), "%.9g", scalar_value(v));
            csv << "," << buf;
        }
        csv << "\n";

        tp.backward(lb.total);
        opt.step(ps);

        const std::uint64_t done = step + 1;
        if (done % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0 &&
            done < static_cast<std::uint64_t>(cfg.steps))
            res.final_checkpoint = save_at(ckpt_name(done), done);
    }

    res.steps_done = static_cast<std::uint64_t>(cfg.steps) - start;
    const std::string fin = (std::filesystem::path(cfg.out) / "ckpt-final.bin").string();
    res.final_checkpoint = save_at(fin, static_cast<std::uint64_t>(cfg.steps));
    return res;
}

} // namespace splitgen
