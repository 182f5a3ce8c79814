#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "splitgen/checkpoint.hpp"
#include "splitgen/config.hpp"
#include "splitgen/datasets.hpp"
#include "splitgen/eval.hpp"
#include "splitgen/gridviz.hpp"
#include "splitgen/image.hpp"
#include "splitgen/train.hpp"

using namespace splitgen;

namespace {

std::string env_data_root() {
    const char* v = std::getenv("SPLITGEN_DATA_DIR");
    return v ? v : "";
}

Tensor<float> read_image_batch1(const std::string& path) {
    Tensor<float> img = read_png(path); // [C,H,W]
    return img.reshaped(Shape{1, img.dim(0), img.dim(1), img.dim(2)});
}

Tensor<float> nth_image(const Tensor<float>& batch, int i) {
    const int C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    Tensor<float> out(Shape{C, H, W});
    const std::int64_t n = out.size();
    const float* src = batch.data() + static_cast<std::int64_t>(i) * n;
    std::copy(src, src + n, out.data());
    return out;
}

struct GenDataArgs {
    std::string kind, split = "train", out;
    std::uint64_t seed = 0;
    int n = -1, size = -1, classes = -1;
};

int run_gen_data(const GenDataArgs& a) {
    int written = 0;
    if (a.kind == "glyphs") {
        GlyphConfig c;
        if (a.n > 0) c.n_images = a.n;
        if (a.size > 0) c.canvas_size = a.size;
        if (a.classes > 0) c.n_classes = a.classes;
        c.seed = a.seed;
        written = static_cast<int>(generate_glyphs(c, a.split, a.out).records.size());
    } else {
        SceneConfig c = a.kind == "scenes-easy" ? scene_config_easy() : scene_config_hard();
        if (a.n > 0) c.n_images = a.n;
        if (a.size > 0) c.canvas_size = a.size;
        c.seed = a.seed;
        written = static_cast<int>(generate_scenes(c, a.split, a.out).records.size());
    }
    std::printf("wrote %d %s/%s images to %s\n", written, a.kind.c_str(), a.split.c_str(),
                a.out.c_str());
    return 0;
}

struct ScrambleArgs {
    std::string in, out;
    int r = 4;
    std::uint64_t seed = 0;
};

int run_scramble(const ScrambleArgs& a) {
    const Tensor<float> batch = read_image_batch1(a.in);
    RngStream rng(a.seed);
    const Tensor<float> scrambled = auxiliary_view(batch, a.r, rng);
    write_png(a.out, nth_image(scrambled, 0));
    std::printf("scrambled %s (r=%d) -> %s\n", a.in.c_str(), a.r, a.out.c_str());
    return 0;
}

struct TrainArgs {
    std::string config, out, resume, data_root = env_data_root();
};

int run_train(const TrainArgs& a) {
    RunConfig cfg = load_config(a.config);
    if (!a.out.empty()) cfg.out = a.out;
    const TrainResult res = train(cfg, a.data_root, a.resume);
    if (res.aborted_non_finite) {
        std::fprintf(stderr,
                     "error: training diverged (non-finite loss) after %llu steps; "
                     "last good checkpoint: %s\n",
                     static_cast<unsigned long long>(res.steps_done),
                     res.final_checkpoint.c_str());
        return 1;
    }
    std::printf("trained %s for %llu steps -> %s\n", cfg.kind.c_str(),
                static_cast<unsigned long long>(res.steps_done), res.final_checkpoint.c_str());
    return 0;
}

struct EvalArgs {
    std::string checkpoint, dataset, metric, mode = "direct", out;
    std::string train_dataset, data_root = env_data_root();
    std::uint64_t seed = 0;
    int clf_steps = 3000, clf_width = 16;
};

int run_eval(const EvalArgs& a) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const RunConfig& cfg = ck.config;
    const std::string fam = cfg.family();
    const std::string digest = digest_hex(fnv1a64(ck.config_text));
    const Dataset ds = load_dataset(resolve_dataset_dir(a.dataset, a.data_root));

    RngStream init = RngStream::named(cfg.seed, "init");
    ParamStore<float> ps;
    EvalReport rep;
    if (a.metric == "latent-swap") {
        SG_CHECK(fam == "vae", "latent-swap wants a vae-family checkpoint, got ", cfg.kind);
        SG_CHECK(!a.train_dataset.empty(),
                 "latent-swap needs --train-dataset to fit the reference classifier");
        auto m = SplitVae<float>::create(ps, cfg.vae, init);
        restore_params(ps, ck);
        const Dataset train = load_dataset(resolve_dataset_dir(a.train_dataset, a.data_root));
        ClassifierTrainConfig tc;
        tc.steps = a.clf_steps;
        tc.width = a.clf_width;
        ParamStore<float> cps;
        const auto clf = train_reference_classifier(cps, train, ds, tc, a.seed);
        rep = latent_swap_eval(m, clf, ds, swap_mode_from_string(a.mode), a.seed, 64, digest);
    } else if (a.metric == "clustering-acc") {
        SG_CHECK(fam == "gmvae", "clustering-acc wants a gmvae-family checkpoint, got ",
                 cfg.kind);
        auto m = SplitGmvae<float>::create(ps, cfg.gmvae, init);
        restore_params(ps, ck);
        std::vector<int> assign;
        assign.reserve(static_cast<std::size_t>(ds.size()));
        std::vector<int> idx;
        for (int at = 0; at < ds.size(); at += 256) {
            idx.clear();
            for (int i = at; i < std::min(at + 256, ds.size()); ++i) idx.push_back(i);
            for (int c : m.infer_cluster(ds.batch(idx))) assign.push_back(c);
        }
        rep.metric = "clustering-acc";
        rep.value = clustering_acc(assign, ds.labels);
        rep.n = ds.size();
        rep.seed = a.seed;
        rep.config_digest = digest;
    } else { // counting
        SG_CHECK(fam == "spair", "counting wants a spair-family checkpoint, got ", cfg.kind);
        auto m = SplitSpair<float>::create(ps, cfg.spair, init);
        restore_params(ps, ck);
        rep.metric = "counting";
        rep.value = counting_accuracy(m, ds);
        rep.n = ds.size();
        rep.seed = a.seed;
        rep.config_digest = digest;
    }

    std::ofstream os(a.out);
    SG_CHECK(os.good(), "cannot write report ", a.out);
    os << nlohmann::json(rep).dump(2) << "\n";
    std::printf("%s = %.2f (n=%d) -> %s\n", rep.metric.c_str(), rep.value, rep.n, a.out.c_str());
    return 0;
}

struct TransferArgs {
    std::string checkpoint, content, style, out;
    std::uint64_t seed = 0;
};

int run_transfer(const TransferArgs& a) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    SG_CHECK(ck.config.family() == "vae", "transfer wants a vae-family checkpoint, got ",
             ck.config.kind);
    RngStream init = RngStream::named(ck.config.seed, "init");
    ParamStore<float> ps;
    auto m = SplitVae<float>::create(ps, ck.config.vae, init);
    restore_params(ps, ck);
    RngStream rng = RngStream::named(a.seed, "transfer-scramble");
    const Tensor<float> img = m.style_transfer(read_image_batch1(a.content),
                                               read_image_batch1(a.style), rng);
    write_png(a.out, nth_image(img, 0));
    std::printf("transferred style of %s onto %s -> %s\n", a.style.c_str(), a.content.c_str(),
                a.out.c_str());
    return 0;
}

struct SampleArgs {
    std::string checkpoint, mode, out, dataset, data_root = env_data_root();
    int rows = 4, cols = 8;
    std::uint64_t seed = 0;
};

int run_sample(const SampleArgs& a) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const RunConfig& cfg = ck.config;
    RngStream init = RngStream::named(cfg.seed, "init");
    RngStream rng = RngStream::named(a.seed, "sample");
    ParamStore<float> ps;
    std::vector<Tensor<float>> panel;
    int rows = a.rows, cols = a.cols;

    if (a.mode == "vary-zg" || a.mode == "vary-zl") {
        SG_CHECK(cfg.family() == "vae", a.mode, " wants a vae-family checkpoint, got ", cfg.kind);
        auto m = SplitVae<float>::create(ps, cfg.vae, init);
        restore_params(ps, ck);
        // each row pins the latent group that is not being varied
        for (int r = 0; r < rows; ++r) {
            const Tensor<float> pinned = rng.normal_tensor<float>(
                Shape{1, a.mode == "vary-zg" ? cfg.vae.z_l_dim : cfg.vae.z_g_dim});
            for (int c = 0; c < cols; ++c) {
                const Tensor<float> varied = rng.normal_tensor<float>(
                    Shape{1, a.mode == "vary-zg" ? cfg.vae.z_g_dim : cfg.vae.z_l_dim});
                const Tensor<float>& zg = a.mode == "vary-zg" ? varied : pinned;
                const Tensor<float>& zl = a.mode == "vary-zg" ? pinned : varied;
                panel.push_back(nth_image(m.generate(zg, zl), 0));
            }
        }
    } else if (a.mode == "per-cluster") {
        SG_CHECK(cfg.family() == "gmvae", "per-cluster wants a gmvae-family checkpoint, got ",
                 cfg.kind);
        auto m = SplitGmvae<float>::create(ps, cfg.gmvae, init);
        restore_params(ps, ck);
        rows = cfg.gmvae.k; // one row per mixture component
        for (int y = 0; y < rows; ++y)
            for (int c = 0; c < cols; ++c) {
                const Tensor<float> zl = rng.normal_tensor<float>(Shape{1, cfg.gmvae.z_l_dim});
                panel.push_back(nth_image(m.sample_from_cluster(y, zl, rng), 0));
            }
    } else { // detect
        SG_CHECK(cfg.family() == "spair", "detect wants a spair-family checkpoint, got ",
                 cfg.kind);
        SG_CHECK(!a.dataset.empty(), "detect needs --dataset for input images");
        auto m = SplitSpair<float>::create(ps, cfg.spair, init);
        restore_params(ps, ck);
        const Dataset ds = load_dataset(resolve_dataset_dir(a.dataset, a.data_root));
        const int n = std::min(rows * cols, ds.size());
        SG_CHECK(n > 0, "detect: dataset is empty");
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        const Tensor<float> xb = ds.batch(idx);
        const auto dets = m.detect(xb);
        for (int i = 0; i < n; ++i) {
            Tensor<float> img = nth_image(xb, i);
            for (const Detection& d : dets[static_cast<std::size_t>(i)])
                draw_box(img, d.box[0], d.box[1], d.box[2], d.box[3]);
            panel.push_back(std::move(img));
        }
    }

    emit_grid(panel, rows, cols, a.out);
    std::printf("sampled %s panel (%dx%d) -> %s\n", a.mode.c_str(), rows, cols, a.out.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"splitgen: local/global latent disentanglement models"};
    app.require_subcommand(1);

    GenDataArgs gd;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--kind", gd.kind, "dataset family")
        ->required()
        ->check(CLI::IsMember({"glyphs", "scenes-easy", "scenes-hard"}));
    gen->add_option("--split", gd.split, "train or test factors")
        ->check(CLI::IsMember({"train", "test"}));
    gen->add_option("--out", gd.out, "output directory")->required();
    gen->add_option("--seed", gd.seed, "generation seed");
    gen->add_option("--n", gd.n, "number of images (default per kind)");
    gen->add_option("--size", gd.size, "canvas size in pixels (default per kind)");
    gen->add_option("--classes", gd.classes, "glyph class count");

    ScrambleArgs sc;
    auto* scr = app.add_subcommand("scramble", "patch-scramble one image");
    scr->add_option("--in", sc.in, "input PNG")->required();
    scr->add_option("--out", sc.out, "output PNG")->required();
    scr->add_option("--r", sc.r, "patch edge in pixels");
    scr->add_option("--seed", sc.seed, "permutation seed");

    TrainArgs tr;
    auto* trn = app.add_subcommand("train", "train a model from a config file");
    trn->add_option("--config", tr.config, "run config file")->required();
    trn->add_option("--out", tr.out, "output directory (overrides the config)");
    trn->add_option("--resume", tr.resume, "checkpoint to resume from");
    trn->add_option("--data-root", tr.data_root, "dataset root (default $SPLITGEN_DATA_DIR)");

    EvalArgs ev;
    auto* evl = app.add_subcommand("eval", "score a checkpoint and write a JSON report");
    evl->add_option("--checkpoint", ev.checkpoint, "trained checkpoint")->required();
    evl->add_option("--dataset", ev.dataset, "evaluation dataset dir")->required();
    evl->add_option("--metric", ev.metric, "evaluation protocol")
        ->required()
        ->check(CLI::IsMember({"latent-swap", "clustering-acc", "counting"}));
    evl->add_option("--mode", ev.mode, "latent-swap mode")
        ->check(CLI::IsMember({"direct", "resample_zl", "resample_zg"}));
    evl->add_option("--out", ev.out, "report JSON path")->required();
    evl->add_option("--seed", ev.seed, "protocol seed");
    evl->add_option("--train-dataset", ev.train_dataset,
                    "classifier training dataset (latent-swap only)");
    evl->add_option("--clf-steps", ev.clf_steps, "reference classifier budget");
    evl->add_option("--clf-width", ev.clf_width, "reference classifier width");
    evl->add_option("--data-root", ev.data_root, "dataset root (default $SPLITGEN_DATA_DIR)");

    TransferArgs tf;
    auto* trf = app.add_subcommand("transfer", "move one image's local style onto another");
    trf->add_option("--checkpoint", tf.checkpoint, "trained vae-family checkpoint")->required();
    trf->add_option("--content", tf.content, "content image PNG")->required();
    trf->add_option("--style", tf.style, "style image PNG")->required();
    trf->add_option("--out", tf.out, "output PNG")->required();
    trf->add_option("--seed", tf.seed, "scramble seed");

    SampleArgs sm;
    auto* smp = app.add_subcommand("sample", "emit a qualitative sample grid");
    smp->add_option("--checkpoint", sm.checkpoint, "trained checkpoint")->required();
    smp->add_option("--mode", sm.mode, "panel kind")
        ->required()
        ->check(CLI::IsMember({"vary-zg", "vary-zl", "per-cluster", "detect"}));
    smp->add_option("--out", sm.out, "output PNG")->required();
    smp->add_option("--dataset", sm.dataset, "input dataset (detect only)");
    smp->add_option("--rows", sm.rows, "grid rows (ignored by per-cluster)");
    smp->add_option("--cols", sm.cols, "grid columns");
    smp->add_option("--seed", sm.seed, "sampling seed");
    smp->add_option("--data-root", sm.data_root, "dataset root (default $SPLITGEN_DATA_DIR)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_gen_data(gd);
        if (scr->parsed()) return run_scramble(sc);
        if (trn->parsed()) return run_train(tr);
        if (evl->parsed()) return run_eval(ev);
        if (trf->parsed()) return run_transfer(tf);
        if (smp->parsed()) return run_sample(sm);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
