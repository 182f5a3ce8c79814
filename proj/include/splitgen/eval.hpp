#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "splitgen/datasets.hpp"
#include "splitgen/models/spair.hpp"
#include "splitgen/models/vae.hpp"
#include "splitgen/nn.hpp"
#include "splitgen/scramble.hpp"

namespace splitgen {

// Reference classifiers below this held-out accuracy are refused by the
// latent-swap protocol; a sloppy judge would blur the very effect measured.
inline constexpr double kClassifierGate = 97.0;

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

struct EvalReport {
    std::string metric;
    double value = 0.0; // percent
    int n = 0;          // samples scored
    std::uint64_t seed = 0;
    std::string config_digest;
};

inline void validate(const EvalReport& r) {
    SG_CHECK(!r.metric.empty(), "EvalReport: empty metric name");
    SG_CHECK(r.value >= 0.0 && r.value <= 100.0, "EvalReport: value ", r.value,
             " outside [0,100]");
    SG_CHECK(r.n > 0, "EvalReport: non-positive sample count");
}

inline void to_json(nlohmann::json& j, const EvalReport& r) {
    validate(r);
    j = nlohmann::json{{"metric", r.metric},
                       {"value", r.value},
                       {"n", r.n},
                       {"seed", r.seed},
                       {"config_digest", r.config_digest}};
}

inline void from_json(const nlohmann::json& j, EvalReport& r) {
    j.at("metric").get_to(r.metric);
    j.at("value").get_to(r.value);
    j.at("n").get_to(r.n);
    j.at("seed").get_to(r.seed);
    j.at("config_digest").get_to(r.config_digest);
    validate(r);
}

// ---------------------------------------------------------------------------
// clustering ACC
// ---------------------------------------------------------------------------

// Each cluster takes its majority true label (ties break to the smallest
// label); the score is the percentage of samples matching their cluster's
// label. Invariant under any relabeling of the cluster indices.
inline double clustering_acc(const std::vector<int>& assignments, const std::vector<int>& labels) {
    SG_CHECK(!assignments.empty(), "clustering_acc: empty input");
    SG_CHECK(assignments.size() == labels.size(), "clustering_acc: ", assignments.size(),
             " assignments vs ", labels.size(), " labels");
    std::map<int, std::map<int, int>> hist; // cluster -> label -> count
    for (std::size_t i = 0; i < assignments.size(); ++i) ++hist[assignments[i]][labels[i]];
    std::map<int, int> majority;
    for (const auto& [cluster, counts] : hist) {
        int best = 0, best_count = -1;
        for (const auto& [label, count] : counts) // ascending labels: first max wins ties
            if (count > best_count) {
                best = label;
                best_count = count;
            }
        majority[cluster] = best;
    }
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < assignments.size(); ++i)
        correct += majority[assignments[i]] == labels[i];
    return 100.0 * static_cast<double>(correct) / static_cast<double>(assignments.size());
}

// ---------------------------------------------------------------------------
// counting accuracy
// ---------------------------------------------------------------------------

inline double count_match_percent(const std::vector<int>& predicted,
                                  const std::vector<int>& truth) {
    SG_CHECK(!predicted.empty(), "count_match_percent: empty input");
    SG_CHECK(predicted.size() == truth.size(), "count_match_percent: ", predicted.size(),
             " predictions vs ", truth.size(), " truths");
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == truth[i];
    return 100.0 * static_cast<double>(correct) / static_cast<double>(predicted.size());
}

// Percentage of images whose thresholded presence count equals the recorded
// object count. Only scene datasets carry counts.
template <typename T>
double counting_accuracy(const SplitSpair<T>& m, const Dataset& ds, int batch = 64) {
    SG_CHECK(ds.size() > 0, "counting_accuracy: empty dataset");
    SG_CHECK(ds.kind.rfind("scenes", 0) == 0, "counting_accuracy: dataset kind '", ds.kind,
             "' has no object counts");
    SG_CHECK(batch > 0, "counting_accuracy: non-positive batch");
    std::vector<int> predicted;
    predicted.reserve(static_cast<std::size_t>(ds.size()));
    std::vector<int> idx;
    for (int at = 0; at < ds.size(); at += batch) {
        idx.clear();
        for (int i = at; i < std::min(at + batch, ds.size()); ++i) idx.push_back(i);
        const std::vector<int> counts = m.count_objects(ds.batch(idx).template cast<T>());
        predicted.insert(predicted.end(), counts.begin(), counts.end());
    }
    return count_match_percent(predicted, ds.counts);
}

// ---------------------------------------------------------------------------
// reference classifier
// ---------------------------------------------------------------------------

// Mean cross-entropy of row logits against integer labels.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::vector<int> labels) {
    const int n = logits.tape->val(logits).dim(0);
    SG_CHECK(static_cast<int>(labels.size()) == n, "cross_entropy: ", labels.size(),
             " labels for ", n, " rows");
    return neg(batch_mean(gather_cols(log_softmax_rows(logits), std::move(labels)), n));
}

// Small conv classifier used as the judge in the latent-swap protocol.
template <typename T>
struct ReferenceClassifier {
    int n_classes = 0;
    int image_size = 0;
    int channels = 0;
    int width = 0;
    std::vector<Conv2d<T>> convs; // three stride-2 blocks
    Linear<T> head;
    double test_accuracy = 0.0; // held-out percent, recorded by training

    static ReferenceClassifier create(ParamStore<T>& ps, const std::string& name, int channels,
                                      int image_size, int n_classes, int width, RngStream& rng) {
        SG_CHECK(image_size >= 8 && image_size % 8 == 0,
                 "classifier: image size must be a positive multiple of 8, got ", image_size);
        SG_CHECK(channels >= 1 && n_classes >= 1 && width >= 1, "classifier: bad dims");
        ReferenceClassifier c;
        c.n_classes = n_classes;
        c.image_size = image_size;
        c.channels = channels;
        c.width = width;
        int in = channels;
        for (int i = 0; i < 3; ++i) {
            const int out = width << i;
            c.convs.push_back(
                Conv2d<T>::create(ps, name + ".conv" + std::to_string(i), in, out, 4, 2, 1, rng));
            in = out;
        }
        c.head = Linear<T>::create(ps, name + ".head", c.feature_dim(), n_classes, rng);
        return c;
    }

    int feature_dim() const {
        const int s = image_size / 8;
        return 4 * width * s * s;
    }

    Var<T> logits(Tape<T>& tp, Var<T> x) const {
        // copy the shape: val() refs don't survive the conv stack's node pushes
        const Shape in = tp.val(x).shape();
        SG_CHECK(in.size() == 4 && in[1] == channels && in[2] == image_size &&
                     in[3] == image_size,
                 "classifier: want [n,", channels, ",", image_size, ",", image_size, "], got ",
                 shape_str(in));
        Var<T> h = x;
        for (const auto& c : convs) h = leaky_relu(c(tp, h), T(kLeakySlope));
        return head(tp, reshape(h, Shape{in[0], feature_dim()}));
    }

    // Argmax class per row; ties resolve to the lowest index.
    std::vector<int> classify(const Tensor<T>& x) const {
        Tape<T> tp(false);
        const Tensor<T>& lg = tp.val(logits(tp, tp.leaf(x)));
        std::vector<int> out(static_cast<std::size_t>(lg.dim(0)));
        for (int r = 0; r < lg.dim(0); ++r) {
            int best = 0;
            for (int k = 1; k < n_classes; ++k)
                if (lg.at(r, k) > lg.at(r, best)) best = k;
            out[static_cast<std::size_t>(r)] = best;
        }
        return out;
    }
};

template <typename T>
double classifier_accuracy(const ReferenceClassifier<T>& clf, const Dataset& ds,
                           int batch = 256) {
    SG_CHECK(ds.size() > 0, "classifier_accuracy: empty dataset");
    SG_CHECK(batch > 0, "classifier_accuracy: non-positive batch");
    std::int64_t correct = 0;
    std::vector<int> idx;
    for (int at = 0; at < ds.size(); at += batch) {
        idx.clear();
        for (int i = at; i < std::min(at + batch, ds.size()); ++i) idx.push_back(i);
        const std::vector<int> pred = clf.classify(ds.batch(idx).template cast<T>());
        for (std::size_t k = 0; k < idx.size(); ++k)
            correct += pred[k] == ds.labels[static_cast<std::size_t>(idx[k])];
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

struct ClassifierTrainConfig {
    int width = 16;
    int steps = 3000;
    int batch = 64;
    double lr = 1e-3;
    double min_accuracy = kClassifierGate;
};

// Trains a fresh classifier on `train`, records its held-out accuracy on
// `test` and refuses to hand over a judge weaker than the gate.
template <typename T>
ReferenceClassifier<T> train_reference_classifier(ParamStore<T>& ps, const Dataset& train,
                                                  const Dataset& test,
                                                  const ClassifierTrainConfig& tc,
                                                  std::uint64_t seed) {
    SG_CHECK(ps.size() == 0, "train_reference_classifier: wants a fresh parameter store");
    SG_CHECK(train.size() > 0 && test.size() > 0, "train_reference_classifier: empty split");
    SG_CHECK(tc.steps >= 0 && tc.batch > 0 && tc.lr > 0, "train_reference_classifier: bad budget");
    const int C = train.images.dim(1), S = train.images.dim(2);
    SG_CHECK(S == train.images.dim(3), "train_reference_classifier: non-square images");
    SG_CHECK(test.images.dim(1) == C && test.images.dim(2) == S && test.images.dim(3) == S,
             "train_reference_classifier: train/test image dims differ");
    int n_classes = 1;
    for (int l : train.labels) n_classes = std::max(n_classes, l + 1);
    for (int l : test.labels) n_classes = std::max(n_classes, l + 1);

    RngStream init = RngStream::named(seed, "clf-init");
    RngStream order = RngStream::named(seed, "clf-order");
    auto clf = ReferenceClassifier<T>::create(ps, "clf", C, S, n_classes, tc.width, init);
    Adam<T> opt;
    opt.lr = tc.lr;
    std::vector<int> idx(static_cast<std::size_t>(tc.batch));
    std::vector<int> yb(static_cast<std::size_t>(tc.batch));
    for (int step = 0; step < tc.steps; ++step) {
        for (int i = 0; i < tc.batch; ++i) {
            idx[static_cast<std::size_t>(i)] = order.below_int(train.size());
            yb[static_cast<std::size_t>(i)] =
                train.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
        }
        Tape<T> tp;
        Var<T> loss = cross_entropy(clf.logits(tp, tp.leaf(train.batch(idx).template cast<T>())),
                                    yb);
        SG_CHECK(std::isfinite(static_cast<double>(tp.val(loss)[0])),
                 "train_reference_classifier: non-finite loss at step ", step);
        tp.backward(loss);
        opt.step(ps);
    }
    clf.test_accuracy = classifier_accuracy(clf, test);
    SG_CHECK(clf.test_accuracy >= tc.min_accuracy, "reference classifier reached ",
             clf.test_accuracy, "% held-out accuracy, below the ", tc.min_accuracy,
             "% gate; increase its training budget");
    return clf;
}

// ---------------------------------------------------------------------------
// latent-swap protocol
// ---------------------------------------------------------------------------

enum class SwapMode { direct, resample_zl, resample_zg };

inline std::string to_string(SwapMode m) {
    switch (m) {
        case SwapMode::direct: return "direct";
        case SwapMode::resample_zl: return "resample_zl";
        case SwapMode::resample_zg: return "resample_zg";
    }
    SG_CHECK(false, "unreachable swap mode");
    return {};
}

inline SwapMode swap_mode_from_string(const std::string& s) {
    if (s == "direct") return SwapMode::direct;
    if (s == "resample_zl") return SwapMode::resample_zl;
    if (s == "resample_zg") return SwapMode::resample_zg;
    SG_CHECK(false, "unknown swap mode '", s, "'");
    return SwapMode::direct;
}

// Encode each test image to posterior means, optionally replace one latent
// group with a fresh standard-normal draw (one per image), decode, and score
// the reconstruction with the reference classifier.
template <typename T>
EvalReport latent_swap_eval(const SplitVae<T>& m, const ReferenceClassifier<T>& clf,
                            const Dataset& ds, SwapMode mode, std::uint64_t seed, int batch = 64,
                            std::string config_digest = {}) {
    SG_CHECK(ds.size() > 0, "latent_swap_eval: empty dataset");
    SG_CHECK(batch > 0, "latent_swap_eval: non-positive batch");
    SG_CHECK(clf.test_accuracy >= kClassifierGate, "latent_swap_eval: classifier accuracy ",
             clf.test_accuracy, "% is below the ", kClassifierGate, "% gate");
    SG_CHECK(clf.image_size == m.cfg.image_size && clf.channels == m.cfg.channels,
             "latent_swap_eval: classifier expects ", clf.channels, "x", clf.image_size,
             " images, model produces ", m.cfg.channels, "x", m.cfg.image_size);
    RngStream scramble = RngStream::named(seed, "swap-scramble");
    RngStream latent = RngStream::named(seed, "swap-latent");
    std::int64_t correct = 0;
    std::vector<int> idx;
    for (int at = 0; at < ds.size(); at += batch) {
        idx.clear();
        for (int i = at; i < std::min(at + batch, ds.size()); ++i) idx.push_back(i);
        const Tensor<T> xb = ds.batch(idx).template cast<T>();
        const Tensor<T> xh = auxiliary_view(xb, m.cfg.patch_size, scramble);
        Tensor<T> zg, zl;
        {
            Tape<T> tp(false);
            auto [qg, ql] = m.encode(tp, tp.leaf(xb), tp.leaf(xh));
            zg = tp.val(qg.mean);
            zl = tp.val(ql.mean);
        }
        if (mode == SwapMode::resample_zl) zl = latent.normal_tensor<T>(zl.shape());
        if (mode == SwapMode::resample_zg) zg = latent.normal_tensor<T>(zg.shape());
        const std::vector<int> pred = clf.classify(m.generate(zg, zl));
        for (std::size_t k = 0; k < idx.size(); ++k)
            correct += pred[k] == ds.labels[static_cast<std::size_t>(idx[k])];
    }
    EvalReport r;
    r.metric = "latent-swap/" + to_string(mode);
    r.value = 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
    r.n = ds.size();
    r.seed = seed;
    r.config_digest = std::move(config_digest);
    return r;
}

} // namespace splitgen
