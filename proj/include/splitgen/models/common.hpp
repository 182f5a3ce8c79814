#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "splitgen/nn.hpp"

namespace splitgen {

// Floor added to every softplus-parameterized scale.
inline constexpr double kScaleFloor = 1e-6;

template <typename T>
struct GaussianPosterior {
    Var<T> mean;
    Var<T> scale;
};

// Paired linear heads mapping features to a diagonal gaussian posterior.
template <typename T>
struct GaussianHead {
    Linear<T> mu;
    Linear<T> raw_scale;

    static GaussianHead create(ParamStore<T>& ps, const std::string& name, int in, int out,
                               RngStream& rng) {
        GaussianHead h;
        h.mu = Linear<T>::create(ps, name + ".mu", in, out, rng);
        h.raw_scale = Linear<T>::create(ps, name + ".raw_scale", in, out, rng);
        return h;
    }

    GaussianPosterior<T> operator()(Tape<T>& tp, Var<T> h) const {
        return {mu(tp, h), addc(softplus(raw_scale(tp, h)), T(kScaleFloor))};
    }
};

// Named scalar loss terms. The total is the fold-left sum of the terms in
// declaration order, so the reported values add up to the total bitwise in
// the working precision. Terms carry their weights already applied.
template <typename T>
struct LossBreakdown {
    Var<T> total;
    std::vector<std::pair<std::string, Var<T>>> terms;

    double value(const std::string& name) const {
        for (const auto& [n, v] : terms)
            if (n == name) return scalar_value(v);
        fail("loss breakdown has no term named '", name, "'");
    }

    double total_value() const { return scalar_value(total); }

    void check_finite(const char* model) const {
        for (const auto& [n, v] : terms)
            SG_CHECK(std::isfinite(scalar_value(v)), model, " loss term '", n, "' is not finite");
        SG_CHECK(std::isfinite(total_value()), model, " total loss is not finite");
    }
};

template <typename T>
LossBreakdown<T> fold_terms(std::vector<std::pair<std::string, Var<T>>> terms) {
    SG_CHECK(!terms.empty(), "fold_terms: no terms");
    Var<T> tot = terms[0].second;
    for (std::size_t i = 1; i < terms.size(); ++i) tot = add(tot, terms[i].second);
    return {tot, std::move(terms)};
}

// Sum of a per-row column divided by the batch size. Rows may outnumber the
// batch (per-cell latents contribute several rows per image).
template <typename T>
Var<T> batch_mean(Var<T> per_row, int batch) {
    return mulc(sum_all(per_row), T(1) / T(batch));
}

} // namespace splitgen
