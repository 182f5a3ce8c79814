#pragma once

#include <numbers>

#include "splitgen/ops.hpp"

namespace splitgen {

namespace detail {

template <typename T>
void check_positive_scale(Tape<T>& tp, Var<T> scale, const char* who) {
    const Tensor<T>& s = tp.val(scale);
    for (std::int64_t i = 0; i < s.size(); ++i)
        SG_CHECK(s[i] > T(0), who, ": non-positive scale at index ", i);
}

} // namespace detail

// All posteriors are diagonal Gaussians given as (mean, scale) pairs of
// [N,D] vars; results are per-sample [N] vars.

template <typename T>
Var<T> kl_std_normal(Var<T> mean, Var<T> scale) {
    detail::check_positive_scale(*mean.tape, scale, "kl_std_normal");
    auto s2 = square(scale);
    auto inner = sub(addc(add(s2, square(mean)), T(-1)), mulc(vlog(scale), T(2)));
    return mulc(sum_per_sample(inner), T(0.5));
}

template <typename T>
Var<T> kl_diag_gaussian(Var<T> mean_q, Var<T> scale_q, Var<T> mean_p, Var<T> scale_p) {
    detail::check_positive_scale(*mean_q.tape, scale_q, "kl_diag_gaussian");
    detail::check_positive_scale(*mean_p.tape, scale_p, "kl_diag_gaussian");
    auto var_ratio = div(square(scale_q), square(scale_p));
    auto mean_term = div(square(sub(mean_q, mean_p)), square(scale_p));
    auto log_term = mulc(sub(vlog(scale_p), vlog(scale_q)), T(2));
    auto inner = add(addc(add(var_ratio, mean_term), T(-1)), log_term);
    return mulc(sum_per_sample(inner), T(0.5));
}

template <typename T>
Var<T> reparameterize(Var<T> mean, Var<T> scale, Var<T> noise) {
    return add(mean, mul(scale, noise));
}

// softmax((logits + g)/tau), rows on the simplex.
template <typename T>
Var<T> gumbel_softmax(Var<T> logits, T tau, Var<T> gumbel_noise) {
    SG_CHECK(tau > T(0), "gumbel_softmax: tau must be positive, got ", tau);
    return softmax_rows(mulc(add(logits, gumbel_noise), T(1) / tau));
}

// KL(softmax(logits) || prior) per sample, prior a fixed simplex point.
template <typename T>
Var<T> categorical_kl(Var<T> logits, const std::vector<double>& prior) {
    Tape<T>& tp = *logits.tape;
    const Tensor<T>& L = tp.val(logits);
    SG_CHECK(L.ndim() == 2 && L.dim(1) == static_cast<int>(prior.size()),
             "categorical_kl: prior size mismatch");
    Tensor<T> neg_logp(Shape{static_cast<int>(prior.size())});
    for (std::size_t k = 0; k < prior.size(); ++k) {
        SG_CHECK(prior[k] > 0, "categorical_kl: prior entry ", k, " not positive");
        neg_logp[static_cast<std::int64_t>(k)] = static_cast<T>(-std::log(prior[k]));
    }
    auto lsm = log_softmax_rows(logits);
    auto q = vexp(lsm);
    return sum_per_sample(mul(q, add_rowvec(lsm, tp.constant(std::move(neg_logp)))));
}

// KL(Bernoulli(q) || Bernoulli(p)) summed per sample over [N,D] probabilities.
template <typename T>
Var<T> bernoulli_kl(Var<T> q, T p) {
    SG_CHECK(p > T(0) && p < T(1), "bernoulli_kl: prior prob must be in (0,1)");
    auto one_minus_q = affine(q, T(-1), T(1));
    auto a = mul(q, addc(vlog(q), -std::log(p)));
    auto b = mul(one_minus_q, addc(vlog(one_minus_q), -std::log(T(1) - p)));
    return sum_per_sample(add(a, b));
}

// Diagonal Gaussian log density with fixed sigma, summed per sample.
template <typename T>
Var<T> recon_log_likelihood(Var<T> x_mean, Var<T> x, T sigma) {
    SG_CHECK(sigma > T(0), "recon_log_likelihood: sigma must be positive");
    Tape<T>& tp = *x_mean.tape;
    SG_CHECK(tp.val(x_mean).same_shape(tp.val(x)), "recon_log_likelihood: shape mismatch ",
             shape_str(tp.val(x_mean).shape()), " vs ", shape_str(tp.val(x).shape()));
    const auto dims = static_cast<double>(tp.val(x).size() / tp.val(x).dim(0));
    const T c = static_cast<T>(-0.5 * dims *
                               std::log(2.0 * std::numbers::pi * double(sigma) * double(sigma)));
    auto se = sum_per_sample(square(sub(x_mean, x)));
    return addc(mulc(se, T(-1) / (T(2) * sigma * sigma)), c);
}

} // namespace splitgen
