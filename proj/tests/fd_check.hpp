#pragma once

#include <functional>
#include <vector>

#include "splitgen/nn.hpp"
#include "splitgen/ops.hpp"
#include "splitgen/rng.hpp"

namespace sgtest {

using splitgen::RngStream;
using splitgen::Tape;
using splitgen::Tensor;
using splitgen::Var;

struct FdReport {
    double max_rel_err = 0;
    int checked = 0;
};

// Central-difference check of a scalar graph against the tape's gradients.
// build() must be a pure function of the inputs. Coordinates are sampled at
// random; rel err uses max(|fd|,|an|,1e-2) as denominator so near-zero
// gradients are judged on absolute error.
inline FdReport fd_check(
    std::vector<Tensor<double>> inputs,
    const std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>& build,
    int ncoords, RngStream& rng, double eps = 1e-5) {
    auto eval_scalar = [&](const std::vector<Tensor<double>>& ins) {
        Tape<double> tape;
        std::vector<Var<double>> vars;
        vars.reserve(ins.size());
        for (const auto& t : ins) vars.push_back(tape.leaf(t, true));
        return splitgen::scalar_value(build(tape, vars));
    };

    std::vector<Tensor<double>> analytic;
    {
        Tape<double> tape;
        std::vector<Var<double>> vars;
        vars.reserve(inputs.size());
        for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
        Var<double> root = build(tape, vars);
        tape.backward(root);
        for (size_t i = 0; i < inputs.size(); ++i)
            analytic.push_back(tape.has_grad(vars[i].id) ? tape.grad(vars[i].id)
                                                         : Tensor<double>(inputs[i].shape(), 0.0));
    }

    FdReport rep;
    for (int k = 0; k < ncoords; ++k) {
        const int which = static_cast<int>(rng.below(inputs.size()));
        const std::int64_t coord = static_cast<std::int64_t>(rng.below(inputs[which].size()));
        const double orig = inputs[which][coord];

        inputs[which][coord] = orig + eps;
        const double fplus = eval_scalar(inputs);
        inputs[which][coord] = orig - eps;
        const double fminus = eval_scalar(inputs);
        inputs[which][coord] = orig;

        const double fd = (fplus - fminus) / (2 * eps);
        const double an = analytic[which][coord];
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-2});
        rep.max_rel_err = std::max(rep.max_rel_err, std::abs(fd - an) / denom);
        ++rep.checked;
    }
    return rep;
}

// Same, but differentiates through model parameters: build() is expected to
// bind store parameters via tape.param(...) and return the scalar loss.
inline FdReport fd_check_params(splitgen::ParamStore<double>& ps,
                                const std::function<Var<double>(Tape<double>&)>& build,
                                int ncoords, RngStream& rng, double eps = 1e-5) {
    auto eval_scalar = [&]() {
        Tape<double> tape;
        return splitgen::scalar_value(build(tape));
    };

    ps.zero_grad();
    {
        Tape<double> tape;
        Var<double> root = build(tape);
        tape.backward(root);
    }
    std::vector<Tensor<double>> analytic;
    for (std::size_t i = 0; i < ps.size(); ++i) analytic.push_back(ps.at(i).grad);
    ps.zero_grad();

    FdReport rep;
    for (int k = 0; k < ncoords; ++k) {
        const auto which = static_cast<std::size_t>(rng.below(ps.size()));
        auto& value = ps.at(which).value;
        const std::int64_t coord = static_cast<std::int64_t>(rng.below(value.size()));
        const double orig = value[coord];

        value[coord] = orig + eps;
        const double fplus = eval_scalar();
        value[coord] = orig - eps;
        const double fminus = eval_scalar();
        value[coord] = orig;

        const double fd = (fplus - fminus) / (2 * eps);
        const double an = analytic[which][coord];
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-2});
        rep.max_rel_err = std::max(rep.max_rel_err, std::abs(fd - an) / denom);
        ++rep.checked;
    }
    return rep;
}

} // namespace sgtest
