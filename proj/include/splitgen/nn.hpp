#pragma once

#include <memory>
#include <unordered_map>

#include "splitgen/conv.hpp"
#include "splitgen/distributions.hpp"
#include "splitgen/rng.hpp"

namespace splitgen {

// Owns all trainable parameters of a model. Parameters keep stable addresses
// and a stable creation order (which fixes checkpoint layout and optimizer
// iteration order).
template <typename T>
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    Parameter<T>& make(const std::string& name, Shape shape) {
        SG_CHECK(!index_.count(name), "duplicate parameter name ", name);
        params_.push_back(std::make_unique<Parameter<T>>(name, std::move(shape)));
        index_[name] = params_.size() - 1;
        return *params_.back();
    }

    Parameter<T>& get(const std::string& name) {
        auto it = index_.find(name);
        SG_CHECK(it != index_.end(), "unknown parameter ", name);
        return *params_[it->second];
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    std::size_t size() const { return params_.size(); }
    Parameter<T>& at(std::size_t i) { return *params_[i]; }
    const Parameter<T>& at(std::size_t i) const { return *params_[i]; }

    void zero_grad() {
        for (auto& p : params_) p->grad.fill(T(0));
    }

    std::int64_t count_values() const {
        std::int64_t n = 0;
        for (const auto& p : params_) n += p->value.size();
        return n;
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

namespace init {

// He-style fan-in scaling, suited to the leaky relu stacks used everywhere.
template <typename T>
void he_normal(Parameter<T>& p, std::int64_t fan_in, RngStream& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < p.value.size(); ++i)
        p.value[i] = static_cast<T>(rng.normal() * std);
}

template <typename T>
void zeros(Parameter<T>& p) {
    p.value.fill(T(0));
}

} // namespace init

inline constexpr double kLeakySlope = 0.2;

template <typename T>
struct Linear {
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;

    static Linear create(ParamStore<T>& ps, const std::string& name, int in, int out,
                         RngStream& rng) {
        Linear l;
        l.w = &ps.make(name + ".w", Shape{out, in});
        l.b = &ps.make(name + ".b", Shape{out});
        init::he_normal(*l.w, in, rng);
        init::zeros(*l.b);
        return l;
    }

    Var<T> operator()(Tape<T>& tp, Var<T> x) const {
        return linear(x, tp.param(*w), tp.param(*b));
    }
};

template <typename T>
struct Conv2d {
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;
    int stride = 1, pad = 0;

    static Conv2d create(ParamStore<T>& ps, const std::string& name, int in_ch, int out_ch, int k,
                         int stride, int pad, RngStream& rng) {
        Conv2d c;
        c.w = &ps.make(name + ".w", Shape{out_ch, in_ch, k, k});
        c.b = &ps.make(name + ".b", Shape{out_ch});
        c.stride = stride;
        c.pad = pad;
        init::he_normal(*c.w, static_cast<std::int64_t>(in_ch) * k * k, rng);
        init::zeros(*c.b);
        return c;
    }

    Var<T> operator()(Tape<T>& tp, Var<T> x) const {
        return conv2d(x, tp.param(*w), tp.param(*b), stride, pad);
    }
};

// Four stride-2 k4 convs with leaky relu; channel ladder width*(1,2,4,8).
// A HxW input comes out as [N, 8*width*(H/16)*(W/16)] after flattening.
template <typename T>
struct ConvTrunk {
    std::vector<Conv2d<T>> convs;
    int width = 32;

    static ConvTrunk create(ParamStore<T>& ps, const std::string& name, int in_ch, int width,
                            RngStream& rng) {
        ConvTrunk t;
        t.width = width;
        int c = in_ch;
        for (int i = 0; i < 4; ++i) {
            const int oc = width << i;
            t.convs.push_back(
                Conv2d<T>::create(ps, name + ".conv" + std::to_string(i), c, oc, 4, 2, 1, rng));
            c = oc;
        }
        return t;
    }

    int feature_dim(int h, int w) const {
        SG_CHECK(h % 16 == 0 && w % 16 == 0, "trunk wants dims divisible by 16, got ", h, "x", w);
        return 8 * width * (h / 16) * (w / 16);
    }

    Var<T> operator()(Tape<T>& tp, Var<T> x) const {
        Var<T> h = x;
        for (const auto& c : convs) h = leaky_relu(c(tp, h), T(kLeakySlope));
        const Tensor<T>& v = tp.val(h);
        return reshape(h, Shape{v.dim(0), v.dim(1) * v.dim(2) * v.dim(3)});
    }
};

// Mirror of the trunk: linear to a (8*width, s0, s0) block, then four
// nearest-upsample + k3 conv stages halving channels, and a final conv to
// out_ch with sigmoid means.
template <typename T>
struct ConvDecoder {
    Linear<T> fc;
    std::vector<Conv2d<T>> convs;
    Conv2d<T> head;
    int width = 32, s0 = 2;

    static ConvDecoder create(ParamStore<T>& ps, const std::string& name, int z_dim, int out_ch,
                              int out_size, int width, RngStream& rng) {
        SG_CHECK(out_size % 16 == 0, "decoder wants output divisible by 16, got ", out_size);
        ConvDecoder d;
        d.width = width;
        d.s0 = out_size / 16;
        d.fc = Linear<T>::create(ps, name + ".fc", z_dim, 8 * width * d.s0 * d.s0, rng);
        int c = 8 * width;
        for (int i = 0; i < 4; ++i) {
            const int oc = std::max(width, c / 2);
            d.convs.push_back(
                Conv2d<T>::create(ps, name + ".conv" + std::to_string(i), c, oc, 3, 1, 1, rng));
            c = oc;
        }
        d.head = Conv2d<T>::create(ps, name + ".head", c, out_ch, 3, 1, 1, rng);
        return d;
    }

    Var<T> operator()(Tape<T>& tp, Var<T> z) const {
        const int n = tp.val(z).dim(0);
        Var<T> h = reshape(leaky_relu(fc(tp, z), T(kLeakySlope)),
                           Shape{n, 8 * width, s0, s0});
        for (const auto& c : convs)
            h = leaky_relu(c(tp, upsample_nearest2(h)), T(kLeakySlope));
        return sigmoid(head(tp, h));
    }
};

// Two-layer MLP with leaky hidden activation; output left linear.
template <typename T>
struct Mlp {
    Linear<T> l0, l1;

    static Mlp create(ParamStore<T>& ps, const std::string& name, int in, int hidden, int out,
                      RngStream& rng) {
        Mlp m;
        m.l0 = Linear<T>::create(ps, name + ".l0", in, hidden, rng);
        m.l1 = Linear<T>::create(ps, name + ".l1", hidden, out, rng);
        return m;
    }

    Var<T> operator()(Tape<T>& tp, Var<T> x) const {
        return l1(tp, leaky_relu(l0(tp, x), T(kLeakySlope)));
    }
};

template <typename T>
struct Adam {
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t t = 0;

    void step(ParamStore<T>& ps) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < ps.size(); ++i) {
            Parameter<T>& p = ps.at(i);
            for (std::int64_t j = 0; j < p.value.size(); ++j) {
                const double g = p.grad[j];
                const double m = beta1 * p.adam_m[j] + (1 - beta1) * g;
                const double v = beta2 * p.adam_v[j] + (1 - beta2) * g * g;
                p.adam_m[j] = static_cast<T>(m);
                p.adam_v[j] = static_cast<T>(v);
                p.value[j] -=
                    static_cast<T>(lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
            }
        }
        ps.zero_grad();
    }
};

} // namespace splitgen
