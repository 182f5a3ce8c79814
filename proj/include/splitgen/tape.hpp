#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "splitgen/common.hpp"
#include "splitgen/tensor.hpp"

namespace splitgen {

// A trainable array plus the state the optimiser keeps for it.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> adam_m;
    Tensor<T> adam_v;

    Parameter(std::string n, Shape shape)
        : name(std::move(n)),
          value(shape),
          grad(shape),
          adam_m(shape),
          adam_v(shape) {}
};

template <typename T>
class Tape;

template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape. Each op appends a node holding the forward value and a
// closure that scatters the node's gradient to its parents. Nodes are only
// visited during backward() if gradient actually reached them, so dead
// branches and constant inputs cost nothing.
template <typename T>
class Tape {
public:
    // grad_enabled=false turns the tape into a pure forward evaluator:
    // params enter as constants and ops skip their backward closures.
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    // Vars and backward closures hold the tape's address; it must not move.
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Var<T> leaf(Tensor<T> value, bool needs_grad = false) {
        nodes_.push_back(Node{std::move(value), Tensor<T>(), nullptr,
                              needs_grad && grad_enabled_});
        return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
    }

    Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

    Var<T> param(Parameter<T>& p) {
        if (!grad_enabled_) return leaf(p.value, false);
        Var<T> v = leaf(p.value, true);
        binds_.push_back({&p, v.id});
        return v;
    }

    int reserve(Tensor<T> value, bool needs_grad) {
        nodes_.push_back(Node{std::move(value), Tensor<T>(), nullptr, needs_grad});
        return static_cast<int>(nodes_.size()) - 1;
    }

    void set_back(int id, std::function<void()> fn) {
        nodes_[static_cast<std::size_t>(id)].back = std::move(fn);
    }

    const Tensor<T>& val(Var<T> v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
    const Tensor<T>& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    bool needs_grad(Var<T> v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
    bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    bool has_grad(int id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }

    // Gradient buffer, allocated to zeros on first touch.
    Tensor<T>& grad_buf(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    const Tensor<T>& grad(int id) const {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        SG_CHECK(!n.grad.empty(), "grad requested for node without gradient");
        return n.grad;
    }

    const Tensor<T>& grad(Var<T> v) const { return grad(v.id); }

    void backward(Var<T> root) {
        SG_CHECK(root.tape == this, "backward: var belongs to another tape");
        SG_CHECK(val(root).size() == 1, "backward: root must be scalar, got ",
                 shape_str(val(root).shape()));
        grad_buf(root.id)[0] = T(1);
        for (int id = root.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.back && !n.grad.empty()) n.back();
        }
        for (const Bind& b : binds_) {
            const Node& n = nodes_[static_cast<std::size_t>(b.node)];
            if (n.grad.empty()) continue;
            Tensor<T>& g = b.param->grad;
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void()> back;
        bool needs_grad = false;
    };

    struct Bind {
        Parameter<T>* param;
        int node;
    };

    std::vector<Node> nodes_;
    std::vector<Bind> binds_;
    bool grad_enabled_ = true;
};

} // namespace splitgen
