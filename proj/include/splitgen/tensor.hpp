#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>
#include <vector>

#include "splitgen/common.hpp"

namespace splitgen {

// Dense row-major tensor. Image batches use NCHW.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(checked_numel(shape_), T(0)) {}

    Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

    static Tensor from(Shape shape, std::vector<T> data) {
        SG_CHECK(static_cast<std::int64_t>(data.size()) == numel(shape),
                 "tensor data size ", data.size(), " does not match shape ", shape_str(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // 4-d accessor for NCHW tensors.
    T& at(int n, int c, int h, int w) { return data_[static_cast<std::size_t>(offset4(n, c, h, w))]; }
    const T& at(int n, int c, int h, int w) const {
        return data_[static_cast<std::size_t>(offset4(n, c, h, w))];
    }

    std::int64_t offset4(int n, int c, int h, int w) const {
        return ((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    // 2-d accessor for row matrices.
    T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

    Tensor reshaped(Shape new_shape) const {
        SG_CHECK(numel(new_shape) == size(), "reshape ", shape_str(shape_), " -> ",
                 shape_str(new_shape), " changes element count");
        Tensor t = *this;
        t.shape_ = std::move(new_shape);
        return t;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>::from(shape_, std::move(out));
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    static std::size_t checked_numel(const Shape& s) {
        for (int d : s) SG_CHECK(d >= 0, "negative dimension in shape ", shape_str(s));
        return static_cast<std::size_t>(numel(s));
    }

    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    SG_CHECK(a.same_shape(b), "max_abs_diff: shape mismatch ", shape_str(a.shape()), " vs ",
             shape_str(b.shape()));
    double m = 0;
    for (std::int64_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<std::size_t>(a.size())) == 0;
}

} // namespace splitgen
