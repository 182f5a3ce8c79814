#pragma once

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "splitgen/tape.hpp"

namespace splitgen {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

template <typename T>
void axpy(Tensor<T>& dst, const Tensor<T>& src) {
    for (std::int64_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T, typename F, typename DF>
Var<T> map_unary(Var<T> x, F f, DF df) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& in = tp.val(x);
    Tensor<T> out(in.shape());
    for (std::int64_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    const bool ng = tp.needs_grad(x);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, oid, df]() {
            const Tensor<T>& g = tpp->grad(oid);
            const Tensor<T>& in = tpp->val(xi);
            const Tensor<T>& o = tpp->val(oid);
            Tensor<T>& gx = tpp->grad_buf(xi);
            for (std::int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(in[i], o[i]);
        });
    }
    return Var<T>{&tp, oid};
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& A = tp.val(a);
    const Tensor<T>& B = tp.val(b);
    SG_CHECK(A.same_shape(B), "add: shape mismatch ", shape_str(A.shape()), " vs ",
             shape_str(B.shape()));
    Tensor<T> out(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
    const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, ai = a.id, bi = b.id, oid]() {
            const Tensor<T>& g = tpp->grad(oid);
            if (tpp->needs_grad(ai)) detail::axpy(tpp->grad_buf(ai), g);
            if (tpp->needs_grad(bi)) detail::axpy(tpp->grad_buf(bi), g);
        });
    }
    return Var<T>{&tp, oid};
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& A = tp.val(a);
    const Tensor<T>& B = tp.val(b);
    SG_CHECK(A.same_shape(B), "sub: shape mismatch ", shape_str(A.shape()), " vs ",
             shape_str(B.shape()));
    Tensor<T> out(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) out[i] = A[i] - B[i];
    const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, ai = a.id, bi = b.id, oid]() {
            const Tensor<T>& g = tpp->grad(oid);
            if (tpp->needs_grad(ai)) detail::axpy(tpp->grad_buf(ai), g);
            if (tpp->needs_grad(bi)) {
                Tensor<T>& gb = tpp->grad_buf(bi);
                for (std::int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return Var<T>{&tp, oid};
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& A = tp.val(a);
    const Tensor<T>& B = tp.val(b);
    SG_CHECK(A.same_shape(B), "mul: shape mismatch ", shape_str(A.shape()), " vs ",
             shape_str(B.shape()));
    Tensor<T> out(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
    const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, ai = a.id, bi = b.id, oid]() {
            const Tensor<T>& g = tpp->grad(oid);
            if (tpp->needs_grad(ai)) {
                const Tensor<T>& B = tpp->val(bi);
                Tensor<T>& ga = tpp->grad_buf(ai);
                for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
            }
            if (tpp->needs_grad(bi)) {
                const Tensor<T>& A = tpp->val(ai);
                Tensor<T>& gb = tpp->grad_buf(bi);
                for (std::int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
            }
        });
    }
    return Var<T>{&tp, oid};
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& A = tp.val(a);
    const Tensor<T>& B = tp.val(b);
    SG_CHECK(A.same_shape(B), "div: shape mismatch ", shape_str(A.shape()), " vs ",
             shape_str(B.shape()));
    Tensor<T> out(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) out[i] = A[i] / B[i];
    const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, ai = a.id, bi = b.id, oid]() {
            const Tensor<T>& g = tpp->grad(oid);
            const Tensor<T>& B = tpp->val(bi);
            const Tensor<T>& O = tpp->val(oid);
            if (tpp->needs_grad(ai)) {
                Tensor<T>& ga = tpp->grad_buf(ai);
                for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / B[i];
            }
            if (tpp->needs_grad(bi)) {
                Tensor<T>& gb = tpp->grad_buf(bi);
                for (std::int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * O[i] / B[i];
            }
        });
    }
    return Var<T>{&tp, oid};
}

// out = a*x + b with scalar a, b.
template <typename T>
Var<T> affine(Var<T> x, T a, T b) {
    return detail::map_unary(
        x, [a, b](T v) { return a * v + b; }, [a](T, T) { return a; });
}

template <typename T>
Var<T> mulc(Var<T> x, T c) {
    return affine(x, c, T(0));
}

template <typename T>
Var<T> addc(Var<T> x, T c) {
    return affine(x, T(1), c);
}

template <typename T>
Var<T> neg(Var<T> x) {
    return mulc(x, T(-1));
}

template <typename T>
Var<T> square(Var<T> x) {
    return detail::map_unary(
        x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> vexp(Var<T> x) {
    return detail::map_unary(
        x, [](T v) { return std::exp(v); }, [](T, T o) { return o; });
}

// log(max(x, eps)); gradient is zero where the clamp is active.
template <typename T>
Var<T> vlog(Var<T> x, T eps = T(1e-12)) {
    return detail::map_unary(
        x, [eps](T v) { return std::log(std::max(v, eps)); },
        [eps](T v, T) { return v > eps ? T(1) / v : T(0); });
}

template <typename T>
Var<T> softplus(Var<T> x) {
    auto f = [](T v) -> T {
        if (v > T(20)) return v;
        if (v < T(-20)) return std::exp(v);
        return std::log1p(std::exp(v));
    };
    auto df = [](T v, T) -> T { return T(1) / (T(1) + std::exp(-v)); };
    return detail::map_unary(x, f, df);
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
    auto f = [](T v) -> T {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
    };
    auto df = [](T, T o) -> T { return o * (T(1) - o); };
    return detail::map_unary(x, f, df);
}

template <typename T>
Var<T> vtanh(Var<T> x) {
    return detail::map_unary(
        x, [](T v) { return std::tanh(v); }, [](T, T o) { return T(1) - o * o; });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope = T(0.2)) {
    return detail::map_unary(
        x, [slope](T v) { return v > T(0) ? v : slope * v; },
        [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> clamp(Var<T> x, T lo, T hi) {
    return detail::map_unary(
        x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
    Tape<T>& tp = *x.tape;
    Tensor<T> out = tp.val(x).reshaped(std::move(shape));
    const bool ng = tp.needs_grad(x);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, oid]() {
            const Tensor<T>& g = tpp->grad(oid);
            Tensor<T>& gx = tpp->grad_buf(xi);
            for (std::int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return Var<T>{&tp, oid};
}

// Concatenate 2-d tensors along the feature axis.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    SG_CHECK(!parts.empty(), "concat_cols: empty input");
    Tape<T>& tp = *parts[0].tape;
    const int rows = tp.val(parts[0]).dim(0);
    int total = 0;
    bool ng = false;
    for (const Var<T>& p : parts) {
        const Tensor<T>& t = tp.val(p);
        SG_CHECK(t.ndim() == 2 && t.dim(0) == rows, "concat_cols: incompatible shape ",
                 shape_str(t.shape()));
        total += t.dim(1);
        ng = ng || tp.needs_grad(p);
    }
    Tensor<T> out(Shape{rows, total});
    int col = 0;
    for (const Var<T>& p : parts) {
        const Tensor<T>& t = tp.val(p);
        const int d = t.dim(1);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < d; ++c) out.at(r, col + c) = t.at(r, c);
        col += d;
    }
    std::vector<int> ids;
    for (const Var<T>& p : parts) ids.push_back(p.id);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, ids, oid, rows]() {
            const Tensor<T>& g = tpp->grad(oid);
            int col = 0;
            for (int pid : ids) {
                const int d = tpp->val(pid).dim(1);
                if (tpp->needs_grad(pid)) {
                    Tensor<T>& gp = tpp->grad_buf(pid);
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < d; ++c) gp.at(r, c) += g.at(r, col + c);
                }
                col += d;
            }
        });
    }
    return Var<T>{&tp, oid};
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
    return concat_cols(std::vector<Var<T>>{a, b});
}

template <typename T>
Var<T> slice_cols(Var<T> x, int lo, int hi) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    SG_CHECK(X.ndim() == 2 && lo >= 0 && hi <= X.dim(1) && lo < hi, "slice_cols: bad range [", lo,
             ",", hi, ") for ", shape_str(X.shape()));
    const int rows = X.dim(0);
    Tensor<T> out(Shape{rows, hi - lo});
    for (int r = 0; r < rows; ++r)
        for (int c = lo; c < hi; ++c) out.at(r, c - lo) = X.at(r, c);
    const bool ng = tp.needs_grad(x);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, oid, lo, hi, rows]() {
            const Tensor<T>& g = tpp->grad(oid);
            Tensor<T>& gx = tpp->grad_buf(xi);
            for (int r = 0; r < rows; ++r)
                for (int c = lo; c < hi; ++c) gx.at(r, c) += g.at(r, c - lo);
        });
    }
    return Var<T>{&tp, oid};
}

// Rows [r0,r1) of dim 0, any rank.
template <typename T>
Var<T> slice_rows(Var<T> x, int r0, int r1) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    SG_CHECK(X.ndim() >= 1 && r0 >= 0 && r1 <= X.dim(0) && r0 < r1, "slice_rows: bad range [", r0,
             ",", r1, ") for ", shape_str(X.shape()));
    Shape os = X.shape();
    os[0] = r1 - r0;
    const std::int64_t stride = X.size() / X.dim(0);
    Tensor<T> out(os);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = X[r0 * stride + i];
    const bool ng = tp.needs_grad(x);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, oid, r0, stride]() {
            const Tensor<T>& g = tpp->grad(oid);
            Tensor<T>& gx = tpp->grad_buf(xi);
            for (std::int64_t i = 0; i < g.size(); ++i) gx[r0 * stride + i] += g[i];
        });
    }
    return Var<T>{&tp, oid};
}

// Channels [c0,c1) of an NCHW tensor.
template <typename T>
Var<T> slice_chan(Var<T> x, int c0, int c1) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    SG_CHECK(X.ndim() == 4 && c0 >= 0 && c1 <= X.dim(1) && c0 < c1, "slice_chan: bad range [", c0,
             ",", c1, ") for ", shape_str(X.shape()));
    const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    Tensor<T> out(Shape{N, c1 - c0, H, W});
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    for (int n = 0; n < N; ++n)
        for (int c = c0; c < c1; ++c) {
            const T* src = X.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
            T* dst = out.data() + (static_cast<std::int64_t>(n) * (c1 - c0) + (c - c0)) * plane;
            for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i];
        }
    const bool ng = tp.needs_grad(x);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, oid, c0, c1, N, C, plane]() {
            const Tensor<T>& g = tpp->grad(oid);
            Tensor<T>& gx = tpp->grad_buf(xi);
            for (int n = 0; n < N; ++n)
                for (int c = c0; c < c1; ++c) {
                    T* dst = gx.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
                    const T* src =
                        g.data() + (static_cast<std::int64_t>(n) * (c1 - c0) + (c - c0)) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i];
                }
        });
    }
    return Var<T>{&tp, oid};
}

// [N,...] -> [reps*N, ...]; block r holds a full copy of x.
template <typename T>
Var<T> repeat_batch(Var<T> x, int reps) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    SG_CHECK(X.ndim() >= 1 && reps >= 1, "repeat_batch: want batched input and reps>=1");
    Shape oshape = X.shape();
    oshape[0] *= reps;
    Tensor<T> out(oshape);
    for (int r = 0; r < reps; ++r)
        for (std::int64_t i = 0; i < X.size(); ++i)
            out[static_cast<std::int64_t>(r) * X.size() + i] = X[i];
    const bool ng = tp.needs_grad(x);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, oid, reps]() {
            const Tensor<T>& g = tpp->grad(oid);
            Tensor<T>& gx = tpp->grad_buf(xi);
            for (int r = 0; r < reps; ++r)
                for (std::int64_t i = 0; i < gx.size(); ++i)
                    gx[i] += g[static_cast<std::int64_t>(r) * gx.size() + i];
        });
    }
    return Var<T>{&tp, oid};
}

// [N,C,gh,gw] -> [(gh*gw)*N, C]; cell-major so each cell's rows are contiguous.
template <typename T>
Var<T> cells_to_rows(Var<T> x) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    SG_CHECK(X.ndim() == 4, "cells_to_rows: want NCHW input");
    const int N = X.dim(0), C = X.dim(1), GH = X.dim(2), GW = X.dim(3);
    const int G = GH * GW;
    Tensor<T> out(Shape{G * N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int gy = 0; gy < GH; ++gy)
                for (int gx = 0; gx < GW; ++gx)
                    out.at((gy * GW + gx) * N + n, c) = X.at(n, c, gy, gx);
    const bool ng = tp.needs_grad(x);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, oid, N, C, GH, GW]() {
            const Tensor<T>& g = tpp->grad(oid);
            Tensor<T>& gx = tpp->grad_buf(xi);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int gy = 0; gy < GH; ++gy)
                        for (int gw = 0; gw < GW; ++gw)
                            gx.at(n, c, gy, gw) += g.at((gy * GW + gw) * N + n, c);
        });
    }
    return Var<T>{&tp, oid};
}

// out[n,...] = x[n,...] * s[n]
template <typename T>
Var<T> mul_rows_scalar(Var<T> x, Var<T> s) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    const Tensor<T>& S = tp.val(s);
    const int N = X.dim(0);
    SG_CHECK(S.size() == N, "mul_rows_scalar: scale count ", S.size(), " != rows ", N);
    const std::int64_t stride = X.size() / N;
    Tensor<T> out(X.shape());
    for (int n = 0; n < N; ++n)
        for (std::int64_t i = 0; i < stride; ++i) out[n * stride + i] = X[n * stride + i] * S[n];
    const bool ng = tp.needs_grad(x) || tp.needs_grad(s);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, si = s.id, oid, N, stride]() {
            const Tensor<T>& g = tpp->grad(oid);
            const Tensor<T>& X = tpp->val(xi);
            const Tensor<T>& S = tpp->val(si);
            if (tpp->needs_grad(xi)) {
                Tensor<T>& gx = tpp->grad_buf(xi);
                for (int n = 0; n < N; ++n)
                    for (std::int64_t i = 0; i < stride; ++i)
                        gx[n * stride + i] += g[n * stride + i] * S[n];
            }
            if (tpp->needs_grad(si)) {
                Tensor<T>& gs = tpp->grad_buf(si);
                for (int n = 0; n < N; ++n) {
                    double acc = 0;
                    for (std::int64_t i = 0; i < stride; ++i)
                        acc += static_cast<double>(g[n * stride + i]) * X[n * stride + i];
                    gs[n] += static_cast<T>(acc);
                }
            }
        });
    }
    return Var<T>{&tp, oid};
}

// out[n,c,h,w] = x[n,c,h,w] * a[n,0,h,w]
template <typename T>
Var<T> mul_bcast_chan(Var<T> x, Var<T> a) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    const Tensor<T>& A = tp.val(a);
    SG_CHECK(X.ndim() == 4 && A.ndim() == 4 && A.dim(1) == 1 && A.dim(0) == X.dim(0) &&
                 A.dim(2) == X.dim(2) && A.dim(3) == X.dim(3),
             "mul_bcast_chan: incompatible shapes ", shape_str(X.shape()), " and ",
             shape_str(A.shape()));
    const int N = X.dim(0), C = X.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(X.dim(2)) * X.dim(3);
    Tensor<T> out(X.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* xs = X.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
            const T* as = A.data() + static_cast<std::int64_t>(n) * plane;
            T* os = out.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) os[i] = xs[i] * as[i];
        }
    const bool ng = tp.needs_grad(x) || tp.needs_grad(a);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, ai = a.id, oid, N, C, plane]() {
            const Tensor<T>& g = tpp->grad(oid);
            const Tensor<T>& X = tpp->val(xi);
            const Tensor<T>& A = tpp->val(ai);
            if (tpp->needs_grad(xi)) {
                Tensor<T>& gx = tpp->grad_buf(xi);
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
                        const T* as = A.data() + static_cast<std::int64_t>(n) * plane;
                        for (std::int64_t i = 0; i < plane; ++i) gx[off + i] += g[off + i] * as[i];
                    }
            }
            if (tpp->needs_grad(ai)) {
                Tensor<T>& ga = tpp->grad_buf(ai);
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * plane;
                        T* gs = ga.data() + static_cast<std::int64_t>(n) * plane;
                        for (std::int64_t i = 0; i < plane; ++i) gs[i] += g[off + i] * X[off + i];
                    }
            }
        });
    }
    return Var<T>{&tp, oid};
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(Var<T> x) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    double acc = 0;
    for (std::int64_t i = 0; i < X.size(); ++i) acc += static_cast<double>(X[i]);
    Tensor<T> out(Shape{1});
    out[0] = static_cast<T>(acc);
    const bool ng = tp.needs_grad(x);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, oid]() {
            const T g = tpp->grad(oid)[0];
            Tensor<T>& gx = tpp->grad_buf(xi);
            for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return Var<T>{&tp, oid};
}

template <typename T>
Var<T> mean_all(Var<T> x) {
    const auto n = static_cast<T>(x.tape->val(x).size());
    return mulc(sum_all(x), T(1) / n);
}

// Reduce all axes but the first: [N,...] -> [N].
template <typename T>
Var<T> sum_per_sample(Var<T> x) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    const int N = X.dim(0);
    const std::int64_t stride = X.size() / N;
    Tensor<T> out(Shape{N});
    for (int n = 0; n < N; ++n) {
        double acc = 0;
        for (std::int64_t i = 0; i < stride; ++i) acc += static_cast<double>(X[n * stride + i]);
        out[n] = static_cast<T>(acc);
    }
    const bool ng = tp.needs_grad(x);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, oid, N, stride]() {
            const Tensor<T>& g = tpp->grad(oid);
            Tensor<T>& gx = tpp->grad_buf(xi);
            for (int n = 0; n < N; ++n)
                for (std::int64_t i = 0; i < stride; ++i) gx[n * stride + i] += g[n];
        });
    }
    return Var<T>{&tp, oid};
}

// ---------------------------------------------------------------------------
// dense algebra
// ---------------------------------------------------------------------------

// y = x . w^T + b  with x:[N,K], w:[M,K], b:[M]
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    const Tensor<T>& W = tp.val(w);
    const Tensor<T>& B = tp.val(b);
    SG_CHECK(X.ndim() == 2 && W.ndim() == 2 && X.dim(1) == W.dim(1) && B.size() == W.dim(0),
             "linear: incompatible shapes x=", shape_str(X.shape()), " w=", shape_str(W.shape()),
             " b=", shape_str(B.shape()));
    const int N = X.dim(0), K = X.dim(1), M = W.dim(0);
    Tensor<T> out(Shape{N, M});
    {
        ConstMatMap<T> xm(X.data(), N, K), wm(W.data(), M, K);
        MatMap<T> om(out.data(), N, M);
        om.noalias() = xm * wm.transpose();
        for (int n = 0; n < N; ++n)
            for (int m = 0; m < M; ++m) out.at(n, m) += B[m];
    }
    const bool ng = tp.needs_grad(x) || tp.needs_grad(w) || tp.needs_grad(b);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, wi = w.id, bi = b.id, oid, N, K, M]() {
            const Tensor<T>& g = tpp->grad(oid);
            ConstMatMap<T> gm(g.data(), N, M);
            if (tpp->needs_grad(wi)) {
                ConstMatMap<T> xm(tpp->val(xi).data(), N, K);
                MatMap<T> gw(tpp->grad_buf(wi).data(), M, K);
                gw.noalias() += gm.transpose() * xm;
            }
            if (tpp->needs_grad(xi)) {
                ConstMatMap<T> wm(tpp->val(wi).data(), M, K);
                MatMap<T> gx(tpp->grad_buf(xi).data(), N, K);
                gx.noalias() += gm * wm;
            }
            if (tpp->needs_grad(bi)) {
                Tensor<T>& gb = tpp->grad_buf(bi);
                for (int m = 0; m < M; ++m) {
                    double acc = 0;
                    for (int n = 0; n < N; ++n) acc += static_cast<double>(g.at(n, m));
                    gb[m] += static_cast<T>(acc);
                }
            }
        });
    }
    return Var<T>{&tp, oid};
}

// c = a . b  with a:[N,K], b:[K,M]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& A = tp.val(a);
    const Tensor<T>& B = tp.val(b);
    SG_CHECK(A.ndim() == 2 && B.ndim() == 2 && A.dim(1) == B.dim(0),
             "matmul: incompatible shapes ", shape_str(A.shape()), " and ", shape_str(B.shape()));
    const int N = A.dim(0), K = A.dim(1), M = B.dim(1);
    Tensor<T> out(Shape{N, M});
    {
        ConstMatMap<T> am(A.data(), N, K), bm(B.data(), K, M);
        MatMap<T> om(out.data(), N, M);
        om.noalias() = am * bm;
    }
    const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, ai = a.id, bi = b.id, oid, N, K, M]() {
            const Tensor<T>& g = tpp->grad(oid);
            ConstMatMap<T> gm(g.data(), N, M);
            if (tpp->needs_grad(ai)) {
                ConstMatMap<T> bm(tpp->val(bi).data(), K, M);
                MatMap<T> ga(tpp->grad_buf(ai).data(), N, K);
                ga.noalias() += gm * bm.transpose();
            }
            if (tpp->needs_grad(bi)) {
                ConstMatMap<T> am(tpp->val(ai).data(), N, K);
                MatMap<T> gb(tpp->grad_buf(bi).data(), K, M);
                gb.noalias() += am.transpose() * gm;
            }
        });
    }
    return Var<T>{&tp, oid};
}

template <typename T>
Var<T> add_rowvec(Var<T> x, Var<T> b) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    const Tensor<T>& B = tp.val(b);
    SG_CHECK(X.ndim() == 2 && B.size() == X.dim(1), "add_rowvec: incompatible shapes");
    const int N = X.dim(0), D = X.dim(1);
    Tensor<T> out(X.shape());
    for (int n = 0; n < N; ++n)
        for (int d = 0; d < D; ++d) out.at(n, d) = X.at(n, d) + B[d];
    const bool ng = tp.needs_grad(x) || tp.needs_grad(b);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, bi = b.id, oid, N, D]() {
            const Tensor<T>& g = tpp->grad(oid);
            if (tpp->needs_grad(xi)) detail::axpy(tpp->grad_buf(xi), g);
            if (tpp->needs_grad(bi)) {
                Tensor<T>& gb = tpp->grad_buf(bi);
                for (int d = 0; d < D; ++d) {
                    double acc = 0;
                    for (int n = 0; n < N; ++n) acc += static_cast<double>(g.at(n, d));
                    gb[d] += static_cast<T>(acc);
                }
            }
        });
    }
    return Var<T>{&tp, oid};
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

template <typename T>
Var<T> softmax_rows(Var<T> x) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    SG_CHECK(X.ndim() == 2, "softmax_rows: want 2-d input");
    const int N = X.dim(0), K = X.dim(1);
    Tensor<T> out(X.shape());
    for (int n = 0; n < N; ++n) {
        T mx = X.at(n, 0);
        for (int k = 1; k < K; ++k) mx = std::max(mx, X.at(n, k));
        double z = 0;
        for (int k = 0; k < K; ++k) {
            const T e = std::exp(X.at(n, k) - mx);
            out.at(n, k) = e;
            z += static_cast<double>(e);
        }
        for (int k = 0; k < K; ++k) out.at(n, k) = static_cast<T>(out.at(n, k) / z);
    }
    const bool ng = tp.needs_grad(x);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, oid, N, K]() {
            const Tensor<T>& g = tpp->grad(oid);
            const Tensor<T>& O = tpp->val(oid);
            Tensor<T>& gx = tpp->grad_buf(xi);
            for (int n = 0; n < N; ++n) {
                double dot = 0;
                for (int k = 0; k < K; ++k) dot += static_cast<double>(g.at(n, k)) * O.at(n, k);
                for (int k = 0; k < K; ++k)
                    gx.at(n, k) += O.at(n, k) * (g.at(n, k) - static_cast<T>(dot));
            }
        });
    }
    return Var<T>{&tp, oid};
}

template <typename T>
Var<T> log_softmax_rows(Var<T> x) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    SG_CHECK(X.ndim() == 2, "log_softmax_rows: want 2-d input");
    const int N = X.dim(0), K = X.dim(1);
    Tensor<T> out(X.shape());
    for (int n = 0; n < N; ++n) {
        T mx = X.at(n, 0);
        for (int k = 1; k < K; ++k) mx = std::max(mx, X.at(n, k));
        double z = 0;
        for (int k = 0; k < K; ++k) z += std::exp(static_cast<double>(X.at(n, k) - mx));
        const T lz = static_cast<T>(std::log(z)) + mx;
        for (int k = 0; k < K; ++k) out.at(n, k) = X.at(n, k) - lz;
    }
    const bool ng = tp.needs_grad(x);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, oid, N, K]() {
            const Tensor<T>& g = tpp->grad(oid);
            const Tensor<T>& O = tpp->val(oid);
            Tensor<T>& gx = tpp->grad_buf(xi);
            for (int n = 0; n < N; ++n) {
                double gsum = 0;
                for (int k = 0; k < K; ++k) gsum += static_cast<double>(g.at(n, k));
                for (int k = 0; k < K; ++k)
                    gx.at(n, k) +=
                        g.at(n, k) - static_cast<T>(std::exp(static_cast<double>(O.at(n, k))) * gsum);
            }
        });
    }
    return Var<T>{&tp, oid};
}

// out[n] = x[n, idx[n]]
template <typename T>
Var<T> gather_cols(Var<T> x, std::vector<int> idx) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    SG_CHECK(X.ndim() == 2 && static_cast<int>(idx.size()) == X.dim(0),
             "gather_cols: index count mismatch");
    const int N = X.dim(0);
    Tensor<T> out(Shape{N});
    for (int n = 0; n < N; ++n) {
        SG_CHECK(idx[n] >= 0 && idx[n] < X.dim(1), "gather_cols: index out of range");
        out[n] = X.at(n, idx[n]);
    }
    const bool ng = tp.needs_grad(x);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, oid, idx = std::move(idx), N]() {
            const Tensor<T>& g = tpp->grad(oid);
            Tensor<T>& gx = tpp->grad_buf(xi);
            for (int n = 0; n < N; ++n) gx.at(n, idx[n]) += g[n];
        });
    }
    return Var<T>{&tp, oid};
}

template <typename T>
double scalar_value(Var<T> v) {
    const Tensor<T>& t = v.tape->val(v);
    SG_CHECK(t.size() == 1, "scalar_value: not a scalar");
    return static_cast<double>(t[0]);
}

} // namespace splitgen
