#pragma once

#include "splitgen/ops.hpp"

namespace splitgen {

namespace detail {

// col:[C*kh*kw, N*OH*OW]; column n*OH*OW + oy*OW + ox holds the receptive
// field of output pixel (oy,ox) of sample n, zero-padded at the borders.
template <typename T>
void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad, int OH, int OW,
            Tensor<T>& col) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t ncols = static_cast<std::int64_t>(N) * OH * OW;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                T* dst = col.data() + ((static_cast<std::int64_t>(c) * kh + ky) * kw + kx) * ncols;
                for (int n = 0; n < N; ++n)
                    for (int oy = 0; oy < OH; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        const std::int64_t base = (static_cast<std::int64_t>(n) * OH + oy) * OW;
                        if (iy < 0 || iy >= H) {
                            for (int ox = 0; ox < OW; ++ox) dst[base + ox] = T(0);
                            continue;
                        }
                        const T* src =
                            x.data() + ((static_cast<std::int64_t>(n) * C + c) * H + iy) * W;
                        for (int ox = 0; ox < OW; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            dst[base + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                        }
                    }
            }
}

template <typename T>
void col2im_add(const Tensor<T>& col, int kh, int kw, int stride, int pad, int OH, int OW,
                Tensor<T>& gx) {
    const int N = gx.dim(0), C = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
    const std::int64_t ncols = static_cast<std::int64_t>(N) * OH * OW;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const T* src =
                    col.data() + ((static_cast<std::int64_t>(c) * kh + ky) * kw + kx) * ncols;
                for (int n = 0; n < N; ++n)
                    for (int oy = 0; oy < OH; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        T* dst = gx.data() + ((static_cast<std::int64_t>(n) * C + c) * H + iy) * W;
                        const std::int64_t base = (static_cast<std::int64_t>(n) * OH + oy) * OW;
                        for (int ox = 0; ox < OW; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix >= 0 && ix < W) dst[ix] += src[base + ox];
                        }
                    }
            }
}

} // namespace detail

// x:[N,C,H,W], w:[OC,C,kh,kw], b:[OC] -> [N,OC,OH,OW]
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    const Tensor<T>& W = tp.val(w);
    const Tensor<T>& B = tp.val(b);
    SG_CHECK(X.ndim() == 4 && W.ndim() == 4 && X.dim(1) == W.dim(1) && B.size() == W.dim(0),
             "conv2d: incompatible shapes x=", shape_str(X.shape()), " w=", shape_str(W.shape()));
    const int N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    const int OC = W.dim(0), kh = W.dim(2), kw = W.dim(3);
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (Wd + 2 * pad - kw) / stride + 1;
    SG_CHECK(OH > 0 && OW > 0, "conv2d: empty output for input ", shape_str(X.shape()));
    const int CKK = C * kh * kw;
    const std::int64_t P = static_cast<std::int64_t>(OH) * OW;

    Tensor<T> col(Shape{CKK, static_cast<int>(N * P)});
    detail::im2col(X, kh, kw, stride, pad, OH, OW, col);
    Tensor<T> res(Shape{OC, static_cast<int>(N * P)});
    {
        ConstMatMap<T> wm(W.data(), OC, CKK), cm(col.data(), CKK, N * P);
        MatMap<T> rm(res.data(), OC, N * P);
        rm.noalias() = wm * cm;
    }
    Tensor<T> out(Shape{N, OC, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < OC; ++oc) {
            const T* src = res.data() + static_cast<std::int64_t>(oc) * N * P + n * P;
            T* dst = out.data() + (static_cast<std::int64_t>(n) * OC + oc) * P;
            const T bias = B[oc];
            for (std::int64_t i = 0; i < P; ++i) dst[i] = src[i] + bias;
        }

    const bool ng = tp.needs_grad(x) || tp.needs_grad(w) || tp.needs_grad(b);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        // col is rebuilt in the backward pass rather than captured; it is the
        // largest buffer in the graph and cheap to recompute.
        tp.set_back(oid, [tpp = &tp, xi = x.id, wi = w.id, bi = b.id, oid, stride, pad, N, C, OC,
                          kh, kw, OH, OW, P, CKK]() {
            const Tensor<T>& g = tpp->grad(oid);
            Tensor<T> gres(Shape{OC, static_cast<int>(N * P)});
            for (int n = 0; n < N; ++n)
                for (int oc = 0; oc < OC; ++oc) {
                    const T* src = g.data() + (static_cast<std::int64_t>(n) * OC + oc) * P;
                    T* dst = gres.data() + static_cast<std::int64_t>(oc) * N * P + n * P;
                    for (std::int64_t i = 0; i < P; ++i) dst[i] = src[i];
                }
            if (tpp->needs_grad(bi)) {
                Tensor<T>& gb = tpp->grad_buf(bi);
                for (int oc = 0; oc < OC; ++oc) {
                    double acc = 0;
                    const T* src = gres.data() + static_cast<std::int64_t>(oc) * N * P;
                    for (std::int64_t i = 0; i < N * P; ++i) acc += static_cast<double>(src[i]);
                    gb[oc] += static_cast<T>(acc);
                }
            }
            if (tpp->needs_grad(wi)) {
                Tensor<T> col(Shape{CKK, static_cast<int>(N * P)});
                detail::im2col(tpp->val(xi), kh, kw, stride, pad, OH, OW, col);
                ConstMatMap<T> gm(gres.data(), OC, N * P), cm(col.data(), CKK, N * P);
                MatMap<T> gw(tpp->grad_buf(wi).data(), OC, CKK);
                gw.noalias() += gm * cm.transpose();
            }
            if (tpp->needs_grad(xi)) {
                Tensor<T> gcol(Shape{CKK, static_cast<int>(N * P)});
                ConstMatMap<T> wm(tpp->val(wi).data(), OC, CKK), gm(gres.data(), OC, N * P);
                MatMap<T> gc(gcol.data(), CKK, N * P);
                gc.noalias() = wm.transpose() * gm;
                detail::col2im_add(gcol, kh, kw, stride, pad, OH, OW, tpp->grad_buf(xi));
            }
        });
    }
    return Var<T>{&tp, oid};
}

// Nearest-neighbour 2x upsampling.
template <typename T>
Var<T> upsample_nearest2(Var<T> x) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = tp.val(x);
    SG_CHECK(X.ndim() == 4, "upsample_nearest2: want NCHW input");
    const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    Tensor<T> out(Shape{N, C, 2 * H, 2 * W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h) {
                const T* src = X.data() + ((static_cast<std::int64_t>(n) * C + c) * H + h) * W;
                T* d0 =
                    out.data() + ((static_cast<std::int64_t>(n) * C + c) * 2 * H + 2 * h) * 2 * W;
                T* d1 = d0 + 2 * W;
                for (int w = 0; w < W; ++w) d0[2 * w] = d0[2 * w + 1] = d1[2 * w] = d1[2 * w + 1] =
                    src[w];
            }
    const bool ng = tp.needs_grad(x);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, xi = x.id, oid, N, C, H, W]() {
            const Tensor<T>& g = tpp->grad(oid);
            Tensor<T>& gx = tpp->grad_buf(xi);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int h = 0; h < H; ++h) {
                        T* dst =
                            gx.data() + ((static_cast<std::int64_t>(n) * C + c) * H + h) * W;
                        const T* s0 =
                            g.data() +
                            ((static_cast<std::int64_t>(n) * C + c) * 2 * H + 2 * h) * 2 * W;
                        const T* s1 = s0 + 2 * W;
                        for (int w = 0; w < W; ++w)
                            dst[w] += s0[2 * w] + s0[2 * w + 1] + s1[2 * w] + s1[2 * w + 1];
                    }
        });
    }
    return Var<T>{&tp, oid};
}

} // namespace splitgen
