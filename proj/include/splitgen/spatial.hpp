#pragma once

#include "splitgen/ops.hpp"

namespace splitgen {

// Transforms are rows of t:[N,4] = (sx, sy, cx, cy) in normalized [-1,1]
// canvas coordinates, align_corners=false: pixel j of an m-pixel axis sits at
// (2j+1)/m - 1. Sampling outside the source is treated as zero.

namespace detail {

template <typename T>
struct BilinearTap {
    int x0, y0;
    T wx, wy;   // fractional offsets
    bool valid; // at least one corner in range
};

template <typename T>
inline BilinearTap<T> tap(T fx, T fy, int W, int H) {
    BilinearTap<T> t;
    const T flx = std::floor(fx), fly = std::floor(fy);
    t.x0 = static_cast<int>(flx);
    t.y0 = static_cast<int>(fly);
    t.wx = fx - flx;
    t.wy = fy - fly;
    t.valid = (t.x0 >= -1 && t.x0 < W && t.y0 >= -1 && t.y0 < H);
    return t;
}

} // namespace detail

// img:[N,C,H,W], t:[N,4] -> [N,C,gh,gw]
template <typename T>
Var<T> glimpse_extract(Var<T> img, Var<T> t, int gh, int gw) {
    Tape<T>& tp = *img.tape;
    const Tensor<T>& X = tp.val(img);
    const Tensor<T>& Tr = tp.val(t);
    SG_CHECK(X.ndim() == 4 && Tr.ndim() == 2 && Tr.dim(1) == 4 && Tr.dim(0) == X.dim(0),
             "glimpse_extract: incompatible shapes ", shape_str(X.shape()), " and ",
             shape_str(Tr.shape()));
    const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    Tensor<T> out(Shape{N, C, gh, gw});
    auto pix = [&](int n, int c, int y, int x) -> T {
        return (x >= 0 && x < W && y >= 0 && y < H) ? X.at(n, c, y, x) : T(0);
    };
    for (int n = 0; n < N; ++n) {
        const T sx = Tr.at(n, 0), sy = Tr.at(n, 1), cx = Tr.at(n, 2), cy = Tr.at(n, 3);
        for (int jy = 0; jy < gh; ++jy)
            for (int jx = 0; jx < gw; ++jx) {
                const T ax = T(2 * jx + 1) / T(gw) - T(1);
                const T ay = T(2 * jy + 1) / T(gh) - T(1);
                const T fx = (cx + sx * ax + T(1)) / T(2) * T(W) - T(0.5);
                const T fy = (cy + sy * ay + T(1)) / T(2) * T(H) - T(0.5);
                const auto tb = detail::tap(fx, fy, W, H);
                if (!tb.valid) {
                    for (int c = 0; c < C; ++c) out.at(n, c, jy, jx) = T(0);
                    continue;
                }
                for (int c = 0; c < C; ++c) {
                    const T p00 = pix(n, c, tb.y0, tb.x0), p01 = pix(n, c, tb.y0, tb.x0 + 1);
                    const T p10 = pix(n, c, tb.y0 + 1, tb.x0), p11 = pix(n, c, tb.y0 + 1, tb.x0 + 1);
                    out.at(n, c, jy, jx) = (T(1) - tb.wy) * ((T(1) - tb.wx) * p00 + tb.wx * p01) +
                                           tb.wy * ((T(1) - tb.wx) * p10 + tb.wx * p11);
                }
            }
    }
    const bool ng = tp.needs_grad(img) || tp.needs_grad(t);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, ii = img.id, ti = t.id, oid, gh, gw, N, C, H, W]() {
            const Tensor<T>& g = tpp->grad(oid);
            const Tensor<T>& X = tpp->val(ii);
            const Tensor<T>& Tr = tpp->val(ti);
            const bool gi = tpp->needs_grad(ii), gt = tpp->needs_grad(ti);
            Tensor<T>* gimg = gi ? &tpp->grad_buf(ii) : nullptr;
            Tensor<T>* gtr = gt ? &tpp->grad_buf(ti) : nullptr;
            auto pix = [&](int n, int c, int y, int x) -> T {
                return (x >= 0 && x < W && y >= 0 && y < H) ? X.at(n, c, y, x) : T(0);
            };
            auto scat = [&](int n, int c, int y, int x, T v) {
                if (x >= 0 && x < W && y >= 0 && y < H) gimg->at(n, c, y, x) += v;
            };
            for (int n = 0; n < N; ++n) {
                const T sx = Tr.at(n, 0), sy = Tr.at(n, 1), cx = Tr.at(n, 2), cy = Tr.at(n, 3);
                double gsx = 0, gsy = 0, gcx = 0, gcy = 0;
                for (int jy = 0; jy < gh; ++jy)
                    for (int jx = 0; jx < gw; ++jx) {
                        const T ax = T(2 * jx + 1) / T(gw) - T(1);
                        const T ay = T(2 * jy + 1) / T(gh) - T(1);
                        const T fx = (cx + sx * ax + T(1)) / T(2) * T(W) - T(0.5);
                        const T fy = (cy + sy * ay + T(1)) / T(2) * T(H) - T(0.5);
                        const auto tb = detail::tap(fx, fy, W, H);
                        if (!tb.valid) continue;
                        double dfx = 0, dfy = 0;
                        for (int c = 0; c < C; ++c) {
                            const T go = g.at(n, c, jy, jx);
                            if (go == T(0)) continue;
                            const T p00 = pix(n, c, tb.y0, tb.x0),
                                    p01 = pix(n, c, tb.y0, tb.x0 + 1),
                                    p10 = pix(n, c, tb.y0 + 1, tb.x0),
                                    p11 = pix(n, c, tb.y0 + 1, tb.x0 + 1);
                            if (gi) {
                                scat(n, c, tb.y0, tb.x0, go * (T(1) - tb.wy) * (T(1) - tb.wx));
                                scat(n, c, tb.y0, tb.x0 + 1, go * (T(1) - tb.wy) * tb.wx);
                                scat(n, c, tb.y0 + 1, tb.x0, go * tb.wy * (T(1) - tb.wx));
                                scat(n, c, tb.y0 + 1, tb.x0 + 1, go * tb.wy * tb.wx);
                            }
                            if (gt) {
                                dfx += static_cast<double>(go) *
                                       ((T(1) - tb.wy) * (p01 - p00) + tb.wy * (p11 - p10));
                                dfy += static_cast<double>(go) *
                                       ((T(1) - tb.wx) * (p10 - p00) + tb.wx * (p11 - p01));
                            }
                        }
                        if (gt) {
                            gcx += dfx * W / 2;
                            gsx += dfx * W / 2 * ax;
                            gcy += dfy * H / 2;
                            gsy += dfy * H / 2 * ay;
                        }
                    }
                if (gt) {
                    gtr->at(n, 0) += static_cast<T>(gsx);
                    gtr->at(n, 1) += static_cast<T>(gsy);
                    gtr->at(n, 2) += static_cast<T>(gcx);
                    gtr->at(n, 3) += static_cast<T>(gcy);
                }
            }
        });
    }
    return Var<T>{&tp, oid};
}

namespace detail {

// Canvas pixel span that can receive any mass from a glimpse with extent
// (scale, center); outside it every bilinear tap reads zero.
inline void paste_span(double scale, double center, int canvas, int gsize, int& lo, int& hi) {
    const double margin = 1.0 + 1.0 / gsize;
    const double ulo = center - scale * margin, uhi = center + scale * margin;
    lo = static_cast<int>(std::floor((ulo + 1.0) / 2.0 * canvas - 0.5)) - 1;
    hi = static_cast<int>(std::ceil((uhi + 1.0) / 2.0 * canvas - 0.5)) + 1;
    lo = std::max(lo, 0);
    hi = std::min(hi, canvas - 1);
}

} // namespace detail

// Inverse warp: place glimpse:[N,C,gh,gw] onto an HxW canvas at transform t.
// Requires sx,sy > 0.
template <typename T>
Var<T> glimpse_paste(Var<T> glimpse, Var<T> t, int H, int W) {
    Tape<T>& tp = *glimpse.tape;
    const Tensor<T>& G = tp.val(glimpse);
    const Tensor<T>& Tr = tp.val(t);
    SG_CHECK(G.ndim() == 4 && Tr.ndim() == 2 && Tr.dim(1) == 4 && Tr.dim(0) == G.dim(0),
             "glimpse_paste: incompatible shapes ", shape_str(G.shape()), " and ",
             shape_str(Tr.shape()));
    const int N = G.dim(0), C = G.dim(1), gh = G.dim(2), gw = G.dim(3);
    Tensor<T> out(Shape{N, C, H, W}, T(0));
    auto gpix = [&](int n, int c, int y, int x) -> T {
        return (x >= 0 && x < gw && y >= 0 && y < gh) ? G.at(n, c, y, x) : T(0);
    };
    for (int n = 0; n < N; ++n) {
        const T sx = Tr.at(n, 0), sy = Tr.at(n, 1), cx = Tr.at(n, 2), cy = Tr.at(n, 3);
        SG_CHECK(sx > T(0) && sy > T(0), "glimpse_paste: non-positive scale at row ", n);
        int x0, x1, y0, y1;
        detail::paste_span(sx, cx, W, gw, x0, x1);
        detail::paste_span(sy, cy, H, gh, y0, y1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const T u = T(2 * x + 1) / T(W) - T(1);
                const T v = T(2 * y + 1) / T(H) - T(1);
                const T fx = ((u - cx) / sx + T(1)) / T(2) * T(gw) - T(0.5);
                const T fy = ((v - cy) / sy + T(1)) / T(2) * T(gh) - T(0.5);
                const auto tb = detail::tap(fx, fy, gw, gh);
                if (!tb.valid) continue;
                for (int c = 0; c < C; ++c) {
                    const T p00 = gpix(n, c, tb.y0, tb.x0), p01 = gpix(n, c, tb.y0, tb.x0 + 1);
                    const T p10 = gpix(n, c, tb.y0 + 1, tb.x0),
                            p11 = gpix(n, c, tb.y0 + 1, tb.x0 + 1);
                    out.at(n, c, y, x) = (T(1) - tb.wy) * ((T(1) - tb.wx) * p00 + tb.wx * p01) +
                                         tb.wy * ((T(1) - tb.wx) * p10 + tb.wx * p11);
                }
            }
    }
    const bool ng = tp.needs_grad(glimpse) || tp.needs_grad(t);
    const int oid = tp.reserve(std::move(out), ng);
    if (ng) {
        tp.set_back(oid, [tpp = &tp, gi = glimpse.id, ti = t.id, oid, N, C, gh, gw, H, W]() {
            const Tensor<T>& g = tpp->grad(oid);
            const Tensor<T>& G = tpp->val(gi);
            const Tensor<T>& Tr = tpp->val(ti);
            const bool wantg = tpp->needs_grad(gi), wantt = tpp->needs_grad(ti);
            Tensor<T>* gg = wantg ? &tpp->grad_buf(gi) : nullptr;
            Tensor<T>* gtr = wantt ? &tpp->grad_buf(ti) : nullptr;
            auto gpix = [&](int n, int c, int y, int x) -> T {
                return (x >= 0 && x < gw && y >= 0 && y < gh) ? G.at(n, c, y, x) : T(0);
            };
            auto scat = [&](int n, int c, int y, int x, T v) {
                if (x >= 0 && x < gw && y >= 0 && y < gh) gg->at(n, c, y, x) += v;
            };
            for (int n = 0; n < N; ++n) {
                const T sx = Tr.at(n, 0), sy = Tr.at(n, 1), cx = Tr.at(n, 2), cy = Tr.at(n, 3);
                int x0, x1, y0, y1;
                detail::paste_span(sx, cx, W, gw, x0, x1);
                detail::paste_span(sy, cy, H, gh, y0, y1);
                double gsx = 0, gsy = 0, gcx = 0, gcy = 0;
                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x) {
                        const T u = T(2 * x + 1) / T(W) - T(1);
                        const T v = T(2 * y + 1) / T(H) - T(1);
                        const T ug = (u - cx) / sx, vg = (v - cy) / sy;
                        const T fx = (ug + T(1)) / T(2) * T(gw) - T(0.5);
                        const T fy = (vg + T(1)) / T(2) * T(gh) - T(0.5);
                        const auto tb = detail::tap(fx, fy, gw, gh);
                        if (!tb.valid) continue;
                        double dfx = 0, dfy = 0;
                        for (int c = 0; c < C; ++c) {
                            const T go = g.at(n, c, y, x);
                            if (go == T(0)) continue;
                            const T p00 = gpix(n, c, tb.y0, tb.x0),
                                    p01 = gpix(n, c, tb.y0, tb.x0 + 1),
                                    p10 = gpix(n, c, tb.y0 + 1, tb.x0),
                                    p11 = gpix(n, c, tb.y0 + 1, tb.x0 + 1);
                            if (wantg) {
                                scat(n, c, tb.y0, tb.x0, go * (T(1) - tb.wy) * (T(1) - tb.wx));
                                scat(n, c, tb.y0, tb.x0 + 1, go * (T(1) - tb.wy) * tb.wx);
                                scat(n, c, tb.y0 + 1, tb.x0, go * tb.wy * (T(1) - tb.wx));
                                scat(n, c, tb.y0 + 1, tb.x0 + 1, go * tb.wy * tb.wx);
                            }
                            if (wantt) {
                                dfx += static_cast<double>(go) *
                                       ((T(1) - tb.wy) * (p01 - p00) + tb.wy * (p11 - p10));
                                dfy += static_cast<double>(go) *
                                       ((T(1) - tb.wx) * (p10 - p00) + tb.wx * (p11 - p01));
                            }
                        }
                        if (wantt) {
                            // fx = ((u-cx)/sx + 1)/2*gw - 0.5
                            const double kx = gw / 2.0, ky = gh / 2.0;
                            gcx += dfx * kx * (-1.0 / sx);
                            gsx += dfx * kx * (-static_cast<double>(ug) / sx);
                            gcy += dfy * ky * (-1.0 / sy);
                            gsy += dfy * ky * (-static_cast<double>(vg) / sy);
                        }
                    }
                if (wantt) {
                    gtr->at(n, 0) += static_cast<T>(gsx);
                    gtr->at(n, 1) += static_cast<T>(gsy);
                    gtr->at(n, 2) += static_cast<T>(gcx);
                    gtr->at(n, 3) += static_cast<T>(gcy);
                }
            }
        });
    }
    return Var<T>{&tp, oid};
}

} // namespace splitgen
