#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "splitgen/common.hpp"
#include "splitgen/image.hpp"
#include "splitgen/tensor.hpp"

namespace splitgen {

inline constexpr int kGridSep = 2;        // separator width in pixels, also the outer border
inline constexpr float kGridGray = 0.5f;  // separator fill

// Tiles same-sized [C,H,W] images row-major into one canvas with kGridSep-px
// separators between and around the cells. A rows x cols grid of s-px cells
// is (rows*s + (rows+1)*2) x (cols*s + (cols+1)*2) pixels.
inline Tensor<float> compose_grid(const std::vector<Tensor<float>>& images, int rows, int cols) {
    SG_CHECK(!images.empty(), "compose_grid: no images");
    SG_CHECK(rows > 0 && cols > 0, "compose_grid: grid dims must be positive");
    SG_CHECK(static_cast<std::size_t>(rows) * cols >= images.size(),
             "compose_grid: ", rows, "x", cols, " grid cannot hold ", images.size(), " images");
    const Shape& s0 = images[0].shape();
    SG_CHECK(s0.size() == 3, "compose_grid: want [C,H,W] images");
    for (const auto& im : images)
        SG_CHECK(im.shape() == s0, "compose_grid: images differ in shape");
    const int C = s0[0], H = s0[1], W = s0[2];

    Tensor<float> out(Shape{C, rows * H + (rows + 1) * kGridSep,
                            cols * W + (cols + 1) * kGridSep},
                      kGridGray);
    const int oh = out.dim(1), ow = out.dim(2);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
        const int y0 = kGridSep + r * (H + kGridSep);
        const int x0 = kGridSep + c * (W + kGridSep);
        const float* src = images[i].data();
        float* dst = out.data();
        for (int ch = 0; ch < C; ++ch)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    dst[(ch * oh + y0 + y) * ow + x0 + x] = src[(ch * H + y) * W + x];
    }
    return out;
}

inline void emit_grid(const std::vector<Tensor<float>>& images, int rows, int cols,
                      const std::string& path) {
    write_png(path, compose_grid(images, rows, cols));
}

// 1-px red outline on a [C,H,W] image; box is (x0, y0, x1, y1) in pixels,
// clamped to the canvas. Grayscale images get a white outline instead.
inline void draw_box(Tensor<float>& img, double bx0, double by0, double bx1, double by1) {
    SG_CHECK(img.ndim() == 3, "draw_box: want a [C,H,W] image");
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    int x0 = static_cast<int>(std::lround(bx0)), y0 = static_cast<int>(std::lround(by0));
    int x1 = static_cast<int>(std::lround(bx1)), y1 = static_cast<int>(std::lround(by1));
    x0 = std::clamp(x0, 0, W - 1);
    x1 = std::clamp(x1, 0, W - 1);
    y0 = std::clamp(y0, 0, H - 1);
    y1 = std::clamp(y1, 0, H - 1);
    if (x1 < x0 || y1 < y0) return;
    float* d = img.data();
    auto set = [&](int y, int x) {
        for (int ch = 0; ch < C; ++ch)
            d[(ch * H + y) * W + x] = (ch == 0 ? 1.0f : 0.0f);
    };
    for (int x = x0; x <= x1; ++x) {
        set(y0, x);
        set(y1, x);
    }
    for (int y = y0; y <= y1; ++y) {
        set(y, x0);
        set(y, x1);
    }
}

} // namespace splitgen
