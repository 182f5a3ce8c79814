#pragma once

#include "splitgen/rng.hpp"
#include "splitgen/tensor.hpp"

namespace splitgen {

// Patch shuffling that builds the auxiliary view: r x r blocks of the image
// are rearranged by a uniform permutation, so global structure is destroyed
// while content within each patch survives.

struct PatchPermutation {
    int patch_size = 1;
    int grid_h = 0, grid_w = 0;
    std::vector<int> order; // output slot i receives input patch order[i]
};

inline PatchPermutation draw_permutation(int height, int width, int r, RngStream& rng) {
    SG_CHECK(r >= 1 && height % r == 0 && width % r == 0, "patch size ", r,
             " does not divide image ", height, "x", width);
    PatchPermutation p;
    p.patch_size = r;
    p.grid_h = height / r;
    p.grid_w = width / r;
    p.order = rng.permutation(p.grid_h * p.grid_w);
    return p;
}

// image: [C,H,W]
template <typename T>
Tensor<T> shuffle_patches(const Tensor<T>& image, const PatchPermutation& perm) {
    SG_CHECK(image.ndim() == 3, "shuffle_patches: want CHW image, got ",
             shape_str(image.shape()));
    const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
    const int r = perm.patch_size;
    SG_CHECK(r >= 1 && H % r == 0 && W % r == 0, "patch size ", r, " does not divide image ", H,
             "x", W);
    SG_CHECK(perm.grid_h == H / r && perm.grid_w == W / r &&
                 static_cast<int>(perm.order.size()) == perm.grid_h * perm.grid_w,
             "permutation sized for ", perm.grid_h, "x", perm.grid_w, " grid does not match ", H,
             "x", W, " image at r=", r);
    Tensor<T> out(image.shape());
    for (int slot = 0; slot < static_cast<int>(perm.order.size()); ++slot) {
        const int src = perm.order[slot];
        SG_CHECK(src >= 0 && src < static_cast<int>(perm.order.size()),
                 "permutation entry out of range");
        const int sy = (src / perm.grid_w) * r, sx = (src % perm.grid_w) * r;
        const int dy = (slot / perm.grid_w) * r, dx = (slot % perm.grid_w) * r;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < r; ++y)
                for (int x = 0; x < r; ++x)
                    out[(static_cast<std::int64_t>(c) * H + dy + y) * W + dx + x] =
                        image[(static_cast<std::int64_t>(c) * H + sy + y) * W + sx + x];
    }
    return out;
}

inline PatchPermutation inverse(const PatchPermutation& perm) {
    PatchPermutation inv = perm;
    for (int i = 0; i < static_cast<int>(perm.order.size()); ++i) inv.order[perm.order[i]] = i;
    return inv;
}

template <typename T>
Tensor<T> scramble_image(const Tensor<T>& image, int r, RngStream& rng) {
    return shuffle_patches(image, draw_permutation(image.dim(1), image.dim(2), r, rng));
}

// batch: [N,C,H,W]; every image gets its own fresh permutation.
template <typename T>
Tensor<T> auxiliary_view(const Tensor<T>& batch, int r, RngStream& rng) {
    SG_CHECK(batch.ndim() == 4, "auxiliary_view: want NCHW batch");
    const int N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    Tensor<T> out(batch.shape());
    Tensor<T> img(Shape{C, H, W});
    const std::int64_t stride = static_cast<std::int64_t>(C) * H * W;
    for (int n = 0; n < N; ++n) {
        for (std::int64_t i = 0; i < stride; ++i) img[i] = batch[n * stride + i];
        Tensor<T> shuffled = scramble_image(img, r, rng);
        for (std::int64_t i = 0; i < stride; ++i) out[n * stride + i] = shuffled[i];
    }
    return out;
}

} // namespace splitgen
