#pragma once

#include <png.h>

#include <cstdio>
#include <string>
#include <vector>

#include "splitgen/tensor.hpp"

namespace splitgen {

// Images are CHW float tensors in [0,1]; files are 8-bit PNG. The byte
// mapping is v = byte/255 on read and byte = round(v*255) on write, so a
// read/write round trip is exact.

inline Tensor<float> decode_png_bytes(const std::vector<unsigned char>& bytes) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    SG_CHECK(png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()) != 0,
             "png decode failed: ", img.message);
    const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
    const bool alpha = (img.format & PNG_FORMAT_FLAG_ALPHA) != 0;
    const int C = color ? (alpha ? 4 : 3) : 1;
    img.format = color ? (alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB) : PNG_FORMAT_GRAY;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
    if (png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr) == 0) {
        std::string msg = img.message;
        png_image_free(&img);
        fail("png decode failed: ", msg);
    }
    const int H = static_cast<int>(img.height), W = static_cast<int>(img.width);
    Tensor<float> out(Shape{C, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c)
                out[(static_cast<std::int64_t>(c) * H + y) * W + x] =
                    static_cast<float>(buf[(static_cast<std::size_t>(y) * W + x) * C + c]) / 255.f;
    return out;
}

inline Tensor<float> read_png(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    SG_CHECK(f != nullptr, "cannot open ", path);
    std::vector<unsigned char> bytes;
    unsigned char chunk[65536];
    std::size_t got;
    while ((got = std::fread(chunk, 1, sizeof chunk, f)) > 0) bytes.insert(bytes.end(), chunk, chunk + got);
    std::fclose(f);
    SG_CHECK(!bytes.empty(), "empty file ", path);
    return decode_png_bytes(bytes);
}

inline std::vector<png_byte> quantize_u8(const Tensor<float>& img) {
    SG_CHECK(img.ndim() == 3, "write_png: want CHW image, got ", shape_str(img.shape()));
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    std::vector<png_byte> buf(static_cast<std::size_t>(C) * H * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                float v = img[(static_cast<std::int64_t>(c) * H + y) * W + x];
                v = std::min(std::max(v, 0.f), 1.f);
                buf[(static_cast<std::size_t>(y) * W + x) * C + c] =
                    static_cast<png_byte>(std::lround(v * 255.f));
            }
    return buf;
}

inline void write_png(const std::string& path, const Tensor<float>& img) {
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    SG_CHECK(C == 1 || C == 3 || C == 4, "write_png: unsupported channel count ", C);
    auto buf = quantize_u8(img);
    png_image out{};
    out.version = PNG_IMAGE_VERSION;
    out.width = static_cast<png_uint_32>(W);
    out.height = static_cast<png_uint_32>(H);
    out.format = C == 1 ? PNG_FORMAT_GRAY : (C == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_RGBA);
    SG_CHECK(png_image_write_to_file(&out, path.c_str(), 0, buf.data(), 0, nullptr) != 0,
             "png write failed for ", path, ": ", out.message);
}

} // namespace splitgen
