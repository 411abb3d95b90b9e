#include "ccdnet/data/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

#include "ccdnet/core/errors.hpp"

namespace ccdnet {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw ParseError("png: " + path + ": " + what);
}

}  // namespace

Tensor<float> read_png_gray(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail(path, "cannot open");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) fail(path, "libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(path, "decode error");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray(png, 1, -1.0, -1.0);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    depth = png_get_bit_depth(png, info);

    const int H = static_cast<int>(png_get_image_height(png, info));
    const int W = static_cast<int>(png_get_image_width(png, info));
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<png_byte> data(rowbytes * static_cast<std::size_t>(H));
    std::vector<png_bytep> rows(static_cast<std::size_t>(H));
    for (int y = 0; y < H; ++y) rows[static_cast<std::size_t>(y)] = data.data() + rowbytes * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor<float> img({H, W});
    if (depth == 16) {
        for (int y = 0; y < H; ++y) {
            const png_byte* r = rows[static_cast<std::size_t>(y)];
            for (int x = 0; x < W; ++x) {
                const unsigned v = (static_cast<unsigned>(r[2 * x]) << 8) | r[2 * x + 1];
                img.at(y, x) = static_cast<float>(v) / 65535.0f;
            }
        }
    } else {
        for (int y = 0; y < H; ++y) {
            const png_byte* r = rows[static_cast<std::size_t>(y)];
            for (int x = 0; x < W; ++x) img.at(y, x) = static_cast<float>(r[x]) / 255.0f;
        }
    }
    return img;
}

namespace {

void write_gray(const std::string& path, const Tensor<float>& image, int depth) {
    if (image.ndim() != 2) throw ShapeError("write_png: (H,W) image required");
    const int H = image.dim(0), W = image.dim(1);
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail(path, "cannot open for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) fail(path, "libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(path, "encode error");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), depth,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    const int bytes = depth / 8;
    std::vector<png_byte> row(static_cast<std::size_t>(W) * bytes);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const float c = std::min(1.0f, std::max(0.0f, image.at(y, x)));
            if (depth == 16) {
                const unsigned v = static_cast<unsigned>(c * 65535.0f + 0.5f);
                row[2 * x] = static_cast<png_byte>(v >> 8);
                row[2 * x + 1] = static_cast<png_byte>(v & 0xFF);
            } else {
                row[x] = static_cast<png_byte>(c * 255.0f + 0.5f);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_gray16(const std::string& path, const Tensor<float>& image) {
    write_gray(path, image, 16);
}

void write_png_gray8(const std::string& path, const Tensor<float>& image) {
    write_gray(path, image, 8);
}

void write_png_rgb8(const std::string& path, const Tensor<float>& rgb) {
    if (rgb.ndim() != 3 || rgb.dim(2) != 3) throw ShapeError("write_png_rgb8: (H,W,3) required");
    const int H = rgb.dim(0), W = rgb.dim(1);
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail(path, "cannot open for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) fail(path, "libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(path, "encode error");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(W) * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = std::min(1.0f, std::max(0.0f, rgb[static_cast<std::int64_t>(y) * W * 3 + x * 3 + c]));
                row[x * 3 + c] = static_cast<png_byte>(v * 255.0f + 0.5f);
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace ccdnet
