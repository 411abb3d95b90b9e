#include "ccdnet/viz/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "ccdnet/core/errors.hpp"

namespace ccdnet {

Tensor<float> normalize01(const Tensor<float>& map) {
    float mn = map[0], mx = map[0];
    for (std::int64_t i = 0; i < map.numel(); ++i) {
        mn = std::min(mn, map[i]);
        mx = std::max(mx, map[i]);
    }
    Tensor<float> out(map.shape());
    const float span = mx - mn;
    for (std::int64_t i = 0; i < map.numel(); ++i)
        out[i] = span > 0 ? (map[i] - mn) / span : 0.5f;
    return out;
}

namespace {

struct Rgb {
    float r, g, b;
};

/// Dark violet -> red -> yellow -> near-white ramp.
Rgb ramp(float t) {
    static const std::array<Rgb, 5> anchors{Rgb{0.05f, 0.03f, 0.20f}, Rgb{0.45f, 0.05f, 0.40f},
                                            Rgb{0.90f, 0.25f, 0.10f}, Rgb{0.98f, 0.75f, 0.15f},
                                            Rgb{0.99f, 0.98f, 0.85f}};
    t = std::clamp(t, 0.0f, 1.0f) * (anchors.size() - 1);
    const int i = std::min<int>(static_cast<int>(t), anchors.size() - 2);
    const float f = t - i;
    return Rgb{anchors[i].r + f * (anchors[i + 1].r - anchors[i].r),
               anchors[i].g + f * (anchors[i + 1].g - anchors[i].g),
               anchors[i].b + f * (anchors[i + 1].b - anchors[i].b)};
}

void put(Tensor<float>& rgb, int y, int x, float r, float g, float b) {
    const int H = rgb.dim(0), W = rgb.dim(1);
    if (y < 0 || y >= H || x < 0 || x >= W) return;
    float* p = rgb.data() + (static_cast<std::int64_t>(y) * W + x) * 3;
    p[0] = r;
    p[1] = g;
    p[2] = b;
}

void fill_triangle(Tensor<float>& rgb, float x0, float y0, float x1, float y1, float x2, float y2,
                   Rgb c) {
    const int ymin = std::max(0, static_cast<int>(std::floor(std::min({y0, y1, y2}))));
    const int ymax = std::min(rgb.dim(0) - 1, static_cast<int>(std::ceil(std::max({y0, y1, y2}))));
    const int xmin = std::max(0, static_cast<int>(std::floor(std::min({x0, x1, x2}))));
    const int xmax = std::min(rgb.dim(1) - 1, static_cast<int>(std::ceil(std::max({x0, x1, x2}))));
    const float d = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2);
    if (std::abs(d) < 1e-9f) return;
    for (int y = ymin; y <= ymax; ++y)
        for (int x = xmin; x <= xmax; ++x) {
            const float a = ((y1 - y2) * (x - x2) + (x2 - x1) * (y - y2)) / d;
            const float b = ((y2 - y0) * (x - x2) + (x0 - x2) * (y - y2)) / d;
            const float g = 1.0f - a - b;
            if (a >= -1e-4f && b >= -1e-4f && g >= -1e-4f) put(rgb, y, x, c.r, c.g, c.b);
        }
}

/// Render one surface into the canvas with its lower-left anchor at (ox, oy).
void render_surface(Tensor<float>& rgb, const Tensor<float>& grid, float ox, float oy,
                    float cell, float zscale) {
    const int H = grid.dim(0), W = grid.dim(1);
    float mn = grid[0], mx = grid[0];
    for (std::int64_t i = 0; i < grid.numel(); ++i) {
        mn = std::min(mn, grid[i]);
        mx = std::max(mx, grid[i]);
    }
    const float span = std::max(1e-9f, mx - mn);
    auto project = [&](float gy, float gx, float v) {
        const float z = (v - mn) / span;
        const float sx = ox + (gx - gy) * cell * 0.9f;
        const float sy = oy + (gx + gy) * cell * 0.45f - z * zscale;
        return std::pair<float, float>{sx, sy};
    };
    // back-to-front in (gy + gx) order
    for (int s = 0; s <= (H - 2) + (W - 2); ++s)
        for (int gy = 0; gy + 1 < H; ++gy) {
            const int gx = s - gy;
            if (gx < 0 || gx + 1 >= W) continue;
            const float v = 0.25f * (grid.at(gy, gx) + grid.at(gy + 1, gx) + grid.at(gy, gx + 1) +
                                     grid.at(gy + 1, gx + 1));
            Rgb c = ramp((v - mn) / span);
            auto [ax, ay] = project(static_cast<float>(gy), static_cast<float>(gx), grid.at(gy, gx));
            auto [bx, by] = project(static_cast<float>(gy), static_cast<float>(gx + 1), grid.at(gy, gx + 1));
            auto [cx, cy] = project(static_cast<float>(gy + 1), static_cast<float>(gx + 1), grid.at(gy + 1, gx + 1));
            auto [dx, dy] = project(static_cast<float>(gy + 1), static_cast<float>(gx), grid.at(gy + 1, gx));
            fill_triangle(rgb, ax, ay, bx, by, cx, cy, c);
            fill_triangle(rgb, ax, ay, cx, cy, dx, dy, c);
        }
}

}  // namespace

Tensor<float> colormap_rgb(const Tensor<float>& gray01) {
    if (gray01.ndim() != 2) throw ShapeError("colormap_rgb: (H,W) required");
    const int H = gray01.dim(0), W = gray01.dim(1);
    Tensor<float> out({H, W, 3});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const Rgb c = ramp(gray01.at(y, x));
            put(out, y, x, c.r, c.g, c.b);
        }
    return out;
}

Tensor<float> gray_to_rgb(const Tensor<float>& gray) {
    if (gray.ndim() != 2) throw ShapeError("gray_to_rgb: (H,W) required");
    const int H = gray.dim(0), W = gray.dim(1);
    Tensor<float> out({H, W, 3});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const float v = std::clamp(gray.at(y, x), 0.0f, 1.0f);
            put(out, y, x, v, v, v);
        }
    return out;
}

void draw_box(Tensor<float>& rgb, const BoxF& box, float r, float g, float b) {
    const int x0 = static_cast<int>(std::lround(box.x_min));
    const int y0 = static_cast<int>(std::lround(box.y_min));
    const int x1 = static_cast<int>(std::lround(box.x_max)) - 1;
    const int y1 = static_cast<int>(std::lround(box.y_max)) - 1;
    for (int x = x0; x <= x1; ++x) {
        put(rgb, y0, x, r, g, b);
        put(rgb, y1, x, r, g, b);
    }
    for (int y = y0; y <= y1; ++y) {
        put(rgb, y, x0, r, g, b);
        put(rgb, y, x1, r, g, b);
    }
}

Tensor<float> upscale_rgb(const Tensor<float>& rgb, int factor) {
    const int H = rgb.dim(0), W = rgb.dim(1);
    Tensor<float> out({H * factor, W * factor, 3});
    for (int y = 0; y < H * factor; ++y)
        for (int x = 0; x < W * factor; ++x)
            for (int c = 0; c < 3; ++c)
                out[(static_cast<std::int64_t>(y) * W * factor + x) * 3 + c] =
                    rgb[(static_cast<std::int64_t>(y / factor) * W + x / factor) * 3 + c];
    return out;
}

Tensor<float> render_surface_pair(const Tensor<float>& left, const Tensor<float>& right) {
    if (left.ndim() != 2 || right.ndim() != 2)
        throw ShapeError("render_surface_pair: (H,W) grids required");
    const int cells = std::max({left.dim(0), left.dim(1), right.dim(0), right.dim(1)});
    const float cell = std::max(4.0f, 220.0f / static_cast<float>(cells));
    const float zscale = 90.0f;
    const int W = 640, H = 360;
    Tensor<float> canvas({H, W, 3});
    for (std::int64_t i = 0; i < canvas.numel(); ++i) canvas[i] = 1.0f;
    render_surface(canvas, left, W * 0.25f, H * 0.62f, cell, zscale);
    render_surface(canvas, right, W * 0.75f, H * 0.62f, cell, zscale);
    return canvas;
}

}  // namespace ccdnet
