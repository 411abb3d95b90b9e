#pragma once

#include <array>
#include <queue>
#include <vector>

#include "ccdnet/core/errors.hpp"
#include "ccdnet/core/tensor.hpp"
#include "ccdnet/data/annotation.hpp"

namespace ccdnet {

/// One box per 8-connected foreground component: the tight min/max rectangle,
/// half-open on the max edges. Accepts {0,1} or {0,255} masks.
template <typename T>
inline std::vector<Annotation> mask_to_boxes(const Tensor<T>& mask) {
    if (mask.ndim() != 2) throw ShapeError("mask_to_boxes: 2-d mask required");
    const int H = mask.dim(0), W = mask.dim(1);
    const T scale = mask.max_abs() > T(1) ? T(255) : T(1);
    auto fg = [&](int y, int x) { return mask.at(y, x) / scale >= T(0.5); };

    std::vector<char> seen(static_cast<std::size_t>(H) * W, 0);
    std::vector<Annotation> out;
    static constexpr std::array<std::pair<int, int>, 8> kNbr{
        std::pair<int, int>{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};

    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!fg(y, x) || seen[static_cast<std::size_t>(y) * W + x]) continue;
            int rmin = y, rmax = y, cmin = x, cmax = x;
            std::queue<std::pair<int, int>> q;
            q.push({y, x});
            seen[static_cast<std::size_t>(y) * W + x] = 1;
            while (!q.empty()) {
                auto [cy, cx] = q.front();
                q.pop();
                rmin = std::min(rmin, cy);
                rmax = std::max(rmax, cy);
                cmin = std::min(cmin, cx);
                cmax = std::max(cmax, cx);
                for (auto [dy, dx] : kNbr) {
                    const int ny = cy + dy, nx = cx + dx;
                    if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                    if (seen[static_cast<std::size_t>(ny) * W + nx] || !fg(ny, nx)) continue;
                    seen[static_cast<std::size_t>(ny) * W + nx] = 1;
                    q.push({ny, nx});
                }
            }
            out.push_back(Annotation{BoxF{static_cast<double>(cmin), static_cast<double>(rmin),
                                          static_cast<double>(cmax + 1), static_cast<double>(rmax + 1)},
                                     0});
        }
    return out;
}

/// Otsu threshold over a 256-bin histogram of [0,1] values: the lowest
/// threshold maximizing between-class variance. Returns -1 for a mask with a
/// single occupied bin (no foreground class).
template <typename T>
inline int otsu_threshold(const Tensor<T>& mask) {
    std::array<std::int64_t, 256> hist{};
    for (std::int64_t i = 0; i < mask.numel(); ++i) {
        const double v = std::min(1.0, std::max(0.0, static_cast<double>(mask[i])));
        hist[static_cast<std::size_t>(std::min(255, static_cast<int>(v * 256.0)))]++;
    }
    const std::int64_t total = mask.numel();
    double sum_all = 0;
    for (int i = 0; i < 256; ++i) sum_all += static_cast<double>(i) * hist[static_cast<std::size_t>(i)];

    int best_t = -1;
    double best_var = 0.0;
    std::int64_t w0 = 0;
    double sum0 = 0;
    for (int t = 0; t < 255; ++t) {
        w0 += hist[static_cast<std::size_t>(t)];
        sum0 += static_cast<double>(t) * hist[static_cast<std::size_t>(t)];
        const std::int64_t w1 = total - w0;
        if (w0 == 0 || w1 == 0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (sum_all - sum0) / w1;
        const double var = static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best_t = t;
        }
    }
    return best_t;
}

/// Otsu-binarize a float mask, then extract component boxes. A constant mask
/// yields no boxes.
template <typename T>
inline std::vector<Annotation> soft_mask_to_boxes(const Tensor<T>& mask) {
    const int t = otsu_threshold(mask);
    if (t < 0) return {};
    Tensor<T> bin(mask.shape());
    for (std::int64_t i = 0; i < mask.numel(); ++i) {
        const double v = std::min(1.0, std::max(0.0, static_cast<double>(mask[i])));
        bin[i] = (static_cast<int>(std::min(255.0, v * 256.0)) > t) ? T(1) : T(0);
    }
    return mask_to_boxes(bin);
}

/// Rasterize boxes as filled rectangles; inverse of mask_to_boxes for
/// disjoint boxes.
template <typename T>
inline Tensor<T> render_boxes(const std::vector<Annotation>& boxes, int h, int w) {
    Tensor<T> m({h, w});
    for (const auto& a : boxes) {
        const int y0 = static_cast<int>(a.box.y_min), y1 = static_cast<int>(a.box.y_max);
        const int x0 = static_cast<int>(a.box.x_min), x1 = static_cast<int>(a.box.x_max);
        for (int y = std::max(0, y0); y < std::min(h, y1); ++y)
            for (int x = std::max(0, x0); x < std::min(w, x1); ++x) m.at(y, x) = T(1);
    }
    return m;
}

}  // namespace ccdnet
