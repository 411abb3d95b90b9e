#pragma once

// Straight-line scalar reference implementations used as test oracles. These
// deliberately avoid the library's compute paths (no im2col, no Eigen) so a
// shared bug cannot hide.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "ccdnet/core/tensor.hpp"
#include "ccdnet/data/annotation.hpp"
#include "ccdnet/eval/metrics.hpp"

namespace oracle {

using ccdnet::Tensor;

/// Direct convolution, zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OC = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
    Tensor<T> y({N, OC, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < OC; ++oc)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    T acc = b.empty() ? T(0) : b[oc];
                    for (int c = 0; c < C; ++c)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ih = oh * stride - pad + ky;
                                const int iw = ow * stride - pad + kx;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += x.at(n, c, ih, iw) * w.at(oc, c, ky, kx);
                            }
                    y.at(n, oc, oh, ow) = acc;
                }
    return y;
}

/// Per-channel affine normalization with explicit statistics.
template <typename T>
Tensor<T> batchnorm_stats(const Tensor<T>& x, const std::vector<T>& mu, const std::vector<T>& sigma,
                          const std::vector<T>& gamma, const std::vector<T>& beta) {
    Tensor<T> y(x.shape());
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    y.at(n, c, h, w) = gamma[c] * (x.at(n, c, h, w) - mu[c]) / sigma[c] + beta[c];
    return y;
}

/// Bilinear upsample with half-pixel sample centers (align_corners = false).
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int f) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y({N, C, H * f, W * f});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < H * f; ++oy)
                for (int ox = 0; ox < W * f; ++ox) {
                    const double sy = std::min(std::max((oy + 0.5) / f - 0.5, 0.0), H - 1.0);
                    const double sx = std::min(std::max((ox + 0.5) / f - 0.5, 0.0), W - 1.0);
                    const int y0 = static_cast<int>(std::floor(sy));
                    const int x0 = static_cast<int>(std::floor(sx));
                    const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
                    const double wy = sy - y0, wx = sx - x0;
                    y.at(n, c, oy, ox) = static_cast<T>(
                        (1 - wy) * ((1 - wx) * x.at(n, c, y0, x0) + wx * x.at(n, c, y0, x1)) +
                        wy * ((1 - wx) * x.at(n, c, y1, x0) + wx * x.at(n, c, y1, x1)));
                }
    return y;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int f) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y({N, C, H * f, W * f});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < H * f; ++oy)
                for (int ox = 0; ox < W * f; ++ox)
                    y.at(n, c, oy, ox) = x.at(n, c, oy / f, ox / f);
    return y;
}


/// Greedy NMS transcription.
inline std::vector<ccdnet::Detection> nms_reference(std::vector<ccdnet::Detection> dets,
                                                    double thr) {
    std::vector<ccdnet::Detection> out;
    std::stable_sort(dets.begin(), dets.end(), [](const ccdnet::Detection& a,
                                                  const ccdnet::Detection& b) {
        return a.score > b.score;
    });
    std::vector<bool> dead(dets.size(), false);
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dead[i]) continue;
        out.push_back(dets[i]);
        for (std::size_t j = i + 1; j < dets.size(); ++j)
            if (!dead[j] && ccdnet::iou(dets[i].box, dets[j].box) > thr) dead[j] = true;
    }
    return out;
}

/// Independent transcription of the greedy matching rule.
inline ccdnet::MatchReport greedy_match_oracle(std::vector<ccdnet::Detection> dets,
                                               std::vector<ccdnet::Annotation> gts, double thr) {
    ccdnet::MatchReport rep;
    std::stable_sort(dets.begin(), dets.end(), [](const ccdnet::Detection& a,
                                                  const ccdnet::Detection& b) {
        return a.score > b.score;
    });
    std::vector<bool> used(gts.size(), false);
    for (const auto& d : dets) {
        double best = -1;
        int arg = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g]) continue;
            const double v = ccdnet::iou(d.box, gts[g].box);
            if (v >= thr && v > best) {
                best = v;
                arg = static_cast<int>(g);
            }
        }
        if (arg >= 0) {
            used[static_cast<std::size_t>(arg)] = true;
            ++rep.tp;
        } else {
            ++rep.fp;
        }
    }
    rep.fn = static_cast<int>(gts.size()) - rep.tp;
    return rep;
}

/// Double-loop transcription of the local contrast loss.
inline double lcm_loss_oracle(const Tensor<double>& p_in, const Tensor<double>& p_out,
                              const Tensor<double>& mask, double eps) {
    const int C = p_in.dim(1), H = p_in.dim(2), W = p_in.dim(3);
    double mx = -1e300, mn = 1e300;
    for (std::int64_t i = 0; i < p_in.numel(); ++i) {
        mx = std::max({mx, p_in[i], p_out[i]});
        mn = std::min({mn, p_in[i], p_out[i]});
    }
    const double range = mx - mn;
    double acc = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (mask.at(0, 0, y, x) == 0.0) continue;
            double l1 = 0;
            for (int c = 0; c < C; ++c) l1 += std::abs(p_in.at(0, c, y, x) - p_out.at(0, c, y, x));
            acc += std::log((l1 + eps) / (range + eps));
        }
    return -acc / (H * W);
}

/// Straight-line region statistics (mean, max, forward-difference gradient
/// pool over the one-pixel-shrunk interior).
inline void region_stats_oracle(const Tensor<double>& region, double& mu, double& mx,
                                double& grad) {
    const int C = region.dim(1), h = region.dim(2), w = region.dim(3);
    mu = 0;
    mx = -1e300;
    for (std::int64_t i = 0; i < region.numel(); ++i) {
        mu += region[i];
        mx = std::max(mx, region[i]);
    }
    mu /= static_cast<double>(region.numel());
    grad = 0;
    if (h < 2 || w < 2) return;
    std::int64_t cnt = 0;
    for (int c = 0; c < C; ++c)
        for (int y = 0; y + 1 < h; ++y)
            for (int x = 0; x + 1 < w; ++x) {
                const double dx = region.at(0, c, y, x + 1) - region.at(0, c, y, x);
                const double dy = region.at(0, c, y + 1, x) - region.at(0, c, y, x);
                grad += std::sqrt(dx * dx + dy * dy);
                ++cnt;
            }
    grad /= static_cast<double>(cnt);
}

/// Flood-fill componentization (stack DFS, explicit visited set).
inline std::vector<ccdnet::BoxF> components_oracle(const Tensor<float>& mask) {
    const int H = mask.dim(0), W = mask.dim(1);
    std::set<int> visited;
    std::vector<ccdnet::BoxF> out;
    for (int start = 0; start < H * W; ++start) {
        const int sy = start / W, sx = start % W;
        if (mask.at(sy, sx) < 0.5f || visited.count(start)) continue;
        std::vector<int> stack{start};
        visited.insert(start);
        int rmin = sy, rmax = sy, cmin = sx, cmax = sx;
        while (!stack.empty()) {
            const int cur = stack.back();
            stack.pop_back();
            const int y = cur / W, x = cur % W;
            rmin = std::min(rmin, y);
            rmax = std::max(rmax, y);
            cmin = std::min(cmin, x);
            cmax = std::max(cmax, x);
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (!dy && !dx) continue;
                    const int ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                    const int id = ny * W + nx;
                    if (mask.at(ny, nx) >= 0.5f && !visited.count(id)) {
                        visited.insert(id);
                        stack.push_back(id);
                    }
                }
        }
        out.push_back(ccdnet::BoxF{static_cast<double>(cmin), static_cast<double>(rmin),
                                   static_cast<double>(cmax + 1), static_cast<double>(rmax + 1)});
    }
    return out;
}

/// Exhaustive 256-threshold between-class variance scan.
inline int otsu_oracle(const Tensor<float>& mask) {
    int best_t = -1;
    double best = 0;
    for (int t = 0; t < 255; ++t) {
        double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
        for (std::int64_t i = 0; i < mask.numel(); ++i) {
            const double v = std::min(1.0f, std::max(0.0f, mask[i]));
            const int bin = std::min(255, static_cast<int>(v * 256.0));
            if (bin <= t) {
                n0 += 1;
                s0 += bin;
            } else {
                n1 += 1;
                s1 += bin;
            }
        }
        if (n0 == 0 || n1 == 0) continue;
        const double mu0 = s0 / n0, mu1 = s1 / n1;
        const double var = n0 * n1 * (mu0 - mu1) * (mu0 - mu1);
        if (var > best) {
            best = var;
            best_t = t;
        }
    }
    return best_t;
}

/// Per-anchor terms and total of the supervised contrastive loss.
inline std::pair<std::vector<double>, double> gcm_oracle(
    const std::vector<std::vector<double>>& pos, const std::vector<std::vector<double>>& neg,
    double tau) {
    const int np = static_cast<int>(pos.size()), nn = static_cast<int>(neg.size());
    std::vector<double> terms;
    if (np < 1 || nn < 1) return {terms, 0.0};
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };
    double total = 0;
    for (int p = 0; p < np; ++p)
        for (int a = 0; a < np; ++a) {
            if (np > 1 && a == p) continue;
            double denom = 0;
            for (int q = 0; q < np; ++q) denom += std::exp(dot(pos[a], pos[q]) / tau);
            for (int m = 0; m < nn; ++m) denom += std::exp(dot(pos[a], neg[m]) / tau);
            const double term = -std::log(std::exp(dot(pos[a], pos[p]) / tau) / denom);
            terms.push_back(term);
            total += term;
        }
    return {terms, total / np};
}

}  // namespace oracle
