#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "ccdnet/backbone/wmp.hpp"
#include "ccdnet/data/annotation.hpp"
#include "ccdnet/nn/modules.hpp"

namespace ccdnet {

/// Per-level assignment size ranges in input pixels: a ground truth goes to
/// the level whose range contains its longer side.
inline const std::array<std::pair<double, double>, 4> kLevelSizeRanges{
    std::pair<double, double>{0.0, 16.0},
    {16.0, 32.0},
    {32.0, 64.0},
    {64.0, std::numeric_limits<double>::infinity()}};

template <typename T>
struct HeadOutputs {
    std::array<Var<T>, 4> cls;  // (N,1,H,W) logits
    std::array<Var<T>, 4> reg;  // (N,4,H,W) exp(raw): distances in stride units, order l,t,r,b
};

/// Anchor-free classification/regression heads. Each level passes a 1x1
/// channel adapter, then both heads run two shared 3x3 convolutions and a
/// final projection (1 channel for cls, 4 for reg). Regression outputs go
/// through exp so distances stay positive.
template <typename T>
class DetectHead {
public:
    DetectHead() = default;

    DetectHead(const std::array<int, 4>& level_channels, int head_ch, Rng& rng)
        : head_ch_(head_ch) {
        for (int i = 0; i < 4; ++i)
            adapters_[i] = Conv2d<T>("head.adapt" + std::to_string(i + 1), level_channels[i],
                                     head_ch, 1, 1, 0, true, rng);
        cls_t1_ = Conv2d<T>("head.cls.t1", head_ch, head_ch, 3, 1, 1, true, rng);
        cls_t2_ = Conv2d<T>("head.cls.t2", head_ch, head_ch, 3, 1, 1, true, rng);
        reg_t1_ = Conv2d<T>("head.reg.t1", head_ch, head_ch, 3, 1, 1, true, rng);
        reg_t2_ = Conv2d<T>("head.reg.t2", head_ch, head_ch, 3, 1, 1, true, rng);
        cls_out_ = Conv2d<T>("head.cls.out", head_ch, 1, 1, 1, 0, true, rng);
        reg_out_ = Conv2d<T>("head.reg.out", head_ch, 4, 1, 1, 0, true, rng);
        // start from a quiet head: logits at a low foreground prior and
        // distances at exp(0) = 1 stride unit everywhere
        cls_out_.w.value.fill(T(0));
        cls_out_.b.value.fill(T(-4));
        reg_out_.w.value.fill(T(0));
    }

    HeadOutputs<T> forward(Tape<T>& t, const Pyramid<T>& p) {
        HeadOutputs<T> out;
        for (int i = 0; i < 4; ++i) {
            auto x = relu(adapters_[i](t, p.f[i]));
            auto c = relu(cls_t1_(t, x));
            c = relu(cls_t2_(t, c));
            out.cls[i] = cls_out_(t, c);
            auto r = relu(reg_t1_(t, x));
            r = relu(reg_t2_(t, r));
            // cap the log-distance so exp stays finite at wild locations
            out.reg[i] = vexp(clamp_max(reg_out_(t, r), T(12)));
        }
        return out;
    }

    void collect(ParamList<T>& out) {
        for (auto& a : adapters_) a.collect(out);
        cls_t1_.collect(out);
        cls_t2_.collect(out);
        reg_t1_.collect(out);
        reg_t2_.collect(out);
        cls_out_.collect(out);
        reg_out_.collect(out);
    }

    Conv2d<T>& cls_out() { return cls_out_; }
    Conv2d<T>& reg_out() { return reg_out_; }

    std::int64_t macs(std::array<std::pair<int, int>, 4> sizes) const {
        std::int64_t m = 0;
        for (int i = 0; i < 4; ++i) {
            m += adapters_[i].macs(sizes[i].first, sizes[i].second);
            for (const Conv2d<T>* c : {&cls_t1_, &cls_t2_, &reg_t1_, &reg_t2_, &cls_out_, &reg_out_})
                m += c->macs(sizes[i].first, sizes[i].second);
        }
        return m;
    }

private:
    int head_ch_ = 32;
    std::array<Conv2d<T>, 4> adapters_;
    Conv2d<T> cls_t1_, cls_t2_, reg_t1_, reg_t2_;
    Conv2d<T> cls_out_, reg_out_;
};

// ---------------------------------------------------------------------------
// Target assignment
// ---------------------------------------------------------------------------

template <typename T>
struct LevelTargets {
    Tensor<T> cls;   // (N,1,H,W) 0/1
    Tensor<T> reg;   // (N,4,H,W) distances / stride
    Tensor<T> mask;  // (N,4,H,W) 1 on every reg channel of a positive location
    int stride = 1;
};

template <typename T>
struct AssignedTargets {
    std::array<LevelTargets<T>, 4> levels;
    int num_pos = 0;
};

template <typename T>
inline void write_positive(LevelTargets<T>& lv, int n, int i, int j, const BoxF& b) {
    const int s = lv.stride;
    const double cx = (j + 0.5) * s, cy = (i + 0.5) * s;
    lv.cls.at(n, 0, i, j) = T(1);
    lv.reg.at(n, 0, i, j) = static_cast<T>((cx - b.x_min) / s);
    lv.reg.at(n, 1, i, j) = static_cast<T>((cy - b.y_min) / s);
    lv.reg.at(n, 2, i, j) = static_cast<T>((b.x_max - cx) / s);
    lv.reg.at(n, 3, i, j) = static_cast<T>((b.y_max - cy) / s);
    for (int k = 0; k < 4; ++k) lv.mask.at(n, k, i, j) = T(1);
}

/// Invert the reg target of one location back to a pixel box.
template <typename T>
inline BoxF decode_location(const LevelTargets<T>& lv, int n, int i, int j) {
    const int s = lv.stride;
    const double cx = (j + 0.5) * s, cy = (i + 0.5) * s;
    return BoxF{cx - lv.reg.at(n, 0, i, j) * s, cy - lv.reg.at(n, 1, i, j) * s,
                cx + lv.reg.at(n, 2, i, j) * s, cy + lv.reg.at(n, 3, i, j) * s};
}

/// Center-in-box assignment with per-level size ranges. A location is positive
/// iff its center falls inside a ground truth whose longer side matches the
/// level's range; ties pick the smaller box. Any ground truth left without a
/// location is given the nearest cell on the smallest-stride level.
template <typename T>
inline AssignedTargets<T> assign_targets(const std::vector<std::vector<Annotation>>& gts_per_image,
                                         const std::array<int, 4>& strides, int img_h, int img_w) {
    const int batch = static_cast<int>(gts_per_image.size());
    AssignedTargets<T> out;
    for (int l = 0; l < 4; ++l) {
        const int s = strides[l];
        const int H = img_h / s, W = img_w / s;
        out.levels[l].cls = Tensor<T>({batch, 1, H, W});
        out.levels[l].reg = Tensor<T>({batch, 4, H, W});
        out.levels[l].mask = Tensor<T>({batch, 4, H, W});
        out.levels[l].stride = s;
    }

    for (int n = 0; n < batch; ++n) {
        for (const auto& gt : gts_per_image[n])
            if (gt.box.area() <= 0.0)
                throw InvalidParamError("assign_targets: degenerate ground-truth box");

        std::vector<int> hits(gts_per_image[n].size(), 0);
        for (int l = 0; l < 4; ++l) {
            auto& lv = out.levels[l];
            const int s = lv.stride, H = lv.cls.dim(2), W = lv.cls.dim(3);
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const double cx = (j + 0.5) * s, cy = (i + 0.5) * s;
                    int best = -1;
                    double best_area = std::numeric_limits<double>::infinity();
                    for (std::size_t g = 0; g < gts_per_image[n].size(); ++g) {
                        const BoxF& b = gts_per_image[n][g].box;
                        const double side = std::max(b.width(), b.height());
                        if (side <= kLevelSizeRanges[l].first || side > kLevelSizeRanges[l].second)
                            continue;
                        if (!b.contains(cx, cy)) continue;
                        if (b.area() < best_area) {
                            best_area = b.area();
                            best = static_cast<int>(g);
                        }
                    }
                    if (best < 0) continue;
                    ++hits[static_cast<std::size_t>(best)];
                    write_positive(lv, n, i, j, gts_per_image[n][static_cast<std::size_t>(best)].box);
                    ++out.num_pos;
                }
        }
        // smallest-stride fallback for boxes no cell center claimed
        for (std::size_t g = 0; g < gts_per_image[n].size(); ++g) {
            if (hits[g] > 0) continue;
            auto& lv = out.levels[0];
            const int s = lv.stride, H = lv.cls.dim(2), W = lv.cls.dim(3);
            const BoxF& b = gts_per_image[n][g].box;
            int j = static_cast<int>(b.cx() / s);  // nearest (j+0.5)*s center
            int i = static_cast<int>(b.cy() / s);
            i = std::clamp(i, 0, H - 1);
            j = std::clamp(j, 0, W - 1);
            if (lv.cls.at(n, 0, i, j) == T(0)) ++out.num_pos;
            write_positive(lv, n, i, j, b);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Detection losses
// ---------------------------------------------------------------------------

/// L_cls: binary cross-entropy over every location, summed across levels and
/// divided by the positive count (min 1). L_loc: mean squared error of the
/// stride-normalized distances over positive locations only.
template <typename T>
inline std::pair<Var<T>, Var<T>> detection_loss(Tape<T>& t, const HeadOutputs<T>& out,
                                                const AssignedTargets<T>& tg) {
    const T norm = T(1) / static_cast<T>(std::max(1, tg.num_pos));
    Var<T> cls_sum, loc_sum;
    for (int l = 0; l < 4; ++l) {
        auto c = bce_logits_sum(out.cls[l], tg.levels[l].cls);
        cls_sum = cls_sum.defined() ? add(cls_sum, c) : c;
        auto diff = sub(out.reg[l], t.constant(tg.levels[l].reg));
        auto sq = mul(mul(diff, diff), t.constant(tg.levels[l].mask));
        auto s = sum_all(sq);
        loc_sum = loc_sum.defined() ? add(loc_sum, s) : s;
    }
    return {scale(cls_sum, norm), scale(loc_sum, norm / T(4))};
}

// ---------------------------------------------------------------------------
// Decoding and NMS
// ---------------------------------------------------------------------------

/// Decoded value form of head outputs (no tape attached).
template <typename T>
struct HeadMaps {
    std::array<Tensor<T>, 4> cls, reg;
    std::array<int, 4> strides;
};

template <typename T>
inline HeadMaps<T> detach(const HeadOutputs<T>& out, const std::array<int, 4>& strides) {
    HeadMaps<T> m;
    for (int l = 0; l < 4; ++l) {
        m.cls[l] = out.cls[l].val();
        m.reg[l] = out.reg[l].val();
    }
    m.strides = strides;
    return m;
}

/// Sigmoid-score threshold, center +/- distances, clip to the image.
template <typename T>
inline std::vector<Detection> decode_detections(const HeadMaps<T>& m, int image_index,
                                                double score_thresh, int img_w, int img_h) {
    std::vector<Detection> dets;
    for (int l = 0; l < 4; ++l) {
        const auto& cls = m.cls[l];
        const auto& reg = m.reg[l];
        const int H = cls.dim(2), W = cls.dim(3), s = m.strides[l];
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                const double score =
                    1.0 / (1.0 + std::exp(-static_cast<double>(cls.at(image_index, 0, i, j))));
                if (score <= score_thresh) continue;
                const double cx = (j + 0.5) * s, cy = (i + 0.5) * s;
                BoxF b{cx - reg.at(image_index, 0, i, j) * s,
                       cy - reg.at(image_index, 1, i, j) * s,
                       cx + reg.at(image_index, 2, i, j) * s,
                       cy + reg.at(image_index, 3, i, j) * s};
                b.x_min = std::clamp(b.x_min, 0.0, static_cast<double>(img_w));
                b.y_min = std::clamp(b.y_min, 0.0, static_cast<double>(img_h));
                b.x_max = std::clamp(b.x_max, 0.0, static_cast<double>(img_w));
                b.y_max = std::clamp(b.y_max, 0.0, static_cast<double>(img_h));
                if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min)) continue;
                dets.push_back(Detection{b, score, l + 1});
            }
    }
    return dets;
}

/// Greedy descending-score suppression: no surviving pair overlaps above the
/// threshold.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<Detection> kept;
    for (const auto& d : dets) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (iou(d.box, k.box) > iou_thresh) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

}  // namespace ccdnet
