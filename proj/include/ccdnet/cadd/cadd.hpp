#pragma once

#include <atomic>
#include <cmath>
#include <optional>
#include <vector>

#include "ccdnet/backbone/wmp.hpp"
#include "ccdnet/core/image_ops.hpp"
#include "ccdnet/data/annotation.hpp"
#include "ccdnet/head/detect.hpp"
#include "ccdnet/nn/modules.hpp"

namespace ccdnet {

constexpr double kLcmEps = 1e-6;
constexpr double kNeighborIouCut = 0.3;  // NMS threshold against other targets

/// Counters proving the inference path never touches these structures.
struct CaddCounters {
    static std::atomic<std::int64_t>& nine_region_patches() {
        static std::atomic<std::int64_t> c{0};
        return c;
    }
    static std::atomic<std::int64_t>& contrastive_samples() {
        static std::atomic<std::int64_t> c{0};
        return c;
    }
    static void reset() {
        nine_region_patches() = 0;
        contrastive_samples() = 0;
    }
};

struct LossWeights {
    double alpha = 0.1;  // LCM weight
    double beta = 0.05;  // GCM weight
    double tau = 0.1;    // temperature
    double t1 = 0.8;     // positive confidence threshold
    double t2 = 0.2;     // negative confidence threshold
    int k = 3;           // hard negatives kept per image

    void validate() const {
        if (!(0.0 <= t2 && t2 < t1 && t1 <= 1.0))
            throw InvalidParamError("LossWeights: need 0 <= t2 < t1 <= 1");
        if (!(tau > 0.0)) throw InvalidParamError("LossWeights: tau must be positive");
        if (k < 1) throw InvalidParamError("LossWeights: k must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Nine-region geometry
// ---------------------------------------------------------------------------

/// Placement of the 3x3 region grid around one target on one pyramid level,
/// in level-cell coordinates. Regions are numbered row-major 0..8 with the
/// target at index 4.
struct NineRegionLayout {
    int stride = 1;
    int map_h = 0, map_w = 0;
    int r0 = 0, c0 = 0, h = 0, w = 0;  // target region cell rect
    std::array<bool, 9> valid{};
    bool ok = false;

    /// Cell rect of region k as a half-open box in level coordinates.
    BoxF region_rect(int k) const {
        const int dr = k / 3 - 1, dc = k % 3 - 1;
        return BoxF{static_cast<double>(c0 + dc * w), static_cast<double>(r0 + dr * h),
                    static_cast<double>(c0 + (dc + 1) * w), static_cast<double>(r0 + (dr + 1) * h)};
    }
};

/// Map a ground-truth box to level cells (floor min corner, ceil max corner,
/// clamp to at least one cell) and lay out the eight equal-size neighbors.
/// Neighbors falling off the map, or overlapping another target's mapped
/// region with IoU above 0.3, are marked invalid.
inline NineRegionLayout plan_nine_regions(const Annotation& gt, int stride, int map_h, int map_w,
                                          const std::vector<Annotation>& all_gts) {
    auto map_rect = [&](const BoxF& b, int& rr0, int& cc0, int& hh, int& ww) {
        int c0 = static_cast<int>(std::floor(b.x_min / stride));
        int c1 = static_cast<int>(std::ceil(b.x_max / stride));
        int r0 = static_cast<int>(std::floor(b.y_min / stride));
        int r1 = static_cast<int>(std::ceil(b.y_max / stride));
        if (c1 <= c0) c1 = c0 + 1;
        if (r1 <= r0) r1 = r0 + 1;
        c0 = std::clamp(c0, 0, map_w - 1);
        r0 = std::clamp(r0, 0, map_h - 1);
        c1 = std::clamp(c1, c0 + 1, map_w);
        r1 = std::clamp(r1, r0 + 1, map_h);
        rr0 = r0;
        cc0 = c0;
        hh = r1 - r0;
        ww = c1 - c0;
        return hh > 0 && ww > 0;
    };

    NineRegionLayout lay;
    lay.stride = stride;
    lay.map_h = map_h;
    lay.map_w = map_w;
    if (map_h < 1 || map_w < 1) return lay;
    if (!map_rect(gt.box, lay.r0, lay.c0, lay.h, lay.w)) return lay;
    lay.ok = true;

    std::vector<BoxF> other_rects;
    for (const auto& o : all_gts) {
        if (&o == &gt) continue;
        if (o.box.x_min == gt.box.x_min && o.box.y_min == gt.box.y_min &&
            o.box.x_max == gt.box.x_max && o.box.y_max == gt.box.y_max)
            continue;
        int r, c, h, w;
        if (map_rect(o.box, r, c, h, w))
            other_rects.push_back(BoxF{static_cast<double>(c), static_cast<double>(r),
                                       static_cast<double>(c + w), static_cast<double>(r + h)});
    }

    for (int k = 0; k < 9; ++k) {
        if (k == 4) {
            lay.valid[k] = true;
            continue;
        }
        const BoxF rect = lay.region_rect(k);
        bool v = rect.x_min >= 0 && rect.y_min >= 0 && rect.x_max <= map_w && rect.y_max <= map_h;
        for (const auto& o : other_rects)
            if (v && iou(rect, o) > kNeighborIouCut) v = false;
        lay.valid[k] = v;
    }
    return lay;
}

// ---------------------------------------------------------------------------
// Patch extraction and statistics
// ---------------------------------------------------------------------------

template <typename T>
struct NineRegionPatch {
    NineRegionLayout layout;
    std::array<Var<T>, 9> regions;  // (1,C,h,w); invalid regions are zeros
    Var<T> grid;                    // (1,C,3h,3w)
};

/// Cut the nine regions out of a (1,C,H,W) level map. Invalid regions become
/// zero blocks so the assembled grid always has the full 3h x 3w extent.
template <typename T>
inline NineRegionPatch<T> extract_nine_regions(Tape<T>& t, Var<T> fmap,
                                               const NineRegionLayout& lay) {
    if (!lay.ok) throw InvalidParamError("extract_nine_regions: layout not usable");
    ++CaddCounters::nine_region_patches();
    const int C = fmap.val().dim(1);
    NineRegionPatch<T> p;
    p.layout = lay;
    for (int k = 0; k < 9; ++k) {
        const int dr = k / 3 - 1, dc = k % 3 - 1;
        const int y0 = lay.r0 + dr * lay.h, x0 = lay.c0 + dc * lay.w;
        if (lay.valid[k])
            p.regions[k] = crop(fmap, y0, x0, lay.h, lay.w);
        else
            p.regions[k] = t.constant(Tensor<T>({1, C, lay.h, lay.w}));
    }
    p.grid = assemble_grid3(p.regions);
    return p;
}

/// (1,1,3h,3w) mask with ones over the valid regions.
template <typename T>
inline Tensor<T> valid_pixel_mask(const NineRegionLayout& lay) {
    Tensor<T> m({1, 1, 3 * lay.h, 3 * lay.w});
    for (int k = 0; k < 9; ++k) {
        if (!lay.valid[k]) continue;
        const int gy = (k / 3) * lay.h, gx = (k % 3) * lay.w;
        for (int y = 0; y < lay.h; ++y)
            for (int x = 0; x < lay.w; ++x) m.at(0, 0, gy + y, gx + x) = T(1);
    }
    return m;
}

template <typename T>
struct RegionStats {
    Var<T> mean9;   // (1,9) average pool
    Var<T> max9;    // (1,9) max pool
    Var<T> grad9;   // (1,9) mean gradient pool
};

/// Average, max and mean-gradient pooling per region; invalid regions carry 0.
/// Gradient pooling uses forward differences over the one-pixel-shrunk
/// interior of each region.
template <typename T>
inline RegionStats<T> region_stats(Tape<T>& t, const NineRegionPatch<T>& p) {
    std::vector<Var<T>> mu, mx, gr;
    for (int k = 0; k < 9; ++k) {
        if (!p.layout.valid[k]) {
            mu.push_back(t.scalar_const(T(0)));
            mx.push_back(t.scalar_const(T(0)));
            gr.push_back(t.scalar_const(T(0)));
            continue;
        }
        auto r = p.regions[k];
        mu.push_back(mean_all(r));
        mx.push_back(max_all(r));
        const int h = r.val().dim(2), w = r.val().dim(3);
        if (h < 2 || w < 2) {
            gr.push_back(t.scalar_const(T(0)));
        } else {
            auto dx = sub(crop(r, 0, 1, h - 1, w - 1), crop(r, 0, 0, h - 1, w - 1));
            auto dy = sub(crop(r, 1, 0, h - 1, w - 1), crop(r, 0, 0, h - 1, w - 1));
            auto mag = vsqrt(add(mul(dx, dx), mul(dy, dy)));
            gr.push_back(mean_all(mag));
        }
    }
    return RegionStats<T>{stack_scalars(mu), stack_scalars(mx), stack_scalars(gr)};
}

/// x'_k = |x_k - x_4| for neighbors, x'_4 = x_4.
template <typename T>
inline Var<T> difference_vector(Tape<T>& t, Var<T> nine) {
    std::vector<Var<T>> out;
    auto center = pick(nine, 4);
    for (int k = 0; k < 9; ++k) {
        if (k == 4)
            out.push_back(center);
        else
            out.push_back(vabs(sub(pick(nine, k), center)));
    }
    return stack_scalars(out);
}

// ---------------------------------------------------------------------------
// LCM
// ---------------------------------------------------------------------------

/// Shared three-layer MLP turning a difference 9-vector into region logits.
template <typename T>
struct LcmMlp {
    Dense<T> l1, l2, l3;

    LcmMlp() = default;
    LcmMlp(const std::string& name, Rng& rng)
        : l1(name + ".l1", 9, 32, rng), l2(name + ".l2", 32, 32, rng), l3(name + ".l3", 32, 9, rng) {}

    Var<T> operator()(Tape<T>& t, Var<T> v) { return l3(t, relu(l2(t, relu(l1(t, v))))); }

    void collect(ParamList<T>& out) {
        l1.collect(out);
        l2.collect(out);
        l3.collect(out);
    }
};

/// Region weights: softmax over MLP(mu') + MLP(m') + MLP(grad').
template <typename T>
inline Var<T> lcm_region_weights(Tape<T>& t, LcmMlp<T>& mlp, const RegionStats<T>& stats) {
    auto logits = add(add(mlp(t, difference_vector(t, stats.mean9)),
                          mlp(t, difference_vector(t, stats.max9))),
                      mlp(t, difference_vector(t, stats.grad9)));
    return softmax_rows(logits);
}

/// P_out: every region of P_in scaled by its weight, reassembled on the grid.
template <typename T>
inline Var<T> lcm_reweight(Tape<T>& t, const NineRegionPatch<T>& p, Var<T> weights) {
    std::array<Var<T>, 9> scaled;
    for (int k = 0; k < 9; ++k) scaled[k] = scale_by(p.regions[k], pick(weights, k));
    return assemble_grid3(scaled);
}

/// Local contrast loss between the raw and reweighted grids:
///   L = -(1/HW) sum_ij log((|P_in_ij - P_out_ij|_1 + eps) / (range + eps))
/// with range the max-minus-min pixel value over both maps. Pixels of invalid
/// regions contribute zero (the mask).
template <typename T>
inline Var<T> lcm_loss(Tape<T>& t, Var<T> p_in, Var<T> p_out, const Tensor<T>& mask) {
    if (!p_in.val().same_shape(p_out.val())) throw ShapeError("lcm_loss: shape mismatch");
    const int H = p_in.val().dim(2), W = p_in.val().dim(3);
    auto l1map = sum_channels(vabs(sub(p_in, p_out)));  // (1,1,H,W)
    auto log_l1 = vlog(add_const(l1map, static_cast<T>(kLcmEps)));
    auto range = sub(vmax(max_all(p_in), max_all(p_out)), vmin(min_all(p_in), min_all(p_out)));
    auto log_range = vlog(add_const(range, static_cast<T>(kLcmEps)));
    const T n_valid = mask.sum();
    auto sum_log = sum_all(mul(log_l1, t.constant(mask)));
    // -(1/HW) * (sum_valid log(l1+eps) - n_valid * log(range+eps))
    auto inner = sub(sum_log, scale(log_range, n_valid));
    return scale(inner, -T(1) / static_cast<T>(H * W));
}

/// Per-target LCM value on one level map, or nothing when the target cannot
/// be laid out.
template <typename T>
inline std::optional<Var<T>> lcm_target_loss(Tape<T>& t, Var<T> level_map, const Annotation& gt,
                                             int stride, const std::vector<Annotation>& all_gts,
                                             LcmMlp<T>& mlp) {
    const auto lay = plan_nine_regions(gt, stride, level_map.val().dim(2), level_map.val().dim(3),
                                       all_gts);
    if (!lay.ok) return std::nullopt;
    auto patch = extract_nine_regions(t, level_map, lay);
    auto stats = region_stats(t, patch);
    auto w = lcm_region_weights(t, mlp, stats);
    auto p_out = lcm_reweight(t, patch, w);
    return lcm_loss(t, patch.grid, p_out, valid_pixel_mask<T>(lay));
}

/// Mean over targets per image, then over the four levels, then the batch.
/// Images without usable targets contribute zero.
template <typename T>
inline Var<T> lcm_loss_extended(Tape<T>& t, const Pyramid<T>& backbone_features,
                                const std::vector<std::vector<Annotation>>& gts_per_image,
                                const std::array<int, 4>& strides, LcmMlp<T>& mlp) {
    const int B = backbone_features.f[0].val().dim(0);
    Var<T> total = t.scalar_const(T(0));
    for (int n = 0; n < B; ++n) {
        Var<T> image_sum = t.scalar_const(T(0));
        for (int l = 0; l < 4; ++l) {
            auto level = slice_image(backbone_features.f[l], n);
            Var<T> level_sum = t.scalar_const(T(0));
            int m = 0;
            for (const auto& gt : gts_per_image[static_cast<std::size_t>(n)]) {
                auto lt = lcm_target_loss(t, level, gt, strides[l],
                                          gts_per_image[static_cast<std::size_t>(n)], mlp);
                if (!lt) continue;
                level_sum = add(level_sum, *lt);
                ++m;
            }
            if (m > 0) image_sum = add(image_sum, scale(level_sum, T(1) / static_cast<T>(m)));
        }
        total = add(total, scale(image_sum, T(0.25)));
    }
    return scale(total, T(1) / static_cast<T>(B));
}

// ---------------------------------------------------------------------------
// GCM
// ---------------------------------------------------------------------------

enum class SampleRole { positive, negative };

struct ContrastiveSample {
    Detection det;
    SampleRole role;
};

/// Raw confidence partition: conf > t1 -> positive; t2 < conf <= t1 ->
/// negative; otherwise unused.
enum class Eq13Label { positive, negative, none };

inline Eq13Label confidence_label(double conf, double t1, double t2) {
    if (conf > t1) return Eq13Label::positive;
    if (conf > t2 && conf <= t1) return Eq13Label::negative;
    return Eq13Label::none;
}

/// Select this iteration's contrastive samples: the single highest-scoring
/// positive and the top-k negatives. When no detection clears t1 (early
/// training), ground truths stand in as positives and the top-k detections
/// overall become the negatives.
inline std::vector<ContrastiveSample> assign_contrastive_labels(
    const std::vector<Detection>& dets, const std::vector<Annotation>& gts,
    const LossWeights& w) {
    w.validate();
    std::vector<ContrastiveSample> out;
    std::vector<const Detection*> pos, neg;
    for (const auto& d : dets) {
        switch (confidence_label(d.score, w.t1, w.t2)) {
            case Eq13Label::positive: pos.push_back(&d); break;
            case Eq13Label::negative: neg.push_back(&d); break;
            case Eq13Label::none: break;
        }
    }
    auto by_score = [](const Detection* a, const Detection* b) { return a->score > b->score; };
    if (!pos.empty()) {
        std::stable_sort(pos.begin(), pos.end(), by_score);
        out.push_back({*pos.front(), SampleRole::positive});
        std::stable_sort(neg.begin(), neg.end(), by_score);
        for (std::size_t i = 0; i < neg.size() && i < static_cast<std::size_t>(w.k); ++i)
            out.push_back({*neg[i], SampleRole::negative});
    } else {
        for (const auto& g : gts) out.push_back({Detection{g.box, 1.0, 1}, SampleRole::positive});
        std::vector<const Detection*> all;
        for (const auto& d : dets) all.push_back(&d);
        std::stable_sort(all.begin(), all.end(), by_score);
        for (std::size_t i = 0; i < all.size() && i < static_cast<std::size_t>(w.k); ++i)
            out.push_back({*all[i], SampleRole::negative});
    }
    CaddCounters::contrastive_samples() += static_cast<std::int64_t>(out.size());
    return out;
}

/// Per-level linear calibration of ROI features into unit-length vectors.
template <typename T>
struct GcmCalibration {
    std::array<Dense<T>, 4> proj;
    int dim = 64;

    GcmCalibration() = default;
    GcmCalibration(const std::array<int, 4>& level_channels, int out_dim, Rng& rng) : dim(out_dim) {
        for (int l = 0; l < 4; ++l)
            proj[l] = Dense<T>("gcm.proj" + std::to_string(l + 1), level_channels[l] * 9, out_dim,
                               rng);
    }

    /// v = normalize(W * flatten(roi_3x3(F_l, box / stride))); empty when the
    /// box degenerates on this level.
    std::optional<Var<T>> operator()(Tape<T>& t, Var<T> level_map, const BoxF& box, int level,
                                     int stride) {
        const double x0 = box.x_min / stride, x1 = box.x_max / stride;
        const double y0 = box.y_min / stride, y1 = box.y_max / stride;
        if (!(x1 > x0) || !(y1 > y0)) return std::nullopt;
        auto r = roi_grid3x3(level_map, x0, y0, x1, y1);
        const int C = r.val().dim(1);
        auto flat = reshape(r, {1, C * 9});
        return l2_normalize(proj[level](t, flat));
    }

    void collect(ParamList<T>& out) {
        for (auto& d : proj) d.collect(out);
    }
};

/// Supervised-contrastive loss over one level's calibrated samples. Anchors
/// run over the positives; the denominator sums similarity to every positive
/// (self included) and every negative. With a single positive the anchor
/// pairs with itself, otherwise self-pairs are excluded from the numerator.
template <typename T>
inline Var<T> gcm_level_loss(Tape<T>& t, const std::vector<Var<T>>& positives,
                             const std::vector<Var<T>>& negatives, double tau) {
    const int np = static_cast<int>(positives.size());
    const int nn = static_cast<int>(negatives.size());
    if (np < 1 || nn < 1) return t.scalar_const(T(0));

    auto phi = [&](Var<T> u, Var<T> v) { return vexp(scale(dotv(u, v), static_cast<T>(1.0 / tau))); };

    std::vector<Var<T>> denom(static_cast<std::size_t>(np));
    for (int a = 0; a < np; ++a) {
        Var<T> d;
        for (int q = 0; q < np; ++q) {
            auto term = phi(positives[a], positives[q]);
            d = d.defined() ? add(d, term) : term;
        }
        for (int m = 0; m < nn; ++m) d = add(d, phi(positives[a], negatives[m]));
        denom[static_cast<std::size_t>(a)] = d;
    }

    Var<T> total = t.scalar_const(T(0));
    for (int p = 0; p < np; ++p)
        for (int a = 0; a < np; ++a) {
            if (np > 1 && a == p) continue;
            // log(phi(a,p) / denom_a)
            auto term = sub(scale(dotv(positives[a], positives[p]), static_cast<T>(1.0 / tau)),
                            vlog(denom[static_cast<std::size_t>(a)]));
            total = add(total, term);
        }
    return scale(total, -T(1) / static_cast<T>(np));
}

/// Mean over levels of the per-image mean, per-level features from the
/// backbone; similarities never cross levels.
template <typename T>
inline Var<T> gcm_loss_extended(Tape<T>& t, const Pyramid<T>& backbone_features,
                                const std::vector<std::vector<ContrastiveSample>>& samples_per_image,
                                const std::array<int, 4>& strides, GcmCalibration<T>& calib,
                                double tau) {
    const int B = backbone_features.f[0].val().dim(0);
    Var<T> total = t.scalar_const(T(0));
    for (int l = 0; l < 4; ++l) {
        Var<T> level_sum = t.scalar_const(T(0));
        for (int n = 0; n < B; ++n) {
            auto level = slice_image(backbone_features.f[l], n);
            std::vector<Var<T>> pos, neg;
            for (const auto& s : samples_per_image[static_cast<std::size_t>(n)]) {
                auto v = calib(t, level, s.det.box, l, strides[l]);
                if (!v) continue;
                (s.role == SampleRole::positive ? pos : neg).push_back(*v);
            }
            level_sum = add(level_sum, gcm_level_loss(t, pos, neg, tau));
        }
        total = add(total, scale(level_sum, T(1) / static_cast<T>(B)));
    }
    return scale(total, T(0.25));
}

// ---------------------------------------------------------------------------
// Total loss
// ---------------------------------------------------------------------------

/// L = L_cls + L_loc + alpha * L_LCM + beta * L_GCM.
template <typename T>
inline Var<T> total_loss(Var<T> l_cls, Var<T> l_loc, Var<T> l_lcm, Var<T> l_gcm,
                         const LossWeights& w) {
    const char* names[4] = {"cls", "loc", "lcm", "gcm"};
    const Var<T>* parts[4] = {&l_cls, &l_loc, &l_lcm, &l_gcm};
    for (int i = 0; i < 4; ++i)
        if (!std::isfinite(static_cast<double>(parts[i]->val()[0])))
            throw InvalidParamError(std::string("total_loss: non-finite component ") + names[i]);
    auto det = add(l_cls, l_loc);
    return add(det, add(scale(l_lcm, static_cast<T>(w.alpha)), scale(l_gcm, static_cast<T>(w.beta))));
}

}  // namespace ccdnet
