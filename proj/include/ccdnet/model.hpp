#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "ccdnet/backbone/wmp.hpp"
#include "ccdnet/cadd/cadd.hpp"
#include "ccdnet/head/detect.hpp"
#include "ccdnet/neck/arfn.hpp"

namespace ccdnet {

struct ModelConfig {
    BackboneConfig backbone;
    int head_channels = 32;
    bool use_deform = true;
    int gcm_dim = 64;
};

/// Full detector: WMP backbone, ARFN neck, anchor-free heads, plus the
/// training-only contrastive modules operating on backbone features.
template <typename T>
class Model {
public:
    Model() = default;

    Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        Rng rng(seed ^ 0xC0FFEEull);
        backbone_ = WmpBackbone<T>(cfg.backbone, rng);
        NeckGeometry geo{cfg.backbone.stage_channels};
        neck_ = ArfnNeck<T>(geo, rng, cfg.use_deform);
        head_ = DetectHead<T>(cfg.backbone.stage_channels, cfg.head_channels, rng);
        lcm_mlp_ = LcmMlp<T>("lcm.mlp", rng);
        gcm_calib_ = GcmCalibration<T>(cfg.backbone.stage_channels, cfg.gcm_dim, rng);
    }

    const ModelConfig& config() const { return cfg_; }
    WmpBackbone<T>& backbone() { return backbone_; }
    ArfnNeck<T>& neck() { return neck_; }
    DetectHead<T>& head() { return head_; }
    LcmMlp<T>& lcm_mlp() { return lcm_mlp_; }
    GcmCalibration<T>& gcm_calib() { return gcm_calib_; }

    std::array<int, 4> strides() const {
        std::array<int, 4> s;
        for (int i = 0; i < 4; ++i) s[i] = cfg_.backbone.stride_of_level(i + 1);
        return s;
    }

    ParamList<T> params(bool include_cadd = true) {
        ParamList<T> ps;
        backbone_.collect(ps);
        neck_.collect(ps);
        head_.collect(ps);
        if (include_cadd) {
            lcm_mlp_.collect(ps);
            gcm_calib_.collect(ps);
        }
        return ps;
    }

    std::vector<std::pair<std::string, Tensor<T>*>> buffers() { return backbone_.buffers(); }

    struct ForwardOutput {
        Pyramid<T> backbone_features;
        Pyramid<T> neck_features;
        HeadOutputs<T> head_outputs;
    };

    /// Shared forward; batch_stats only matters for the unfused backbone.
    ForwardOutput forward(Tape<T>& t, Var<T> images, bool fused_mode, bool batch_stats) {
        ForwardOutput out;
        out.backbone_features = backbone_.forward(t, images, fused_mode, batch_stats);
        out.neck_features = neck_.forward(t, out.backbone_features);
        out.head_outputs = head_.forward(t, out.neck_features);
        return out;
    }

    struct LossBreakdown {
        Var<T> cls, loc, lcm, gcm, total;
        int num_pos = 0;
    };

    /// Training losses for one batch. LCM/GCM are always evaluated for the
    /// log, but only terms with nonzero weight join the total, so a zero
    /// weight really removes them from the gradient.
    LossBreakdown train_losses(Tape<T>& t, const ForwardOutput& fwd,
                               const std::vector<std::vector<Annotation>>& gts,
                               const LossWeights& w, double decode_thresh, double nms_iou,
                               int img_w, int img_h) {
        auto targets = assign_targets<T>(gts, strides(), img_h, img_w);
        auto [l_cls, l_loc] = detection_loss(t, fwd.head_outputs, targets);

        LossBreakdown out;
        out.cls = l_cls;
        out.loc = l_loc;
        out.num_pos = targets.num_pos;

        out.lcm = lcm_loss_extended(t, fwd.backbone_features, gts, strides(), lcm_mlp_);

        // mine this iteration's detections for the global contrast
        auto maps = detach(fwd.head_outputs, strides());
        const int batch = fwd.backbone_features.f[0].val().dim(0);
        std::vector<std::vector<ContrastiveSample>> samples(static_cast<std::size_t>(batch));
        for (int n = 0; n < batch; ++n) {
            auto dets = nms(decode_detections(maps, n, decode_thresh, img_w, img_h), nms_iou);
            samples[static_cast<std::size_t>(n)] =
                assign_contrastive_labels(dets, gts[static_cast<std::size_t>(n)], w);
        }
        out.gcm = gcm_loss_extended(t, fwd.backbone_features, samples, strides(), gcm_calib_, w.tau);

        auto det = add(out.cls, out.loc);
        if (w.alpha != 0.0) det = add(det, scale(out.lcm, static_cast<T>(w.alpha)));
        if (w.beta != 0.0) det = add(det, scale(out.gcm, static_cast<T>(w.beta)));
        for (auto [v, nm] : {std::pair<Var<T>, const char*>{out.cls, "cls"},
                             {out.loc, "loc"},
                             {out.lcm, "lcm"},
                             {out.gcm, "gcm"}})
            if (!std::isfinite(static_cast<double>(v.val()[0])))
                throw InvalidParamError(std::string("train_losses: non-finite component ") + nm);
        out.total = det;
        return out;
    }

    /// No-grad inference on one batch of images; uses the fused backbone when
    /// available.
    HeadMaps<T> infer(const Tensor<T>& images) {
        Tape<T> t;
        auto fwd = forward(t, t.constant(images), backbone_.fused(), false);
        return detach(fwd.head_outputs, strides());
    }

    std::int64_t learnable_count(bool fused_mode) {
        std::int64_t n = backbone_.learnable_count(fused_mode);
        ParamList<T> rest;
        neck_.collect(rest);
        head_.collect(rest);
        if (!fused_mode) {
            lcm_mlp_.collect(rest);
            gcm_calib_.collect(rest);
        }
        return n + param_count(rest);
    }

    std::int64_t macs(int in_h, int in_w, bool fused_mode) const {
        const int s0 = cfg_.backbone.stem_stride;
        std::array<std::pair<int, int>, 4> sizes;
        for (int i = 0; i < 4; ++i)
            sizes[i] = {in_h / (s0 << i), in_w / (s0 << i)};
        return backbone_.macs(in_h, in_w, fused_mode) + neck_.macs(sizes) + head_.macs(sizes);
    }

private:
    ModelConfig cfg_;
    WmpBackbone<T> backbone_;
    ArfnNeck<T> neck_;
    DetectHead<T> head_;
    LcmMlp<T> lcm_mlp_;
    GcmCalibration<T> gcm_calib_;
};

struct ComplexityReport {
    std::int64_t params = 0;
    std::int64_t macs = 0;
    double fps = 0;
    std::string mode;
    int input_h = 0, input_w = 0;
};

/// Exact learnable-scalar count, analytic multiply-add count for one forward,
/// and a median-of-runs FPS measurement (10 warm-ups, >= 50 timed forwards).
template <typename T>
inline ComplexityReport complexity_report(Model<T>& model, int in_h, int in_w, bool measure_fps,
                                          int timed_runs = 50) {
    ComplexityReport rep;
    const bool fused = model.backbone().fused();
    rep.mode = fused ? "fused" : "train";
    rep.params = model.learnable_count(fused);
    rep.macs = model.macs(in_h, in_w, fused);
    rep.input_h = in_h;
    rep.input_w = in_w;
    if (measure_fps) {
        Tensor<T> probe({1, model.config().backbone.in_channels, in_h, in_w});
        Rng rng(1234);
        rng.fill_uniform(probe, 0.0, 1.0);
        for (int i = 0; i < 10; ++i) (void)model.infer(probe);
        std::vector<double> times;
        for (int i = 0; i < timed_runs; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            (void)model.infer(probe);
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
        std::sort(times.begin(), times.end());
        rep.fps = 1.0 / times[times.size() / 2];
    }
    return rep;
}

}  // namespace ccdnet
