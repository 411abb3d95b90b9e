#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ccdnet/core/errors.hpp"
#include "ccdnet/core/rng.hpp"
#include "ccdnet/core/tensor.hpp"
#include "ccdnet/data/annotation.hpp"

namespace ccdnet {

/// Parameters of the synthetic infrared scene generator. Targets are small
/// anisotropic Gaussian blobs; distractors are blob- or streak-shaped clutter
/// whose intensity and footprint approach the target statistics as
/// `distractor_similarity` goes to 1. Distractors are never annotated.
struct SynthSceneConfig {
    int width = 96, height = 96;
    int min_targets = 1, max_targets = 3;
    double sigma_min = 1.3, sigma_max = 2.4;        // target gaussian sigma, px
    double intensity_min = 0.45, intensity_max = 0.75;  // peak contrast over background
    int min_distractors = 2, max_distractors = 5;
    double distractor_similarity = 0.7;             // in [0,1]
    double clutter_amp = 0.1;                       // background texture amplitude
    std::uint64_t seed = 0;

    void validate() const {
        if (width < 32 || height < 32) throw ConfigError("synth: image too small");
        if (min_targets < 0 || max_targets < min_targets) throw ConfigError("synth: bad target range");
        if (!(sigma_min > 0) || sigma_max < sigma_min) throw ConfigError("synth: bad sigma range");
        if (!(intensity_min > 0) || intensity_max < intensity_min)
            throw ConfigError("synth: bad intensity range");
        if (min_distractors < 0 || max_distractors < min_distractors)
            throw ConfigError("synth: bad distractor range");
        if (distractor_similarity < 0 || distractor_similarity > 1)
            throw ConfigError("synth: similarity must be in [0,1]");
    }
};

struct SynthScene {
    Tensor<float> image;  // (H,W), values in [0,1]
    std::vector<Annotation> targets;
    std::vector<BoxF> distractor_boxes;
};

namespace detail {

inline void add_gaussian(Tensor<float>& img, double cx, double cy, double sx, double sy,
                         double amp) {
    const int H = img.dim(0), W = img.dim(1);
    const int x0 = std::max(0, static_cast<int>(cx - 4 * sx)), x1 = std::min(W - 1, static_cast<int>(cx + 4 * sx) + 1);
    const int y0 = std::max(0, static_cast<int>(cy - 4 * sy)), y1 = std::min(H - 1, static_cast<int>(cy + 4 * sy) + 1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dx = (x - cx) / sx, dy = (y - cy) / sy;
            img.at(y, x) += static_cast<float>(amp * std::exp(-0.5 * (dx * dx + dy * dy)));
        }
}

inline BoxF blob_box(double cx, double cy, double sx, double sy, int w, int h) {
    BoxF b{std::floor(cx - 3 * sx), std::floor(cy - 3 * sy), std::ceil(cx + 3 * sx),
           std::ceil(cy + 3 * sy)};
    b.x_min = std::max(0.0, b.x_min);
    b.y_min = std::max(0.0, b.y_min);
    b.x_max = std::min(static_cast<double>(w), b.x_max);
    b.y_max = std::min(static_cast<double>(h), b.y_max);
    return b;
}

/// Box blur repeated three times approximates a Gaussian; keeps the clutter
/// low-frequency.
inline void smooth(Tensor<float>& img, int radius, int passes) {
    const int H = img.dim(0), W = img.dim(1);
    Tensor<float> tmp({H, W});
    for (int p = 0; p < passes; ++p) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                float s = 0;
                int c = 0;
                for (int d = -radius; d <= radius; ++d) {
                    const int xx = x + d;
                    if (xx < 0 || xx >= W) continue;
                    s += img.at(y, xx);
                    ++c;
                }
                tmp.at(y, x) = s / static_cast<float>(c);
            }
        for (int x = 0; x < W; ++x)
            for (int y = 0; y < H; ++y) {
                float s = 0;
                int c = 0;
                for (int d = -radius; d <= radius; ++d) {
                    const int yy = y + d;
                    if (yy < 0 || yy >= H) continue;
                    s += tmp.at(yy, x);
                    ++c;
                }
                img.at(y, x) = s / static_cast<float>(c);
            }
    }
}

}  // namespace detail

/// One reproducible scene. Placement retries bound at 60 per blob; an
/// infeasible scene is regenerated from a fresh sub-seed.
inline SynthScene synth_scene(const SynthSceneConfig& cfg, Rng& rng) {
    cfg.validate();
    for (int attempt = 0; attempt < 16; ++attempt) {
        Rng local = rng.fork(static_cast<std::uint64_t>(attempt) + 1);
        const int H = cfg.height, W = cfg.width;
        SynthScene scene;
        scene.image = Tensor<float>({H, W});

        // background: base level, a gentle ramp, smoothed noise clutter
        const double base = local.uniform(0.12, 0.22);
        const double gx = local.uniform(-1.0, 1.0) * cfg.clutter_amp * 0.5;
        const double gy = local.uniform(-1.0, 1.0) * cfg.clutter_amp * 0.5;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                scene.image.at(y, x) = static_cast<float>(
                    base + gx * (static_cast<double>(x) / W - 0.5) + gy * (static_cast<double>(y) / H - 0.5));
        if (cfg.clutter_amp > 0) {
            Tensor<float> noise({H, W});
            local.fill_uniform(noise, -1.0, 1.0);
            detail::smooth(noise, 3, 3);
            float namax = std::max(noise.max_abs(), 1e-6f);
            for (std::int64_t i = 0; i < noise.numel(); ++i)
                scene.image[i] += static_cast<float>(cfg.clutter_amp) * noise[i] / namax;
        }

        // targets
        const int n_targets = local.uniform_int(cfg.min_targets, cfg.max_targets);
        bool feasible = true;
        for (int k = 0; k < n_targets && feasible; ++k) {
            bool placed = false;
            for (int tries = 0; tries < 60 && !placed; ++tries) {
                const double sx = local.uniform(cfg.sigma_min, cfg.sigma_max);
                const double sy = local.uniform(cfg.sigma_min, cfg.sigma_max);
                const double cx = local.uniform(4 * sx, W - 4 * sx);
                const double cy = local.uniform(4 * sy, H - 4 * sy);
                const BoxF box = detail::blob_box(cx, cy, sx, sy, W, H);
                bool clash = false;
                for (const auto& t : scene.targets)
                    if (iou(box, t.box) > 0.0) clash = true;
                if (clash) continue;
                const double amp = local.uniform(cfg.intensity_min, cfg.intensity_max);
                detail::add_gaussian(scene.image, cx, cy, sx, sy, amp);
                scene.targets.push_back(Annotation{box, 0});
                placed = true;
            }
            feasible = placed;
        }
        if (!feasible) continue;

        // distractors: wider and dimmer blobs, or streaks; similarity pulls
        // their stats toward the target's
        const double sim = cfg.distractor_similarity;
        const int n_distract = local.uniform_int(cfg.min_distractors, cfg.max_distractors);
        for (int k = 0; k < n_distract && feasible; ++k) {
            bool placed = false;
            for (int tries = 0; tries < 60 && !placed; ++tries) {
                const bool streak = local.uniform() < 0.35;
                double sx = local.uniform(cfg.sigma_min, cfg.sigma_max);
                double sy = local.uniform(cfg.sigma_min, cfg.sigma_max);
                if (streak) {
                    sx *= local.uniform(2.5, 4.0) - 1.5 * sim;
                    sy *= 0.8;
                } else {
                    const double widen = 1.0 + (1.0 - sim) * 1.8 + 0.3;
                    sx *= widen;
                    sy *= widen;
                }
                const double amp =
                    local.uniform(cfg.intensity_min, cfg.intensity_max) * (0.45 + 0.55 * sim);
                const double cx = local.uniform(4 * sx, W - 4 * sx);
                const double cy = local.uniform(4 * sy, H - 4 * sy);
                const BoxF box = detail::blob_box(cx, cy, sx, sy, W, H);
                bool clash = false;
                for (const auto& t : scene.targets)
                    if (iou(box, t.box) > 0.0) clash = true;
                for (const auto& d : scene.distractor_boxes)
                    if (iou(box, d) > 0.0) clash = true;
                if (clash) continue;
                detail::add_gaussian(scene.image, cx, cy, sx, sy, amp);
                scene.distractor_boxes.push_back(box);
                placed = true;
            }
            feasible = placed;
        }
        if (!feasible) continue;

        for (std::int64_t i = 0; i < scene.image.numel(); ++i)
            scene.image[i] = std::min(1.0f, std::max(0.0f, scene.image[i]));
        return scene;
    }
    throw ConfigError("synth_scene: could not place blobs; config too crowded");
}

}  // namespace ccdnet
