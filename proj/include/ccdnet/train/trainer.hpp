#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "ccdnet/config.hpp"
#include "ccdnet/core/checkpoint.hpp"
#include "ccdnet/data/dataset.hpp"
#include "ccdnet/eval/metrics.hpp"
#include "ccdnet/model.hpp"
#include "ccdnet/train/optim.hpp"

namespace ccdnet {

// ---------------------------------------------------------------------------
// Model <-> checkpoint
// ---------------------------------------------------------------------------

inline Model<float> build_model(const RunConfig& cfg) {
    return Model<float>(cfg.model_config(), cfg.seed);
}

inline Checkpoint model_to_checkpoint(Model<float>& model, const RunConfig& cfg) {
    Checkpoint ck;
    ck.config = cfg;
    ck.mode = model.backbone().fused() ? "fused" : "train";
    for (auto* p : model.params()) ck.tensors.emplace_back(p->name, p->value);
    for (auto [name, t] : model.buffers()) ck.tensors.emplace_back(name, *t);
    return ck;
}

inline void model_from_checkpoint(Model<float>& model, const Checkpoint& ck) {
    auto fill = [&](const std::string& name, Tensor<float>& dst) {
        const Tensor<float>* src = ck.find(name);
        if (!src) throw ParseError("checkpoint: missing tensor " + name);
        if (!(src->shape() == dst.shape()))
            throw ParseError("checkpoint: shape mismatch for " + name + ": " + src->shape_str() +
                             " vs " + dst.shape_str());
        dst = *src;
    };
    for (auto* p : model.params()) fill(p->name, p->value);
    for (auto [name, t] : model.buffers()) {
        if (name.find(".fused.") != std::string::npos) continue;  // handled below
        fill(name, *t);
    }
    if (ck.mode == "fused") {
        model.backbone().for_each_block([&](WmpBlock<float>& b) {
            const Tensor<float>* w = ck.find(b.name() + ".fused.w");
            const Tensor<float>* bias = ck.find(b.name() + ".fused.b");
            if (!w || !bias) throw ParseError("checkpoint: fused tensors missing for " + b.name());
            b.set_fused(*w, *bias);
        });
        model.backbone().mark_fused(true);
    }
}

inline Model<float> model_from_checkpoint_file(const std::string& path, RunConfig& cfg_out) {
    Checkpoint ck = load_checkpoint(path);
    cfg_out = ck.config.get<RunConfig>();
    Model<float> model = build_model(cfg_out);
    model_from_checkpoint(model, ck);
    return model;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainLogRow {
    std::int64_t step = 0;
    double cls = 0, loc = 0, lcm = 0, gcm = 0, total = 0;
};

struct TrainStats {
    std::vector<TrainLogRow> rows;
    bool aborted = false;
    std::string abort_reason;
    std::string last_checkpoint;
    double first_epoch_mean = 0, last_epoch_mean = 0;
};

/// Seeded single-device loop: shuffled batches, optional flip augmentation,
/// AdamW updates, one CSV row per step. A non-finite loss aborts, leaving the
/// last epoch checkpoint in place.
inline TrainStats train_model(Model<float>& model, const RunConfig& cfg,
                              const std::vector<DatasetItem>& items, std::ostream* csv,
                              const std::string& ckpt_dir, bool quiet = false) {
    namespace fs = std::filesystem;
    if (items.empty()) throw ConfigError("train: empty dataset");
    const int H = items[0].image.dim(0), W = items[0].image.dim(1);
    for (const auto& it : items)
        if (it.image.dim(0) != H || it.image.dim(1) != W)
            throw ConfigError("train: images must share one size per run");

    AdamW<float> opt(cfg.lr, cfg.weight_decay);
    auto params = model.params();
    Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull + 0x1234567ull);

    if (csv) *csv << "step,L_cls,L_loc,L_lcm,L_gcm,total\n";

    TrainStats stats;
    std::int64_t step = 0;
    std::vector<int> order(items.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = rng.fork(static_cast<std::uint64_t>(epoch) + 1);
        erng.shuffle(order.begin(), order.end());
        double epoch_sum = 0;
        int epoch_rows = 0;

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const int B = static_cast<int>(end - start);
            Tensor<float> batch({B, 1, H, W});
            std::vector<std::vector<Annotation>> gts(static_cast<std::size_t>(B));
            for (int b = 0; b < B; ++b) {
                const auto& item = items[static_cast<std::size_t>(order[start + static_cast<std::size_t>(b)])];
                Tensor<float> img = item.image;
                std::vector<Annotation> annos = item.annos;
                if (cfg.augment_flips) {
                    const double u = erng.uniform();
                    if (u < 1.0 / 3) {
                        std::tie(img, annos) = flip_augment(img, annos, FlipAxis::horizontal);
                    } else if (u < 2.0 / 3) {
                        std::tie(img, annos) = flip_augment(img, annos, FlipAxis::vertical);
                    }
                }
                std::copy(img.data(), img.data() + img.numel(), batch.data() + batch.idx4(b, 0, 0, 0));
                gts[static_cast<std::size_t>(b)] = std::move(annos);
            }

            try {
                Tape<float> t;
                auto fwd = model.forward(t, t.constant(batch), false, true);
                auto losses = model.train_losses(t, fwd, gts, cfg.loss, cfg.score_thresh,
                                                 cfg.nms_iou, W, H);
                opt.zero_grad(params);
                t.backward(losses.total);
                opt.step(params);

                TrainLogRow row{step,
                                static_cast<double>(losses.cls.val()[0]),
                                static_cast<double>(losses.loc.val()[0]),
                                static_cast<double>(losses.lcm.val()[0]),
                                static_cast<double>(losses.gcm.val()[0]),
                                static_cast<double>(losses.total.val()[0])};
                stats.rows.push_back(row);
                if (csv)
                    *csv << row.step << ',' << row.cls << ',' << row.loc << ',' << row.lcm << ','
                         << row.gcm << ',' << row.total << '\n';
                epoch_sum += row.total;
                ++epoch_rows;
            } catch (const InvalidParamError& e) {
                stats.aborted = true;
                stats.abort_reason = e.what();
                if (!quiet) std::cerr << "train aborted: " << e.what() << "\n";
                return stats;
            }
            ++step;
        }

        const double epoch_mean = epoch_rows ? epoch_sum / epoch_rows : 0.0;
        if (epoch == 0) stats.first_epoch_mean = epoch_mean;
        stats.last_epoch_mean = epoch_mean;
        if (!quiet)
            std::cout << "epoch " << (epoch + 1) << "/" << cfg.epochs << "  mean total loss "
                      << epoch_mean << std::endl;

        if (!ckpt_dir.empty() &&
            ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs)) {
            fs::create_directories(ckpt_dir);
            const std::string path =
                (fs::path(ckpt_dir) / ("epoch_" + std::to_string(epoch + 1) + ".ckpt")).string();
            save_checkpoint(path, model_to_checkpoint(model, cfg));
            stats.last_checkpoint = path;
        }
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
    MatchReport report;
    Prf1 metrics;
    int images = 0;
};

/// Fused-mode (or plain, if unfused) inference over a dataset, decode + NMS +
/// greedy matching at the configured operating point.
inline EvalResult evaluate_model(Model<float>& model, const std::vector<DatasetItem>& items,
                                 const RunConfig& cfg) {
    EvalResult out;
    const MatchCriterion crit =
        cfg.match_criterion == "center" ? MatchCriterion::center : MatchCriterion::iou;
    for (const auto& item : items) {
        const int H = item.image.dim(0), W = item.image.dim(1);
        Tensor<float> input({1, 1, H, W});
        std::copy(item.image.data(), item.image.data() + item.image.numel(), input.data());
        auto maps = model.infer(input);
        auto dets = nms(decode_detections(maps, 0, cfg.score_thresh, W, H), cfg.nms_iou);
        std::vector<Detection> kept;
        for (auto& d : dets)
            if (d.score >= cfg.eval_score_thresh) kept.push_back(d);
        out.report.merge(match_detections(kept, item.annos, cfg.match_iou, crit));
        ++out.images;
    }
    out.metrics = prf1(out.report);
    return out;
}

/// Detections for one image at the configured operating point.
inline std::vector<Detection> detect_image(Model<float>& model, const Tensor<float>& image,
                                           const RunConfig& cfg) {
    const int H = image.dim(0), W = image.dim(1);
    Tensor<float> input({1, 1, H, W});
    std::copy(image.data(), image.data() + image.numel(), input.data());
    auto maps = model.infer(input);
    auto dets = nms(decode_detections(maps, 0, cfg.score_thresh, W, H), cfg.nms_iou);
    std::vector<Detection> kept;
    for (auto& d : dets)
        if (d.score >= cfg.eval_score_thresh) kept.push_back(d);
    return kept;
}

}  // namespace ccdnet
