#pragma once

#include <json.hpp>

#include <fstream>
#include <string>

#include "ccdnet/cadd/cadd.hpp"
#include "ccdnet/data/synth.hpp"
#include "ccdnet/model.hpp"

namespace ccdnet {

/// One flat, human-editable configuration for every command. Defaults carry
/// the published training recipe (AdamW lr 1e-4, weight decay 5e-4, alpha 0.1,
/// beta 0.05, tau 0.1, t1 0.8, t2 0.2, k 3); epochs/batch default to the
/// desk-scale regime (30 epochs, batch 8) with the full-scale values one
/// override away (epochs=150 batch_size=12).
struct RunConfig {
    // model
    std::array<int, 4> stage_depths{1, 2, 2, 1};
    std::array<int, 4> stage_channels{16, 32, 64, 128};
    int stem_stride = 2;
    int head_channels = 32;
    bool use_deform = true;
    int gcm_dim = 64;

    // loss
    LossWeights loss;

    // optimizer / schedule
    double lr = 1e-4;
    double weight_decay = 5e-4;
    int epochs = 30;
    int batch_size = 8;
    std::uint64_t seed = 0;

    // detection / evaluation
    double score_thresh = 0.05;   // decode threshold ahead of NMS
    double nms_iou = 0.5;
    double eval_score_thresh = 0.30;  // operating point for reported metrics
    double match_iou = 0.5;
    std::string match_criterion = "iou";  // "iou" | "center"

    // data
    std::string data_dir = "data/synth";
    bool augment_flips = true;
    int image_size = 96;
    int synth_num_images = 500;

    // synthetic generator
    SynthSceneConfig synth;

    // runtime
    int threads = 2;
    int checkpoint_every = 10;
    std::string out_dir = "runs/default";

    ModelConfig model_config() const {
        ModelConfig mc;
        mc.backbone.stage_depths = stage_depths;
        mc.backbone.stage_channels = stage_channels;
        mc.backbone.stem_stride = stem_stride;
        mc.backbone.in_channels = 1;
        mc.head_channels = head_channels;
        mc.use_deform = use_deform;
        mc.gcm_dim = gcm_dim;
        return mc;
    }

    void validate() const {
        loss.validate();
        if (epochs < 1 || batch_size < 1) throw ConfigError("config: epochs/batch_size must be >= 1");
        if (image_size % (8 * stem_stride) != 0)
            throw ConfigError("config: image_size must be divisible by " +
                              std::to_string(8 * stem_stride));
        if (match_criterion != "iou" && match_criterion != "center")
            throw ConfigError("config: match_criterion must be 'iou' or 'center'");
        if (threads < 1) throw ConfigError("config: threads must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{
        {"stage_depths", c.stage_depths},
        {"stage_channels", c.stage_channels},
        {"stem_stride", c.stem_stride},
        {"head_channels", c.head_channels},
        {"use_deform", c.use_deform},
        {"gcm_dim", c.gcm_dim},
        {"alpha", c.loss.alpha},
        {"beta", c.loss.beta},
        {"tau", c.loss.tau},
        {"t1", c.loss.t1},
        {"t2", c.loss.t2},
        {"k", c.loss.k},
        {"lr", c.lr},
        {"weight_decay", c.weight_decay},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"seed", c.seed},
        {"score_thresh", c.score_thresh},
        {"nms_iou", c.nms_iou},
        {"eval_score_thresh", c.eval_score_thresh},
        {"match_iou", c.match_iou},
        {"match_criterion", c.match_criterion},
        {"data_dir", c.data_dir},
        {"augment_flips", c.augment_flips},
        {"image_size", c.image_size},
        {"synth_num_images", c.synth_num_images},
        {"threads", c.threads},
        {"checkpoint_every", c.checkpoint_every},
        {"out_dir", c.out_dir},
        {"synth_min_targets", c.synth.min_targets},
        {"synth_max_targets", c.synth.max_targets},
        {"synth_sigma_min", c.synth.sigma_min},
        {"synth_sigma_max", c.synth.sigma_max},
        {"synth_intensity_min", c.synth.intensity_min},
        {"synth_intensity_max", c.synth.intensity_max},
        {"synth_min_distractors", c.synth.min_distractors},
        {"synth_max_distractors", c.synth.max_distractors},
        {"synth_similarity", c.synth.distractor_similarity},
        {"synth_clutter", c.synth.clutter_amp},
    };
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
    auto get = [&](const char* key, auto& into) {
        if (j.contains(key)) j.at(key).get_to(into);
    };
    get("stage_depths", c.stage_depths);
    get("stage_channels", c.stage_channels);
    get("stem_stride", c.stem_stride);
    get("head_channels", c.head_channels);
    get("use_deform", c.use_deform);
    get("gcm_dim", c.gcm_dim);
    get("alpha", c.loss.alpha);
    get("beta", c.loss.beta);
    get("tau", c.loss.tau);
    get("t1", c.loss.t1);
    get("t2", c.loss.t2);
    get("k", c.loss.k);
    get("lr", c.lr);
    get("weight_decay", c.weight_decay);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("seed", c.seed);
    get("score_thresh", c.score_thresh);
    get("nms_iou", c.nms_iou);
    get("eval_score_thresh", c.eval_score_thresh);
    get("match_iou", c.match_iou);
    get("match_criterion", c.match_criterion);
    get("data_dir", c.data_dir);
    get("augment_flips", c.augment_flips);
    get("image_size", c.image_size);
    get("synth_num_images", c.synth_num_images);
    get("threads", c.threads);
    get("checkpoint_every", c.checkpoint_every);
    get("out_dir", c.out_dir);
    get("synth_min_targets", c.synth.min_targets);
    get("synth_max_targets", c.synth.max_targets);
    get("synth_sigma_min", c.synth.sigma_min);
    get("synth_sigma_max", c.synth.sigma_max);
    get("synth_intensity_min", c.synth.intensity_min);
    get("synth_intensity_max", c.synth.intensity_max);
    get("synth_min_distractors", c.synth.min_distractors);
    get("synth_max_distractors", c.synth.max_distractors);
    get("synth_similarity", c.synth.distractor_similarity);
    get("synth_clutter", c.synth.clutter_amp);
    c.synth.width = c.synth.height = c.image_size;
    c.synth.seed = c.seed;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    RunConfig c = j.get<RunConfig>();
    c.validate();
    return c;
}

inline void save_config(const std::string& path, const RunConfig& c) {
    std::ofstream f(path);
    if (!f) throw ConfigError("config: cannot write " + path);
    nlohmann::json j = c;
    f << j.dump(2) << '\n';
}

/// Apply "--key value" overrides on top of a config. Values parse as JSON
/// scalars (numbers, booleans) with a string fallback.
inline void apply_overrides(RunConfig& c, const std::vector<std::pair<std::string, std::string>>& kv) {
    nlohmann::json j = c;
    for (const auto& [key, value] : kv) {
        if (!j.contains(key)) throw ConfigError("config: unknown key '" + key + "'");
        nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
        if (parsed.is_discarded()) parsed = value;
        j[key] = parsed;
    }
    c = j.get<RunConfig>();
    c.validate();
}

}  // namespace ccdnet
