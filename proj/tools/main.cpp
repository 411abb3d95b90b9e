#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>

#include "ccdnet/config.hpp"
#include "ccdnet/core/threading.hpp"
#include "ccdnet/data/mask_ops.hpp"
#include "ccdnet/data/png_io.hpp"
#include "ccdnet/train/trainer.hpp"
#include "ccdnet/viz/plot.hpp"

namespace fs = std::filesystem;
using namespace ccdnet;

namespace {

void check_device() {
    const char* dev = std::getenv("CCDNET_DEVICE");
    if (dev && std::string(dev) != "cpu")
        throw ConfigError(std::string("unsupported device '") + dev + "'; only cpu is available");
}

/// Collect trailing "--key value" pairs left over by CLI11.
std::vector<std::pair<std::string, std::string>> parse_overrides(std::vector<std::string> extras) {
    std::vector<std::pair<std::string, std::string>> kv;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        std::string key = extras[i];
        if (key.rfind("--", 0) != 0 || i + 1 >= extras.size())
            throw ConfigError("expected --key value overrides, got '" + key + "'");
        kv.emplace_back(key.substr(2), extras[++i]);
    }
    return kv;
}

RunConfig load_with_overrides(const std::string& config_path,
                              const std::vector<std::string>& extras) {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    apply_overrides(cfg, parse_overrides(extras));
    return cfg;
}

int cmd_synth(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(fs::path(out_dir) / "train");
    fs::create_directories(fs::path(out_dir) / "test");

    std::vector<std::string> ids;
    for (int i = 0; i < cfg.synth_num_images; ++i) {
        std::ostringstream os;
        os << "img_" << std::setw(5) << std::setfill('0') << i;
        ids.push_back(os.str());
    }
    auto [train_ids, test_ids] = dataset_split(ids, cfg.seed);

    Rng rng(cfg.seed);
    SynthSceneConfig scfg = cfg.synth;
    scfg.width = scfg.height = cfg.image_size;
    std::size_t ti = 0, vi = 0;
    std::vector<char> is_train(ids.size(), 0);
    {
        std::set<std::string> tr(train_ids.begin(), train_ids.end());
        for (std::size_t i = 0; i < ids.size(); ++i) is_train[i] = tr.count(ids[i]) ? 1 : 0;
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto scene = synth_scene(scfg, rng);
        const std::string split = is_train[i] ? "train" : "test";
        const fs::path dir = fs::path(out_dir) / split;
        write_png_gray16((dir / (ids[i] + ".png")).string(), scene.image);
        write_voc_xml((dir / (ids[i] + ".xml")).string(), ids[i] + ".png", scfg.width, scfg.height,
                      scene.targets);
        (is_train[i] ? ti : vi)++;
    }
    write_id_manifest((fs::path(out_dir) / "train.txt").string(), train_ids);
    write_id_manifest((fs::path(out_dir) / "test.txt").string(), test_ids);
    save_config((fs::path(out_dir) / "synth_config.json").string(), cfg);
    std::cout << "wrote " << ti << " train and " << vi << " test images to " << out_dir << "\n";
    return 0;
}

int cmd_train(RunConfig cfg) {
    set_compute_threads(cfg.threads);
    auto items = load_split(cfg.data_dir, "train");
    if (items.empty()) throw ConfigError("train: no training images in " + cfg.data_dir);
    std::cout << "training on " << items.size() << " images from " << cfg.data_dir << "\n";

    fs::create_directories(cfg.out_dir);
    std::ofstream log((fs::path(cfg.out_dir) / "loss_log.csv").string());
    auto model = build_model(cfg);
    auto stats = train_model(model, cfg, items, &log, cfg.out_dir);
    if (stats.aborted) {
        std::cerr << "aborted: " << stats.abort_reason << "; last good checkpoint: "
                  << stats.last_checkpoint << "\n";
        return 1;
    }
    const std::string final_path = (fs::path(cfg.out_dir) / "final.ckpt").string();
    save_checkpoint(final_path, model_to_checkpoint(model, cfg));
    save_config((fs::path(cfg.out_dir) / "config.json").string(), cfg);
    std::cout << "saved " << final_path << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& split,
             const std::vector<std::string>& extras, const std::string& export_dir) {
    RunConfig cfg;
    auto model = model_from_checkpoint_file(ckpt_path, cfg);
    if (!data_dir.empty()) cfg.data_dir = data_dir;
    apply_overrides(cfg, parse_overrides(extras));
    set_compute_threads(cfg.threads);

    if (!model.backbone().fused()) {
        std::cout << "notice: checkpoint is unfused; fusing for inference\n";
        model.backbone().fuse();
    }
    auto items = load_split(cfg.data_dir, split);
    if (items.empty()) throw ConfigError("eval: empty " + split + " split in " + cfg.data_dir);

    auto result = evaluate_model(model, items, cfg);
    auto rep = complexity_report(model, cfg.image_size, cfg.image_size, true);

    std::cout << "images      " << result.images << "\n";
    std::cout << "TP/FP/FN    " << result.report.tp << "/" << result.report.fp << "/"
              << result.report.fn << "\n";
    std::cout << std::fixed << std::setprecision(4);
    std::cout << "precision   " << result.metrics.precision << "\n";
    std::cout << "recall      " << result.metrics.recall << "\n";
    std::cout << "f1          " << result.metrics.f1 << "\n";
    std::cout << "params      " << rep.params << " (" << rep.mode << " mode)\n";
    std::cout << "macs        " << rep.macs << " @ " << rep.input_h << "x" << rep.input_w << "\n";
    std::cout << "fps         " << std::setprecision(2) << rep.fps << "\n";

    nlohmann::json j{{"images", result.images},
                     {"tp", result.report.tp},
                     {"fp", result.report.fp},
                     {"fn", result.report.fn},
                     {"precision", result.metrics.precision},
                     {"recall", result.metrics.recall},
                     {"f1", result.metrics.f1},
                     {"params", rep.params},
                     {"macs", rep.macs},
                     {"fps", rep.fps},
                     {"mode", rep.mode}};
    std::cout << "json " << j.dump() << "\n";

    if (!export_dir.empty()) {
        fs::create_directories(export_dir);
        std::vector<std::pair<std::string, std::vector<Detection>>> all;
        for (const auto& item : items) {
            auto dets = detect_image(model, item.image, cfg);
            std::vector<Annotation> as_annos;
            for (const auto& d : dets) as_annos.push_back(Annotation{d.box, 0});
            write_voc_xml((fs::path(export_dir) / (item.id + ".xml")).string(), item.id + ".png",
                          item.image.dim(1), item.image.dim(0), as_annos);
            all.emplace_back(item.id, dets);
        }
        write_detections_csv((fs::path(export_dir) / "detections.csv").string(), all);
        std::cout << "exported detections to " << export_dir << "\n";
    }
    return 0;
}

int cmd_fuse(const std::string& in_path, const std::string& out_path, double tolerance) {
    RunConfig cfg;
    auto model = model_from_checkpoint_file(in_path, cfg);
    set_compute_threads(cfg.threads);
    if (model.backbone().fused()) {
        std::cout << "notice: checkpoint already fused; nothing to do\n";
        return 0;
    }

    Rng rng(2024);
    double worst = 0;
    std::string worst_block;
    model.backbone().for_each_block([&](WmpBlock<float>& blk) {
        blk.fuse();
        double block_err = 0;
        for (int trial = 0; trial < 4; ++trial) {
            Tensor<float> x({1, blk.in_channels(), 16, 16});
            rng.fill_uniform(x, -1.0, 1.0);
            Tape<float> t;
            auto a = blk.forward(t, t.constant(x), false);
            auto b = blk.forward_fused(t, t.constant(x));
            block_err = std::max(block_err, static_cast<double>(max_abs_diff(a.val(), b.val())));
        }
        std::cout << "  " << blk.name() << "  max |train - fused| = " << std::scientific
                  << std::setprecision(3) << block_err << "\n";
        if (block_err > worst) {
            worst = block_err;
            worst_block = blk.name();
        }
    });
    model.backbone().mark_fused(true);

    // end-to-end check on a full-size probe
    Tensor<float> probe({1, 1, cfg.image_size, cfg.image_size});
    rng.fill_uniform(probe, 0.0, 1.0);
    double e2e = 0;
    {
        Tape<float> t;
        auto xv = t.constant(probe);
        auto a = model.backbone().forward(t, xv, false);
        auto b = model.backbone().forward(t, xv, true);
        for (int i = 0; i < 4; ++i)
            e2e = std::max(e2e, static_cast<double>(max_abs_diff(a.f[i].val(), b.f[i].val())));
    }
    std::cout << "  end-to-end max deviation = " << std::scientific << e2e << "\n";

    if (worst > tolerance || e2e > tolerance) {
        std::cerr << "fusion verification FAILED: max deviation " << std::max(worst, e2e)
                  << " > tolerance " << tolerance << " (worst block " << worst_block << ")\n";
        return 1;
    }
    save_checkpoint(out_path, model_to_checkpoint(model, cfg));
    std::cout << "fused checkpoint written to " << out_path << "\n";
    return 0;
}

int cmd_convert(const std::string& masks_dir, const std::string& out_dir, bool soft) {
    fs::create_directories(out_dir);
    int failures = 0, converted = 0;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(masks_dir))
        if (entry.path().extension() == ".png") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
        try {
            auto mask = read_png_gray(p.string());
            auto boxes = soft ? soft_mask_to_boxes(mask) : mask_to_boxes(mask);
            const std::string stem = p.stem().string();
            write_voc_xml((fs::path(out_dir) / (stem + ".xml")).string(), stem + ".png",
                          mask.dim(1), mask.dim(0), boxes);
            ++converted;
        } catch (const std::exception& e) {
            std::cerr << "convert: " << p.string() << ": " << e.what() << "\n";
            ++failures;
        }
    }
    std::cout << "converted " << converted << " masks";
    if (failures) std::cout << ", " << failures << " failed";
    std::cout << "\n";
    return failures ? 1 : 0;
}

int cmd_plot(const std::string& ckpt_path, const std::string& image_path, const std::string& kind,
             const std::string& out_path, const std::string& layer) {
    RunConfig cfg;
    auto model = model_from_checkpoint_file(ckpt_path, cfg);
    set_compute_threads(cfg.threads);
    auto image = read_png_gray(image_path);
    const int H = image.dim(0), W = image.dim(1);
    Tensor<float> input({1, 1, H, W});
    std::copy(image.data(), image.data() + image.numel(), input.data());

    const fs::path xml_path = fs::path(image_path).replace_extension(".xml");
    std::vector<Annotation> gts;
    if (fs::exists(xml_path)) gts = read_voc_xml(xml_path.string()).annos;

    if (kind == "heatmap") {
        static const std::vector<std::string> valid{"backbone.f1", "backbone.f2", "backbone.f3",
                                                    "backbone.f4", "neck.f1", "neck.f2",
                                                    "neck.f3", "neck.f4"};
        if (std::find(valid.begin(), valid.end(), layer) == valid.end()) {
            std::string names;
            for (const auto& v : valid) names += " " + v;
            throw ConfigError("unknown layer '" + layer + "'; valid names:" + names);
        }
        Tape<float> t;
        auto fwd = model.forward(t, t.constant(input), model.backbone().fused(), false);
        const bool is_neck = layer.rfind("neck.", 0) == 0;
        const int idx = layer.back() - '1';
        const auto& fm = (is_neck ? fwd.neck_features : fwd.backbone_features).f[idx].val();
        Tensor<float> mean({fm.dim(2), fm.dim(3)});
        for (int c = 0; c < fm.dim(1); ++c)
            for (int y = 0; y < fm.dim(2); ++y)
                for (int x = 0; x < fm.dim(3); ++x) mean.at(y, x) += fm.at(0, c, y, x);
        for (std::int64_t i = 0; i < mean.numel(); ++i) mean[i] /= static_cast<float>(fm.dim(1));
        write_png_rgb8(out_path, colormap_rgb(normalize01(mean)));
    } else if (kind == "lcm3d") {
        if (gts.empty())
            throw ConfigError("lcm3d needs ground truth boxes next to the image (" +
                              xml_path.string() + ")");
        Tape<float> t;
        auto fwd = model.forward(t, t.constant(input), model.backbone().fused(), false);
        auto level = fwd.backbone_features.f[0];
        const int stride = model.strides()[0];
        auto lay = plan_nine_regions(gts[0], stride, level.val().dim(2), level.val().dim(3), gts);
        if (!lay.ok) throw ConfigError("lcm3d: target does not map onto the level");
        auto patch = extract_nine_regions(t, level, lay);
        auto stats = region_stats(t, patch);
        auto wts = lcm_region_weights(t, model.lcm_mlp(), stats);
        auto p_out = lcm_reweight(t, patch, wts);
        auto channel_mean = [](const Tensor<float>& g) {
            Tensor<float> m({g.dim(2), g.dim(3)});
            for (int c = 0; c < g.dim(1); ++c)
                for (int y = 0; y < g.dim(2); ++y)
                    for (int x = 0; x < g.dim(3); ++x) m.at(y, x) += g.at(0, c, y, x);
            for (std::int64_t i = 0; i < m.numel(); ++i) m[i] /= static_cast<float>(g.dim(1));
            return m;
        };
        write_png_rgb8(out_path, render_surface_pair(channel_mean(patch.grid.val()),
                                                     channel_mean(p_out.val())));
    } else if (kind == "boxes") {
        auto rgb = gray_to_rgb(image);
        for (const auto& gt : gts) draw_box(rgb, gt.box, 1.0f, 0.1f, 0.1f);
        for (const auto& d : detect_image(model, image, cfg)) draw_box(rgb, d.box, 0.1f, 1.0f, 0.1f);
        write_png_rgb8(out_path, upscale_rgb(rgb, std::max(1, 512 / W)));
    } else {
        throw ConfigError("unknown plot kind '" + kind + "' (heatmap|lcm3d|boxes)");
    }
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"camouflage-aware counter-distraction infrared small-target detector"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_dir, split = "test", ckpt, ckpt_out, masks_dir;
    std::string image_path, kind = "heatmap", out_path = "plot.png", layer = "backbone.f1";
    std::string export_dir;
    double tolerance = 1e-4;
    bool soft = false;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset (png + voc xml)");
    synth->add_option("--config", config_path, "json config file");
    synth->add_option("--out", out_dir, "output dataset directory")->required();
    synth->allow_extras();

    auto* train = app.add_subcommand("train", "train a detector");
    train->add_option("--config", config_path, "json config file");
    train->add_option("--data", data_dir, "dataset root (overrides config)");
    train->add_option("--out", out_dir, "run output directory (overrides config)");
    train->allow_extras();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    eval->add_option("--data", data_dir, "dataset root");
    eval->add_option("--split", split, "split name (default test)");
    eval->add_option("--export", export_dir, "write per-image xml + csv detections here");
    eval->allow_extras();

    auto* fuse = app.add_subcommand("fuse", "fuse a checkpoint and verify equivalence");
    fuse->add_option("--in", ckpt, "unfused checkpoint")->required();
    fuse->add_option("--out", ckpt_out, "fused checkpoint path")->required();
    fuse->add_option("--tolerance", tolerance, "max allowed |train - fused| (default 1e-4)");

    auto* convert = app.add_subcommand("convert", "segmentation masks to voc xml boxes");
    convert->add_option("--masks", masks_dir, "directory of mask png files")->required();
    convert->add_option("--out", out_dir, "output directory")->required();
    convert->add_flag("--soft", soft, "threshold float masks with the otsu rule first");

    auto* plot = app.add_subcommand("plot", "visualize features, boxes, or the local contrast");
    plot->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    plot->add_option("--image", image_path, "input png")->required();
    plot->add_option("--kind", kind, "heatmap|lcm3d|boxes");
    plot->add_option("--out", out_path, "output png");
    plot->add_option("--layer", layer, "feature map name for heatmaps");

    CLI11_PARSE(app, argc, argv);

    try {
        check_device();
        if (synth->parsed()) {
            RunConfig cfg = load_with_overrides(config_path, synth->remaining());
            set_compute_threads(cfg.threads);
            return cmd_synth(cfg, out_dir);
        }
        if (train->parsed()) {
            RunConfig cfg = load_with_overrides(config_path, train->remaining());
            if (!data_dir.empty()) cfg.data_dir = data_dir;
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            return cmd_train(cfg);
        }
        if (eval->parsed()) return cmd_eval(ckpt, data_dir, split, eval->remaining(), export_dir);
        if (fuse->parsed()) return cmd_fuse(ckpt, ckpt_out, tolerance);
        if (convert->parsed()) return cmd_convert(masks_dir, out_dir, soft);
        if (plot->parsed()) return cmd_plot(ckpt, image_path, kind, out_path, layer);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
