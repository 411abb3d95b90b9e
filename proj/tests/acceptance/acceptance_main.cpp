// Acceptance suite: every release gate runs here, one line per criterion.
//
//   acceptance [c1|c2|...|c9|all] [--data-root DIR]
//
// Training-based gates (c6, c7) generate their corpus under the data root
// (default /tmp/ccdnet_acceptance) and reuse it when present; everything is
// seeded, so reruns are reproducible.

#include <chrono>
#include <cstring>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "ccdnet/config.hpp"
#include "ccdnet/core/gradcheck.hpp"
#include "ccdnet/core/threading.hpp"
#include "ccdnet/data/mask_ops.hpp"
#include "ccdnet/train/trainer.hpp"
#include "../helpers.hpp"
#include "../oracles.hpp"

using namespace ccdnet;
namespace fs = std::filesystem;

namespace {

int g_pass = 0, g_fail = 0;

void report(int criterion, bool pass, const std::string& detail) {
    std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << criterion << ": " << detail
              << std::endl;
    (pass ? g_pass : g_fail)++;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// c1: fusion equivalence, 100 random blocks x 100 random inputs
// ---------------------------------------------------------------------------

void criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(11001);
    double worst64 = 0, worst32 = 0;
    for (int b = 0; b < 100; ++b) {
        const int stride = (b % 4 == 0) ? 2 : 1;
        const int in_ch = 2 + b % 3, out_ch = (b % 2) ? in_ch : in_ch + 2;

        WmpBlock<double> blk("blk", in_ch, out_ch, stride, rng);
        testutil::randomize_wmp(blk, rng);
        blk.fuse();
        WmpBlock<float> blkf("blkf", in_ch, out_ch, stride, rng);
        testutil::randomize_wmp(blkf, rng);
        blkf.fuse();

        for (int i = 0; i < 100; ++i) {
            auto x = testutil::random_input<double>(rng, 1, in_ch, 16, 16);
            Tape<double> t;
            auto a = blk.forward(t, t.constant(x), false);
            auto c = blk.forward_fused(t, t.constant(x));
            worst64 = std::max(worst64, static_cast<double>(max_abs_diff(a.val(), c.val())));

            auto xf = testutil::random_input<float>(rng, 1, in_ch, 16, 16);
            Tape<float> tf;
            auto af = blkf.forward(tf, tf.constant(xf), false);
            auto cf = blkf.forward_fused(tf, tf.constant(xf));
            worst32 = std::max(worst32, static_cast<double>(max_abs_diff(af.val(), cf.val())));
        }
    }
    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << "fusion max |train-fused| " << worst64
       << " (f64, tol 1e-10), " << worst32 << " (f32, tol 1e-4), " << std::fixed
       << std::setprecision(1) << secs << "s";
    report(1, worst64 < 1e-10 && worst32 < 1e-4 && secs < 60.0, os.str());
}

// ---------------------------------------------------------------------------
// c2: gradient suite vs central finite differences
// ---------------------------------------------------------------------------

void criterion2() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(22002);
    double worst = 0;
    std::string worst_site;
    auto track = [&](const GradCheckReport& rep, const std::string& site) {
        if (rep.max_rel_err > worst) {
            worst = rep.max_rel_err;
            worst_site = site + "/" + rep.worst;
        }
    };

    {  // WMP conditioning scalars
        WmpBlock<double> blk("blk", 3, 3, 1, rng);
        testutil::randomize_wmp(blk, rng);
        auto x = testutil::random_input<double>(rng, 1, 3, 6, 6);
        auto loss = [&](bool bk) {
            Tape<double> t;
            auto y = blk.forward(t, t.constant(x), false);
            auto l = mean_all(mul(y, y));
            if (bk) t.backward(l);
            return l.val()[0];
        };
        std::vector<Parameter<double>*> ps;
        for (auto& br : blk.branches()) ps.push_back(&br.p);
        track(grad_check(ps, [&] { return loss(false); }, [&] { loss(true); }, 1e-6), "wmp.p");
    }

    {  // all neck parameters (generic non-integer deformable offsets)
        NeckGeometry geo{{3, 5, 6, 8}};
        ArfnNeck<double> neck(geo, rng);
        rng.fill_uniform(neck.dsr().offset_conv.w.value, -0.05, 0.05);
        rng.fill_uniform(neck.dsr().offset_conv.b.value, -0.3, 0.3);
        std::array<Tensor<double>, 4> feats;
        for (int i = 0; i < 4; ++i)
            feats[i] = testutil::random_input<double>(rng, 1, geo.channels[i], 8 >> i, 8 >> i);
        auto loss = [&](bool bk) {
            Tape<double> t;
            Pyramid<double> p;
            for (int i = 0; i < 4; ++i) p.f[i] = t.constant(feats[i]);
            auto out = neck.forward(t, p);
            Var<double> l;
            for (int i = 0; i < 4; ++i) {
                auto term = sum_all(mul(out.f[i], out.f[i]));
                l = l.defined() ? add(l, term) : term;
            }
            if (bk) t.backward(l);
            return l.val()[0];
        };
        ParamList<double> ps;
        neck.collect(ps);
        track(grad_check(ps, [&] { return loss(false); }, [&] { loss(true); }, 1e-6), "neck");
    }

    {  // lcm_loss through stats, MLP, reweight; gcm_loss through calibration
        const std::array<int, 4> strides{2, 4, 8, 16};
        std::array<int, 4> ch{2, 3, 4, 5};
        LcmMlp<double> mlp("mlp", rng);
        GcmCalibration<double> calib(ch, 8, rng);
        Parameter<double> feat("feat", testutil::random_input<double>(rng, 1, ch[0], 16, 16));
        std::vector<Annotation> gts{Annotation{BoxF{10, 10, 18, 18}, 0}};
        std::vector<Detection> dets{{BoxF{9, 9, 17, 17}, 0.9, 1},
                                    {BoxF{3, 3, 9, 9}, 0.5, 1},
                                    {BoxF{20, 18, 29, 27}, 0.4, 1}};
        LossWeights w;
        auto samples = assign_contrastive_labels(dets, gts, w);
        auto loss = [&](bool bk) {
            Tape<double> t;
            auto level = t.param(feat);
            auto lt = lcm_target_loss(t, level, gts[0], strides[0], gts, mlp);
            std::vector<Var<double>> pos, neg;
            for (auto& s : samples) {
                auto v = calib(t, level, s.det.box, 0, strides[0]);
                if (v) (s.role == SampleRole::positive ? pos : neg).push_back(*v);
            }
            auto l = add(*lt, gcm_level_loss(t, pos, neg, w.tau));
            if (bk) t.backward(l);
            return l.val()[0];
        };
        ParamList<double> ps;
        mlp.collect(ps);
        calib.collect(ps);
        ps.push_back(&feat);
        track(grad_check(ps, [&] { return loss(false); }, [&] { loss(true); }, 1e-6), "cadd");
    }

    {  // detection losses through the heads
        std::array<int, 4> ch{2, 3, 4, 5};
        DetectHead<double> head(ch, 4, rng);
        // zero-init projections have flat finite-difference curvature at the
        // origin; nudge them to a generic point first
        ParamList<double> hp;
        head.collect(hp);
        for (auto* p : hp)
            if (p->name == "head.cls.out.w" || p->name == "head.reg.out.w")
                rng.fill_uniform(p->value, -0.3, 0.3);
        std::vector<std::vector<Annotation>> gts{{Annotation{BoxF{4, 4, 12, 12}, 0}}};
        auto tg = assign_targets<double>(gts, {2, 4, 8, 16}, 32, 32);
        std::array<Tensor<double>, 4> feats;
        for (int i = 0; i < 4; ++i)
            feats[i] = testutil::random_input<double>(rng, 1, ch[i], 16 >> i, 16 >> i);
        auto loss = [&](bool bk) {
            Tape<double> t;
            Pyramid<double> p;
            for (int i = 0; i < 4; ++i) p.f[i] = t.constant(feats[i]);
            auto out = head.forward(t, p);
            auto [lc, ll] = detection_loss(t, out, tg);
            auto l = add(lc, ll);
            if (bk) t.backward(l);
            return l.val()[0];
        };
        track(grad_check(hp, [&] { return loss(false); }, [&] { loss(true); }, 1e-6), "head");
    }

    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << "max relative error " << worst << " at "
       << worst_site << " (tol 1e-3), " << std::fixed << std::setprecision(1) << secs << "s";
    report(2, worst < 1e-3 && secs < 300.0, os.str());
}

// ---------------------------------------------------------------------------
// c3: scalar brute-force oracle equivalence, >= 50 instances per op
// ---------------------------------------------------------------------------

void criterion3() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(33003);
    bool ok = true;
    std::ostringstream fails;

    // nine-region extraction geometry + validity against direct IoU scans
    for (int i = 0; i < 50 && ok; ++i) {
        const double w = rng.uniform(3.0, 14.0), h = rng.uniform(3.0, 14.0);
        const double x0 = rng.uniform(0.0, 48.0 - w), y0 = rng.uniform(0.0, 48.0 - h);
        Annotation a{BoxF{x0, y0, x0 + w, y0 + h}, 0};
        const double ox = rng.uniform(0.0, 36.0), oy = rng.uniform(0.0, 36.0);
        Annotation b{BoxF{ox, oy, ox + rng.uniform(3.0, 10.0), oy + rng.uniform(3.0, 10.0)}, 0};
        if (iou(a.box, b.box) > 0) continue;
        std::vector<Annotation> gts{a, b};
        auto lay = plan_nine_regions(a, 2, 24, 24, gts);
        if (!lay.ok) continue;
        auto layb = plan_nine_regions(b, 2, 24, 24, gts);
        for (int k = 0; k < 9 && ok; ++k) {
            if (k == 4) continue;
            const BoxF rect = lay.region_rect(k);
            bool inside = rect.x_min >= 0 && rect.y_min >= 0 && rect.x_max <= 24 && rect.y_max <= 24;
            bool overlap = false;
            if (layb.ok) {
                const BoxF other{static_cast<double>(layb.c0), static_cast<double>(layb.r0),
                                 static_cast<double>(layb.c0 + layb.w),
                                 static_cast<double>(layb.r0 + layb.h)};
                overlap = iou(rect, other) > kNeighborIouCut;
            }
            if (lay.valid[k] != (inside && !overlap)) {
                ok = false;
                fails << "nine-region validity mismatch; ";
            }
        }
    }

    // region stats and difference vectors
    for (int i = 0; i < 50 && ok; ++i) {
        Tape<double> t;
        auto fmap = testutil::random_input<double>(rng, 1, 3, 18, 18);
        Annotation gt{BoxF{12, 12, 12 + rng.uniform_int(2, 8), 12 + rng.uniform_int(2, 8)}, 0};
        auto lay = plan_nine_regions(gt, 2, 18, 18, {gt});
        if (!lay.ok) continue;
        auto patch = extract_nine_regions(t, t.constant(fmap), lay);
        auto stats = region_stats(t, patch);
        for (int k = 0; k < 9; ++k) {
            if (!lay.valid[k]) continue;
            double mu, mx, gr;
            oracle::region_stats_oracle(patch.regions[k].val(), mu, mx, gr);
            if (std::abs(stats.mean9.val()[k] - mu) > 1e-9 ||
                std::abs(stats.max9.val()[k] - mx) > 1e-9 ||
                std::abs(stats.grad9.val()[k] - gr) > 1e-6) {
                ok = false;
                fails << "region stats mismatch; ";
            }
        }
        auto diff = difference_vector(t, stats.mean9);
        for (int k = 0; k < 9; ++k) {
            const double expect = k == 4 ? stats.mean9.val()[4]
                                         : std::abs(stats.mean9.val()[k] - stats.mean9.val()[4]);
            if (std::abs(diff.val()[k] - expect) > 1e-9) {
                ok = false;
                fails << "difference vector mismatch; ";
            }
        }
    }

    // lcm loss vs double-loop oracle
    for (int i = 0; i < 50 && ok; ++i) {
        Tape<double> t;
        auto a = testutil::random_input<double>(rng, 1, 3, 6, 6);
        auto b = testutil::random_input<double>(rng, 1, 3, 6, 6);
        Tensor<double> mask({1, 1, 6, 6});
        for (std::int64_t j = 0; j < mask.numel(); ++j) mask[j] = rng.uniform() < 0.8 ? 1.0 : 0.0;
        const double got = lcm_loss(t, t.constant(a), t.constant(b), mask).val()[0];
        const double ref = oracle::lcm_loss_oracle(a, b, mask, kLcmEps);
        if (std::abs(got - ref) > 1e-6 * std::max(1.0, std::abs(ref))) {
            ok = false;
            fails << "lcm loss mismatch; ";
        }
    }

    // nms vs reference
    for (int i = 0; i < 50 && ok; ++i) {
        std::vector<Detection> many;
        for (int d = 0; d < 40; ++d) {
            const double x0 = rng.uniform(0, 40), y0 = rng.uniform(0, 40);
            many.push_back(Detection{BoxF{x0, y0, x0 + rng.uniform(3, 15), y0 + rng.uniform(3, 15)},
                                     rng.uniform(0.01, 1.0), 1});
        }
        auto got = nms(many, 0.4);
        auto ref = oracle::nms_reference(many, 0.4);
        if (got.size() != ref.size()) {
            ok = false;
            fails << "nms mismatch; ";
            break;
        }
        for (std::size_t j = 0; j < got.size(); ++j)
            if (got[j].score != ref[j].score) {
                ok = false;
                fails << "nms order mismatch; ";
            }
    }

    // greedy matching vs oracle
    for (int i = 0; i < 50 && ok; ++i) {
        std::vector<Annotation> gts;
        for (int g = 0; g < 5; ++g) {
            const double x0 = rng.uniform(0, 80), y0 = rng.uniform(0, 80);
            gts.push_back(Annotation{BoxF{x0, y0, x0 + rng.uniform(4, 16), y0 + rng.uniform(4, 16)}, 0});
        }
        std::vector<Detection> dets;
        for (int d = 0; d < 20; ++d) {
            const auto& g = gts[static_cast<std::size_t>(rng.uniform_int(0, 4))].box;
            const double jx = rng.uniform(-4, 4), jy = rng.uniform(-4, 4);
            dets.push_back(Detection{BoxF{g.x_min + jx, g.y_min + jy, g.x_max + jx, g.y_max + jy},
                                     rng.uniform(0.05, 1.0), 1});
        }
        auto gotr = match_detections(dets, gts, 0.5);
        auto refr = oracle::greedy_match_oracle(dets, gts, 0.5);
        if (gotr.tp != refr.tp || gotr.fp != refr.fp || gotr.fn != refr.fn) {
            ok = false;
            fails << "matching mismatch; ";
        }
    }

    // otsu vs exhaustive scan
    for (int i = 0; i < 50 && ok; ++i) {
        Tensor<float> field({12, 12});
        for (std::int64_t j = 0; j < field.numel(); ++j)
            field[j] = static_cast<float>(rng.uniform() < 0.3 ? rng.uniform(0.55, 0.95)
                                                              : rng.uniform(0.05, 0.4));
        if (otsu_threshold(field) != oracle::otsu_oracle(field)) {
            ok = false;
            fails << "otsu mismatch; ";
        }
    }

    // mask -> boxes vs flood fill
    for (int i = 0; i < 50 && ok; ++i) {
        Tensor<float> mm({16, 16});
        for (std::int64_t j = 0; j < mm.numel(); ++j) mm[j] = rng.uniform() < 0.2 ? 1.0f : 0.0f;
        auto got = mask_to_boxes(mm);
        auto ref = oracle::components_oracle(mm);
        if (got.size() != ref.size()) {
            ok = false;
            fails << "component count mismatch; ";
            break;
        }
        for (const auto& r : ref) {
            bool found = false;
            for (const auto& g : got)
                found = found || (g.box.x_min == r.x_min && g.box.y_min == r.y_min &&
                                  g.box.x_max == r.x_max && g.box.y_max == r.y_max);
            if (!found) {
                ok = false;
                fails << "component box mismatch; ";
            }
        }
    }

    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << "nine-region/stats/differences/lcm/nms/matching/otsu/components vs scalar oracles, "
       << ">=50 instances each, " << std::fixed << std::setprecision(1) << secs << "s";
    if (!ok) os << " [" << fails.str() << "]";
    report(3, ok && secs < 120.0, os.str());
}

// ---------------------------------------------------------------------------
// c4: confidence label partition sweep
// ---------------------------------------------------------------------------

void criterion4() {
    // direct transcription of the threshold rule
    auto transcription = [](double c) {
        if (c > 0.8) return Eq13Label::positive;
        if (c > 0.2 && c <= 0.8) return Eq13Label::negative;
        return Eq13Label::none;
    };
    int agree = 0;
    bool boundary_ok = true;
    for (int i = 0; i <= 100; ++i) {
        const double c = i / 100.0;
        if (confidence_label(c, 0.8, 0.2) == transcription(c)) ++agree;
    }
    boundary_ok = boundary_ok && confidence_label(0.8, 0.8, 0.2) == Eq13Label::negative;
    boundary_ok = boundary_ok && confidence_label(0.2, 0.8, 0.2) == Eq13Label::none;
    std::ostringstream os;
    os << agree << "/101 confidences agree with the transcription; 0.8 -> negative, 0.2 -> unused";
    report(4, agree == 101 && boundary_ok, os.str());
}

// ---------------------------------------------------------------------------
// c5: result-table F1 consistency from (P,R) pairs
// ---------------------------------------------------------------------------

void criterion5() {
    struct Row {
        const char* name;
        double p, r, f1;
    };
    // fifteen methods x three benchmarks, as printed
    static const Row rows[] = {
        {"retinanet/irstd1k", 81.28, 85.72, 83.72},  // printed F1 inconsistent, see below
        {"retinanet/nudt", 88.81, 79.52, 83.91},
        {"retinanet/nuaa", 90.18, 87.92, 89.04},
        {"defdetr/irstd1k", 73.19, 62.79, 67.59},
        {"defdetr/nudt", 79.97, 75.68, 77.77},
        {"defdetr/nuaa", 80.01, 71.20, 75.35},
        {"fcos/irstd1k", 85.91, 88.45, 87.16},
        {"fcos/nudt", 90.31, 89.89, 90.10},
        {"fcos/nuaa", 90.03, 84.32, 87.08},
        {"sinet/irstd1k", 80.18, 84.28, 82.17},
        {"sinet/nudt", 76.52, 81.37, 78.87},
        {"sinet/nuaa", 86.94, 88.20, 87.57},
        {"feder/irstd1k", 84.93, 89.29, 87.06},
        {"feder/nudt", 90.47, 85.75, 88.05},
        {"feder/nuaa", 90.33, 87.78, 89.04},
        {"pstnn/irstd1k", 61.17, 58.88, 60.01},
        {"pstnn/nudt", 66.67, 64.09, 65.35},
        {"pstnn/nuaa", 63.48, 72.51, 67.70},
        {"dngm/irstd1k", 70.01, 61.29, 65.36},
        {"dngm/nudt", 65.25, 63.72, 64.48},
        {"dngm/nuaa", 59.28, 62.19, 60.71},
        {"tslstipt/irstd1k", 69.69, 62.88, 66.11},
        {"tslstipt/nudt", 65.15, 67.78, 66.44},
        {"tslstipt/nuaa", 75.28, 77.31, 76.28},
        {"acm/irstd1k", 89.98, 88.68, 89.32},
        {"acm/nudt", 90.37, 91.25, 90.81},
        {"acm/nuaa", 89.72, 90.13, 89.92},
        {"isnet/irstd1k", 88.69, 83.87, 86.21},
        {"isnet/nudt", 90.08, 88.78, 89.43},
        {"isnet/nuaa", 92.81, 88.84, 90.78},
        {"dagnet/irstd1k", 89.26, 85.19, 87.18},
        {"dagnet/nudt", 89.95, 90.24, 90.09},
        {"dagnet/nuaa", 90.82, 86.69, 88.71},
        {"mshnet/irstd1k", 90.55, 89.43, 89.99},
        {"mshnet/nudt", 91.88, 92.84, 92.36},
        {"mshnet/nuaa", 93.49, 90.24, 91.84},
        {"irprunedet/irstd1k", 85.79, 86.88, 86.33},
        {"irprunedet/nudt", 87.52, 83.69, 85.56},
        {"irprunedet/nuaa", 86.58, 89.96, 88.24},
        {"ours/irstd1k", 92.89, 90.23, 91.54},
        {"ours/nudt", 92.08, 92.65, 92.37},
        {"ours/nuaa", 93.81, 92.84, 92.32},  // printed F1 inconsistent, see below
    };
    // Two printed entries are internally inconsistent with their own (P, R)
    // pair to far beyond rounding. For ours/nuaa the surrounding text (the
    // +1.48 margin over the runner-up at 91.84) confirms the true value is
    // 93.32, i.e. a digit slip; retinanet/irstd1k has no cross-check but its
    // pair gives 83.44. The formula gate asserts the recomputed values there.
    struct Fix {
        const char* name;
        double expected;
    };
    static const Fix fixes[] = {{"retinanet/irstd1k", 83.44}, {"ours/nuaa", 93.32}};

    int direct = 0, corrected = 0, failed = 0;
    double worst = 0;
    for (const auto& row : rows) {
        const double f = f1_from_pr(row.p, row.r);
        double expect = row.f1;
        bool is_fix = false;
        for (const auto& fix : fixes)
            if (std::strcmp(fix.name, row.name) == 0) {
                expect = fix.expected;
                is_fix = true;
            }
        const double err = std::abs(f - expect);
        worst = std::max(worst, err);
        if (err <= 0.01 + 1e-9)
            (is_fix ? corrected : direct)++;
        else
            ++failed;
    }
    std::ostringstream os;
    os << direct << "/40 printed rows reproduced within 0.01; " << corrected
       << "/2 misprinted rows match their recomputed values (slip confirmed by the stated "
          "+1.48 margin); max err "
       << std::setprecision(4) << worst;
    report(5, failed == 0 && direct == 40 && corrected == 2, os.str());
}

// ---------------------------------------------------------------------------
// c6 / c7: desk-scale training gates
// ---------------------------------------------------------------------------

std::string ensure_corpus(const std::string& root) {
    const std::string dir = root + "/corpus_s42_sim07";
    if (fs::exists(fs::path(dir) / "train.txt")) return dir;
    fs::create_directories(fs::path(dir) / "train");
    fs::create_directories(fs::path(dir) / "test");

    RunConfig cfg;
    cfg.seed = 42;
    cfg.synth.distractor_similarity = 0.7;
    cfg.synth.width = cfg.synth.height = cfg.image_size;
    cfg.synth.seed = cfg.seed;

    std::vector<std::string> ids;
    for (int i = 0; i < 500; ++i) {
        std::ostringstream os;
        os << "img_" << std::setw(5) << std::setfill('0') << i;
        ids.push_back(os.str());
    }
    auto [train_ids, test_ids] = dataset_split(ids, cfg.seed);
    std::set<std::string> tr(train_ids.begin(), train_ids.end());
    Rng rng(cfg.seed);
    for (const auto& id : ids) {
        auto scene = synth_scene(cfg.synth, rng);
        const std::string split = tr.count(id) ? "train" : "test";
        write_png_gray16(dir + "/" + split + "/" + id + ".png", scene.image);
        write_voc_xml(dir + "/" + split + "/" + id + ".xml", id + ".png", cfg.synth.width,
                      cfg.synth.height, scene.targets);
    }
    write_id_manifest(dir + "/train.txt", train_ids);
    write_id_manifest(dir + "/test.txt", test_ids);
    return dir;
}

struct RunOutcome {
    Prf1 metrics;
    double train_seconds = 0;
};

RunOutcome run_training(const std::string& corpus, std::uint64_t seed, double alpha, double beta) {
    RunConfig cfg;  // defaults: 30 epochs, batch 8, lr 1e-4
    cfg.seed = seed;
    cfg.data_dir = corpus;
    cfg.loss.alpha = alpha;
    cfg.loss.beta = beta;
    auto train_items = load_split(corpus, "train");
    auto test_items = load_split(corpus, "test");

    auto model = build_model(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    auto stats = train_model(model, cfg, train_items, nullptr, "", true);
    RunOutcome out;
    out.train_seconds = seconds_since(t0);
    if (stats.aborted) return out;
    model.backbone().fuse();
    out.metrics = evaluate_model(model, test_items, cfg).metrics;
    return out;
}

void criterion6(const std::string& root) {
    const std::string corpus = ensure_corpus(root);
    auto outcome = run_training(corpus, 42, 0.1, 0.05);
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << "held-out F1 " << outcome.metrics.f1
       << " (need >= 0.80), P " << outcome.metrics.precision << ", R " << outcome.metrics.recall
       << ", training " << std::setprecision(1) << outcome.train_seconds / 60.0
       << " min (budget 60 min on 8 cores; this host has " << compute_threads() << " threads)";
    report(6, outcome.metrics.f1 >= 0.80 && outcome.train_seconds < 3600.0, os.str());
}

void criterion7(const std::string& root) {
    const std::string corpus = ensure_corpus(root);
    std::vector<double> with_cadd, without;
    std::ostringstream detail;
    detail << std::fixed << std::setprecision(4);
    for (std::uint64_t seed : {42ull, 43ull, 44ull}) {
        auto on = run_training(corpus, seed, 0.1, 0.05);
        auto off = run_training(corpus, seed, 0.0, 0.0);
        with_cadd.push_back(on.metrics.precision);
        without.push_back(off.metrics.precision);
        detail << "seed " << seed << ": P " << on.metrics.precision << " vs " << off.metrics.precision
               << "; ";
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    const double m_on = median(with_cadd), m_off = median(without);
    detail << "median " << m_on << " vs " << m_off << " (need on >= off - 0.02)";
    report(7, m_on >= m_off - 0.02, detail.str());
}

// ---------------------------------------------------------------------------
// c8: inference purity
// ---------------------------------------------------------------------------

void criterion8(const std::string& root) {
    const std::string corpus = ensure_corpus(root);
    auto items = load_split(corpus, "test");  // the held-out 100 images
    RunConfig cfg;
    cfg.seed = 42;
    auto model = build_model(cfg);
    model.backbone().fuse();
    CaddCounters::reset();
    int images = 0;
    for (const auto& item : items) {
        (void)detect_image(model, item.image, cfg);
        ++images;
    }
    const auto patches = CaddCounters::nine_region_patches().load();
    const auto samples = CaddCounters::contrastive_samples().load();
    std::ostringstream os;
    os << images << " images inferred; " << patches << " nine-region patches and " << samples
       << " contrastive samples constructed (need 0 and 0)";
    report(8, images >= 100 && patches == 0 && samples == 0, os.str());
}

// ---------------------------------------------------------------------------
// c9: conversion round trip
// ---------------------------------------------------------------------------

void criterion9() {
    Rng rng(99009);
    const std::string dir = (fs::temp_directory_path() / "ccdnet_c9").string();
    fs::create_directories(dir);
    int exact = 0;
    for (int trial = 0; trial < 200; ++trial) {
        // disjoint rectangles with 2px separation so components stay distinct
        std::vector<Annotation> boxes;
        const int cols = rng.uniform_int(1, 4);
        for (int k = 0; k < cols; ++k) {
            const int x0 = 2 + 14 * k, y0 = rng.uniform_int(2, 30);
            boxes.push_back(Annotation{BoxF{static_cast<double>(x0), static_cast<double>(y0),
                                            static_cast<double>(x0 + rng.uniform_int(2, 9)),
                                            static_cast<double>(y0 + rng.uniform_int(2, 9))},
                                       0});
        }
        auto mask = render_boxes<float>(boxes, 48, 64);
        auto found = mask_to_boxes(mask);
        const std::string path = dir + "/case.xml";
        write_voc_xml(path, "case.png", 64, 48, found);
        auto back = read_voc_xml(path).annos;
        bool all = back.size() == boxes.size();
        for (const auto& b : boxes) {
            bool hit = false;
            for (const auto& r : back)
                hit = hit || (r.box.x_min == b.box.x_min && r.box.y_min == b.box.y_min &&
                              r.box.x_max == b.box.x_max && r.box.y_max == b.box.y_max);
            all = all && hit;
        }
        if (all) ++exact;
    }
    std::ostringstream os;
    os << exact << "/200 rendered-rectangle cases survive mask->boxes->xml->boxes exactly";
    report(9, exact == 200, os.str());
}

}  // namespace

int main(int argc, char** argv) {
    set_compute_threads(2);
    std::string which = "all";
    std::string data_root = "/tmp/ccdnet_acceptance";
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--data-root" && i + 1 < argc)
            data_root = argv[++i];
        else
            which = arg;
    }
    fs::create_directories(data_root);

    auto want = [&](const char* id) { return which == "all" || which == id; };
    try {
        if (want("c1")) criterion1();
        if (want("c2")) criterion2();
        if (want("c3")) criterion3();
        if (want("c4")) criterion4();
        if (want("c5")) criterion5();
        if (want("c6")) criterion6(data_root);
        if (want("c7")) criterion7(data_root);
        if (want("c8")) criterion8(data_root);
        if (want("c9")) criterion9();
    } catch (const std::exception& e) {
        std::cerr << "acceptance run failed with exception: " << e.what() << "\n";
        return 1;
    }
    std::cout << g_pass << " passed, " << g_fail << " failed" << std::endl;
    return g_fail == 0 ? 0 : 1;
}
