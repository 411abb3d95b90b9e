#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "ccdnet/data/annotation.hpp"

namespace ccdnet {

enum class MatchCriterion {
    iou,     // IoU >= threshold
    center,  // detection center inside the ground-truth box
};

struct MatchedPair {
    int det_index = -1;
    int gt_index = -1;
    double iou_value = 0;
};

struct MatchReport {
    int tp = 0, fp = 0, fn = 0;
    std::vector<MatchedPair> pairs;

    void merge(const MatchReport& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
    }
};

/// Greedy one-to-one matching in descending score order: a detection claims
/// the unmatched ground truth of maximal IoU if it passes the criterion.
inline MatchReport match_detections(const std::vector<Detection>& dets,
                                    const std::vector<Annotation>& gts, double iou_thresh,
                                    MatchCriterion crit = MatchCriterion::iou) {
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return dets[static_cast<std::size_t>(a)].score >
                                                dets[static_cast<std::size_t>(b)].score; });
    std::vector<char> gt_used(gts.size(), 0);
    MatchReport rep;
    for (int di : order) {
        const auto& d = dets[static_cast<std::size_t>(di)];
        int best = -1;
        double best_iou = 0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (gt_used[g]) continue;
            const double v = iou(d.box, gts[g].box);
            const bool acceptable = crit == MatchCriterion::iou
                                        ? v >= iou_thresh
                                        : gts[g].box.contains(d.box.cx(), d.box.cy());
            if (!acceptable) continue;
            if (v > best_iou || best < 0) {
                best_iou = v;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) {
            gt_used[static_cast<std::size_t>(best)] = 1;
            ++rep.tp;
            rep.pairs.push_back(MatchedPair{di, best, best_iou});
        } else {
            ++rep.fp;
        }
    }
    rep.fn = static_cast<int>(gts.size()) - rep.tp;
    return rep;
}

struct Prf1 {
    double precision = 0, recall = 0, f1 = 0;
};

/// P = TP/(TP+FP), R = TP/(TP+FN), F1 = 2PR/(P+R); 0/0 counts as 0.
inline Prf1 prf1(const MatchReport& rep) {
    Prf1 out;
    out.precision = (rep.tp + rep.fp) > 0 ? static_cast<double>(rep.tp) / (rep.tp + rep.fp) : 0.0;
    out.recall = (rep.tp + rep.fn) > 0 ? static_cast<double>(rep.tp) / (rep.tp + rep.fn) : 0.0;
    const double d = out.precision + out.recall;
    out.f1 = d > 0 ? 2.0 * out.precision * out.recall / d : 0.0;
    return out;
}

/// F1 from percentage-scale precision/recall values, as printed in result
/// tables.
inline double f1_from_pr(double p, double r) {
    const double d = p + r;
    return d > 0 ? 2.0 * p * r / d : 0.0;
}

}  // namespace ccdnet
