#pragma once

// Test-only oracles, kept independent of the implementation paths they
// check: plain loops, no shared helpers beyond basic types.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "pointseg/annotations.hpp"
#include "pointseg/segnet.hpp"

namespace oracle {

inline double mask_iou(const pointseg::BinaryMask& a, const pointseg::BinaryMask& b) {
    long inter = 0, uni = 0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            const bool av = a.at(y, x), bv = b.at(y, x);
            if (av && bv) ++inter;
            if (av || bv) ++uni;
        }
    return uni == 0 ? 0.0 : double(inter) / double(uni);
}

// Greedy mask NMS over score-sorted binarized masks.
inline int nms_survivor_count(std::vector<std::pair<double, pointseg::BinaryMask>> scored,
                              double iou_thr) {
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<const pointseg::BinaryMask*> kept;
    for (const auto& [score, mask] : scored) {
        bool dup = false;
        for (const auto* k : kept)
            if (oracle::mask_iou(mask, *k) >= iou_thr) {
                dup = true;
                break;
            }
        if (!dup) kept.push_back(&mask);
    }
    return static_cast<int>(kept.size());
}

// Exhaustive argmax over per-level scores at the rescaled point cell.
inline int argmax_level(const pointseg::PointLabel& pt,
                        const std::vector<pointseg::ProposalGrid>& grids, int h, int w) {
    int best = -1;
    double best_score = -1.0;
    for (size_t i = 0; i < grids.size(); ++i) {
        const int s = grids[i].scores.dim(1);
        int row = static_cast<int>(std::floor(double(pt.y) * s / h));
        int col = static_cast<int>(std::floor(double(pt.x) * s / w));
        row = std::clamp(row, 0, s - 1);
        col = std::clamp(col, 0, s - 1);
        const double sc = grids[i].scores(pt.category - 1, row, col);
        if (sc > best_score) {
            best_score = sc;
            best = grids[i].level;
        }
    }
    return best;
}

// COCO-style greedy matcher + 101-point AP, written as straight loops.
struct BruteResult {
    double ap = 0.0, ap50 = 0.0, ar = 0.0;
};

inline BruteResult brute_evaluate(const std::vector<pointseg::InstanceAnnotation>& preds,
                                  const std::vector<pointseg::InstanceAnnotation>& gts,
                                  const std::vector<double>& thresholds, int max_dets = 100) {
    std::vector<pointseg::BinaryMask> pm, gm;
    for (const auto& p : preds) pm.push_back(p.decode());
    for (const auto& g : gts) gm.push_back(g.decode());

    std::set<int> cats;
    for (const auto& g : gts) cats.insert(g.category);
    if (cats.empty()) return {};

    double ap_sum = 0, ap50_sum = 0, ar_sum = 0;
    for (int cat : cats) {
        std::vector<int> dets;
        {
            std::map<long long, std::vector<int>> per_img;
            for (size_t i = 0; i < preds.size(); ++i)
                if (preds[i].category == cat)
                    per_img[preds[i].image_id].push_back(static_cast<int>(i));
            for (auto& [iid, v] : per_img) {
                std::sort(v.begin(), v.end(), [&](int a, int b) {
                    const double sa = preds[a].score.value_or(1.0);
                    const double sb = preds[b].score.value_or(1.0);
                    return sa != sb ? sa > sb : preds[a].id < preds[b].id;
                });
                if (static_cast<int>(v.size()) > max_dets) v.resize(max_dets);
                dets.insert(dets.end(), v.begin(), v.end());
            }
            std::sort(dets.begin(), dets.end(), [&](int a, int b) {
                const double sa = preds[a].score.value_or(1.0);
                const double sb = preds[b].score.value_or(1.0);
                return sa != sb ? sa > sb : preds[a].id < preds[b].id;
            });
        }
        int n_gt = 0;
        for (const auto& g : gts)
            if (g.category == cat) ++n_gt;

        double cat_ap = 0, cat_rec = 0;
        for (double thr : thresholds) {
            std::vector<bool> used(gts.size(), false);
            int tp = 0, fp = 0;
            std::vector<double> prec, rec;
            for (int di : dets) {
                int best = -1;
                double best_iou = 0;
                for (size_t gi = 0; gi < gts.size(); ++gi) {
                    if (gts[gi].category != cat || gts[gi].image_id != preds[di].image_id)
                        continue;
                    if (used[gi]) continue;
                    const double v = oracle::mask_iou(pm[di], gm[gi]);
                    if (v >= thr && v > best_iou) {
                        // scan in id order so equal IoUs keep the lowest id
                        best_iou = v;
                        best = static_cast<int>(gi);
                    }
                }
                if (best >= 0) {
                    used[best] = true;
                    ++tp;
                } else {
                    ++fp;
                }
                prec.push_back(double(tp) / (tp + fp));
                rec.push_back(n_gt ? double(tp) / n_gt : 0.0);
            }
            double ap_t = 0;
            if (n_gt > 0 && !dets.empty()) {
                for (int k = 0; k <= 100; ++k) {
                    double best_p = 0;
                    for (size_t i = 0; i < rec.size(); ++i)
                        if (rec[i] >= k / 100.0) best_p = std::max(best_p, prec[i]);
                    ap_t += best_p;
                }
                ap_t /= 101.0;
            }
            cat_ap += ap_t;
            cat_rec += n_gt ? double(tp) / n_gt : 0.0;
            if (thr == 0.5) ap50_sum += ap_t;
        }
        ap_sum += cat_ap / thresholds.size();
        ar_sum += cat_rec / thresholds.size();
    }
    BruteResult r;
    r.ap = ap_sum / cats.size();
    r.ap50 = ap50_sum / cats.size();
    r.ar = ar_sum / cats.size();
    return r;
}

// Central finite differences against analytic parameter gradients.
// Returns the worst relative error over `n_checks` randomly probed values.
template <typename LossFn>
double max_grad_rel_err(pointseg::ParamStore& params, const std::vector<pointseg::Tensor>& grads,
                        LossFn loss, int n_checks, pointseg::Rng& rng, double h = 1e-5) {
    double worst = 0.0;
    for (int k = 0; k < n_checks; ++k) {
        const int pi = static_cast<int>(rng.uniform_int(0, static_cast<int>(params.count()) - 1));
        auto& p = params[pi];
        const int vi = static_cast<int>(rng.uniform_int(0, static_cast<int>(p.value.size()) - 1));
        const double orig = p.value.data[vi];
        p.value.data[vi] = orig + h;
        const double lp = loss();
        p.value.data[vi] = orig - h;
        const double lm = loss();
        p.value.data[vi] = orig;
        const double numeric = (lp - lm) / (2 * h);
        const double analytic = grads[pi].data[vi];
        const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
        worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
    return worst;
}

}  // namespace oracle
