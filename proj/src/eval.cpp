#include "pointseg/eval.hpp"

#include <algorithm>
#include <set>

#include "pointseg/errors.hpp"

namespace pointseg {

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError("mask_iou: shape mismatch");
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const bool av = a.data[i] != 0, bv = b.data[i] != 0;
        inter += (av && bv);
        uni += (av || bv);
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> default_iou_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
    return t;
}

namespace {

struct Det {
    int64_t id;
    int64_t image_id;
    double score;
    int index;  // into predictions
};

double interp101_ap(const std::vector<double>& precision, const std::vector<double>& recall) {
    double total = 0.0;
    for (int k = 0; k <= 100; ++k) {
        const double r = k / 100.0;
        double best = 0.0;
        for (size_t i = 0; i < recall.size(); ++i)
            if (recall[i] >= r) best = std::max(best, precision[i]);
        total += best;
    }
    return total / 101.0;
}

}  // namespace

APReport evaluate(const std::vector<InstanceAnnotation>& predictions,
                  const std::vector<InstanceAnnotation>& ground_truth,
                  const std::vector<double>& iou_thresholds, int max_dets) {
    const std::vector<double> thresholds =
        iou_thresholds.empty() ? default_iou_thresholds() : iou_thresholds;

    std::vector<BinaryMask> pred_masks(predictions.size()), gt_masks(ground_truth.size());
    for (size_t i = 0; i < predictions.size(); ++i) pred_masks[i] = predictions[i].decode();
    for (size_t i = 0; i < ground_truth.size(); ++i) gt_masks[i] = ground_truth[i].decode();

    std::set<int> categories;
    for (const auto& g : ground_truth) categories.insert(g.category);

    APReport report;
    if (categories.empty()) return report;

    double ap_sum = 0.0, ap50_sum = 0.0, ap75_sum = 0.0, ar_sum = 0.0;
    for (int cat : categories) {
        // Per-image prediction lists, capped at max_dets by score.
        std::vector<Det> dets;
        std::map<int64_t, std::vector<Det>> by_image;
        for (size_t i = 0; i < predictions.size(); ++i)
            if (predictions[i].category == cat)
                by_image[predictions[i].image_id].push_back(
                    {predictions[i].id, predictions[i].image_id,
                     predictions[i].score.value_or(1.0), static_cast<int>(i)});
        for (auto& [iid, v] : by_image) {
            std::sort(v.begin(), v.end(), [](const Det& a, const Det& b) {
                return a.score != b.score ? a.score > b.score : a.id < b.id;
            });
            if (static_cast<int>(v.size()) > max_dets) v.resize(static_cast<size_t>(max_dets));
            dets.insert(dets.end(), v.begin(), v.end());
        }
        std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
            return a.score != b.score ? a.score > b.score : a.id < b.id;
        });

        // GT indices per image for this category, ordered by id.
        std::map<int64_t, std::vector<int>> gts;
        int n_gt = 0;
        for (size_t i = 0; i < ground_truth.size(); ++i)
            if (ground_truth[i].category == cat) {
                gts[ground_truth[i].image_id].push_back(static_cast<int>(i));
                ++n_gt;
            }
        for (auto& [iid, v] : gts)
            std::sort(v.begin(), v.end(), [&](int a, int b) {
                return ground_truth[static_cast<size_t>(a)].id <
                       ground_truth[static_cast<size_t>(b)].id;
            });

        // IoU of every (det, gt) pair within an image, computed once.
        std::map<std::pair<int, int>, double> iou_cache;
        auto pair_iou = [&](int det_idx, int gt_idx) {
            const auto key = std::make_pair(det_idx, gt_idx);
            auto it = iou_cache.find(key);
            if (it != iou_cache.end()) return it->second;
            const double v = mask_iou(pred_masks[static_cast<size_t>(det_idx)],
                                      gt_masks[static_cast<size_t>(gt_idx)]);
            iou_cache[key] = v;
            return v;
        };

        double cat_ap = 0.0, cat_recall = 0.0;
        for (size_t ti = 0; ti < thresholds.size(); ++ti) {
            const double thr = thresholds[ti];
            std::set<int> matched;
            std::vector<double> precision, recall;
            int tp = 0, fp = 0;
            for (const Det& d : dets) {
                auto git = gts.find(d.image_id);
                int best_gt = -1;
                double best_iou = 0.0;
                if (git != gts.end()) {
                    // Highest-IoU unmatched GT at or above the threshold;
                    // ties keep the earliest (lowest id).
                    for (int gi : git->second) {
                        if (matched.count(gi)) continue;
                        const double v = pair_iou(d.index, gi);
                        if (v >= thr && v > best_iou) {
                            best_iou = v;
                            best_gt = gi;
                        }
                    }
                }
                if (best_gt >= 0) {
                    matched.insert(best_gt);
                    ++tp;
                } else {
                    ++fp;
                }
                precision.push_back(static_cast<double>(tp) / (tp + fp));
                recall.push_back(n_gt > 0 ? static_cast<double>(tp) / n_gt : 0.0);
            }
            const double ap_t = n_gt > 0 && !dets.empty() ? interp101_ap(precision, recall) : 0.0;
            cat_ap += ap_t;
            cat_recall += n_gt > 0 ? static_cast<double>(matched.size()) / n_gt : 0.0;
            if (thr == 0.5) ap50_sum += ap_t;
            if (thr == 0.75) ap75_sum += ap_t;
        }
        cat_ap /= static_cast<double>(thresholds.size());
        cat_recall /= static_cast<double>(thresholds.size());
        report.per_category_ap[cat] = cat_ap;
        ap_sum += cat_ap;
        ar_sum += cat_recall;
    }
    const double n_cat = static_cast<double>(categories.size());
    report.ap = ap_sum / n_cat;
    report.ap50 = ap50_sum / n_cat;
    report.ap75 = ap75_sum / n_cat;
    report.ar100 = ar_sum / n_cat;
    return report;
}

}  // namespace pointseg
