#include "pointseg/pseudo.hpp"

#include <algorithm>
#include <cmath>

#include "pointseg/errors.hpp"

namespace pointseg {

std::vector<InstanceAnnotation> PseudoLabelSet::flatten() const {
    std::vector<InstanceAnnotation> out;
    for (const auto& [iid, v] : by_image) out.insert(out.end(), v.begin(), v.end());
    return out;
}

std::pair<int, Proposal> select_level(const PointLabel& point,
                                      const std::vector<ProposalGrid>& grids,
                                      int image_h, int image_w) {
    if (grids.empty()) throw InputError("select_level: no proposal grids");
    int best_level = -1;
    double best_score = -1.0;
    int best_row = 0, best_col = 0;
    for (size_t i = 0; i < grids.size(); ++i) {
        const ProposalGrid& g = grids[i];
        const int s = g.scores.dim(1);
        int row = static_cast<int>(std::floor(static_cast<double>(point.y) * s / image_h));
        int col = static_cast<int>(std::floor(static_cast<double>(point.x) * s / image_w));
        row = std::clamp(row, 0, s - 1);
        col = std::clamp(col, 0, s - 1);
        const double score = g.scores(point.category - 1, row, col);
        if (score > best_score) {  // strict: ties keep the finer level
            best_score = score;
            best_level = static_cast<int>(i);
            best_row = row;
            best_col = col;
        }
    }
    const ProposalGrid& g = grids[static_cast<size_t>(best_level)];
    Proposal p;
    p.level = g.level;
    p.row = best_row;
    p.col = best_col;
    p.category = point.category;
    p.score = best_score;
    p.kernel.resize(static_cast<size_t>(g.kernels.dim(0)));
    for (int e = 0; e < g.kernels.dim(0); ++e)
        p.kernel[static_cast<size_t>(e)] = g.kernels(e, best_row, best_col);
    return {g.level, p};
}

PseudoLabelSet generate_point_guided(
    const SegNet& net,
    const std::vector<std::pair<const ImageRecord*, std::vector<PointLabel>>>& images) {
    PseudoLabelSet out;
    const double thr = net.config().binarize_threshold;
    for (const auto& [rec, points] : images) {
        std::vector<InstanceAnnotation>& anns = out.by_image[rec->id];
        if (points.empty()) continue;
        const ForwardResult fw = net.forward(rec->pixels);
        int64_t next_id = 1;
        for (const PointLabel& pt : points) {
            if (pt.x < 0 || pt.x >= rec->width || pt.y < 0 || pt.y >= rec->height)
                throw InputError("point outside image bounds");
            const auto [level, prop] = select_level(pt, fw.grids, rec->height, rec->width);
            const Tensor soft = mask_from_kernel(prop.kernel, fw.mask_feature);
            Tensor up({1, soft.dim(0), soft.dim(1)});
            std::copy(soft.data.begin(), soft.data.end(), up.data.begin());
            up = resize_bilinear(up, rec->height, rec->width);
            BinaryMask mask(rec->height, rec->width);
            for (int y = 0; y < rec->height; ++y)
                for (int x = 0; x < rec->width; ++x)
                    mask.at(y, x) = up(0, y, x) >= thr ? 1 : 0;
            InstanceAnnotation ann;
            if (mask.empty_mask()) {
                ann.id = next_id++;
                ann.image_id = rec->id;
                ann.category = pt.category;
                ann.mask = encode_rle(mask);
                ann.empty_flag = true;
            } else {
                ann = make_annotation(next_id++, rec->id, pt.category, mask);
            }
            ann.score = prop.score;
            ann.source_level = level;
            ann.guiding_point = pt;
            anns.push_back(std::move(ann));
        }
    }
    return out;
}

PseudoLabelSet generate_threshold(const SegNet& net,
                                  const std::vector<const ImageRecord*>& images, double tau) {
    if (tau < 0.0 || tau > 1.0) throw ConfigError("generate_threshold: tau outside [0,1]");
    PseudoLabelSet out;
    for (const ImageRecord* rec : images)
        out.by_image[rec->id] = net.infer(rec->pixels, rec->id, tau);
    return out;
}

PseudoLabelSet filter_by_image_labels(const PseudoLabelSet& pseudo,
                                      const std::map<int64_t, std::set<int>>& image_categories) {
    PseudoLabelSet out;
    out.missing_image_warnings = pseudo.missing_image_warnings;
    for (const auto& [iid, anns] : pseudo.by_image) {
        auto it = image_categories.find(iid);
        std::vector<InstanceAnnotation>& kept = out.by_image[iid];
        if (it == image_categories.end()) {
            ++out.missing_image_warnings;
            continue;  // unknown image: treated as an empty category set
        }
        for (const auto& a : anns)
            if (it->second.count(a.category)) kept.push_back(a);
    }
    return out;
}

APReport pseudo_quality(const PseudoLabelSet& pseudo, const Dataset& gt_dataset) {
    std::set<int64_t> gt_ids;
    for (const auto& im : gt_dataset.images) gt_ids.insert(im.id);
    bool overlap = false;
    for (const auto& [iid, anns] : pseudo.by_image)
        if (gt_ids.count(iid)) {
            overlap = true;
            break;
        }
    if (!overlap)
        throw ConfigError("pseudo_quality: pseudo and ground-truth image sets do not overlap");

    std::vector<InstanceAnnotation> preds;
    int64_t next_id = 1;
    for (const auto& [iid, anns] : pseudo.by_image)
        for (const auto& a : anns) {
            if (a.empty_flag) continue;
            InstanceAnnotation p = a;
            p.id = next_id++;
            preds.push_back(std::move(p));
        }
    std::vector<InstanceAnnotation> gts;
    for (const auto& a : gt_dataset.annotations)
        if (pseudo.by_image.count(a.image_id)) gts.push_back(a);
    return evaluate(preds, gts);
}

}  // namespace pointseg
