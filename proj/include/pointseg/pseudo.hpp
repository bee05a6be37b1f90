#pragma once

#include <map>
#include <set>
#include <vector>

#include "pointseg/eval.hpp"
#include "pointseg/segnet.hpp"

namespace pointseg {

struct GenerationMode {
    enum class Kind { Threshold, ImageLevelFilter, PointGuided };
    Kind kind = Kind::PointGuided;
    double tau = 0.3;  // unused by PointGuided

    static GenerationMode threshold(double tau) { return {Kind::Threshold, tau}; }
    static GenerationMode image_level_filter(double tau) { return {Kind::ImageLevelFilter, tau}; }
    static GenerationMode point_guided() { return {Kind::PointGuided, 0.0}; }
};

struct PseudoLabelSet {
    std::map<int64_t, std::vector<InstanceAnnotation>> by_image;
    int missing_image_warnings = 0;  // images absent from a filter map

    size_t total() const {
        size_t n = 0;
        for (const auto& [id, v] : by_image) n += v.size();
        return n;
    }
    std::vector<InstanceAnnotation> flatten() const;
};

// Rescales the point onto every level's grid, reads the category score, and
// returns the level with the maximum score (ties toward finer levels).
std::pair<int, Proposal> select_level(const PointLabel& point,
                                      const std::vector<ProposalGrid>& grids,
                                      int image_h, int image_w);

// One annotation per point, no confidence threshold. Empty binarized masks
// are kept as flagged sentinels so the per-point count invariant holds.
PseudoLabelSet generate_point_guided(
    const SegNet& net,
    const std::vector<std::pair<const ImageRecord*, std::vector<PointLabel>>>& images);

PseudoLabelSet generate_threshold(const SegNet& net,
                                  const std::vector<const ImageRecord*>& images, double tau);

PseudoLabelSet filter_by_image_labels(const PseudoLabelSet& pseudo,
                                      const std::map<int64_t, std::set<int>>& image_categories);

// AP/AP50/AR100 of pseudo labels against ground truth on shared images.
APReport pseudo_quality(const PseudoLabelSet& pseudo, const Dataset& gt_dataset);

}  // namespace pointseg
