#pragma once

#include <map>
#include <vector>

#include "pointseg/annotations.hpp"

namespace pointseg {

double mask_iou(const BinaryMask& a, const BinaryMask& b);

struct APReport {
    double ap = 0.0;    // mean over IoU 0.50:0.05:0.95
    double ap50 = 0.0;
    double ap75 = 0.0;
    double ar100 = 0.0;
    std::map<int, double> per_category_ap;
};

// COCO-style greedy matching with 101-point interpolated AP. Predictions
// must carry scores; ties break by ascending annotation id.
APReport evaluate(const std::vector<InstanceAnnotation>& predictions,
                  const std::vector<InstanceAnnotation>& ground_truth,
                  const std::vector<double>& iou_thresholds = {},
                  int max_dets = 100);

std::vector<double> default_iou_thresholds();

}  // namespace pointseg
