#pragma once

#include <string>
#include <vector>

namespace pointseg {

enum class LabelType { Full, Box, Point, ImageLevel, TenPoints, Unlabeled };

LabelType label_type_from_string(const std::string& name);
std::string to_string(LabelType t);

// Per-action annotation-time constants plus COCO-trainset statistics.
struct BudgetModel {
    double sec_per_class_check = 1.0;
    double sec_per_mask = 79.0;
    double sec_per_box = 7.0;
    double sec_first_point = 2.4;
    double sec_extra_point = 0.9;
    double sec_per_point_in_10pt = 0.9;
    double classes_checked_per_image = 77.1;
    double instances_per_image = 7.2;
    double categories_per_image = 2.9;
    int total_classes = 80;
};

struct LabelMix {
    std::vector<std::pair<LabelType, double>> parts;  // (type, fraction)
    int64_t n_images = 0;
};

double per_image_cost(const BudgetModel& model, LabelType type);
double mix_budget_days(const BudgetModel& model, const LabelMix& mix);

}  // namespace pointseg
