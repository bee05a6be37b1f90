#include "pointseg/budget.hpp"

#include <cmath>

#include "pointseg/errors.hpp"

namespace pointseg {

LabelType label_type_from_string(const std::string& name) {
    if (name == "full") return LabelType::Full;
    if (name == "box") return LabelType::Box;
    if (name == "point") return LabelType::Point;
    if (name == "image_level") return LabelType::ImageLevel;
    if (name == "ten_points") return LabelType::TenPoints;
    if (name == "unlabeled") return LabelType::Unlabeled;
    throw ConfigError("unknown label type: " + name);
}

std::string to_string(LabelType t) {
    switch (t) {
        case LabelType::Full: return "full";
        case LabelType::Box: return "box";
        case LabelType::Point: return "point";
        case LabelType::ImageLevel: return "image_level";
        case LabelType::TenPoints: return "ten_points";
        case LabelType::Unlabeled: return "unlabeled";
    }
    throw ConfigError("unknown label type enum");
}

double per_image_cost(const BudgetModel& m, LabelType type) {
    const double check = m.classes_checked_per_image * m.sec_per_class_check;
    switch (type) {
        case LabelType::Full:
            return check + m.instances_per_image * m.sec_per_mask;
        case LabelType::Box:
            return check + m.instances_per_image * m.sec_per_box;
        case LabelType::Point:
            // First point of each category present, remaining instances at
            // the extra-point rate.
            return check + m.categories_per_image * m.sec_first_point +
                   (m.instances_per_image - m.categories_per_image) * m.sec_extra_point;
        case LabelType::ImageLevel:
            return m.total_classes * m.sec_per_class_check;
        case LabelType::TenPoints:
            return check + m.instances_per_image *
                               (m.sec_per_box + 10.0 * m.sec_per_point_in_10pt);
        case LabelType::Unlabeled:
            return 0.0;
    }
    throw ConfigError("unknown label type enum");
}

double mix_budget_days(const BudgetModel& model, const LabelMix& mix) {
    double fraction_sum = 0.0;
    for (const auto& [type, fraction] : mix.parts) fraction_sum += fraction;
    if (std::abs(fraction_sum - 1.0) > 1e-9)
        throw ConfigError("label mix fractions sum to " + std::to_string(fraction_sum) +
                          ", expected 1");
    double seconds = 0.0;
    for (const auto& [type, fraction] : mix.parts)
        seconds += fraction * static_cast<double>(mix.n_images) * per_image_cost(model, type);
    return seconds / 86400.0;
}

}  // namespace pointseg
