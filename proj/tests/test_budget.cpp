#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pointseg/budget.hpp"
#include "pointseg/errors.hpp"

using namespace pointseg;

namespace {
const int64_t kCocoTrain = 118287;

double days_for(std::vector<std::pair<LabelType, double>> parts, int64_t n = kCocoTrain) {
    return mix_budget_days(BudgetModel{}, LabelMix{std::move(parts), n});
}
}  // namespace

TEST_CASE("per-image costs reproduce the published constants") {
    const BudgetModel m;
    CHECK(std::abs(per_image_cost(m, LabelType::Full) - 645.9) < 0.05);
    CHECK(std::abs(per_image_cost(m, LabelType::Box) - 127.5) < 0.05);
    CHECK(std::abs(per_image_cost(m, LabelType::Point) - 87.9) < 0.05);
    CHECK(std::abs(per_image_cost(m, LabelType::ImageLevel) - 80.0) < 0.05);
    CHECK(std::abs(per_image_cost(m, LabelType::TenPoints) - 192.3) < 0.05);
    CHECK(per_image_cost(m, LabelType::Unlabeled) == 0.0);
}

TEST_CASE("mix budgets reproduce the published day totals") {
    CHECK(std::abs(days_for({{LabelType::Full, 1.0}}) - 884.2) < 0.5);
    CHECK(std::abs(days_for({{LabelType::Full, 0.05}, {LabelType::Point, 0.95}}) - 158.5) < 0.5);
    CHECK(std::abs(days_for({{LabelType::Box, 1.0}}) - 174.5) < 0.5);
    CHECK(std::abs(days_for({{LabelType::Full, 0.30}, {LabelType::Point, 0.70}}) - 349.5) < 0.5);
    CHECK(std::abs(days_for({{LabelType::Full, 0.50}, {LabelType::Point, 0.50}}) - 502.3) < 0.5);
    CHECK(std::abs(days_for({{LabelType::Point, 1.0}}) - 120.3) < 0.5);
    CHECK(std::abs(days_for({{LabelType::ImageLevel, 1.0}}) - 109.5) < 0.5);

    // 10%F + 90%P recomputed from the raw constants as an independent check.
    const double full = 77.1 * 1.0 + 7.2 * 79.0;
    const double point = 77.1 * 1.0 + 2.9 * 2.4 + (7.2 - 2.9) * 0.9;
    const double expect = (0.10 * full + 0.90 * point) * kCocoTrain / 86400.0;
    const double got = days_for({{LabelType::Full, 0.10}, {LabelType::Point, 0.90}});
    CHECK(got == doctest::Approx(expect).epsilon(1e-12));
    CHECK(std::abs(got - 196.7) < 0.5);

    // The 10-points mix: the published table rounds to 263.2, the raw
    // constants give 263.27; both sit inside the 0.5-day tolerance.
    const double ten = days_for({{LabelType::TenPoints, 1.0}});
    CHECK(std::abs(ten - 263.2) < 0.5);
}

TEST_CASE("mix validation") {
    CHECK_THROWS_AS(days_for({{LabelType::Full, 0.6}, {LabelType::Point, 0.3}}), ConfigError);
    CHECK_THROWS_AS(label_type_from_string("scribble"), ConfigError);
    CHECK(label_type_from_string("ten_points") == LabelType::TenPoints);
    CHECK(to_string(LabelType::ImageLevel) == "image_level");

    // The unlabeled share costs nothing.
    const double semi = days_for({{LabelType::Full, 0.05}, {LabelType::Unlabeled, 0.95}});
    const double full5 = days_for({{LabelType::Full, 0.05}, {LabelType::Point, 0.0},
                                   {LabelType::Unlabeled, 0.95}});
    CHECK(semi == doctest::Approx(full5));
}

TEST_CASE("budget properties: linearity and monotonicity") {
    const std::vector<std::pair<LabelType, double>> mix{{LabelType::Full, 0.25},
                                                        {LabelType::Point, 0.75}};
    CHECK(days_for(mix, 2000) == doctest::Approx(2.0 * days_for(mix, 1000)));

    // Swapping point share into full share never cheapens the mix.
    double prev = days_for({{LabelType::Full, 0.0}, {LabelType::Point, 1.0}});
    for (double f = 0.1; f <= 1.0001; f += 0.1) {
        const double cur = days_for({{LabelType::Full, f}, {LabelType::Point, 1.0 - f}});
        CHECK(cur >= prev);
        prev = cur;
    }
}
