#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pointseg/errors.hpp"
#include "pointseg/eval.hpp"
#include "pointseg/rng.hpp"
#include "oracles.hpp"

using namespace pointseg;

namespace {

BinaryMask blob(int h, int w, int y0, int x0, int y1, int x1) {
    BinaryMask m(h, w);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m.at(y, x) = 1;
    return m;
}

InstanceAnnotation pred(int64_t id, int64_t img, int cat, const BinaryMask& m, double score) {
    InstanceAnnotation a = make_annotation(id, img, cat, m);
    a.score = score;
    return a;
}

}  // namespace

TEST_CASE("mask iou basics") {
    const BinaryMask a = blob(4, 4, 0, 0, 1, 1);
    CHECK(mask_iou(a, a) == 1.0);

    const BinaryMask b = blob(4, 4, 2, 2, 3, 3);
    CHECK(mask_iou(a, b) == 0.0);

    // 2x2: top row vs left column intersect in one pixel, union three.
    const BinaryMask top = blob(2, 2, 0, 0, 0, 1);
    const BinaryMask left = blob(2, 2, 0, 0, 1, 0);
    CHECK(mask_iou(top, left) == doctest::Approx(1.0 / 3.0));

    CHECK(mask_iou(BinaryMask(2, 2), BinaryMask(2, 2)) == 0.0);
    CHECK_THROWS_AS(mask_iou(BinaryMask(2, 2), BinaryMask(3, 2)), ShapeError);
}

TEST_CASE("evaluate: perfect predictions and empty predictions") {
    std::vector<InstanceAnnotation> gt;
    gt.push_back(make_annotation(1, 1, 1, blob(8, 8, 0, 0, 3, 3)));
    gt.push_back(make_annotation(2, 1, 2, blob(8, 8, 5, 5, 7, 7)));

    std::vector<InstanceAnnotation> preds;
    for (const auto& g : gt) {
        InstanceAnnotation p = g;
        p.score = 1.0;
        preds.push_back(p);
    }
    const APReport perfect = evaluate(preds, gt);
    CHECK(perfect.ap == doctest::Approx(1.0));
    CHECK(perfect.ap50 == doctest::Approx(1.0));
    CHECK(perfect.ar100 == doctest::Approx(1.0));

    const APReport none = evaluate({}, gt);
    CHECK(none.ap == 0.0);
    CHECK(none.ar100 == 0.0);
}

TEST_CASE("evaluate: one of two instances found") {
    std::vector<InstanceAnnotation> gt;
    gt.push_back(make_annotation(1, 1, 1, blob(8, 8, 0, 0, 3, 3)));
    gt.push_back(make_annotation(2, 1, 1, blob(8, 8, 5, 5, 7, 7)));
    std::vector<InstanceAnnotation> preds{pred(1, 1, 1, blob(8, 8, 0, 0, 3, 3), 0.9)};

    const APReport r = evaluate(preds, gt);
    // Single point on the PR curve: precision 1 at recall 0.5. The 101-point
    // interpolation takes max precision for the 51 recall grid points <= 0.5.
    CHECK(r.ap50 == doctest::Approx(51.0 / 101.0));
    CHECK(r.ap == doctest::Approx(51.0 / 101.0));  // perfect mask at all thresholds
    CHECK(r.ar100 == doctest::Approx(0.5));
}

TEST_CASE("evaluate matches the brute-force matcher on random small cases") {
    Rng rng(23);
    const auto thresholds = default_iou_thresholds();
    for (int trial = 0; trial < 200; ++trial) {
        const int n_img = 1 + static_cast<int>(rng.uniform_int(0, 1));
        std::vector<InstanceAnnotation> gt, preds;
        int64_t gid = 1, pid = 1;
        for (int img = 1; img <= n_img; ++img) {
            const int n_gt = static_cast<int>(rng.uniform_int(0, 4));
            for (int i = 0; i < n_gt; ++i) {
                const int y = static_cast<int>(rng.uniform_int(0, 4));
                const int x = static_cast<int>(rng.uniform_int(0, 4));
                const int hh = static_cast<int>(rng.uniform_int(1, 3));
                const int ww = static_cast<int>(rng.uniform_int(1, 3));
                gt.push_back(make_annotation(gid++, img,
                                             static_cast<int>(rng.uniform_int(1, 2)),
                                             blob(8, 8, y, x, std::min(7, y + hh),
                                                  std::min(7, x + ww))));
            }
            const int n_pred = static_cast<int>(rng.uniform_int(0, 4));
            for (int i = 0; i < n_pred; ++i) {
                const int y = static_cast<int>(rng.uniform_int(0, 4));
                const int x = static_cast<int>(rng.uniform_int(0, 4));
                const int hh = static_cast<int>(rng.uniform_int(1, 3));
                const int ww = static_cast<int>(rng.uniform_int(1, 3));
                preds.push_back(pred(pid++, img, static_cast<int>(rng.uniform_int(1, 2)),
                                     blob(8, 8, y, x, std::min(7, y + hh), std::min(7, x + ww)),
                                     rng.uniform()));
            }
        }
        const APReport got = evaluate(preds, gt, thresholds);
        const oracle::BruteResult want = oracle::brute_evaluate(preds, gt, thresholds);
        if (gt.empty()) {
            CHECK(got.ap == 0.0);
            continue;
        }
        CHECK(got.ap == doctest::Approx(want.ap).epsilon(1e-12));
        CHECK(got.ap50 == doctest::Approx(want.ap50).epsilon(1e-12));
        CHECK(got.ar100 == doctest::Approx(want.ar).epsilon(1e-12));
    }
}

TEST_CASE("prediction order with equal scores does not change the report") {
    std::vector<InstanceAnnotation> gt;
    gt.push_back(make_annotation(1, 1, 1, blob(8, 8, 0, 0, 3, 3)));
    gt.push_back(make_annotation(2, 1, 1, blob(8, 8, 4, 4, 7, 7)));

    std::vector<InstanceAnnotation> preds{
        pred(1, 1, 1, blob(8, 8, 0, 0, 3, 3), 0.5),
        pred(2, 1, 1, blob(8, 8, 4, 4, 7, 7), 0.5),
        pred(3, 1, 1, blob(8, 8, 0, 0, 2, 2), 0.5),
    };
    const APReport a = evaluate(preds, gt);
    std::swap(preds[0], preds[2]);
    std::swap(preds[1], preds[2]);
    const APReport b = evaluate(preds, gt);
    CHECK(a.ap == b.ap);
    CHECK(a.ap50 == b.ap50);
    CHECK(a.ar100 == b.ar100);
}

TEST_CASE("duplicating a matched prediction never increases ap") {
    std::vector<InstanceAnnotation> gt;
    gt.push_back(make_annotation(1, 1, 1, blob(8, 8, 0, 0, 3, 3)));
    gt.push_back(make_annotation(2, 1, 1, blob(8, 8, 5, 0, 7, 3)));

    std::vector<InstanceAnnotation> preds{
        pred(1, 1, 1, blob(8, 8, 0, 0, 3, 3), 0.9),
        pred(2, 1, 1, blob(8, 8, 5, 0, 7, 3), 0.8),
    };
    const APReport base = evaluate(preds, gt);
    preds.push_back(pred(3, 1, 1, blob(8, 8, 0, 0, 3, 3), 0.7));  // duplicate of #1
    const APReport with_dup = evaluate(preds, gt);
    CHECK(with_dup.ap <= base.ap + 1e-12);
}
