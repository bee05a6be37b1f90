#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

// Behaviors that need actually-trained networks. Slower than the unit
// suites; shared fixtures keep it to one teacher and one refiner.

#include <cmath>

#include "pointseg/eval.hpp"
#include "pointseg/pipeline.hpp"
#include "pointseg/pseudo.hpp"
#include "pointseg/refine.hpp"
#include "pointseg/synthgen.hpp"

using namespace pointseg;

namespace {

const Dataset& train_pool() {
    static const Dataset ds = [] {
        SynthSpec spec;
        spec.n_images = 24;
        spec.min_size = 8;
        spec.min_instances = 3;
        spec.max_overlap_iou = 0.30;  // crowded scenes force merged roughs
        spec.seed = 501;
        return generate(spec).dataset;
    }();
    return ds;
}

const Dataset& heldout_pool() {
    static const Dataset ds = [] {
        SynthSpec spec;
        spec.n_images = 16;
        spec.min_size = 8;
        spec.seed = 502;
        return generate(spec).dataset;
    }();
    return ds;
}

NetConfig teacher_config() {
    // Deliberately short schedule: blurrier rough masks give the refiner
    // training pairs where the point actually disambiguates.
    NetConfig cfg;
    cfg.train_steps = 250;
    cfg.seed = 11;
    return cfg;
}

const SegNet& trained_teacher() {
    static const SegNet net = [] {
        std::set<int64_t> ids;
        for (const auto& im : train_pool().images) ids.insert(im.id);
        return train_teacher(train_pool(), ids, teacher_config(), nullptr);
    }();
    return net;
}

const RefineNet& trained_refiner() {
    static const RefineNet net = [] {
        RefineConfig cfg;
        cfg.num_classes = 3;
        cfg.train_steps = 450;
        cfg.learning_rate = 5e-4;
        cfg.seed = 12;
        std::set<int64_t> ids;
        for (const auto& im : train_pool().images) ids.insert(im.id);
        return train_refiner(trained_teacher(), train_pool(), ids, cfg, nullptr);
    }();
    return net;
}

// Mean over GT instances of the best-IoU pseudo annotation in the image.
double mean_best_iou(const PseudoLabelSet& pseudo, const Dataset& gt) {
    double sum = 0;
    int n = 0;
    for (const auto& im : gt.images) {
        const auto gts = gt.annotations_of(im.id);
        auto it = pseudo.by_image.find(im.id);
        for (const auto* g : gts) {
            double best = 0;
            if (it != pseudo.by_image.end()) {
                const BinaryMask gm = g->decode();
                for (const auto& p : it->second) {
                    if (p.empty_flag) continue;
                    best = std::max(best, mask_iou(p.decode(), gm));
                }
            }
            sum += best;
            ++n;
        }
    }
    return n ? sum / n : 0.0;
}

PseudoLabelSet point_guided_on(const SegNet& net, const Dataset& ds) {
    DatasetSplit all_points;
    for (const auto& im : ds.images) all_points.point_ids.insert(im.id);
    return generate_point_guided(net, derive_points(ds, all_points, "centroid", 7));
}

}  // namespace

TEST_CASE("teacher training reduces the loss on a single image") {
    SynthSpec spec;
    spec.n_images = 1;
    spec.min_instances = 2;
    spec.max_instances = 3;
    spec.seed = 33;
    const Dataset ds = generate(spec).dataset;
    NetConfig cfg;
    cfg.train_steps = 200;
    cfg.batch_size = 1;
    cfg.seed = 5;
    std::set<int64_t> ids{1};
    TrainLog log;
    train_teacher(ds, ids, cfg, &log);
    REQUIRE(log.loss_curve.size() == 200);
    CHECK(log.loss_curve.back() < log.loss_curve.front());
}

TEST_CASE("refiner training reduces the dice loss on 8 instances") {
    SynthSpec spec;
    spec.n_images = 4;
    spec.min_instances = 2;
    spec.max_instances = 2;
    spec.min_size = 10;
    spec.seed = 34;
    const Dataset ds = generate(spec).dataset;
    std::set<int64_t> ids;
    for (const auto& im : ds.images) ids.insert(im.id);
    RefineConfig cfg;
    cfg.num_classes = 3;
    cfg.train_steps = 200;
    cfg.batch_size = 8;
    cfg.learning_rate = 5e-4;
    cfg.seed = 6;
    TrainLog log;
    train_refiner(trained_teacher(), ds, ids, cfg, &log);
    REQUIRE(log.loss_curve.size() == 200);
    CHECK(log.loss_curve.back() < log.loss_curve.front());
}

TEST_CASE("point guidance beats the tau=0.5 threshold mode on held-out images") {
    const Dataset& val = heldout_pool();
    const PseudoLabelSet pg = point_guided_on(trained_teacher(), val);

    std::vector<const ImageRecord*> recs;
    for (const auto& im : val.images) recs.push_back(&im);
    const PseudoLabelSet th = generate_threshold(trained_teacher(), recs, 0.5);

    const double iou_pg = mean_best_iou(pg, val);
    const double iou_th = mean_best_iou(th, val);
    CHECK(iou_pg > iou_th);

    // Count/category invariants on a trained net as well.
    for (const auto& im : val.images) {
        const auto pts = val.annotations_of(im.id);
        CHECK(pg.by_image.at(im.id).size() == pts.size());
    }
}

TEST_CASE("refined masks beat rough masks on held-out instances") {
    const Dataset& val = heldout_pool();
    const PseudoLabelSet pg = point_guided_on(trained_teacher(), val);
    double rough_sum = 0, refined_sum = 0;
    int n = 0;
    for (const auto& [iid, anns] : pg.by_image) {
        const ImageRecord& rec = val.image_by_id(iid);
        const auto gts = val.annotations_of(iid);
        for (size_t i = 0; i < anns.size(); ++i) {
            const BinaryMask rough = anns[i].decode();
            const BinaryMask gt = gts[i]->decode();
            const InstanceAnnotation refined = refine(
                trained_refiner(), rec.pixels, rough, *anns[i].guiding_point, iid, 1);
            rough_sum += mask_iou(rough, gt);
            refined_sum += mask_iou(refined.decode(), gt);
            ++n;
        }
    }
    REQUIRE(n >= 20);
    CHECK(refined_sum / n >= rough_sum / n);
}

TEST_CASE("two points on one merged rough mask give disentangled refinements") {
    // Two touching squares of different categories; the rough mask is their
    // union, mimicking a teacher that failed to separate the instances.
    SynthSpec spec;
    spec.n_images = 1;
    spec.seed = 35;
    Dataset ds = generate(spec).dataset;
    Image& img = ds.images[0].pixels;
    img = Image(64, 64);
    BinaryMask left(64, 64), right(64, 64);
    for (int y = 20; y < 44; ++y) {
        for (int x = 10; x < 32; ++x) {
            left.at(y, x) = 1;
            img.at(y, x, 0) = 210;  // category-1 colors lean red
            img.at(y, x, 1) = 80;
            img.at(y, x, 2) = 80;
        }
        for (int x = 32; x < 54; ++x) {
            right.at(y, x) = 1;
            img.at(y, x, 0) = 80;  // category-2 colors lean green
            img.at(y, x, 1) = 210;
            img.at(y, x, 2) = 80;
        }
    }
    BinaryMask merged(64, 64);
    for (size_t i = 0; i < merged.data.size(); ++i)
        merged.data[i] = left.data[i] || right.data[i];

    const PointLabel p_left{20, 32, 1, std::nullopt};
    const PointLabel p_right{43, 32, 2, std::nullopt};
    const InstanceAnnotation r_left =
        refine(trained_refiner(), img, merged, p_left, 1, 1);
    const InstanceAnnotation r_right =
        refine(trained_refiner(), img, merged, p_right, 1, 2);

    REQUIRE(!r_left.decode().empty_mask());
    REQUIRE(!r_right.decode().empty_mask());
    // The argmax assignment differs: each refinement lands on its own
    // instance, and the two masks are visibly distinct.
    CHECK(mask_iou(r_left.decode(), left) > mask_iou(r_left.decode(), right));
    CHECK(mask_iou(r_right.decode(), right) > mask_iou(r_right.decode(), left));
    CHECK(mask_iou(r_left.decode(), r_right.decode()) < 0.6);
}
