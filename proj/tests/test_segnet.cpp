#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "pointseg/errors.hpp"
#include "pointseg/eval.hpp"
#include "pointseg/segnet.hpp"
#include "pointseg/synthgen.hpp"
#include "oracles.hpp"

using namespace pointseg;

namespace {

// Small net for fast unit runs.
NetConfig tiny_config() {
    NetConfig c;
    c.num_classes = 2;
    c.mask_channels = 3;
    c.grid_sizes = {6, 5, 4, 3, 2};
    c.stem_channels = 4;
    c.stage_channels = {6, 8, 8, 8};
    c.fpn_channels = 6;
    c.train_steps = 10;
    c.batch_size = 2;
    c.seed = 3;
    return c;
}

Image flat_image(int w, int h, uint8_t v = 0) {
    Image img(w, h);
    std::fill(img.rgb.begin(), img.rgb.end(), v);
    return img;
}

BinaryMask rect_mask(int h, int w, int y0, int x0, int y1, int x1) {
    BinaryMask m(h, w);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m.at(y, x) = 1;
    return m;
}

// Positive-cell enumeration oracle: scan every cell of every assigned level
// and test the shrunk-membership rule directly.
std::set<std::tuple<int, int, int>> enumerate_positives(const BinaryMask& mask,
                                                        const NetConfig& cfg) {
    std::set<std::tuple<int, int, int>> out;
    double sx = 0, sy = 0;
    int n = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(y, x)) {
                sx += x;
                sy += y;
                ++n;
            }
    const double cx = sx / n, cy = sy / n;
    const double scale = 4.0 * std::sqrt(static_cast<double>(n));
    for (int l = 0; l < kNumLevels; ++l) {
        if (!(scale >= cfg.scale_ranges[l].first && scale < cfg.scale_ranges[l].second))
            continue;
        const int s = cfg.grid_sizes[l];
        for (int r = 0; r < s; ++r)
            for (int c = 0; c < s; ++c) {
                const double u = (c + 0.5) * mask.width / s - 0.5;
                const double v = (r + 0.5) * mask.height / s - 0.5;
                const double px = cx + (u - cx) / (1.0 - cfg.center_shrink);
                const double py = cy + (v - cy) / (1.0 - cfg.center_shrink);
                const int ix = static_cast<int>(std::floor(px + 0.5));
                const int iy = static_cast<int>(std::floor(py + 0.5));
                if (ix < 0 || ix >= mask.width || iy < 0 || iy >= mask.height) continue;
                if (mask.at(iy, ix)) out.insert({l, r, c});
            }
    }
    return out;
}

}  // namespace

TEST_CASE("forward with zero weights yields 0.5 scores everywhere") {
    const NetConfig cfg = tiny_config();
    SegNet net(cfg);
    for (size_t i = 0; i < net.params().count(); ++i)
        net.params()[static_cast<int>(i)].value.fill(0.0);
    const ForwardResult fw = net.forward(flat_image(64, 64));
    for (const auto& g : fw.grids)
        for (double v : g.scores.data) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("forward is deterministic and shape-correct") {
    const NetConfig cfg;  // default: grids 20,18,12,8,6
    SegNet net(cfg);
    SynthSpec spec;
    spec.n_images = 1;
    spec.seed = 8;
    const Dataset ds = generate(spec).dataset;
    const Image& img = ds.images[0].pixels;

    const ForwardResult a = net.forward(img);
    const ForwardResult b = net.forward(img);
    REQUIRE(a.grids.size() == kNumLevels);
    for (int l = 0; l < kNumLevels; ++l) {
        CHECK(a.grids[l].scores.shape ==
              std::vector<int>{cfg.num_classes, cfg.grid_sizes[l], cfg.grid_sizes[l]});
        CHECK(a.grids[l].kernels.shape ==
              std::vector<int>{cfg.mask_channels, cfg.grid_sizes[l], cfg.grid_sizes[l]});
        CHECK(a.grids[l].scores.data == b.grids[l].scores.data);
        CHECK(a.grids[l].kernels.data == b.grids[l].kernels.data);
        for (double v : a.grids[l].scores.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    CHECK(a.mask_feature.shape == std::vector<int>{cfg.mask_channels, 16, 16});
    CHECK(a.mask_feature.data == b.mask_feature.data);

    CHECK_THROWS_AS(net.forward(flat_image(48, 48)), ShapeError);
}

TEST_CASE("mask_from_kernel equals the per-pixel dot-product oracle") {
    Rng rng(6);
    Tensor feat({3, 4, 4});
    for (auto& v : feat.data) v = rng.normal();

    std::vector<double> zero(3, 0.0);
    const Tensor half = mask_from_kernel(zero, feat);
    for (double v : half.data) CHECK(v == doctest::Approx(0.5));

    for (int j = 0; j < 3; ++j) {
        std::vector<double> onehot(3, 0.0);
        onehot[static_cast<size_t>(j)] = 1.0;
        const Tensor out = mask_from_kernel(onehot, feat);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x)
                CHECK(out(y, x) ==
                      doctest::Approx(1.0 / (1.0 + std::exp(-feat(j, y, x)))));
    }

    std::vector<double> k{0.3, -1.2, 0.7};
    const Tensor out = mask_from_kernel(k, feat);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            double dot = 0;
            for (int c = 0; c < 3; ++c) dot += k[static_cast<size_t>(c)] * feat(c, y, x);
            const double expect = 1.0 / (1.0 + std::exp(-dot));
            CHECK(std::abs(out(y, x) - expect) <= 1e-6);
        }

    CHECK_THROWS_AS(mask_from_kernel({1.0, 2.0}, feat), ShapeError);
}

TEST_CASE("assign_targets: level membership by instance scale") {
    const NetConfig cfg;  // default ranges
    // 6x6 square: area 36, scale 24 -> only P2's (0,64)... also inside no other
    // range since 24 < 32.
    const BinaryMask small = rect_mask(64, 64, 10, 10, 15, 15);
    const auto ann = make_annotation(1, 1, 1, small);
    const Targets t = assign_targets({&ann}, 64, 64, cfg);
    REQUIRE(!t.positives.empty());
    for (const auto& p : t.positives) CHECK(p.level == 0);

    // Same enumeration as an independent oracle.
    const auto want = enumerate_positives(small, cfg);
    CHECK(t.positives.size() == want.size());
    for (const auto& p : t.positives)
        CHECK(want.count({p.level, p.row, p.col}) == 1);
}

TEST_CASE("assign_targets: whole-image instance matches the enumeration oracle") {
    const NetConfig cfg;
    BinaryMask full(64, 64);
    full.data.assign(full.data.size(), 1);
    const auto ann = make_annotation(1, 1, 2, full);
    const Targets t = assign_targets({&ann}, 64, 64, cfg);

    // scale = 256: assigned to P5 (128,512) and P6 (256,inf).
    const auto want = enumerate_positives(full, cfg);
    std::set<std::tuple<int, int, int>> got;
    for (const auto& p : t.positives) got.insert({p.level, p.row, p.col});
    CHECK(got == want);

    // Frozen from the oracle: the shrunk whole-image mask covers the interior
    // 6x6 of the 8-cell grid and 4x4 of the 6-cell grid.
    int p5 = 0, p6 = 0;
    for (const auto& p : t.positives) {
        if (p.level == 3) ++p5;
        if (p.level == 4) ++p6;
    }
    CHECK(p5 == 36);
    CHECK(p6 == 16);
    CHECK(t.positives.size() == 52);
}

TEST_CASE("assign_targets: disjoint instances get disjoint cells") {
    const NetConfig cfg;
    const BinaryMask left = rect_mask(64, 64, 20, 4, 40, 24);
    const BinaryMask right = rect_mask(64, 64, 20, 40, 40, 60);
    const auto a = make_annotation(1, 1, 1, left);
    const auto b = make_annotation(2, 1, 2, right);
    const Targets t = assign_targets({&a, &b}, 64, 64, cfg);

    std::set<std::tuple<int, int, int>> cells_a, cells_b;
    for (const auto& p : t.positives)
        (p.instance_index == 0 ? cells_a : cells_b).insert({p.level, p.row, p.col});
    CHECK(!cells_a.empty());
    CHECK(!cells_b.empty());
    for (const auto& c : cells_a) CHECK(cells_b.count(c) == 0);
}

TEST_CASE("assign_targets: every annotation keeps at least one positive cell") {
    const NetConfig cfg;
    SynthSpec spec;
    spec.n_images = 20;
    spec.min_instances = 2;
    spec.max_instances = 4;
    spec.seed = 31;
    const Dataset ds = generate(spec).dataset;
    for (const auto& im : ds.images) {
        const auto anns = ds.annotations_of(im.id);
        if (anns.empty()) continue;
        const Targets t = assign_targets(anns, im.height, im.width, cfg);
        std::vector<int> counts(anns.size(), 0);
        for (const auto& p : t.positives) counts[static_cast<size_t>(p.instance_index)]++;
        for (size_t i = 0; i < anns.size(); ++i) CHECK(counts[i] >= 1);
    }

    // A 1-pixel instance is below every grid's cell size but is never dropped.
    BinaryMask dot(64, 64);
    dot.at(33, 17) = 1;
    const auto tinyann = make_annotation(1, 1, 1, dot);
    const Targets t = assign_targets({&tinyann}, 64, 64, cfg);
    CHECK(t.positives.size() >= 1);
}

TEST_CASE("training: zero learning rate leaves weights fixed; seeds reproduce") {
    SynthSpec spec;
    spec.n_images = 2;
    spec.seed = 13;
    const Dataset ds = generate(spec).dataset;
    std::vector<TrainingExample> examples;
    for (const auto& im : ds.images) {
        TrainingExample ex;
        ex.image = &im.pixels;
        ex.image_id = im.id;
        ex.annotations = ds.annotations_of(im.id);
        examples.push_back(ex);
    }
    NetConfig cfg = tiny_config();
    cfg.num_classes = 3;
    cfg.train_steps = 3;

    NetConfig frozen = cfg;
    frozen.learning_rate = 0.0;
    const SegNet before(frozen);  // same seed => same init
    const SegNet trained = train_network(examples, frozen);
    for (size_t i = 0; i < trained.params().count(); ++i)
        CHECK(trained.params()[static_cast<int>(i)].value.data ==
              before.params()[static_cast<int>(i)].value.data);

    const SegNet run1 = train_network(examples, cfg);
    const SegNet run2 = train_network(examples, cfg);
    for (size_t i = 0; i < run1.params().count(); ++i)
        CHECK(run1.params()[static_cast<int>(i)].value.data ==
              run2.params()[static_cast<int>(i)].value.data);
}

TEST_CASE("full-network gradients match finite differences") {
    // Toy batch: one image with two instances.
    NetConfig cfg = tiny_config();
    SegNet net(cfg);

    SynthSpec spec;
    spec.n_images = 1;
    spec.min_instances = 2;
    spec.max_instances = 2;
    spec.seed = 77;
    Dataset ds = generate(spec).dataset;
    for (auto& a : ds.annotations) a.category = std::min(a.category, cfg.num_classes);
    const auto anns = ds.annotations_of(1);
    REQUIRE(anns.size() == 2);

    const SegNet::Prepared prep = net.prepare(ds.images[0].pixels, anns);
    const std::vector<const SegNet::Prepared*> batch{&prep};

    std::vector<Tensor> grads = net.params().grad_snapshot();
    net.loss_and_grads(batch, &grads);
    Rng probe(91);
    const double err = oracle::max_grad_rel_err(
        net.params(), grads, [&] { return net.loss_and_grads(batch, nullptr); }, 20, probe);
    CHECK(err < 1e-3);
}

TEST_CASE("infer: thresholds, nms oracle, and monotonicity") {
    NetConfig cfg = tiny_config();
    SegNet net(cfg);
    SynthSpec spec;
    spec.n_images = 1;
    spec.seed = 19;
    const Dataset ds = generate(spec).dataset;
    const Image& img = ds.images[0].pixels;

    CHECK(net.infer(img, 1, 1.0).empty());

    // tau = 0: every cell proposes; survivors must match the brute NMS count.
    const ForwardResult fw = net.forward(img);
    const auto props = net.propose(img, 0.0);
    size_t cells = 0;
    for (const auto& g : fw.grids)
        cells += static_cast<size_t>(g.scores.dim(1)) * g.scores.dim(2);
    CHECK(props.size() == cells);

    std::vector<std::pair<double, BinaryMask>> scored;
    for (const auto& p : props) {
        // independent mask computation: explicit dot product + sigmoid
        Tensor soft({fw.mask_feature.dim(1), fw.mask_feature.dim(2)});
        for (int y = 0; y < soft.dim(0); ++y)
            for (int x = 0; x < soft.dim(1); ++x) {
                double dot = 0;
                for (int e = 0; e < fw.mask_feature.dim(0); ++e)
                    dot += p.kernel[static_cast<size_t>(e)] * fw.mask_feature(e, y, x);
                soft(y, x) = 1.0 / (1.0 + std::exp(-dot));
            }
        Tensor soft3({1, soft.dim(0), soft.dim(1)});
        std::copy(soft.data.begin(), soft.data.end(), soft3.data.begin());
        const Tensor up = resize_bilinear(soft3, img.height, img.width);
        BinaryMask m(img.height, img.width);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                m.at(y, x) = up(0, y, x) >= cfg.binarize_threshold ? 1 : 0;
        if (m.area() > 0) scored.emplace_back(p.score, std::move(m));
    }
    const int expect = oracle::nms_survivor_count(scored, cfg.nms_iou);
    const auto dets = net.infer(img, 1, 0.0);
    CHECK(static_cast<int>(dets.size()) == expect);

    // Lowering tau never removes a pre-NMS proposal.
    const auto at_03 = net.propose(img, 0.3);
    const auto at_05 = net.propose(img, 0.5);
    CHECK(at_03.size() >= at_05.size());
    std::set<std::tuple<int, int, int>> low;
    for (const auto& p : at_03) low.insert({p.level, p.row, p.col});
    for (const auto& p : at_05) CHECK(low.count({p.level, p.row, p.col}) == 1);
}

TEST_CASE("weights archive round trip") {
    NetConfig cfg = tiny_config();
    SegNet net(cfg);
    const auto dir = std::filesystem::temp_directory_path() / "pointseg_segnet_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "net.ntar").string();
    net.save(path);
    const SegNet back = SegNet::load_from(path);
    for (size_t i = 0; i < net.params().count(); ++i)
        CHECK(back.params()[static_cast<int>(i)].value.data ==
              net.params()[static_cast<int>(i)].value.data);
}
