#include "pointseg/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pointseg/errors.hpp"
#include "pointseg/eval.hpp"
#include "pointseg/serialize.hpp"

using nlohmann::json;

namespace pointseg {

std::string NetConfig::to_json() const {
    json j;
    j["num_classes"] = num_classes;
    j["mask_channels"] = mask_channels;
    j["grid_sizes"] = grid_sizes;
    json ranges = json::array();
    for (const auto& [lo, hi] : scale_ranges) ranges.push_back({lo, hi});
    j["scale_ranges"] = ranges;
    j["center_shrink"] = center_shrink;
    j["stem_channels"] = stem_channels;
    j["stage_channels"] = stage_channels;
    j["fpn_channels"] = fpn_channels;
    j["focal_alpha"] = focal_alpha;
    j["focal_gamma"] = focal_gamma;
    j["focal_weight"] = focal_weight;
    j["dice_weight"] = dice_weight;
    j["learning_rate"] = learning_rate;
    j["train_steps"] = train_steps;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["binarize_threshold"] = binarize_threshold;
    j["nms_iou"] = nms_iou;
    return j.dump(1);
}

NetConfig NetConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("net config: ") + e.what());
    }
    NetConfig c;
    auto get = [&](const char* key, auto& out) {
        if (j.contains(key)) out = j[key].get<std::decay_t<decltype(out)>>();
    };
    get("num_classes", c.num_classes);
    get("mask_channels", c.mask_channels);
    if (j.contains("grid_sizes")) {
        auto v = j["grid_sizes"].get<std::vector<int>>();
        if (v.size() != kNumLevels) throw ConfigError("grid_sizes must have 5 entries");
        std::copy(v.begin(), v.end(), c.grid_sizes.begin());
    }
    if (j.contains("scale_ranges")) {
        const auto& r = j["scale_ranges"];
        if (r.size() != kNumLevels) throw ConfigError("scale_ranges must have 5 entries");
        for (size_t i = 0; i < kNumLevels; ++i)
            c.scale_ranges[i] = {r[i][0].get<double>(), r[i][1].get<double>()};
    }
    get("center_shrink", c.center_shrink);
    get("stem_channels", c.stem_channels);
    if (j.contains("stage_channels")) {
        auto v = j["stage_channels"].get<std::vector<int>>();
        if (v.size() != 4) throw ConfigError("stage_channels must have 4 entries");
        std::copy(v.begin(), v.end(), c.stage_channels.begin());
    }
    get("fpn_channels", c.fpn_channels);
    get("focal_alpha", c.focal_alpha);
    get("focal_gamma", c.focal_gamma);
    get("focal_weight", c.focal_weight);
    get("dice_weight", c.dice_weight);
    get("learning_rate", c.learning_rate);
    get("train_steps", c.train_steps);
    get("batch_size", c.batch_size);
    get("seed", c.seed);
    get("binarize_threshold", c.binarize_threshold);
    get("nms_iou", c.nms_iou);
    for (size_t i = 1; i < kNumLevels; ++i)
        if (c.grid_sizes[i] >= c.grid_sizes[i - 1])
            throw ConfigError("grid sizes must be strictly decreasing");
    return c;
}

Tensor mask_from_kernel(const std::vector<double>& kernel, const Tensor& mask_feature) {
    const int e = mask_feature.dim(0), h = mask_feature.dim(1), w = mask_feature.dim(2);
    if (static_cast<int>(kernel.size()) != e)
        throw ShapeError("mask_from_kernel: kernel length " + std::to_string(kernel.size()) +
                         " != feature channels " + std::to_string(e));
    Tensor out({h, w});
    for (int c = 0; c < e; ++c) {
        const double kv = kernel[static_cast<size_t>(c)];
        const double* fp = &mask_feature.data[static_cast<size_t>(c) * h * w];
        for (int i = 0; i < h * w; ++i) out.data[static_cast<size_t>(i)] += kv * fp[i];
    }
    sigmoid_inplace(out);
    return out;
}

// ---------------------------------------------------------------------------
// Target assignment

namespace {

Tensor downsample_mask(const BinaryMask& mask, int factor) {
    const int oh = mask.height / factor, ow = mask.width / factor;
    Tensor out({oh, ow});
    double best_cov = -1.0;
    int best_y = 0, best_x = 0;
    bool any = false;
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            int cnt = 0;
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx)
                    cnt += mask.at(oy * factor + dy, ox * factor + dx) != 0;
            const double cov = cnt / static_cast<double>(factor * factor);
            if (cov >= 0.5) {
                out(oy, ox) = 1.0;
                any = true;
            }
            if (cov > best_cov) {
                best_cov = cov;
                best_y = oy;
                best_x = ox;
            }
        }
    // Thin instances must not vanish at stride 4.
    if (!any && best_cov > 0.0) out(best_y, best_x) = 1.0;
    return out;
}

}  // namespace

Targets assign_targets(const std::vector<const InstanceAnnotation*>& annotations,
                       int image_h, int image_w, const NetConfig& cfg) {
    Targets t;
    for (size_t l = 0; l < kNumLevels; ++l)
        t.category_target[l].assign(
            static_cast<size_t>(cfg.grid_sizes[l]) * cfg.grid_sizes[l], 0);

    struct Inst {
        int index;
        const InstanceAnnotation* ann;
        BinaryMask mask;
        double cx, cy;  // centroid, index space
        std::vector<int> levels;
    };
    std::vector<Inst> insts;
    t.instance_masks.resize(annotations.size());
    for (size_t i = 0; i < annotations.size(); ++i) {
        const InstanceAnnotation* ann = annotations[i];
        if (ann->area < 1) throw AnnotationError("assign_targets: empty annotation");
        Inst in;
        in.index = static_cast<int>(i);
        in.ann = ann;
        in.mask = ann->decode();
        double sx = 0, sy = 0;
        int n = 0;
        for (int y = 0; y < in.mask.height; ++y)
            for (int x = 0; x < in.mask.width; ++x)
                if (in.mask.at(y, x)) {
                    sx += x;
                    sy += y;
                    ++n;
                }
        in.cx = sx / n;
        in.cy = sy / n;
        const double scale = 4.0 * std::sqrt(static_cast<double>(ann->area));
        for (int l = 0; l < kNumLevels; ++l)
            if (scale >= cfg.scale_ranges[l].first && scale < cfg.scale_ranges[l].second)
                in.levels.push_back(l);
        if (in.levels.empty()) in.levels.push_back(0);
        t.instance_masks[i] = downsample_mask(in.mask, 4);
        insts.push_back(std::move(in));
    }

    // Larger instances claim first so smaller ones win contested cells.
    std::vector<int> order(insts.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (insts[a].ann->area != insts[b].ann->area)
            return insts[a].ann->area > insts[b].ann->area;
        return insts[a].ann->id < insts[b].ann->id;
    });

    std::array<std::vector<int>, kNumLevels> owner;
    for (size_t l = 0; l < kNumLevels; ++l)
        owner[l].assign(static_cast<size_t>(cfg.grid_sizes[l]) * cfg.grid_sizes[l], -1);

    const double inv = 1.0 / std::max(1e-9, 1.0 - cfg.center_shrink);
    for (int oi : order) {
        const Inst& in = insts[static_cast<size_t>(oi)];
        for (int l : in.levels) {
            const int s = cfg.grid_sizes[l];
            for (int r = 0; r < s; ++r)
                for (int c = 0; c < s; ++c) {
                    // Cell center in index space, pulled toward the centroid
                    // by the inverse of the shrink factor.
                    const double u = (c + 0.5) * image_w / s - 0.5;
                    const double v = (r + 0.5) * image_h / s - 0.5;
                    const int px = static_cast<int>(std::floor(in.cx + (u - in.cx) * inv + 0.5));
                    const int py = static_cast<int>(std::floor(in.cy + (v - in.cy) * inv + 0.5));
                    if (px < 0 || px >= image_w || py < 0 || py >= image_h) continue;
                    if (in.mask.at(py, px)) owner[l][static_cast<size_t>(r) * s + c] = oi;
                }
        }
    }

    // Never drop an instance: claim the nearest available cell on its finest
    // assigned level, stealing only from owners that keep other cells.
    auto count_cells = [&](int oi) {
        int n = 0;
        for (size_t l = 0; l < kNumLevels; ++l)
            for (int v : owner[l])
                if (v == oi) ++n;
        return n;
    };
    for (size_t i = 0; i < insts.size(); ++i) {
        const Inst& in = insts[i];
        if (count_cells(static_cast<int>(i)) > 0) continue;
        const int l = in.levels.front();
        const int s = cfg.grid_sizes[l];
        std::vector<std::pair<double, int>> cells;
        for (int r = 0; r < s; ++r)
            for (int c = 0; c < s; ++c) {
                const double u = (c + 0.5) * image_w / s - 0.5;
                const double v = (r + 0.5) * image_h / s - 0.5;
                const double d = (u - in.cx) * (u - in.cx) + (v - in.cy) * (v - in.cy);
                cells.emplace_back(d, r * s + c);
            }
        std::sort(cells.begin(), cells.end());
        for (const auto& [d, cell] : cells) {
            const int cur = owner[l][static_cast<size_t>(cell)];
            if (cur < 0 || count_cells(cur) > 1) {
                owner[l][static_cast<size_t>(cell)] = static_cast<int>(i);
                break;
            }
        }
    }

    for (int l = 0; l < kNumLevels; ++l) {
        const int s = cfg.grid_sizes[l];
        for (int cell = 0; cell < s * s; ++cell) {
            const int oi = owner[l][static_cast<size_t>(cell)];
            if (oi < 0) continue;
            const Inst& in = insts[static_cast<size_t>(oi)];
            t.category_target[l][static_cast<size_t>(cell)] =
                static_cast<int8_t>(in.ann->category);
            t.positives.push_back(
                {l, cell / s, cell % s, in.ann->category, in.index});
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Network

SegNet::SegNet(const NetConfig& cfg) : cfg_(cfg) {
    const int f = cfg.fpn_channels;
    params_.add("stem.w", {cfg.stem_channels, 3, 3, 3});
    params_.add("stem.b", {cfg.stem_channels});
    int prev = cfg.stem_channels;
    for (int s = 0; s < 4; ++s) {
        params_.add("stage" + std::to_string(s + 2) + ".w",
                    {cfg.stage_channels[static_cast<size_t>(s)], prev, 3, 3});
        params_.add("stage" + std::to_string(s + 2) + ".b",
                    {cfg.stage_channels[static_cast<size_t>(s)]});
        prev = cfg.stage_channels[static_cast<size_t>(s)];
    }
    for (int s = 0; s < 4; ++s) {
        params_.add("lat" + std::to_string(s + 2) + ".w",
                    {f, cfg.stage_channels[static_cast<size_t>(s)], 1, 1});
        params_.add("lat" + std::to_string(s + 2) + ".b", {f});
    }
    params_.add("p6.w", {f, f, 3, 3});
    params_.add("p6.b", {f});
    params_.add("cate_tower.w", {f, f, 3, 3});
    params_.add("cate_tower.b", {f});
    params_.add("cate_out.w", {cfg.num_classes, f, 3, 3});
    params_.add("cate_out.b", {cfg.num_classes});
    params_.add("kern_tower.w", {f, f + 2, 3, 3});
    params_.add("kern_tower.b", {f});
    params_.add("kern_out.w", {cfg.mask_channels, f, 3, 3});
    params_.add("kern_out.b", {cfg.mask_channels});
    for (int l = 0; l < kNumLevels; ++l) {
        params_.add("mask_level" + std::to_string(l + 2) + ".w", {f, f, 3, 3});
        params_.add("mask_level" + std::to_string(l + 2) + ".b", {f});
    }
    params_.add("mask_fuse.w", {cfg.mask_channels, f + 2, 3, 3});
    params_.add("mask_fuse.b", {cfg.mask_channels});

    Rng rng(Rng::mix(cfg.seed, 0x1A17));
    params_.init_he_normal(rng);
}

SegNet::Graph SegNet::build_graph(Tape& tape, const Tensor& image) const {
    const int h = image.dim(1), w = image.dim(2);
    if (h % 32 != 0 || w % 32 != 0)
        throw ShapeError("input " + std::to_string(w) + "x" + std::to_string(h) +
                         " not divisible by 32");
    auto P = [&](const std::string& name) { return tape.param(params_.find(name)); };

    const int x0 = tape.leaf(image);
    const int stem = tape.relu(tape.conv2d(x0, P("stem.w"), P("stem.b"), 2, 1));
    std::array<int, 4> stages;
    int cur = stem;
    for (int s = 0; s < 4; ++s) {
        const std::string n = "stage" + std::to_string(s + 2);
        cur = tape.relu(tape.conv2d(cur, P(n + ".w"), P(n + ".b"), 2, 1));
        stages[static_cast<size_t>(s)] = cur;
    }

    // Top-down lateral fusion.
    std::array<int, kNumLevels> pyramid;  // P2..P6
    int top = tape.conv2d(stages[3], P("lat5.w"), P("lat5.b"), 1, 0);
    pyramid[3] = top;
    for (int s = 2; s >= 0; --s) {
        const int lat = tape.conv2d(stages[static_cast<size_t>(s)],
                                    P("lat" + std::to_string(s + 2) + ".w"),
                                    P("lat" + std::to_string(s + 2) + ".b"), 1, 0);
        const Tensor& lv = tape.value(lat);
        const int up = tape.resize_bilinear(top, lv.dim(1), lv.dim(2));
        top = tape.add(lat, up);
        pyramid[static_cast<size_t>(s)] = top;
    }
    pyramid[4] = tape.conv2d(pyramid[3], P("p6.w"), P("p6.b"), 2, 1);

    Graph g;
    for (int l = 0; l < kNumLevels; ++l) {
        const int s = cfg_.grid_sizes[static_cast<size_t>(l)];
        const int grid_in = tape.resize_bilinear(pyramid[static_cast<size_t>(l)], s, s);
        const int ct = tape.relu(tape.conv2d(grid_in, P("cate_tower.w"), P("cate_tower.b"), 1, 1));
        g.cate_logits[static_cast<size_t>(l)] =
            tape.conv2d(ct, P("cate_out.w"), P("cate_out.b"), 1, 1);
        const int kin = tape.append_coords(grid_in);
        const int kt = tape.relu(tape.conv2d(kin, P("kern_tower.w"), P("kern_tower.b"), 1, 1));
        g.kernel_grids[static_cast<size_t>(l)] =
            tape.conv2d(kt, P("kern_out.w"), P("kern_out.b"), 1, 1);
    }

    const int mh = h / 4, mw = w / 4;
    int fused = -1;
    for (int l = 0; l < kNumLevels; ++l) {
        const std::string n = "mask_level" + std::to_string(l + 2);
        int m = tape.relu(
            tape.conv2d(pyramid[static_cast<size_t>(l)], P(n + ".w"), P(n + ".b"), 1, 1));
        m = tape.resize_bilinear(m, mh, mw);
        fused = fused < 0 ? m : tape.add(fused, m);
    }
    fused = tape.append_coords(fused);
    g.mask_feature =
        tape.relu(tape.conv2d(fused, P("mask_fuse.w"), P("mask_fuse.b"), 1, 1));
    return g;
}

ForwardResult SegNet::forward(const Tensor& image_chw) const {
    Tape tape(const_cast<ParamStore*>(&params_), false);
    const Graph g = build_graph(tape, image_chw);
    ForwardResult out;
    for (int l = 0; l < kNumLevels; ++l) {
        ProposalGrid grid;
        grid.level = l + 1;
        grid.scores = tape.value(g.cate_logits[static_cast<size_t>(l)]);
        sigmoid_inplace(grid.scores);
        grid.kernels = tape.value(g.kernel_grids[static_cast<size_t>(l)]);
        out.grids.push_back(std::move(grid));
    }
    out.mask_feature = tape.value(g.mask_feature);
    return out;
}

ForwardResult SegNet::forward(const Image& image) const { return forward(image.to_tensor()); }

namespace {

// One proposal per cell whose best-category score reaches tau.
std::vector<Proposal> collect_proposals(const ForwardResult& fw, double tau) {
    std::vector<Proposal> out;
    for (const auto& grid : fw.grids) {
        const int c = grid.scores.dim(0), s = grid.scores.dim(1);
        for (int r = 0; r < s; ++r)
            for (int col = 0; col < s; ++col) {
                int best_c = 0;
                double best = grid.scores(0, r, col);
                for (int cc = 1; cc < c; ++cc)
                    if (grid.scores(cc, r, col) > best) {
                        best = grid.scores(cc, r, col);
                        best_c = cc;
                    }
                if (best < tau) continue;
                Proposal p;
                p.level = grid.level;
                p.row = r;
                p.col = col;
                p.category = best_c + 1;
                p.score = best;
                p.kernel.resize(static_cast<size_t>(grid.kernels.dim(0)));
                for (int e = 0; e < grid.kernels.dim(0); ++e)
                    p.kernel[static_cast<size_t>(e)] = grid.kernels(e, r, col);
                out.push_back(std::move(p));
            }
    }
    return out;
}

}  // namespace

std::vector<Proposal> SegNet::propose(const Image& image, double tau) const {
    return collect_proposals(forward(image), tau);
}

namespace {

BinaryMask binarize_upsampled(const Tensor& soft, int h, int w, double thr) {
    Tensor up({1, soft.dim(0), soft.dim(1)});
    std::copy(soft.data.begin(), soft.data.end(), up.data.begin());
    up = resize_bilinear(up, h, w);
    BinaryMask m(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m.at(y, x) = up(0, y, x) >= thr ? 1 : 0;
    return m;
}

}  // namespace

std::vector<InstanceAnnotation> SegNet::infer(const Image& image, int64_t image_id, double tau,
                                              double binarize_threshold) const {
    const ForwardResult fw = forward(image);
    std::vector<Proposal> props = collect_proposals(fw, tau);
    std::sort(props.begin(), props.end(), [](const Proposal& a, const Proposal& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.level != b.level) return a.level < b.level;
        if (a.row != b.row) return a.row < b.row;
        if (a.col != b.col) return a.col < b.col;
        return a.category < b.category;
    });

    std::vector<InstanceAnnotation> kept;
    std::vector<BinaryMask> kept_masks;
    for (const auto& p : props) {
        const Tensor soft = mask_from_kernel(p.kernel, fw.mask_feature);
        BinaryMask mask = binarize_upsampled(soft, image.height, image.width,
                                             binarize_threshold);
        if (mask.empty_mask()) continue;
        bool dup = false;
        for (const auto& km : kept_masks)
            if (mask_iou(mask, km) >= cfg_.nms_iou) {
                dup = true;
                break;
            }
        if (dup) continue;
        InstanceAnnotation ann =
            make_annotation(static_cast<int64_t>(kept.size()) + 1, image_id, p.category, mask);
        ann.score = p.score;
        ann.source_level = p.level;
        kept.push_back(std::move(ann));
        kept_masks.push_back(std::move(mask));
    }
    return kept;
}

void SegNet::save(const std::string& path) const {
    save_params(params_, path);
    std::ofstream f(path + ".config.json");
    if (!f) throw InputError("cannot open for writing: " + path + ".config.json");
    f << cfg_.to_json() << "\n";
}

void SegNet::load(const std::string& path) { load_params(params_, path); }

SegNet SegNet::load_from(const std::string& path) {
    std::ifstream f(path + ".config.json");
    if (!f) throw InputError("missing config sidecar: " + path + ".config.json");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    SegNet net(NetConfig::from_json(text));
    net.load(path);
    return net;
}

// ---------------------------------------------------------------------------
// Training

SegNet::Prepared SegNet::prepare(const Image& image,
                                 const std::vector<const InstanceAnnotation*>& anns) const {
    Prepared p;
    p.image = image.to_tensor();
    p.targets = assign_targets(anns, image.height, image.width, cfg_);
    return p;
}

double SegNet::loss_and_grads(const std::vector<const Prepared*>& batch,
                              std::vector<Tensor>* grad_accum) {
    const bool recording = grad_accum != nullptr;
    double total = 0.0;
    for (const Prepared* ex : batch) {
        Tape tape(&params_, recording);
        const Graph g = build_graph(tape, ex->image);
        const int npos = std::max<int>(1, static_cast<int>(ex->targets.positives.size()));

        int focal_sum = -1;
        for (int l = 0; l < kNumLevels; ++l) {
            const int f = tape.focal_with_logits(g.cate_logits[static_cast<size_t>(l)],
                                                 ex->targets.category_target[static_cast<size_t>(l)],
                                                 cfg_.focal_alpha, cfg_.focal_gamma);
            focal_sum = focal_sum < 0 ? f : tape.sum2(focal_sum, f);
        }
        int loss = tape.scale(focal_sum, cfg_.focal_weight / npos);

        if (!ex->targets.positives.empty()) {
            int dice_sum = -1;
            for (const PosSample& ps : ex->targets.positives) {
                const int kvec = tape.gather_cell(g.kernel_grids[static_cast<size_t>(ps.level)],
                                                  ps.row, ps.col);
                const int logits = tape.dyn_mask_logits(g.mask_feature, kvec);
                const int d = tape.dice_with_logits(
                    logits, ex->targets.instance_masks[static_cast<size_t>(ps.instance_index)]);
                dice_sum = dice_sum < 0 ? d : tape.sum2(dice_sum, d);
            }
            loss = tape.sum2(loss, tape.scale(dice_sum, cfg_.dice_weight / npos));
        }

        total += tape.value(loss)(0);
        if (recording) {
            tape.backward(loss);
            tape.export_param_grads(*grad_accum, 1.0 / static_cast<double>(batch.size()));
        }
    }
    return total / static_cast<double>(batch.size());
}

SegNet train_network(const std::vector<TrainingExample>& examples, const NetConfig& cfg,
                     TrainLog* log) {
    if (examples.empty()) throw ConfigError("train_network: empty training set");
    SegNet net(cfg);

    std::vector<SegNet::Prepared> prepared;
    prepared.reserve(examples.size());
    for (const auto& ex : examples) prepared.push_back(net.prepare(*ex.image, ex.annotations));

    Rng rng(Rng::mix(cfg.seed, 0x7421));
    std::vector<int> epoch_order;
    size_t cursor = 0;
    auto next_index = [&]() {
        if (cursor >= epoch_order.size()) {
            epoch_order.resize(prepared.size());
            for (size_t i = 0; i < prepared.size(); ++i)
                epoch_order[i] = static_cast<int>(i);
            rng.shuffle(epoch_order);
            cursor = 0;
        }
        return epoch_order[cursor++];
    };

    for (int step = 0; step < cfg.train_steps; ++step) {
        std::vector<const SegNet::Prepared*> batch;
        const int bs = std::min<int>(cfg.batch_size, static_cast<int>(prepared.size()));
        for (int b = 0; b < bs; ++b)
            batch.push_back(&prepared[static_cast<size_t>(next_index())]);

        // Per-item gradient buffers keep the reduction order fixed no matter
        // how many worker threads run.
        std::vector<std::vector<Tensor>> item_grads(batch.size());
        std::vector<double> item_loss(batch.size(), 0.0);
#pragma omp parallel for schedule(static)
        for (size_t b = 0; b < batch.size(); ++b) {
            item_grads[b] = net.params().grad_snapshot();
            std::vector<const SegNet::Prepared*> one{batch[b]};
            item_loss[b] = net.loss_and_grads(one, &item_grads[b]);
        }
        net.params().zero_grads();
        double loss = 0.0;
        for (size_t b = 0; b < batch.size(); ++b) {
            net.params().accumulate_grads(item_grads[b], 1.0 / static_cast<double>(batch.size()));
            loss += item_loss[b] / static_cast<double>(batch.size());
        }
        const double lr = cosine_lr(cfg.learning_rate, step, cfg.train_steps);
        net.params().adam_step(lr, step + 1);
        if (log) log->loss_curve.push_back(loss);
    }
    return net;
}

SegNet train_teacher(const Dataset& dataset, const std::set<int64_t>& full_ids,
                     const NetConfig& cfg, TrainLog* log) {
    std::vector<TrainingExample> examples;
    for (const auto& im : dataset.images) {
        if (!full_ids.count(im.id)) continue;
        TrainingExample ex;
        ex.image = &im.pixels;
        ex.image_id = im.id;
        ex.annotations = dataset.annotations_of(im.id);
        if (!ex.annotations.empty()) examples.push_back(std::move(ex));
    }
    if (examples.empty())
        throw ConfigError("train_teacher: no fully-labeled images with annotations");
    return train_network(examples, cfg, log);
}

}  // namespace pointseg
