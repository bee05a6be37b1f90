#include "pointseg/refine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pointseg/errors.hpp"
#include "pointseg/pseudo.hpp"
#include "pointseg/serialize.hpp"

using nlohmann::json;

namespace pointseg {

std::string RefineConfig::to_json() const {
    json j;
    j["input_size"] = input_size;
    j["sigma"] = sigma;
    j["box_scale"] = box_scale;
    j["batch_size"] = batch_size;
    j["learning_rate"] = learning_rate;
    j["train_steps"] = train_steps;
    j["seed"] = seed;
    j["num_classes"] = num_classes;
    j["fallback_box"] = fallback_box;
    j["binarize_threshold"] = binarize_threshold;
    j["point_mode"] = point_mode;
    return j.dump(1);
}

RefineConfig RefineConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("refine config: ") + e.what());
    }
    RefineConfig c;
    auto get = [&](const char* key, auto& out) {
        if (j.contains(key)) out = j[key].get<std::decay_t<decltype(out)>>();
    };
    get("input_size", c.input_size);
    get("sigma", c.sigma);
    get("box_scale", c.box_scale);
    get("batch_size", c.batch_size);
    get("learning_rate", c.learning_rate);
    get("train_steps", c.train_steps);
    get("seed", c.seed);
    get("num_classes", c.num_classes);
    get("fallback_box", c.fallback_box);
    get("binarize_threshold", c.binarize_threshold);
    get("point_mode", c.point_mode);
    if (c.input_size <= 0) throw ConfigError("refine config: input_size must be positive");
    if (c.box_scale < 1.0) throw ConfigError("refine config: box_scale must be >= 1");
    return c;
}

CropRegion box_from_mask(const BinaryMask& mask) {
    int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(y, x)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) throw AnnotationError("box_from_mask: empty mask");
    return {x0, y0, x1 + 1, y1 + 1};
}

CropRegion expand_box(const CropRegion& box, double factor, int image_w, int image_h) {
    const double cx = 0.5 * (box.x_min + box.x_max);
    const double cy = 0.5 * (box.y_min + box.y_max);
    const double hw = 0.5 * box.width() * factor;
    const double hh = 0.5 * box.height() * factor;
    CropRegion out;
    out.x_min = std::max(0, static_cast<int>(std::floor(cx - hw)));
    out.y_min = std::max(0, static_cast<int>(std::floor(cy - hh)));
    out.x_max = std::min(image_w, static_cast<int>(std::ceil(cx + hw)));
    out.y_max = std::min(image_h, static_cast<int>(std::ceil(cy + hh)));
    if (out.x_max <= out.x_min) out.x_max = std::min(image_w, out.x_min + 1);
    if (out.y_max <= out.y_min) out.y_max = std::min(image_h, out.y_min + 1);
    return out;
}

Tensor encode_point_heatmap(const PointLabel& point, int height, int width,
                            int num_categories, double sigma) {
    if (point.x < 0 || point.x >= width || point.y < 0 || point.y >= height)
        throw InputError("encode_point_heatmap: point outside bounds");
    if (point.category < 1 || point.category > num_categories)
        throw InputError("encode_point_heatmap: invalid category");
    Tensor hm({num_categories, height, width});
    const int c = point.category - 1;
    const double denom = 2.0 * sigma * sigma;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double d2 = static_cast<double>(x - point.x) * (x - point.x) +
                              static_cast<double>(y - point.y) * (y - point.y);
            hm(c, y, x) = std::exp(-d2 / denom);
        }
    return hm;
}

namespace {

Tensor crop_tensor(const Tensor& t, const CropRegion& crop) {
    Tensor out({t.dim(0), crop.height(), crop.width()});
    for (int c = 0; c < t.dim(0); ++c)
        for (int y = 0; y < crop.height(); ++y)
            for (int x = 0; x < crop.width(); ++x)
                out(c, y, x) = t(c, crop.y_min + y, crop.x_min + x);
    return out;
}

}  // namespace

RefineInput assemble_input(const Image& image, const BinaryMask& rough_mask,
                           const PointLabel& point, const RefineConfig& cfg) {
    if (point.x < 0 || point.x >= image.width || point.y < 0 || point.y >= image.height)
        throw InputError("assemble_input: point outside image");
    CropRegion crop;
    if (rough_mask.empty_mask()) {
        const int half = cfg.fallback_box / 2;
        CropRegion raw{point.x - half, point.y - half, point.x + half, point.y + half};
        crop.x_min = std::max(0, raw.x_min);
        crop.y_min = std::max(0, raw.y_min);
        crop.x_max = std::min(image.width, std::max(raw.x_max, crop.x_min + 1));
        crop.y_max = std::min(image.height, std::max(raw.y_max, crop.y_min + 1));
    } else {
        crop = expand_box(box_from_mask(rough_mask), cfg.box_scale, image.width, image.height);
    }

    const int sz = cfg.input_size;
    const Tensor img_crop =
        resize_bilinear(crop_tensor(image.to_tensor(), crop), sz, sz);

    Tensor rough_t({1, image.height, image.width});
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            rough_t(0, y, x) = rough_mask.empty_mask() ? 0.0 : (rough_mask.at(y, x) ? 1.0 : 0.0);
    const Tensor rough_crop = resize_nearest(crop_tensor(rough_t, crop), sz, sz);

    const Tensor heatmap =
        encode_point_heatmap(point, image.height, image.width, cfg.num_classes, cfg.sigma);
    const Tensor hm_crop = resize_bilinear(crop_tensor(heatmap, crop), sz, sz);

    RefineInput out;
    out.crop = crop;
    out.channels = Tensor({3 + 1 + cfg.num_classes, sz, sz});
    std::copy(img_crop.data.begin(), img_crop.data.end(), out.channels.data.begin());
    std::copy(rough_crop.data.begin(), rough_crop.data.end(),
              out.channels.data.begin() + static_cast<long>(3) * sz * sz);
    std::copy(hm_crop.data.begin(), hm_crop.data.end(),
              out.channels.data.begin() + static_cast<long>(4) * sz * sz);
    return out;
}

// ---------------------------------------------------------------------------
// Network

RefineNet::RefineNet(const RefineConfig& cfg) : cfg_(cfg) {
    const int in_ch = 3 + 1 + cfg.num_classes;
    params_.add("stem1.w", {8, in_ch, 3, 3});
    params_.add("stem1.b", {8});
    params_.add("stem2.w", {16, 8, 3, 3});
    params_.add("stem2.b", {16});
    params_.add("enc2.w", {24, 16, 3, 3});
    params_.add("enc2.b", {24});
    params_.add("enc3.w", {32, 24, 3, 3});
    params_.add("enc3.b", {32});
    params_.add("lat3.w", {16, 32, 1, 1});
    params_.add("lat3.b", {16});
    params_.add("lat2.w", {16, 24, 1, 1});
    params_.add("lat2.b", {16});
    params_.add("lat1.w", {16, 16, 1, 1});
    params_.add("lat1.b", {16});
    params_.add("dec2.w", {16, 16, 3, 3});
    params_.add("dec2.b", {16});
    params_.add("dec1.w", {16, 16, 3, 3});
    params_.add("dec1.b", {16});
    params_.add("head.w", {1, 16, 3, 3});
    params_.add("head.b", {1});
    Rng rng(Rng::mix(cfg.seed, 0x2EF1));
    params_.init_he_normal(rng);
}

int RefineNet::build_graph(Tape& tape, const Tensor& input) const {
    auto P = [&](const std::string& name) { return tape.param(params_.find(name)); };
    const int x0 = tape.leaf(input);
    const int s1 = tape.relu(tape.conv2d(x0, P("stem1.w"), P("stem1.b"), 2, 1));  // /2
    const int s2 = tape.relu(tape.conv2d(s1, P("stem2.w"), P("stem2.b"), 2, 1));  // /4
    const int e2 = tape.relu(tape.conv2d(s2, P("enc2.w"), P("enc2.b"), 2, 1));    // /8
    const int e3 = tape.relu(tape.conv2d(e2, P("enc3.w"), P("enc3.b"), 2, 1));    // /16

    const int l3 = tape.conv2d(e3, P("lat3.w"), P("lat3.b"), 1, 0);
    const int l2 = tape.conv2d(e2, P("lat2.w"), P("lat2.b"), 1, 0);
    const int l1 = tape.conv2d(s2, P("lat1.w"), P("lat1.b"), 1, 0);

    const Tensor& l2v = tape.value(l2);
    int d2 = tape.add(l2, tape.resize_bilinear(l3, l2v.dim(1), l2v.dim(2)));
    d2 = tape.relu(tape.conv2d(d2, P("dec2.w"), P("dec2.b"), 1, 1));
    const Tensor& l1v = tape.value(l1);
    int d1 = tape.add(l1, tape.resize_bilinear(d2, l1v.dim(1), l1v.dim(2)));
    d1 = tape.relu(tape.conv2d(d1, P("dec1.w"), P("dec1.b"), 1, 1));

    const int logits = tape.conv2d(d1, P("head.w"), P("head.b"), 1, 1);
    return tape.resize_bilinear(logits, cfg_.input_size, cfg_.input_size);
}

Tensor RefineNet::forward(const RefineInput& input) const {
    Tape tape(const_cast<ParamStore*>(&params_), false);
    const int out = build_graph(tape, input.channels);
    Tensor prob = tape.value(out);
    sigmoid_inplace(prob);
    Tensor flat({cfg_.input_size, cfg_.input_size});
    std::copy(prob.data.begin(), prob.data.end(), flat.data.begin());
    return flat;
}

double RefineNet::loss_and_grads(const Tensor& input_channels, const Tensor& target,
                                 std::vector<Tensor>* grad_accum) {
    Tape tape(&params_, grad_accum != nullptr);
    const int out = build_graph(tape, input_channels);
    // dice expects matching shapes; logits node is [1,S,S], target [S,S].
    const Tensor& ov = tape.value(out);
    Tensor tgt({1, ov.dim(1), ov.dim(2)});
    std::copy(target.data.begin(), target.data.end(), tgt.data.begin());
    const int loss = tape.dice_with_logits(out, tgt);
    const double value = tape.value(loss)(0);
    if (grad_accum) {
        tape.backward(loss);
        tape.export_param_grads(*grad_accum, 1.0);
    }
    return value;
}

void RefineNet::save(const std::string& path) const {
    save_params(params_, path);
    std::ofstream f(path + ".config.json");
    if (!f) throw InputError("cannot open for writing: " + path + ".config.json");
    f << cfg_.to_json() << "\n";
}

void RefineNet::load(const std::string& path) { load_params(params_, path); }

RefineNet RefineNet::load_from(const std::string& path) {
    std::ifstream f(path + ".config.json");
    if (!f) throw InputError("missing config sidecar: " + path + ".config.json");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    RefineNet net(RefineConfig::from_json(text));
    net.load(path);
    return net;
}

InstanceAnnotation refine(const RefineNet& net, const Image& image,
                          const BinaryMask& rough_mask, const PointLabel& point,
                          int64_t image_id, int64_t ann_id) {
    const RefineConfig& cfg = net.config();
    const RefineInput input = assemble_input(image, rough_mask, point, cfg);
    const Tensor prob = net.forward(input);

    Tensor prob3({1, cfg.input_size, cfg.input_size});
    std::copy(prob.data.begin(), prob.data.end(), prob3.data.begin());
    const Tensor back = resize_bilinear(prob3, input.crop.height(), input.crop.width());

    BinaryMask full(image.height, image.width);
    bool any = false;
    for (int y = 0; y < input.crop.height(); ++y)
        for (int x = 0; x < input.crop.width(); ++x)
            if (back(0, y, x) >= cfg.binarize_threshold) {
                full.at(input.crop.y_min + y, input.crop.x_min + x) = 1;
                any = true;
            }

    if (!any) {
        // Never degrade to nothing: keep the rough mask, flag the failure.
        InstanceAnnotation ann;
        if (!rough_mask.empty_mask())
            ann = make_annotation(ann_id, image_id, point.category, rough_mask);
        else {
            ann.id = ann_id;
            ann.image_id = image_id;
            ann.category = point.category;
            ann.mask = encode_rle(full);
        }
        ann.empty_flag = true;
        ann.guiding_point = point;
        return ann;
    }
    InstanceAnnotation ann = make_annotation(ann_id, image_id, point.category, full);
    ann.guiding_point = point;
    return ann;
}

// ---------------------------------------------------------------------------
// Training

RefineNet train_refiner(const SegNet& teacher, const Dataset& dataset,
                        const std::set<int64_t>& full_ids, const RefineConfig& cfg,
                        TrainLog* log) {
    struct Sample {
        const ImageRecord* rec;
        BinaryMask rough;
        PointLabel point;
        BinaryMask gt;
    };

    // Teacher rough masks for every fully-labeled instance, guided by its
    // ground-truth point.
    std::vector<Sample> samples;
    for (const auto& rec : dataset.images) {
        if (!full_ids.count(rec.id)) continue;
        const auto anns = dataset.annotations_of(rec.id);
        if (anns.empty()) continue;
        std::vector<PointLabel> points;
        for (const InstanceAnnotation* a : anns)
            points.push_back(cfg.point_mode == "random" ? random_point(*a, cfg.seed)
                                                        : centroid_point(*a));
        const auto pseudo =
            generate_point_guided(teacher, {{&rec, points}});
        const auto& roughs = pseudo.by_image.at(rec.id);
        for (size_t i = 0; i < anns.size(); ++i) {
            Sample s;
            s.rec = &rec;
            s.rough = roughs[i].decode();
            s.point = points[i];
            s.gt = anns[i]->decode();
            samples.push_back(std::move(s));
        }
    }
    if (samples.empty()) throw ConfigError("train_refiner: no fully-labeled instances");

    RefineNet net(cfg);
    Rng rng(Rng::mix(cfg.seed, 0x2EF2));
    std::vector<int> order;
    size_t cursor = 0;
    auto next_index = [&]() {
        if (cursor >= order.size()) {
            order.resize(samples.size());
            for (size_t i = 0; i < samples.size(); ++i) order[i] = static_cast<int>(i);
            rng.shuffle(order);
            cursor = 0;
        }
        return order[cursor++];
    };

    const int sz = cfg.input_size;
    for (int step = 0; step < cfg.train_steps; ++step) {
        const int bs = std::min<int>(cfg.batch_size, static_cast<int>(samples.size()));
        std::vector<int> batch;
        for (int b = 0; b < bs; ++b) batch.push_back(next_index());

        std::vector<std::vector<Tensor>> item_grads(batch.size());
        std::vector<double> item_loss(batch.size(), 0.0);
#pragma omp parallel for schedule(static)
        for (size_t b = 0; b < batch.size(); ++b) {
            const Sample& s = samples[static_cast<size_t>(batch[b])];
            const RefineInput input = assemble_input(s.rec->pixels, s.rough, s.point, cfg);
            Tensor gt_t({1, s.gt.height, s.gt.width});
            for (int y = 0; y < s.gt.height; ++y)
                for (int x = 0; x < s.gt.width; ++x) gt_t(0, y, x) = s.gt.at(y, x) ? 1.0 : 0.0;
            const Tensor gt_crop = resize_nearest(crop_tensor(gt_t, input.crop), sz, sz);
            Tensor target({sz, sz});
            std::copy(gt_crop.data.begin(), gt_crop.data.end(), target.data.begin());
            item_grads[b] = net.params().grad_snapshot();
            item_loss[b] = net.loss_and_grads(input.channels, target, &item_grads[b]);
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

}  // namespace pointseg
