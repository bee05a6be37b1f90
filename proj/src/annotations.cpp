#include "pointseg/annotations.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "pointseg/errors.hpp"
#include "pointseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pointseg {

Rle encode_rle(const BinaryMask& mask) {
    if (mask.height <= 0 || mask.width <= 0)
        throw ShapeError("encode_rle: empty grid");
    Rle rle;
    rle.height = mask.height;
    rle.width = mask.width;
    uint8_t cur = 0;  // runs start with zeros
    uint32_t run = 0;
    for (int x = 0; x < mask.width; ++x) {
        for (int y = 0; y < mask.height; ++y) {
            const uint8_t v = mask.at(y, x) ? 1 : 0;
            if (v == cur) {
                ++run;
            } else {
                rle.counts.push_back(run);
                cur = v;
                run = 1;
            }
        }
    }
    rle.counts.push_back(run);
    return rle;
}

BinaryMask decode_rle(const Rle& rle) {
    uint64_t total = 0;
    for (uint32_t c : rle.counts) total += c;
    const uint64_t expected = static_cast<uint64_t>(rle.height) * rle.width;
    if (total != expected)
        throw AnnotationError("decode_rle: counts sum " + std::to_string(total) +
                              " != " + std::to_string(expected));
    BinaryMask mask(rle.height, rle.width);
    uint64_t idx = 0;
    uint8_t v = 0;
    for (uint32_t c : rle.counts) {
        for (uint32_t i = 0; i < c; ++i, ++idx) {
            const int x = static_cast<int>(idx / rle.height);
            const int y = static_cast<int>(idx % rle.height);
            mask.at(y, x) = v;
        }
        v = !v;
    }
    return mask;
}

InstanceAnnotation make_annotation(int64_t id, int64_t image_id, int category,
                                   const BinaryMask& mask) {
    InstanceAnnotation ann;
    ann.id = id;
    ann.image_id = image_id;
    ann.category = category;
    ann.mask = encode_rle(mask);
    int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
    int64_t area = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(y, x)) {
                ++area;
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    ann.area = area;
    if (area > 0) {
        ann.bbox[0] = x0;
        ann.bbox[1] = y0;
        ann.bbox[2] = x1 - x0 + 1;
        ann.bbox[3] = y1 - y0 + 1;
    }
    return ann;
}

const ImageRecord& Dataset::image_by_id(int64_t id) const {
    for (const auto& im : images)
        if (im.id == id) return im;
    throw AnnotationError("unknown image id " + std::to_string(id));
}

std::vector<const InstanceAnnotation*> Dataset::annotations_of(int64_t image_id) const {
    std::vector<const InstanceAnnotation*> out;
    for (const auto& a : annotations)
        if (a.image_id == image_id) out.push_back(&a);
    return out;
}

std::vector<PointLabel> Dataset::points_of(int64_t image_id) const {
    std::vector<PointLabel> out;
    for (const auto& [iid, p] : point_labels)
        if (iid == image_id) out.push_back(p);
    return out;
}

PointLabel centroid_point(const InstanceAnnotation& ann) {
    const BinaryMask mask = ann.decode();
    if (mask.empty_mask())
        throw AnnotationError("centroid_point: empty mask, annotation " + std::to_string(ann.id));
    double sx = 0, sy = 0;
    int n = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(y, x)) {
                sx += x;
                sy += y;
                ++n;
            }
    // Half-up rounding per axis.
    int cx = static_cast<int>(std::floor(sx / n + 0.5));
    int cy = static_cast<int>(std::floor(sy / n + 0.5));
    cx = std::clamp(cx, 0, mask.width - 1);
    cy = std::clamp(cy, 0, mask.height - 1);
    if (!mask.at(cy, cx)) {
        // Concave shape: snap to the nearest foreground pixel, ties broken
        // toward the smallest row then column.
        int64_t best = std::numeric_limits<int64_t>::max();
        int bx = cx, by = cy;
        for (int y = 0; y < mask.height; ++y)
            for (int x = 0; x < mask.width; ++x)
                if (mask.at(y, x)) {
                    const int64_t d = static_cast<int64_t>(y - cy) * (y - cy) +
                                      static_cast<int64_t>(x - cx) * (x - cx);
                    if (d < best) {
                        best = d;
                        by = y;
                        bx = x;
                    }
                }
        cx = bx;
        cy = by;
    }
    PointLabel p;
    p.x = cx;
    p.y = cy;
    p.category = ann.category;
    p.source_instance_id = ann.id;
    return p;
}

PointLabel random_point(const InstanceAnnotation& ann, uint64_t seed) {
    const BinaryMask mask = ann.decode();
    const int area = mask.area();
    if (area == 0)
        throw AnnotationError("random_point: empty mask, annotation " + std::to_string(ann.id));
    Rng rng(Rng::mix(seed, static_cast<uint64_t>(ann.id)));
    int k = static_cast<int>(rng.uniform_int(0, area - 1));
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(y, x) && k-- == 0) {
                PointLabel p;
                p.x = x;
                p.y = y;
                p.category = ann.category;
                p.source_instance_id = ann.id;
                return p;
            }
    throw AnnotationError("random_point: unreachable");
}

DatasetSplit split_dataset(const Dataset& dataset, double fraction, uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ConfigError("split_dataset: fraction must be in (0, 1], got " +
                          std::to_string(fraction));
    std::vector<int64_t> ids;
    ids.reserve(dataset.images.size());
    for (const auto& im : dataset.images) ids.push_back(im.id);
    std::sort(ids.begin(), ids.end());
    Rng rng(Rng::mix(seed, 0x5f17));
    rng.shuffle(ids);
    const size_t n_full = static_cast<size_t>(
        std::floor(fraction * static_cast<double>(ids.size()) + 0.5));
    DatasetSplit split;
    split.fraction = fraction;
    split.seed = seed;
    for (size_t i = 0; i < ids.size(); ++i)
        (i < n_full ? split.full_ids : split.point_ids).insert(ids[i]);
    return split;
}

namespace {

json rle_to_json(const Rle& rle) {
    return json{{"size", {rle.height, rle.width}}, {"counts", rle.counts}};
}

Rle rle_from_json(const json& j) {
    Rle rle;
    rle.height = j.at("size").at(0).get<int>();
    rle.width = j.at("size").at(1).get<int>();
    rle.counts = j.at("counts").get<std::vector<uint32_t>>();
    return rle;
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::string& json_path) {
    const fs::path root = fs::path(json_path).parent_path();
    const fs::path imgdir = root / "images";
    fs::create_directories(imgdir);

    json doc;
    doc["images"] = json::array();
    for (const auto& im : dataset.images) {
        doc["images"].push_back({{"id", im.id},
                                 {"width", im.width},
                                 {"height", im.height},
                                 {"file_name", im.file_name}});
        if (!im.pixels.rgb.empty())
            write_ppm(im.pixels, (imgdir / im.file_name).string());
    }
    doc["annotations"] = json::array();
    for (const auto& a : dataset.annotations) {
        json ja{{"id", a.id},
                {"image_id", a.image_id},
                {"category_id", a.category},
                {"segmentation", rle_to_json(a.mask)},
                {"bbox", {a.bbox[0], a.bbox[1], a.bbox[2], a.bbox[3]}},
                {"area", a.area}};
        if (a.score) ja["score"] = *a.score;
        if (a.source_level) ja["source_level"] = *a.source_level;
        if (a.guiding_point)
            ja["guiding_point"] = {a.guiding_point->x, a.guiding_point->y};
        if (a.empty_flag) ja["empty"] = true;
        doc["annotations"].push_back(std::move(ja));
    }
    doc["categories"] = json::array();
    for (const auto& c : dataset.categories)
        doc["categories"].push_back({{"id", c.id}, {"name", c.name}});
    doc["point_labels"] = json::array();
    for (const auto& [iid, p] : dataset.point_labels) {
        json jp{{"image_id", iid}, {"x", p.x}, {"y", p.y}, {"category_id", p.category}};
        if (p.source_instance_id) jp["source_instance_id"] = *p.source_instance_id;
        doc["point_labels"].push_back(std::move(jp));
    }
    std::ofstream f(json_path);
    if (!f) throw InputError("cannot open for writing: " + json_path);
    f << doc.dump(1) << "\n";
}

Dataset read_dataset(const std::string& json_path) {
    std::ifstream f(json_path);
    if (!f) throw InputError("cannot open: " + json_path);
    json doc;
    try {
        doc = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("dataset parse error: ") + e.what());
    }
    for (const char* field : {"images", "annotations", "categories"})
        if (!doc.contains(field))
            throw ParseError(std::string("dataset missing required field `") + field + "`");

    Dataset ds;
    const fs::path imgdir = fs::path(json_path).parent_path() / "images";
    try {
        for (const auto& ji : doc["images"]) {
            ImageRecord im;
            im.id = ji.at("id").get<int64_t>();
            im.width = ji.at("width").get<int>();
            im.height = ji.at("height").get<int>();
            im.file_name = ji.at("file_name").get<std::string>();
            const fs::path p = imgdir / im.file_name;
            if (fs::exists(p)) im.pixels = read_ppm(p.string());
            ds.images.push_back(std::move(im));
        }
        std::set<int64_t> image_ids;
        for (const auto& im : ds.images) image_ids.insert(im.id);
        for (const auto& ja : doc["annotations"]) {
            InstanceAnnotation a;
            a.id = ja.at("id").get<int64_t>();
            a.image_id = ja.at("image_id").get<int64_t>();
            if (!image_ids.count(a.image_id))
                throw AnnotationError("annotation " + std::to_string(a.id) +
                                      " references unknown image_id " +
                                      std::to_string(a.image_id));
            a.category = ja.at("category_id").get<int>();
            a.mask = rle_from_json(ja.at("segmentation"));
            for (int i = 0; i < 4; ++i) a.bbox[i] = ja.at("bbox").at(i).get<double>();
            a.area = ja.at("area").get<int64_t>();
            if (ja.contains("score")) a.score = ja["score"].get<double>();
            if (ja.contains("source_level")) a.source_level = ja["source_level"].get<int>();
            if (ja.contains("guiding_point")) {
                PointLabel p;
                p.x = ja["guiding_point"].at(0).get<int>();
                p.y = ja["guiding_point"].at(1).get<int>();
                p.category = a.category;
                a.guiding_point = p;
            }
            if (ja.contains("empty")) a.empty_flag = ja["empty"].get<bool>();
            ds.annotations.push_back(std::move(a));
        }
        for (const auto& jc : doc["categories"])
            ds.categories.push_back({jc.at("id").get<int>(), jc.at("name").get<std::string>()});
        if (doc.contains("point_labels")) {
            for (const auto& jp : doc["point_labels"]) {
                PointLabel p;
                p.x = jp.at("x").get<int>();
                p.y = jp.at("y").get<int>();
                p.category = jp.at("category_id").get<int>();
                if (jp.contains("source_instance_id"))
                    p.source_instance_id = jp["source_instance_id"].get<int64_t>();
                const int64_t iid = jp.at("image_id").get<int64_t>();
                if (!image_ids.count(iid))
                    throw AnnotationError("point label references unknown image_id " +
                                          std::to_string(iid));
                ds.point_labels.emplace_back(iid, p);
            }
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("dataset field error: ") + e.what());
    }
    return ds;
}

void write_split(const DatasetSplit& split, const std::string& path) {
    json doc{{"fraction", split.fraction},
             {"seed", split.seed},
             {"full_ids", split.full_ids},
             {"point_ids", split.point_ids}};
    std::ofstream f(path);
    if (!f) throw InputError("cannot open for writing: " + path);
    f << doc.dump(1) << "\n";
}

DatasetSplit read_split(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open: " + path);
    json doc;
    try {
        doc = json::parse(f);
        DatasetSplit s;
        s.fraction = doc.at("fraction").get<double>();
        s.seed = doc.at("seed").get<uint64_t>();
        for (const auto& v : doc.at("full_ids")) s.full_ids.insert(v.get<int64_t>());
        for (const auto& v : doc.at("point_ids")) s.point_ids.insert(v.get<int64_t>());
        return s;
    } catch (const json::exception& e) {
        throw ParseError(std::string("split parse error: ") + e.what());
    }
}

}  // namespace pointseg
