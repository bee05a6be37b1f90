#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pointseg/image.hpp"

namespace pointseg {

// Binary mask over an H×W grid, row-major.
struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> data;

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0) {}

    uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }

    int area() const {
        int n = 0;
        for (uint8_t v : data) n += (v != 0);
        return n;
    }
    bool empty_mask() const { return area() == 0; }
};

// Uncompressed column-major run-length encoding, first count is the leading
// run of zeros (COCO "uncompressed RLE" convention).
struct Rle {
    int height = 0;
    int width = 0;
    std::vector<uint32_t> counts;
};

Rle encode_rle(const BinaryMask& mask);
BinaryMask decode_rle(const Rle& rle);

struct PointLabel {
    int x = 0;  // column
    int y = 0;  // row
    int category = 0;
    std::optional<int64_t> source_instance_id;
};

struct InstanceAnnotation {
    int64_t id = 0;
    int64_t image_id = 0;
    int category = 0;
    Rle mask;
    double bbox[4] = {0, 0, 0, 0};  // x_min, y_min, width, height
    int64_t area = 0;

    // Pseudo-label provenance; absent on ground truth.
    std::optional<double> score;
    std::optional<int> source_level;
    std::optional<PointLabel> guiding_point;
    bool empty_flag = false;  // sentinel: binarized mask came out empty

    BinaryMask decode() const { return decode_rle(mask); }
};

// Builds mask/bbox/area consistently from a decoded mask.
InstanceAnnotation make_annotation(int64_t id, int64_t image_id, int category,
                                   const BinaryMask& mask);

struct ImageRecord {
    int64_t id = 0;
    int width = 0;
    int height = 0;
    std::string file_name;
    Image pixels;  // desk-scale datasets keep pixels in memory
};

struct Category {
    int id = 0;
    std::string name;
};

struct Dataset {
    std::vector<ImageRecord> images;
    std::vector<InstanceAnnotation> annotations;
    std::vector<Category> categories;
    std::vector<std::pair<int64_t, PointLabel>> point_labels;  // (image_id, point)

    const ImageRecord& image_by_id(int64_t id) const;
    std::vector<const InstanceAnnotation*> annotations_of(int64_t image_id) const;
    std::vector<PointLabel> points_of(int64_t image_id) const;
};

struct DatasetSplit {
    std::set<int64_t> full_ids;
    std::set<int64_t> point_ids;
    double fraction = 1.0;
    uint64_t seed = 0;
};

PointLabel centroid_point(const InstanceAnnotation& ann);
PointLabel random_point(const InstanceAnnotation& ann, uint64_t seed);
DatasetSplit split_dataset(const Dataset& dataset, double fraction, uint64_t seed);

// COCO-style JSON document plus a sibling images/ directory of ppm files.
Dataset read_dataset(const std::string& json_path);
void write_dataset(const Dataset& dataset, const std::string& json_path);

// Split persistence (ids plus derived point labels).
void write_split(const DatasetSplit& split, const std::string& path);
DatasetSplit read_split(const std::string& path);

}  // namespace pointseg
