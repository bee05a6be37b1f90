#pragma once

#include <set>
#include <string>
#include <vector>

#include "pointseg/annotations.hpp"
#include "pointseg/nn.hpp"
#include "pointseg/segnet.hpp"

namespace pointseg {

// Pixel box in image coordinates, max edges exclusive.
struct CropRegion {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;

    int width() const { return x_max - x_min; }
    int height() const { return y_max - y_min; }
};

struct RefineConfig {
    int input_size = 256;
    double sigma = 6.0;
    double box_scale = 2.0;
    int batch_size = 16;
    double learning_rate = 1e-4;  // cosine decay
    int train_steps = 300;
    uint64_t seed = 1;
    int num_classes = 3;
    int fallback_box = 64;  // point-centered crop when the rough mask is empty
    double binarize_threshold = 0.5;
    std::string point_mode = "centroid";  // or "random"

    std::string to_json() const;
    static RefineConfig from_json(const std::string& text);
};

// (3+1+C)-channel crop stack: image, rough mask, point heatmap.
struct RefineInput {
    Tensor channels;  // [3+1+C, input_size, input_size]
    CropRegion crop;
};

CropRegion box_from_mask(const BinaryMask& mask);
CropRegion expand_box(const CropRegion& box, double factor, int image_w, int image_h);

// Gaussian peak of exactly 1 at the point, on the point's category channel.
Tensor encode_point_heatmap(const PointLabel& point, int height, int width,
                            int num_categories, double sigma = 6.0);

RefineInput assemble_input(const Image& image, const BinaryMask& rough_mask,
                           const PointLabel& point, const RefineConfig& cfg);

class RefineNet {
public:
    explicit RefineNet(const RefineConfig& cfg);

    const RefineConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Soft mask in (0,1) at input_size resolution.
    Tensor forward(const RefineInput& input) const;

    void save(const std::string& path) const;  // also writes a config sidecar
    void load(const std::string& path);
    static RefineNet load_from(const std::string& path);

    // Training internals (shared with gradient checks): dice loss of one
    // sample against a binary target at input_size resolution.
    double loss_and_grads(const Tensor& input_channels, const Tensor& target,
                          std::vector<Tensor>* grad_accum);

private:
    int build_graph(Tape& tape, const Tensor& input) const;

    RefineConfig cfg_;
    ParamStore params_;
};

// Refined annotation pasted back at the crop region; category follows the
// point. An all-zero refinement keeps the rough mask and sets empty_flag.
InstanceAnnotation refine(const RefineNet& net, const Image& image,
                          const BinaryMask& rough_mask, const PointLabel& point,
                          int64_t image_id = 0, int64_t ann_id = 1);

// Rough masks come from teacher point-guided generation on the fully-labeled
// images; supervision is the ground-truth mask crop, dice loss.
RefineNet train_refiner(const SegNet& teacher, const Dataset& dataset,
                        const std::set<int64_t>& full_ids, const RefineConfig& cfg,
                        TrainLog* log = nullptr);

}  // namespace pointseg
