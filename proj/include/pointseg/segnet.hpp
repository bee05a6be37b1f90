#pragma once

#include <array>
#include <set>
#include <string>
#include <vector>

#include "pointseg/annotations.hpp"
#include "pointseg/image.hpp"
#include "pointseg/nn.hpp"

namespace pointseg {

inline constexpr int kNumLevels = 5;  // P2..P6, strides 4..64

struct NetConfig {
    int num_classes = 3;
    int mask_channels = 16;  // E
    std::array<int, kNumLevels> grid_sizes = {20, 18, 12, 8, 6};
    // Instance scale = 4*sqrt(area), pixels; ranges overlap on purpose.
    std::array<std::pair<double, double>, kNumLevels> scale_ranges = {
        {{0.0, 64.0}, {32.0, 128.0}, {64.0, 256.0}, {128.0, 512.0}, {256.0, 1e9}}};
    double center_shrink = 0.2;

    int stem_channels = 12;
    std::array<int, 4> stage_channels = {16, 24, 32, 32};
    int fpn_channels = 24;

    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    double focal_weight = 2.0;
    double dice_weight = 3.0;

    double learning_rate = 2e-3;
    int train_steps = 500;
    int batch_size = 8;
    uint64_t seed = 1;

    double binarize_threshold = 0.5;
    double nms_iou = 0.6;

    std::string to_json() const;
    static NetConfig from_json(const std::string& text);
};

// Post-activation outputs of one pyramid level's proposal branch.
struct ProposalGrid {
    int level = 1;   // 1-based, level 1 = P2 (finest)
    Tensor scores;   // [C,S,S], sigmoid applied
    Tensor kernels;  // [E,S,S]
};

struct Proposal {
    int level = 1;
    int row = 0;
    int col = 0;
    int category = 1;
    double score = 0.0;
    std::vector<double> kernel;
};

struct ForwardResult {
    std::vector<ProposalGrid> grids;
    Tensor mask_feature;  // [E, H/4, W/4]
};

// sigma(kernel . feature) per pixel (1x1 dynamic convolution).
Tensor mask_from_kernel(const std::vector<double>& kernel, const Tensor& mask_feature);

struct PosSample {
    int level = 0;  // 0-based internally
    int row = 0;
    int col = 0;
    int category = 1;
    int instance_index = 0;
};

struct Targets {
    std::array<std::vector<int8_t>, kNumLevels> category_target;  // S*S, 0 = background
    std::vector<PosSample> positives;
    std::vector<Tensor> instance_masks;  // [H/4, W/4] per annotation, binary
};

Targets assign_targets(const std::vector<const InstanceAnnotation*>& annotations,
                       int image_h, int image_w, const NetConfig& cfg);

class SegNet {
public:
    explicit SegNet(const NetConfig& cfg);

    const NetConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    ForwardResult forward(const Image& image) const;
    ForwardResult forward(const Tensor& image_chw) const;

    // All cells whose best-category score reaches tau, before NMS.
    std::vector<Proposal> propose(const Image& image, double tau) const;

    std::vector<InstanceAnnotation> infer(const Image& image, int64_t image_id, double tau,
                                          double binarize_threshold) const;
    std::vector<InstanceAnnotation> infer(const Image& image, int64_t image_id,
                                          double tau) const {
        return infer(image, image_id, tau, cfg_.binarize_threshold);
    }

    // Writes the archive plus a `<path>.config.json` sidecar describing the
    // architecture, so load_from can rebuild the net unaided.
    void save(const std::string& path) const;
    void load(const std::string& path);
    static SegNet load_from(const std::string& path);

    // Training internals, shared with the gradient-check tests.
    struct Prepared {
        Tensor image;  // [3,H,W]
        Targets targets;
    };
    Prepared prepare(const Image& image,
                     const std::vector<const InstanceAnnotation*>& annotations) const;
    double loss_and_grads(const std::vector<const Prepared*>& batch,
                          std::vector<Tensor>* grad_accum);

private:
    struct Graph {
        std::array<int, kNumLevels> cate_logits;
        std::array<int, kNumLevels> kernel_grids;
        int mask_feature;
    };
    Graph build_graph(Tape& tape, const Tensor& image) const;

    NetConfig cfg_;
    ParamStore params_;
};

struct TrainLog {
    std::vector<double> loss_curve;
};

struct TrainingExample {
    const Image* image = nullptr;
    int64_t image_id = 0;
    std::vector<const InstanceAnnotation*> annotations;
};

SegNet train_network(const std::vector<TrainingExample>& examples, const NetConfig& cfg,
                     TrainLog* log = nullptr);

// Teacher = the network trained on the fully-labeled subset only.
SegNet train_teacher(const Dataset& dataset, const std::set<int64_t>& full_ids,
                     const NetConfig& cfg, TrainLog* log = nullptr);

}  // namespace pointseg
