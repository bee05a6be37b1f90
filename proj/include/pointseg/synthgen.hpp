#pragma once

#include <cstdint>

#include "pointseg/annotations.hpp"

namespace pointseg {

// Synthetic shapes dataset: disks, squares, triangles with exact masks.
struct SynthSpec {
    int n_images = 16;
    int width = 64;
    int height = 64;
    int min_instances = 1;
    int max_instances = 4;
    int min_size = 6;    // shape diameter/side, pixels
    int max_size = 28;
    double max_overlap_iou = 0.0;
    double noise_stddev = 6.0;  // additive pixel noise, 8-bit scale
    uint64_t seed = 0;
};

struct SynthResult {
    Dataset dataset;
    int placement_failures = 0;  // instances skipped after 1000 rejections
};

SynthResult generate(const SynthSpec& spec);

}  // namespace pointseg
