#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pointseg/tensor.hpp"

namespace pointseg {

// 8-bit RGB image, row-major HWC.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // height*width*3

    Image() = default;
    Image(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, 0) {}

    uint8_t& at(int y, int x, int ch) {
        return rgb[(static_cast<size_t>(y) * width + x) * 3 + ch];
    }
    uint8_t at(int y, int x, int ch) const {
        return rgb[(static_cast<size_t>(y) * width + x) * 3 + ch];
    }

    // [3,H,W] tensor scaled to [0,1].
    Tensor to_tensor() const;
};

// Binary PPM (P6), the lossless raster format used for dataset images.
void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

}  // namespace pointseg
