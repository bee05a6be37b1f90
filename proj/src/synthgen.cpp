#include "pointseg/synthgen.hpp"

#include <algorithm>
#include <cmath>

#include "pointseg/errors.hpp"
#include "pointseg/eval.hpp"
#include "pointseg/rng.hpp"

namespace pointseg {

namespace {

BinaryMask raster_disk(int h, int w, double cx, double cy, double r) {
    BinaryMask m(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= r * r) m.at(y, x) = 1;
        }
    return m;
}

BinaryMask raster_square(int h, int w, double cx, double cy, double half) {
    BinaryMask m(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (std::abs(x - cx) <= half && std::abs(y - cy) <= half) m.at(y, x) = 1;
    return m;
}

// Upward-pointing isoceles triangle inscribed in a side×side box.
BinaryMask raster_triangle(int h, int w, double cx, double cy, double half) {
    BinaryMask m(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double fy = (y - (cy - half)) / (2.0 * half);  // 0 at apex row
            if (fy < 0.0 || fy > 1.0) continue;
            if (std::abs(x - cx) <= half * fy) m.at(y, x) = 1;
        }
    return m;
}

}  // namespace

SynthResult generate(const SynthSpec& spec) {
    if (spec.n_images <= 0 || spec.width <= 0 || spec.height <= 0)
        throw ConfigError("synth spec: non-positive dimensions");
    if (spec.max_size >= std::min(spec.width, spec.height))
        throw ConfigError("synth spec: size range exceeds image");

    SynthResult result;
    Dataset& ds = result.dataset;
    ds.categories = {{1, "disk"}, {2, "square"}, {3, "triangle"}};

    int64_t next_ann_id = 1;
    for (int i = 0; i < spec.n_images; ++i) {
        Rng rng(Rng::mix(spec.seed, 0xDA7A0000ULL + static_cast<uint64_t>(i)));
        ImageRecord rec;
        rec.id = i + 1;
        rec.width = spec.width;
        rec.height = spec.height;
        {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "img_%06d.ppm", i + 1);
            rec.file_name = buf;
        }
        Image img(spec.width, spec.height);
        const double bg[3] = {rng.uniform(20, 70), rng.uniform(20, 70), rng.uniform(20, 70)};
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x)
                for (int c = 0; c < 3; ++c)
                    img.at(y, x, c) = static_cast<uint8_t>(std::clamp(
                        bg[c] + rng.normal(0.0, spec.noise_stddev), 0.0, 255.0));

        const int n_inst =
            static_cast<int>(rng.uniform_int(spec.min_instances, spec.max_instances));
        std::vector<BinaryMask> placed;
        for (int k = 0; k < n_inst; ++k) {
            bool ok = false;
            for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
                const int category = static_cast<int>(rng.uniform_int(1, 3));
                const double size = rng.uniform(spec.min_size, spec.max_size);
                const double half = size / 2.0;
                const double cx = rng.uniform(half + 1, spec.width - half - 2);
                const double cy = rng.uniform(half + 1, spec.height - half - 2);
                BinaryMask mask;
                switch (category) {
                    case 1: mask = raster_disk(spec.height, spec.width, cx, cy, half); break;
                    case 2: mask = raster_square(spec.height, spec.width, cx, cy, half); break;
                    default: mask = raster_triangle(spec.height, spec.width, cx, cy, half);
                }
                if (mask.area() < 4) continue;
                bool overlap_ok = true;
                for (const auto& other : placed)
                    if (mask_iou(mask, other) > spec.max_overlap_iou) {
                        overlap_ok = false;
                        break;
                    }
                if (!overlap_ok) continue;

                // Fill colors sit above the background band and lean toward a
                // per-category channel, with enough spread to stay non-trivial.
                double color[3];
                for (int c = 0; c < 3; ++c)
                    color[c] = c == category - 1 ? rng.uniform(150, 245)
                                                 : rng.uniform(40, 130);
                for (int y = 0; y < spec.height; ++y)
                    for (int x = 0; x < spec.width; ++x)
                        if (mask.at(y, x))
                            for (int c = 0; c < 3; ++c)
                                img.at(y, x, c) = static_cast<uint8_t>(std::clamp(
                                    color[c] + rng.normal(0.0, spec.noise_stddev), 0.0, 255.0));

                ds.annotations.push_back(
                    make_annotation(next_ann_id++, rec.id, category, mask));
                placed.push_back(std::move(mask));
                ok = true;
            }
            if (!ok) ++result.placement_failures;
        }
        rec.pixels = std::move(img);
        ds.images.push_back(std::move(rec));
    }
    return result;
}

}  // namespace pointseg
