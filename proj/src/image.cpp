#include "pointseg/image.hpp"

#include <cstdio>
#include <fstream>

#include "pointseg/errors.hpp"

namespace pointseg {

Tensor Image::to_tensor() const {
    Tensor t({3, height, width});
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c)
                t(c, y, x) = at(y, x, c) / 255.0;
    return t;
}

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open for writing: " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
    if (!f) throw InputError("short write: " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open: " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
        throw ParseError("not a P6/255 ppm: " + path);
    f.get();  // single whitespace after header
    Image img(w, h);
    f.read(reinterpret_cast<char*>(img.rgb.data()),
           static_cast<std::streamsize>(img.rgb.size()));
    if (f.gcount() != static_cast<std::streamsize>(img.rgb.size()))
        throw ParseError("truncated ppm payload: " + path);
    return img;
}

}  // namespace pointseg
