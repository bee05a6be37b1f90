#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace pointseg {

// Dense row-major tensor of doubles. Activations use CHW layout, conv
// weights OIHW. Double precision keeps the finite-difference gradient
// checks meaningful.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel(shape), 0.0) {}

    static size_t numel(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= static_cast<size_t>(d);
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    // 1D
    double& operator()(int i) { return data[static_cast<size_t>(i)]; }
    double operator()(int i) const { return data[static_cast<size_t>(i)]; }
    // 2D [h,w]
    double& operator()(int y, int x) {
        return data[static_cast<size_t>(y) * shape[1] + x];
    }
    double operator()(int y, int x) const {
        return data[static_cast<size_t>(y) * shape[1] + x];
    }
    // 3D [c,h,w]
    double& operator()(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double operator()(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    // 4D [o,i,h,w]
    double& operator()(int o, int i, int y, int x) {
        return data[((static_cast<size_t>(o) * shape[1] + i) * shape[2] + y) * shape[3] + x];
    }
    double operator()(int o, int i, int y, int x) const {
        return data[((static_cast<size_t>(o) * shape[1] + i) * shape[2] + y) * shape[3] + x];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    void add_scaled(const Tensor& o, double k) {
        assert(data.size() == o.data.size());
        for (size_t i = 0; i < data.size(); ++i) data[i] += k * o.data[i];
    }
};

}  // namespace pointseg
