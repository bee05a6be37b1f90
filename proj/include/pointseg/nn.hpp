#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pointseg/rng.hpp"
#include "pointseg/tensor.hpp"

namespace pointseg {

// Named parameter with Adam state.
struct ParamTensor {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m, v;  // Adam moments
};

class ParamStore {
public:
    int add(const std::string& name, std::vector<int> shape);
    int find(const std::string& name) const;  // -1 when absent

    ParamTensor& operator[](int i) { return params_[static_cast<size_t>(i)]; }
    const ParamTensor& operator[](int i) const { return params_[static_cast<size_t>(i)]; }
    size_t count() const { return params_.size(); }
    size_t total_values() const;

    // He-normal init for conv kernels (fan-in from shape), zero biases.
    void init_he_normal(Rng& rng);
    void zero_grads();

    // grads -> weights; cosine-decayed Adam step, `t` is 1-based.
    void adam_step(double lr, int t, double beta1 = 0.9, double beta2 = 0.999,
                   double eps = 1e-8);

    std::vector<Tensor> grad_snapshot() const;
    void accumulate_grads(const std::vector<Tensor>& item_grads, double scale);

private:
    std::vector<ParamTensor> params_;
    std::unordered_map<std::string, int> by_name_;
};

// Reverse-mode tape over whole-tensor ops. One tape per sample; nodes are
// created in topological order so the backward sweep is a reverse iteration.
class Tape {
public:
    Tape(ParamStore* params, bool recording)
        : params_(params), recording_(recording) {}

    int leaf(Tensor value);
    int param(int param_index);

    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    Tensor& grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }

    int conv2d(int x, int w, int b, int stride, int pad);
    int relu(int x);
    int add(int a, int b);
    int resize_bilinear(int x, int out_h, int out_w);
    int append_coords(int x);                      // +2 channels in [-1,1]
    int gather_cell(int grid, int row, int col);   // [E,S,S] -> [E]
    int dyn_mask_logits(int feat, int kernel);     // [E,h,w] x [E] -> [h,w]

    // Scalar loss nodes.
    int dice_with_logits(int logits, const Tensor& target);
    int focal_with_logits(int logits, const std::vector<int8_t>& target_class,
                          double alpha, double gamma);
    int scale(int a, double k);
    int sum2(int a, int b);

    void backward(int loss_id);

    // After backward: per-parameter grads accumulated on this tape.
    void export_param_grads(std::vector<Tensor>& accum, double scale) const;

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        std::function<void()> back;
    };

    int push(Tensor value, bool needs_grad, std::function<void()> back);
    void ensure_grad(int id);

    std::vector<Node> nodes_;
    std::unordered_map<int, int> param_node_;  // param index -> node id
    ParamStore* params_;
    bool recording_;
};

// Standalone tensor helpers shared by inference paths.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
Tensor resize_nearest(const Tensor& x, int out_h, int out_w);
void sigmoid_inplace(Tensor& x);

double cosine_lr(double base_lr, int step, int total_steps);

}  // namespace pointseg
