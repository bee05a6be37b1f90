#include "pointseg/nn.hpp"

#include <algorithm>
#include <cmath>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "pointseg/errors.hpp"

namespace pointseg {

#ifdef __GLIBC__
// Tensor buffers churn quickly; keep freed blocks on the heap instead of
// handing them back to the kernel page by page.
static const bool malloc_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
    return true;
}();
#endif

int ParamStore::add(const std::string& name, std::vector<int> shape) {
    if (by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    ParamTensor p;
    p.name = name;
    p.value = Tensor(shape);
    p.grad = Tensor(shape);
    p.m = Tensor(shape);
    p.v = Tensor(std::move(shape));
    params_.push_back(std::move(p));
    const int idx = static_cast<int>(params_.size()) - 1;
    by_name_[name] = idx;
    return idx;
}

int ParamStore::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? -1 : it->second;
}

size_t ParamStore::total_values() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void ParamStore::init_he_normal(Rng& rng) {
    for (auto& p : params_) {
        if (p.value.shape.size() >= 2) {
            size_t fan_in = 1;
            for (size_t d = 1; d < p.value.shape.size(); ++d)
                fan_in *= static_cast<size_t>(p.value.shape[d]);
            const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (auto& v : p.value.data) v = rng.normal(0.0, std);
        } else {
            p.value.fill(0.0);  // biases
        }
    }
}

void ParamStore::zero_grads() {
    for (auto& p : params_) p.grad.fill(0.0);
}

void ParamStore::adam_step(double lr, int t, double beta1, double beta2, double eps) {
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (auto& p : params_) {
        for (size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad.data[i];
            p.m.data[i] = beta1 * p.m.data[i] + (1.0 - beta1) * g;
            p.v.data[i] = beta2 * p.v.data[i] + (1.0 - beta2) * g * g;
            const double mhat = p.m.data[i] / bc1;
            const double vhat = p.v.data[i] / bc2;
            p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

std::vector<Tensor> ParamStore::grad_snapshot() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(Tensor(p.value.shape));
    return out;
}

void ParamStore::accumulate_grads(const std::vector<Tensor>& item_grads, double scale) {
    for (size_t i = 0; i < params_.size(); ++i)
        params_[i].grad.add_scaled(item_grads[i], scale);
}

double cosine_lr(double base_lr, int step, int total_steps) {
    if (total_steps <= 1) return base_lr;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return 0.5 * base_lr * (1.0 + std::cos(3.14159265358979323846 * t));
}

// ---------------------------------------------------------------------------
// Tape

int Tape::push(Tensor value, bool needs_grad, std::function<void()> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (recording_ && needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::ensure_grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
}

int Tape::leaf(Tensor value) { return push(std::move(value), false, {}); }

int Tape::param(int param_index) {
    auto it = param_node_.find(param_index);
    if (it != param_node_.end()) return it->second;
    const int id = push((*params_)[param_index].value, true, {});
    param_node_[param_index] = id;
    return id;
}

void Tape::backward(int loss_id) {
    ensure_grad(loss_id);
    grad(loss_id).fill(1.0);
    for (int id = loss_id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.back && !n.grad.data.empty()) n.back();
    }
}

void Tape::export_param_grads(std::vector<Tensor>& accum, double scale) const {
    for (const auto& [pidx, nid] : param_node_) {
        const Node& n = nodes_[static_cast<size_t>(nid)];
        if (!n.grad.data.empty())
            accum[static_cast<size_t>(pidx)].add_scaled(n.grad, scale);
    }
}

namespace {

// Even/odd phase split of input rows: stride-2 taps then read contiguously,
// since x(c, iy, 2*ox + d) becomes phase[d&1][ox + d/2].
struct PhaseSplit {
    std::vector<double> even, odd;
    int we = 0, wo = 0, h = 0;

    void build(const double* x, int ic, int height, int wd) {
        h = height;
        we = (wd + 1) / 2;
        wo = wd / 2;
        even.resize(static_cast<size_t>(ic) * h * we);
        odd.resize(static_cast<size_t>(ic) * h * wo);
        for (int c = 0; c < ic; ++c)
            for (int iy = 0; iy < h; ++iy) {
                const double* row = x + (static_cast<size_t>(c) * h + iy) * wd;
                double* er = &even[(static_cast<size_t>(c) * h + iy) * we];
                double* orow = wo ? &odd[(static_cast<size_t>(c) * h + iy) * wo] : nullptr;
                for (int j = 0; j < wo; ++j) {
                    er[j] = row[2 * j];
                    orow[j] = row[2 * j + 1];
                }
                if (we > wo) er[we - 1] = row[2 * (we - 1)];
            }
    }

    // Pointer p such that p[ox] == x(c, iy, 2*ox + d).
    const double* tap_row(int c, int iy, int d) const {
        if (d & 1) return &odd[(static_cast<size_t>(c) * h + iy) * wo] + (d - 1) / 2;
        return &even[(static_cast<size_t>(c) * h + iy) * we] + d / 2;
    }
};

}  // namespace

int Tape::conv2d(int xid, int wid, int bid, int stride, int pad) {
    const Tensor& x = value(xid);
    const Tensor& w = value(wid);
    const Tensor& b = value(bid);
    const int ic = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int oc = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != ic) throw ShapeError("conv2d: channel mismatch");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;

    // One output row is accumulated in L1 across all (ic, tap) contributions
    // before it is stored; the plain tap-outer loop restreams the output
    // plane ic*kh*kw times and is memory-bound.
    Tensor out({oc, oh, ow});
    PhaseSplit split;
    if (stride == 2) split.build(x.data.data(), ic, h, wd);
    std::vector<double> acc(static_cast<size_t>(ow));
    std::vector<int> kx_lo(static_cast<size_t>(kw)), kx_hi(static_cast<size_t>(kw));
    for (int kx = 0; kx < kw; ++kx) {
        kx_lo[static_cast<size_t>(kx)] = std::max(0, (pad - kx + stride - 1) / stride);
        kx_hi[static_cast<size_t>(kx)] = std::min(ow, (wd - 1 - kx + pad) / stride + 1);
    }
    for (int o = 0; o < oc; ++o) {
        double* op = &out.data[static_cast<size_t>(o) * oh * ow];
        const double bias = b(o);
        for (int oy = 0; oy < oh; ++oy) {
            std::fill(acc.begin(), acc.end(), bias);
            const bool fused3 =
                stride == 1 && kh == 3 && kw == 3 && pad == 1 && ow == wd;
            for (int c = 0; c < ic; ++c) {
                const double* xp = &x.data[static_cast<size_t>(c) * h * wd];
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const double* xrow = xp + static_cast<size_t>(iy) * wd;
                    if (fused3) {
                        // all three taps of the row in one pass
                        const double w0 = w(o, c, ky, 0), w1 = w(o, c, ky, 1),
                                     w2 = w(o, c, ky, 2);
                        double* __restrict arow = acc.data();
                        const double* __restrict row = xrow;
                        if (ow == 1) {
                            arow[0] += w1 * row[0];
                            continue;
                        }
                        arow[0] += w1 * row[0] + w2 * row[1];
                        for (int ox = 1; ox < ow - 1; ++ox)
                            arow[ox] += w0 * row[ox - 1] + w1 * row[ox] + w2 * row[ox + 1];
                        arow[ow - 1] += w0 * row[ow - 2] + w1 * row[ow - 1];
                        continue;
                    }
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv = w(o, c, ky, kx);
                        if (wv == 0.0) continue;
                        const int ox0 = kx_lo[static_cast<size_t>(kx)];
                        const int ox1 = kx_hi[static_cast<size_t>(kx)];
                        double* __restrict arow = acc.data();
                        if (stride == 1) {
                            const double* __restrict row = xrow - pad + kx;
                            for (int ox = ox0; ox < ox1; ++ox) arow[ox] += wv * row[ox];
                        } else {
                            const double* __restrict row = split.tap_row(c, iy, kx - pad);
                            for (int ox = ox0; ox < ox1; ++ox) arow[ox] += wv * row[ox];
                        }
                    }
                }
            }
            std::copy(acc.begin(), acc.end(), op + static_cast<size_t>(oy) * ow);
        }
    }

    const int id = push(std::move(out), true, {});
    if (!recording_) return id;
    nodes_[static_cast<size_t>(id)].back = [this, xid, wid, bid, id, stride, pad]() {
        const Tensor& x = value(xid);
        const Tensor& w = value(wid);
        const Tensor& go = nodes_[static_cast<size_t>(id)].grad;
        const int ic = x.dim(0), h = x.dim(1), wd = x.dim(2);
        const int oc = w.dim(0), kh = w.dim(2), kw = w.dim(3);
        const int oh = go.dim(1), ow = go.dim(2);

        ensure_grad(wid);
        ensure_grad(bid);
        Tensor& gw = grad(wid);
        Tensor& gb = grad(bid);
        const bool want_gx = nodes_[static_cast<size_t>(xid)].needs_grad ||
                             nodes_[static_cast<size_t>(xid)].back != nullptr;
        Tensor* gx = nullptr;
        if (want_gx) {
            ensure_grad(xid);
            gx = &grad(xid);
        }

        auto out_range = [stride, pad](int k, int in_n, int out_n) {
            const int lo = std::max(0, (pad - k + stride - 1) / stride);
            const int hi = std::min(out_n, (in_n - 1 - k + pad) / stride + 1);
            return std::pair<int, int>{lo, std::max(lo, hi)};
        };

        PhaseSplit split;
        if (stride == 2) split.build(x.data.data(), ic, h, wd);

        // Weight/bias gradients: all taps of one (o,c) pair accumulate in a
        // single pass over the output rows.
        for (int o = 0; o < oc; ++o) {
            const double* gop = &go.data[static_cast<size_t>(o) * oh * ow];
            double acc = 0.0;
            for (int i = 0; i < oh * ow; ++i) acc += gop[i];
            gb(o) += acc;
            const bool fused3 =
                stride == 1 && kh == 3 && kw == 3 && pad == 1 && ow == wd && oh == h;
            for (int c = 0; c < ic; ++c) {
                const double* xp = &x.data[static_cast<size_t>(c) * h * wd];
                for (int ky = 0; ky < kh; ++ky) {
                    const auto [oy0, oy1] = out_range(ky, h, oh);
                    if (fused3) {
                        double s0 = 0.0, s1 = 0.0, s2 = 0.0;
                        for (int oy = oy0; oy < oy1; ++oy) {
                            const double* __restrict xrow =
                                xp + static_cast<size_t>(oy - 1 + ky) * wd;
                            const double* __restrict grow =
                                gop + static_cast<size_t>(oy) * ow;
                            if (ow == 1) {
                                s1 += grow[0] * xrow[0];
                                continue;
                            }
                            s1 += grow[0] * xrow[0];
                            s2 += grow[0] * xrow[1];
                            for (int ox = 1; ox < ow - 1; ++ox) {
                                const double g = grow[ox];
                                s0 += g * xrow[ox - 1];
                                s1 += g * xrow[ox];
                                s2 += g * xrow[ox + 1];
                            }
                            s0 += grow[ow - 1] * xrow[ow - 2];
                            s1 += grow[ow - 1] * xrow[ow - 1];
                        }
                        gw(o, c, ky, 0) += s0;
                        gw(o, c, ky, 1) += s1;
                        gw(o, c, ky, 2) += s2;
                        continue;
                    }
                    for (int kx = 0; kx < kw; ++kx) {
                        const auto [ox0, ox1] = out_range(kx, wd, ow);
                        double wsum = 0.0;
                        for (int oy = oy0; oy < oy1; ++oy) {
                            const double* __restrict grow = gop + static_cast<size_t>(oy) * ow;
                            if (stride == 1) {
                                const double* __restrict xrow =
                                    xp + static_cast<size_t>(oy - pad + ky) * wd - pad + kx;
                                for (int ox = ox0; ox < ox1; ++ox)
                                    wsum += grow[ox] * xrow[ox];
                            } else {
                                const double* __restrict xrow =
                                    split.tap_row(c, oy * stride - pad + ky, kx - pad);
                                for (int ox = ox0; ox < ox1; ++ox)
                                    wsum += grow[ox] * xrow[ox];
                            }
                        }
                        gw(o, c, ky, kx) += wsum;
                    }
                }
            }
        }

        // Input gradient: one input row accumulates across all (o, tap)
        // contributions before touching gx.
        if (gx) {
            // One input row accumulates across all (o, tap) contributions
            // before touching gx; stride-2 scatters go through per-phase
            // accumulators so the loops stay contiguous.
            const int we = (wd + 1) / 2, wo = wd / 2;
            std::vector<double> acc_row(static_cast<size_t>(wd));
            std::vector<double> acc_even(static_cast<size_t>(we) + 2);
            std::vector<double> acc_odd(static_cast<size_t>(wo) + 2);
            for (int c = 0; c < ic; ++c) {
                double* gxp = &gx->data[static_cast<size_t>(c) * h * wd];
                for (int iy = 0; iy < h; ++iy) {
                    if (stride == 1)
                        std::fill(acc_row.begin(), acc_row.end(), 0.0);
                    else {
                        std::fill(acc_even.begin(), acc_even.end(), 0.0);
                        std::fill(acc_odd.begin(), acc_odd.end(), 0.0);
                    }
                    const bool fused3 =
                        stride == 1 && kh == 3 && kw == 3 && pad == 1 && ow == wd && oh == h;
                    for (int o = 0; o < oc; ++o) {
                        const double* gop = &go.data[static_cast<size_t>(o) * oh * ow];
                        for (int ky = 0; ky < kh; ++ky) {
                            const int num = iy + pad - ky;
                            if (num < 0 || num % stride != 0) continue;
                            const int oy = num / stride;
                            if (oy >= oh) continue;
                            const double* __restrict grow =
                                gop + static_cast<size_t>(oy) * ow;
                            if (fused3) {
                                const double w0 = w(o, c, ky, 0), w1 = w(o, c, ky, 1),
                                             w2 = w(o, c, ky, 2);
                                double* __restrict arow = acc_row.data();
                                if (wd == 1) {
                                    arow[0] += w1 * grow[0];
                                    continue;
                                }
                                arow[0] += w0 * grow[1] + w1 * grow[0];
                                for (int j = 1; j < wd - 1; ++j)
                                    arow[j] += w0 * grow[j + 1] + w1 * grow[j] +
                                               w2 * grow[j - 1];
                                arow[wd - 1] += w1 * grow[wd - 1] + w2 * grow[wd - 2];
                                continue;
                            }
                            for (int kx = 0; kx < kw; ++kx) {
                                const double wv = w(o, c, ky, kx);
                                if (wv == 0.0) continue;
                                const auto [ox0, ox1] = out_range(kx, wd, ow);
                                if (stride == 1) {
                                    double* __restrict arow = acc_row.data() - pad + kx;
                                    for (int ox = ox0; ox < ox1; ++ox)
                                        arow[ox] += wv * grow[ox];
                                } else {
                                    // +1 base keeps the shifted pointer inside
                                    // the buffer for negative taps
                                    const int d = kx - pad;
                                    double* __restrict arow =
                                        (d & 1) ? acc_odd.data() + 1 + (d - 1) / 2
                                                : acc_even.data() + 1 + d / 2;
                                    for (int ox = ox0; ox < ox1; ++ox)
                                        arow[ox] += wv * grow[ox];
                                }
                            }
                        }
                    }
                    double* __restrict gxrow = gxp + static_cast<size_t>(iy) * wd;
                    if (stride == 1) {
                        for (int i = 0; i < wd; ++i)
                            gxrow[i] += acc_row[static_cast<size_t>(i)];
                    } else {
                        for (int j = 0; j < wo; ++j) {
                            gxrow[2 * j] += acc_even[static_cast<size_t>(j) + 1];
                            gxrow[2 * j + 1] += acc_odd[static_cast<size_t>(j) + 1];
                        }
                        if (we > wo) gxrow[2 * (we - 1)] += acc_even[static_cast<size_t>(we)];
                    }
                }
            }
        }
    };
    return id;
}

int Tape::relu(int xid) {
    Tensor out = value(xid);
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    const int id = push(std::move(out), nodes_[static_cast<size_t>(xid)].needs_grad, {});
    if (recording_) {
        nodes_[static_cast<size_t>(id)].back = [this, xid, id]() {
            ensure_grad(xid);
            const Tensor& x = value(xid);
            const Tensor& go = nodes_[static_cast<size_t>(id)].grad;
            Tensor& gx = grad(xid);
            for (size_t i = 0; i < x.size(); ++i)
                if (x.data[i] > 0.0) gx.data[i] += go.data[i];
        };
    }
    return id;
}

int Tape::add(int aid, int bid) {
    const Tensor& a = value(aid);
    const Tensor& b = value(bid);
    if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
    const bool ng = nodes_[static_cast<size_t>(aid)].needs_grad ||
                    nodes_[static_cast<size_t>(bid)].needs_grad;
    const int id = push(std::move(out), ng, {});
    if (recording_) {
        nodes_[static_cast<size_t>(id)].back = [this, aid, bid, id]() {
            const Tensor& go = nodes_[static_cast<size_t>(id)].grad;
            for (int src : {aid, bid}) {
                ensure_grad(src);
                grad(src).add_scaled(go, 1.0);
            }
        };
    }
    return id;
}

namespace {

struct LerpAxis {
    std::vector<int> i0, i1;
    std::vector<double> w1;  // weight of i1; i0 gets (1-w1)
};

LerpAxis make_axis(int in_n, int out_n) {
    LerpAxis ax;
    ax.i0.resize(static_cast<size_t>(out_n));
    ax.i1.resize(static_cast<size_t>(out_n));
    ax.w1.resize(static_cast<size_t>(out_n));
    const double scale = static_cast<double>(in_n) / out_n;
    for (int o = 0; o < out_n; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        src = std::max(0.0, std::min(src, static_cast<double>(in_n - 1)));
        const int lo = static_cast<int>(std::floor(src));
        const int hi = std::min(lo + 1, in_n - 1);
        ax.i0[static_cast<size_t>(o)] = lo;
        ax.i1[static_cast<size_t>(o)] = hi;
        ax.w1[static_cast<size_t>(o)] = src - lo;
    }
    return ax;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const LerpAxis ay = make_axis(h, out_h), axx = make_axis(w, out_w);
    Tensor out({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < out_h; ++oy) {
            const int y0 = ay.i0[oy], y1 = ay.i1[oy];
            const double fy = ay.w1[oy];
            for (int ox = 0; ox < out_w; ++ox) {
                const int x0 = axx.i0[ox], x1 = axx.i1[ox];
                const double fx = axx.w1[ox];
                const double v = (1 - fy) * ((1 - fx) * x(ch, y0, x0) + fx * x(ch, y0, x1)) +
                                 fy * ((1 - fx) * x(ch, y1, x0) + fx * x(ch, y1, x1));
                out(ch, oy, ox) = v;
            }
        }
    return out;
}

Tensor resize_nearest(const Tensor& x, int out_h, int out_w) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out({c, out_h, out_w});
    for (int oy = 0; oy < out_h; ++oy) {
        int sy = static_cast<int>(std::floor((oy + 0.5) * h / static_cast<double>(out_h)));
        sy = std::clamp(sy, 0, h - 1);
        for (int ox = 0; ox < out_w; ++ox) {
            int sx = static_cast<int>(std::floor((ox + 0.5) * w / static_cast<double>(out_w)));
            sx = std::clamp(sx, 0, w - 1);
            for (int ch = 0; ch < c; ++ch) out(ch, oy, ox) = x(ch, sy, sx);
        }
    }
    return out;
}

void sigmoid_inplace(Tensor& x) {
    for (auto& v : x.data) v = 1.0 / (1.0 + std::exp(-v));
}

int Tape::resize_bilinear(int xid, int out_h, int out_w) {
    const Tensor& x = value(xid);
    Tensor out = pointseg::resize_bilinear(x, out_h, out_w);
    const int in_h = x.dim(1), in_w = x.dim(2);
    const int id = push(std::move(out), nodes_[static_cast<size_t>(xid)].needs_grad, {});
    if (recording_) {
        nodes_[static_cast<size_t>(id)].back = [this, xid, id, in_h, in_w, out_h, out_w]() {
            ensure_grad(xid);
            Tensor& gx = grad(xid);
            const Tensor& go = nodes_[static_cast<size_t>(id)].grad;
            const int c = gx.dim(0);
            const LerpAxis ay = make_axis(in_h, out_h), axx = make_axis(in_w, out_w);
            for (int ch = 0; ch < c; ++ch)
                for (int oy = 0; oy < out_h; ++oy) {
                    const int y0 = ay.i0[oy], y1 = ay.i1[oy];
                    const double fy = ay.w1[oy];
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int x0 = axx.i0[ox], x1 = axx.i1[ox];
                        const double fx = axx.w1[ox];
                        const double g = go(ch, oy, ox);
                        gx(ch, y0, x0) += (1 - fy) * (1 - fx) * g;
                        gx(ch, y0, x1) += (1 - fy) * fx * g;
                        gx(ch, y1, x0) += fy * (1 - fx) * g;
                        gx(ch, y1, x1) += fy * fx * g;
                    }
                }
        };
    }
    return id;
}

int Tape::append_coords(int xid) {
    const Tensor& x = value(xid);
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out({c + 2, h, w});
    std::copy(x.data.begin(), x.data.end(), out.data.begin());
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            out(c, y, xx) = w > 1 ? 2.0 * xx / (w - 1) - 1.0 : 0.0;
            out(c + 1, y, xx) = h > 1 ? 2.0 * y / (h - 1) - 1.0 : 0.0;
        }
    const int id = push(std::move(out), nodes_[static_cast<size_t>(xid)].needs_grad, {});
    if (recording_) {
        nodes_[static_cast<size_t>(id)].back = [this, xid, id]() {
            ensure_grad(xid);
            Tensor& gx = grad(xid);
            const Tensor& go = nodes_[static_cast<size_t>(id)].grad;
            std::transform(gx.data.begin(), gx.data.end(), go.data.begin(), gx.data.begin(),
                           std::plus<double>());
        };
    }
    return id;
}

int Tape::gather_cell(int gid, int row, int col) {
    const Tensor& g = value(gid);
    const int e = g.dim(0);
    Tensor out({e});
    for (int i = 0; i < e; ++i) out(i) = g(i, row, col);
    const int id = push(std::move(out), nodes_[static_cast<size_t>(gid)].needs_grad, {});
    if (recording_) {
        nodes_[static_cast<size_t>(id)].back = [this, gid, id, row, col]() {
            ensure_grad(gid);
            Tensor& gg = grad(gid);
            const Tensor& go = nodes_[static_cast<size_t>(id)].grad;
            for (int i = 0; i < go.dim(0); ++i) gg(i, row, col) += go(i);
        };
    }
    return id;
}

int Tape::dyn_mask_logits(int fid, int kid) {
    const Tensor& f = value(fid);
    const Tensor& k = value(kid);
    const int e = f.dim(0), h = f.dim(1), w = f.dim(2);
    if (k.dim(0) != e) throw ShapeError("dyn_mask_logits: kernel length mismatch");
    Tensor out({h, w});
    for (int c = 0; c < e; ++c) {
        const double kv = k(c);
        const double* fp = &f.data[static_cast<size_t>(c) * h * w];
        for (int i = 0; i < h * w; ++i) out.data[static_cast<size_t>(i)] += kv * fp[i];
    }
    const bool ng = nodes_[static_cast<size_t>(fid)].needs_grad ||
                    nodes_[static_cast<size_t>(kid)].needs_grad;
    const int id = push(std::move(out), ng, {});
    if (recording_) {
        nodes_[static_cast<size_t>(id)].back = [this, fid, kid, id]() {
            const Tensor& f = value(fid);
            const Tensor& k = value(kid);
            const Tensor& go = nodes_[static_cast<size_t>(id)].grad;
            const int e = f.dim(0), h = f.dim(1), w = f.dim(2);
            ensure_grad(fid);
            ensure_grad(kid);
            Tensor& gf = grad(fid);
            Tensor& gk = grad(kid);
            for (int c = 0; c < e; ++c) {
                const double kv = k(c);
                const double* fp = &f.data[static_cast<size_t>(c) * h * w];
                double* gfp = &gf.data[static_cast<size_t>(c) * h * w];
                double acc = 0.0;
                for (int i = 0; i < h * w; ++i) {
                    const double g = go.data[static_cast<size_t>(i)];
                    acc += g * fp[i];
                    gfp[i] += kv * g;
                }
                gk(c) += acc;
            }
        };
    }
    return id;
}

int Tape::dice_with_logits(int lid, const Tensor& target) {
    const Tensor& z = value(lid);
    if (!z.same_shape(target)) throw ShapeError("dice_with_logits: shape mismatch");
    const double eps = 1e-6;
    Tensor p = z;
    sigmoid_inplace(p);
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        inter += p.data[i] * target.data[i];
        psum += p.data[i];
        gsum += target.data[i];
    }
    const double denom = psum + gsum + eps;
    Tensor out({1});
    out(0) = 1.0 - (2.0 * inter + eps) / denom;
    const int id = push(std::move(out), nodes_[static_cast<size_t>(lid)].needs_grad, {});
    if (recording_) {
        Tensor pred = std::move(p);
        Tensor tgt = target;
        nodes_[static_cast<size_t>(id)].back = [this, lid, id, pred = std::move(pred),
                                                tgt = std::move(tgt), inter, denom]() {
            ensure_grad(lid);
            Tensor& gz = grad(lid);
            const double gl = nodes_[static_cast<size_t>(id)].grad(0);
            const double eps = 1e-6;
            // d(1 - (2I+eps)/D)/dp_i = -(2 g_i D - (2I+eps)) / D^2
            for (size_t i = 0; i < pred.size(); ++i) {
                const double dp =
                    -(2.0 * tgt.data[i] * denom - (2.0 * inter + eps)) / (denom * denom);
                gz.data[i] += gl * dp * pred.data[i] * (1.0 - pred.data[i]);
            }
        };
    }
    return id;
}

int Tape::focal_with_logits(int lid, const std::vector<int8_t>& target_class,
                            double alpha, double gamma) {
    const Tensor& z = value(lid);
    const int c = z.dim(0), h = z.dim(1), w = z.dim(2);
    if (static_cast<size_t>(h) * w != target_class.size())
        throw ShapeError("focal_with_logits: target size mismatch");
    const double clampv = 1e-12;
    double total = 0.0;
    for (int cc = 0; cc < c; ++cc)
        for (int i = 0; i < h * w; ++i) {
            const double zv = z.data[static_cast<size_t>(cc) * h * w + i];
            const double p = std::clamp(1.0 / (1.0 + std::exp(-zv)), clampv, 1.0 - clampv);
            if (target_class[static_cast<size_t>(i)] == cc + 1)
                total += -alpha * std::pow(1.0 - p, gamma) * std::log(p);
            else
                total += -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
        }
    Tensor out({1});
    out(0) = total;
    const int id = push(std::move(out), nodes_[static_cast<size_t>(lid)].needs_grad, {});
    if (recording_) {
        nodes_[static_cast<size_t>(id)].back = [this, lid, id, target_class, alpha, gamma]() {
            ensure_grad(lid);
            const Tensor& z = value(lid);
            Tensor& gz = grad(lid);
            const double gl = nodes_[static_cast<size_t>(id)].grad(0);
            const int c = z.dim(0), h = z.dim(1), w = z.dim(2);
            const double clampv = 1e-12;
            for (int cc = 0; cc < c; ++cc)
                for (int i = 0; i < h * w; ++i) {
                    const size_t idx = static_cast<size_t>(cc) * h * w + i;
                    const double p =
                        std::clamp(1.0 / (1.0 + std::exp(-z.data[idx])), clampv, 1.0 - clampv);
                    double d;
                    if (target_class[static_cast<size_t>(i)] == cc + 1) {
                        // d/dz of -a(1-p)^g log p
                        d = alpha * (gamma * p * std::pow(1.0 - p, gamma) * std::log(p) -
                                     std::pow(1.0 - p, gamma + 1.0));
                    } else {
                        // d/dz of -(1-a) p^g log(1-p)
                        d = (1.0 - alpha) * (std::pow(p, gamma + 1.0) -
                                             gamma * std::pow(p, gamma) * (1.0 - p) *
                                                 std::log(1.0 - p));
                    }
                    gz.data[idx] += gl * d;
                }
        };
    }
    return id;
}

int Tape::scale(int aid, double k) {
    Tensor out = value(aid);
    for (auto& v : out.data) v *= k;
    const int id = push(std::move(out), nodes_[static_cast<size_t>(aid)].needs_grad, {});
    if (recording_) {
        nodes_[static_cast<size_t>(id)].back = [this, aid, id, k]() {
            ensure_grad(aid);
            grad(aid).add_scaled(nodes_[static_cast<size_t>(id)].grad, k);
        };
    }
    return id;
}

int Tape::sum2(int aid, int bid) { return add(aid, bid); }

}  // namespace pointseg
