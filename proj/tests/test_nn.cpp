#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pointseg/nn.hpp"
#include "pointseg/rng.hpp"
#include "oracles.hpp"

using namespace pointseg;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.normal(0.0, scale);
    return t;
}

// Scalar-loop conv oracle.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const int ic = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int oc = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    Tensor out({oc, oh, ow});
    for (int o = 0; o < oc; ++o)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = b(o);
                for (int c = 0; c < ic; ++c)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int iy = oy * stride - pad + ky;
                            const int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                            acc += x(c, iy, ix) * w(o, c, ky, kx);
                        }
                out(o, oy, ox) = acc;
            }
    return out;
}

}  // namespace

TEST_CASE("conv2d matches the scalar oracle") {
    Rng rng(5);
    for (const auto& [stride, pad, k] : std::vector<std::tuple<int, int, int>>{
             {1, 1, 3}, {2, 1, 3}, {1, 0, 1}}) {
        ParamStore params;
        const int wi = params.add("w", {4, 3, k, k});
        const int bi = params.add("b", {4});
        params[wi].value = random_tensor({4, 3, k, k}, rng);
        params[bi].value = random_tensor({4}, rng);
        const Tensor x = random_tensor({3, 9, 7}, rng);

        Tape tape(&params, false);
        const int out = tape.conv2d(tape.leaf(x), tape.param(wi), tape.param(bi), stride, pad);
        const Tensor expect = conv_oracle(x, params[wi].value, params[bi].value, stride, pad);
        REQUIRE(tape.value(out).shape == expect.shape);
        for (size_t i = 0; i < expect.size(); ++i)
            CHECK(tape.value(out).data[i] == doctest::Approx(expect.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("bilinear resize: identity and hand case") {
    Rng rng(2);
    const Tensor x = random_tensor({2, 5, 4}, rng);
    const Tensor same = resize_bilinear(x, 5, 4);
    for (size_t i = 0; i < x.size(); ++i)
        CHECK(same.data[i] == doctest::Approx(x.data[i]));

    // 1x2 -> 1x4 with half-pixel centers: src positions -0.25,0.25,0.75,1.25
    // clamp to [0,1] giving 0, 0.25, 0.75, 1 blends.
    Tensor row({1, 1, 2});
    row(0, 0, 0) = 0.0;
    row(0, 0, 1) = 1.0;
    const Tensor up = resize_bilinear(row, 1, 4);
    CHECK(up(0, 0, 0) == doctest::Approx(0.0));
    CHECK(up(0, 0, 1) == doctest::Approx(0.25));
    CHECK(up(0, 0, 2) == doctest::Approx(0.75));
    CHECK(up(0, 0, 3) == doctest::Approx(1.0));
}

TEST_CASE("tape gradients match finite differences on a small network") {
    Rng rng(11);
    ParamStore params;
    const int w1 = params.add("w1", {4, 3, 3, 3});
    const int b1 = params.add("b1", {4});
    const int w2 = params.add("w2", {1, 6, 3, 3});
    const int b2 = params.add("b2", {1});
    Rng init(3);
    params.init_he_normal(init);

    const Tensor x = random_tensor({3, 8, 8}, rng, 0.5);
    Tensor target({1, 8, 8});
    for (auto& v : target.data) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    std::vector<int8_t> cls(16, 0);
    for (auto& v : cls) v = static_cast<int8_t>(rng.uniform_int(0, 1));  // classes {0,1}

    auto loss_fn = [&](std::vector<Tensor>* grads) {
        Tape tape(&params, grads != nullptr);
        const int h1 = tape.relu(tape.conv2d(tape.leaf(x), tape.param(w1), tape.param(b1), 2, 1));
        const int hc = tape.append_coords(h1);
        const int up = tape.resize_bilinear(hc, 8, 8);
        const int h2 = tape.conv2d(up, tape.param(w2), tape.param(b2), 1, 1);
        const int dice = tape.dice_with_logits(h2, target);
        const int down = tape.resize_bilinear(h2, 4, 4);
        const int focal = tape.focal_with_logits(down, cls, 0.25, 2.0);
        const int loss = tape.sum2(tape.scale(dice, 1.5), tape.scale(focal, 0.25));
        const double v = tape.value(loss)(0);
        if (grads) {
            tape.backward(loss);
            tape.export_param_grads(*grads, 1.0);
        }
        return v;
    };

    std::vector<Tensor> grads = params.grad_snapshot();
    loss_fn(&grads);
    Rng probe(17);
    const double err = oracle::max_grad_rel_err(
        params, grads, [&] { return loss_fn(nullptr); }, 30, probe);
    CHECK(err < 1e-3);
}

TEST_CASE("adam with zero learning rate leaves weights unchanged") {
    ParamStore params;
    params.add("w", {3, 3, 3, 3});
    Rng rng(1);
    params.init_he_normal(rng);
    const Tensor before = params[0].value;
    for (int t = 1; t <= 5; ++t) {
        for (auto& g : params[0].grad.data) g = 1.0;
        params.adam_step(0.0, t);
    }
    CHECK(params[0].value.data == before.data);
}

TEST_CASE("cosine schedule decays to zero") {
    CHECK(cosine_lr(0.1, 0, 100) == doctest::Approx(0.1));
    CHECK(cosine_lr(0.1, 99, 100) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(cosine_lr(0.1, 50, 100) < 0.1);
}

TEST_CASE("relu and sigmoid behave") {
    Tensor t({3});
    t(0) = -1.0;
    t(1) = 0.0;
    t(2) = 2.0;
    sigmoid_inplace(t);
    CHECK(t(0) == doctest::Approx(1.0 / (1.0 + std::exp(1.0))));
    CHECK(t(1) == doctest::Approx(0.5));
}
