// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "mitodet/nn/autograd.hpp"
#include "mitodet/nn/layers.hpp"
#include "mitodet/nn/optim.hpp"
#include "mitodet/random.hpp"
#include "oracles.hpp"

using namespace mitodet;
using namespace mitodet::nn;

namespace {

std::vector<double> randn(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("conv2d matches a direct loop") {
  Rng rng(1);
  const Shape in{2, 5, 6};
  auto x = constant(in, randn(rng, in.size()));
  for (const ConvSpec spec : {ConvSpec{3, 1, 1}, ConvSpec{3, 2, 1}, ConvSpec{1, 1, 0}, ConvSpec{3, 1, 0}}) {
    const int k = spec.kernel;
    auto w = parameter({3, 2, k * k}, randn(rng, 3 * 2 * k * k));
    auto b = parameter({3, 1, 1}, randn(rng, 3));
    auto y = conv2d(x, w, b, spec);
    const int oh = conv_output_size(in.h, spec), ow = conv_output_size(in.w, spec);
    REQUIRE(y->shape == Shape{3, oh, ow});
    for (int o = 0; o < 3; ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = b->value[o];
          for (int c = 0; c < 2; ++c)
            for (int u = 0; u < k; ++u)
              for (int v = 0; v < k; ++v) {
                const int yy = i * spec.stride - spec.pad + u, xx = j * spec.stride - spec.pad + v;
                if (yy < 0 || yy >= in.h || xx < 0 || xx >= in.w) continue;
                acc += w->value[(o * 2 + c) * k * k + u * k + v] * x->value[(c * in.h + yy) * in.w + xx];
              }
          CHECK(y->value[(o * oh + i) * ow + j] == doctest::Approx(acc).epsilon(1e-12));
        }
  }
}

TEST_CASE("op gradients match finite differences") {
  Rng rng(2);
  auto x = parameter({2, 4, 4}, randn(rng, 32));
  auto w = parameter({3, 2, 9}, randn(rng, 54));
  auto b = parameter({3, 1, 1}, randn(rng, 3));
  auto lw = parameter({2, 12, 1}, randn(rng, 24));
  auto lb = parameter({2, 1, 1}, randn(rng, 2));
  const ParamList params{{"x", x}, {"w", w}, {"b", b}, {"lw", lw}, {"lb", lb}};
  const std::vector<int> targets{1, 0, -1, 1, 0, 0, 1, 0, 0, 1, 0, 1};
  const std::vector<double> box_t(12, 0.3);
  const std::vector<unsigned char> mask{1, 1, 0, 1, 1, 1, 0, 1, 1, 1, 1, 1};
  auto loss_fn = [&] {
    auto h = leaky_relu(conv2d(reflect_pad(x, 1), w, b, {3, 2, 0}), 0.2);  // (3, 2, 2)
    auto up = upsample2x(tanh(h));
    auto pooled = global_avg_pool(sigmoid(up));
    auto logits = linear(h, lw, lb);
    auto l = add(softmax_cross_entropy(logits, 1), mean(pooled));
    l = add(l, sigmoid_focal_loss(h, targets, 0.25, 2.0, 3.0));
    l = add(l, smooth_l1(h, box_t, mask, 0.1, 2.0));
    l = add(l, l1_mean(relu(h), scale(h, 0.5)));
    l = add(l, mse_to(add_scalar(h, 0.2), 0.1));
    return add(l, sum(sub(h, scale(h, 2.0))));
  };
  const auto r = oracle::check_gradients(params, loss_fn, 1e-6);
  CHECK(r.checked == 115);
  CHECK(r.max_rel < 1e-6);
}

TEST_CASE("focal loss with gamma 0 and alpha 0.5 is half the cross-entropy") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto v = randn(rng, 50);
    std::vector<int> t(50);
    double bce = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      t[i] = static_cast<int>(rng.below(2));
      const double p = 1.0 / (1.0 + std::exp(-v[i]));
      bce += -(t[i] ? std::log(p) : std::log(1.0 - p));
    }
    auto logits = constant({50, 1, 1}, v);
    const double focal = sigmoid_focal_loss(logits, t, 0.5, 0.0, 1.0)->item();
    CHECK(focal == doctest::Approx(0.5 * bce).epsilon(1e-9));
  }
}

TEST_CASE("softmax normalizes") {
  const auto p = softmax(std::vector<double>{1000.0, 999.0, -5.0});
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p[0] > p[1]);
}

TEST_CASE("no-grad mode records nothing") {
  auto w = parameter({1, 1, 1}, {2.0});
  {
    NoGradGuard guard;
    CHECK(!grad_enabled());
    auto y = scale(w, 3.0);
    CHECK(y->parents.empty());
  }
  CHECK(grad_enabled());
}

TEST_CASE("adam minimizes a quadratic") {
  auto w = parameter({2, 1, 1}, {3.0, -4.0});
  const ParamList params{{"w", w}};
  Adam opt(params, 0.1);
  for (int i = 0; i < 500; ++i) {
    backward(mse_to(w, 1.0));
    opt.step();
  }
  CHECK(w->value[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(w->value[1] == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("snapshot and restore") {
  Rng rng(4);
  Conv2d c(2, 3, {3, 1, 1}, rng);
  ParamList p;
  c.collect(p, "c");
  CHECK(parameter_count(p) == 3 * 2 * 9 + 3);
  const auto snap = snapshot(p);
  p[0].second->value[0] += 1.0;
  restore(p, snap);
  CHECK(snapshot(p) == snap);
}
