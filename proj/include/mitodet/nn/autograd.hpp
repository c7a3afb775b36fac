// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace mitodet::nn {

/// Channel-major 3-D shape. Vectors are (n, 1, 1), scalars (1, 1, 1).
struct Shape {
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t size() const { return static_cast<std::size_t>(c) * h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

class Node;
using Var = std::shared_ptr<Node>;

/// One value in a dynamically built computation graph. Graphs are built per
/// sample; parameters are long-lived leaf nodes whose `grad` accumulates
/// across backward passes until zeroed.
class Node {
 public:
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  double item() const { return value.at(0); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Var constant(Shape shape, std::vector<double> values);
Var constant(Shape shape, double fill = 0.0);
Var parameter(Shape shape, std::vector<double> values);

/// Reverse-mode sweep from a scalar. Gradients are accumulated into every
/// reachable node that requires them.
void backward(const Var& loss);

struct ConvSpec {
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};

int conv_output_size(int in, const ConvSpec& spec);

/// Weight shape (out, in, k*k); bias shape (out, 1, 1). Zero padding.
Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec);
/// Weight shape (out, in, 1); x is flattened.
Var linear(const Var& x, const Var& weight, const Var& bias);

Var upsample2x(const Var& x);
/// Mirror padding without edge repeat (reflect-101); requires pad < h, w.
Var reflect_pad(const Var& x, int pad);
Var global_avg_pool(const Var& x);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var tanh(const Var& x);
Var sigmoid(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var sum(const Var& x);
Var mean(const Var& x);
/// mean |a - b|
Var l1_mean(const Var& a, const Var& b);
/// mean (x - target)^2
Var mse_to(const Var& x, double target);

/// Sigmoid focal loss summed over elements and divided by `normalizer`.
/// targets: 1 positive, 0 negative, -1 ignored.
Var sigmoid_focal_loss(const Var& logits, std::span<const int> targets, double alpha, double gamma,
                       double normalizer);

/// Smooth-L1 over elements with mask != 0, summed and divided by normalizer.
Var smooth_l1(const Var& pred, std::span<const double> target, std::span<const unsigned char> mask,
              double beta, double normalizer);

/// Softmax cross-entropy for one sample; logits flattened.
Var softmax_cross_entropy(const Var& logits, int label);

std::vector<double> softmax(std::span<const double> logits);

}  // namespace mitodet::nn
