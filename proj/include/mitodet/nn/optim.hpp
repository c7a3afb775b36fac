// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "mitodet/nn/layers.hpp"

namespace mitodet::nn {

/// Adam with bias correction. Gradients are read from the parameters and
/// cleared after each step.
class Adam {
 public:
  Adam(ParamList params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  ParamList params_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace mitodet::nn
