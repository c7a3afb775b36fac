// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mitodet/nn/optim.hpp"

#include <cmath>

namespace mitodet::nn {

Adam::Adam(ParamList params, double learning_rate, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [_, p] : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
  zero_grad();
}

void Adam::zero_grad() { nn::zero_grad(params_); }

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k].second;
    p.ensure_grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
  zero_grad();
}

}  // namespace mitodet::nn
