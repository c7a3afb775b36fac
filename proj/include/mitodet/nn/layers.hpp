// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mitodet/nn/autograd.hpp"
#include "mitodet/random.hpp"

namespace mitodet::nn {

/// Named parameter handles, in a fixed order (checkpoint and optimizer order).
using ParamList = std::vector<std::pair<std::string, Var>>;

enum class Init {
  kHeUniform,   // U(±sqrt(6 / fan_in)), for ReLU stacks
  kNormal002,   // N(0, 0.02), the GAN convention
  kSmall,       // U(±0.1 / sqrt(fan_in))
  kZero,
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in, int out, ConvSpec spec, Rng& rng, Init init = Init::kHeUniform);

  Var operator()(const Var& x) const { return conv2d(x, weight_, bias_, spec_); }
  void collect(ParamList& out, const std::string& name) const;

  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }
  const ConvSpec& spec() const { return spec_; }

 private:
  ConvSpec spec_;
  Var weight_;
  Var bias_;
};

class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng, Init init = Init::kHeUniform);

  Var operator()(const Var& x) const { return linear(x, weight_, bias_); }
  void collect(ParamList& out, const std::string& name) const;

  const Var& bias() const { return bias_; }

 private:
  Var weight_;
  Var bias_;
};

std::size_t parameter_count(const ParamList& params);

/// Deep copy of parameter values (snapshot for early stopping etc.).
std::vector<std::vector<double>> snapshot(const ParamList& params);
void restore(const ParamList& params, const std::vector<std::vector<double>>& values);
void zero_grad(const ParamList& params);

}  // namespace mitodet::nn
