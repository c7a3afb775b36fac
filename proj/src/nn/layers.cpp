// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mitodet/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace mitodet::nn {

namespace {

std::vector<double> init_values(std::size_t n, int fan_in, Init init, Rng& rng) {
  std::vector<double> v(n, 0.0);
  switch (init) {
    case Init::kHeUniform: {
      const double b = std::sqrt(6.0 / fan_in);
      for (auto& x : v) x = rng.uniform(-b, b);
      break;
    }
    case Init::kNormal002:
      for (auto& x : v) x = 0.02 * rng.normal();
      break;
    case Init::kSmall: {
      const double b = 0.1 / std::sqrt(static_cast<double>(fan_in));
      for (auto& x : v) x = rng.uniform(-b, b);
      break;
    }
    case Init::kZero:
      break;
  }
  return v;
}

}  // namespace

Conv2d::Conv2d(int in, int out, ConvSpec spec, Rng& rng, Init init) : spec_(spec) {
  if (in <= 0 || out <= 0 || spec.kernel <= 0 || spec.stride <= 0 || spec.pad < 0) {
    throw std::invalid_argument("Conv2d: invalid geometry");
  }
  const Shape ws{out, in, spec.kernel * spec.kernel};
  weight_ = parameter(ws, init_values(ws.size(), in * spec.kernel * spec.kernel, init, rng));
  bias_ = parameter({out, 1, 1}, std::vector<double>(out, 0.0));
}

void Conv2d::collect(ParamList& out, const std::string& name) const {
  if (!weight_) return;  // default-constructed, nothing to expose
  out.emplace_back(name + ".weight", weight_);
  out.emplace_back(name + ".bias", bias_);
}

Linear::Linear(int in, int out, Rng& rng, Init init) {
  const Shape ws{out, in, 1};
  weight_ = parameter(ws, init_values(ws.size(), in, init, rng));
  bias_ = parameter({out, 1, 1}, std::vector<double>(out, 0.0));
}

void Linear::collect(ParamList& out, const std::string& name) const {
  if (!weight_) return;  // default-constructed, nothing to expose
  out.emplace_back(name + ".weight", weight_);
  out.emplace_back(name + ".bias", bias_);
}

std::size_t parameter_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& [_, v] : params) n += v->value.size();
  return n;
}

std::vector<std::vector<double>> snapshot(const ParamList& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& [_, v] : params) out.push_back(v->value);
  return out;
}

void restore(const ParamList& params, const std::vector<std::vector<double>>& values) {
  if (values.size() != params.size()) throw std::invalid_argument("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].size() != params[i].second->value.size()) throw std::invalid_argument("restore: size mismatch");
    params[i].second->value = values[i];
  }
}

void zero_grad(const ParamList& params) {
  for (const auto& [_, v] : params) v->grad.assign(v->value.size(), 0.0);
}

}  // namespace mitodet::nn
