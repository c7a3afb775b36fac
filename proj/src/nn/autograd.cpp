// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mitodet/nn/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace mitodet::nn {

namespace {

thread_local bool g_grad_enabled = true;

Var make_result(Shape shape, std::vector<double> value, std::vector<Var> parents,
                std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p->requires_grad; });
    if (any) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward_fn = std::move(backward_fn);
    }
  }
  return n;
}

void check_same(const Var& a, const Var& b, const char* op) {
  if (!(a->shape == b->shape)) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// log(sigmoid(x)) computed without overflow.
double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var constant(Shape shape, std::vector<double> values) {
  if (values.size() != shape.size()) throw std::invalid_argument("constant: value count does not match shape");
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value = std::move(values);
  return n;
}

Var constant(Shape shape, double fill) { return constant(shape, std::vector<double>(shape.size(), fill)); }

Var parameter(Shape shape, std::vector<double> values) {
  auto n = constant(shape, std::move(values));
  n->requires_grad = true;
  return n;
}

void backward(const Var& loss) {
  if (loss->value.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  if (!loss->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Intermediate gradients start from zero each sweep; leaves accumulate.
  for (Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
    else n->ensure_grad();
  }
  loss->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) {
      for (auto& p : n->parents)
        if (p->requires_grad) p->ensure_grad();
      n->backward_fn(*n);
    }
  }
  // Release intermediate buffers so the graph does not pin memory.
  for (Node* n : order) {
    if (n->backward_fn) std::vector<double>().swap(n->grad);
  }
}

int conv_output_size(int in, const ConvSpec& spec) {
  return (in + 2 * spec.pad - spec.kernel) / spec.stride + 1;
}

namespace {

// Range of output indices o with 0 <= o*stride + k - pad < in.
std::pair<int, int> valid_range(int out, int in, int k, int stride, int pad) {
  int lo = 0;
  while (lo < out && lo * stride + k - pad < 0) ++lo;
  int hi = out;
  while (hi > lo && (hi - 1) * stride + k - pad >= in) --hi;
  return {lo, hi};
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec) {
  const int cin = x->shape.c, hin = x->shape.h, win = x->shape.w;
  const int cout = weight->shape.c;
  const int k = spec.kernel;
  if (weight->shape.h != cin || weight->shape.w != k * k) {
    throw std::invalid_argument("conv2d: weight shape does not match input channels/kernel");
  }
  if (bias->shape.size() != static_cast<std::size_t>(cout)) throw std::invalid_argument("conv2d: bias size");
  const int hout = conv_output_size(hin, spec);
  const int wout = conv_output_size(win, spec);
  if (hout <= 0 || wout <= 0) throw std::invalid_argument("conv2d: input smaller than kernel");
  const int s = spec.stride, p = spec.pad;

  std::vector<double> out(static_cast<std::size_t>(cout) * hout * wout);
  const double* in = x->value.data();
  const double* w = weight->value.data();
  for (int o = 0; o < cout; ++o) {
    double* op = out.data() + static_cast<std::size_t>(o) * hout * wout;
    std::fill(op, op + static_cast<std::size_t>(hout) * wout, bias->value[o]);
    for (int i = 0; i < cin; ++i) {
      const double* ip = in + static_cast<std::size_t>(i) * hin * win;
      for (int ky = 0; ky < k; ++ky) {
        const auto [oy0, oy1] = valid_range(hout, hin, ky, s, p);
        for (int kx = 0; kx < k; ++kx) {
          const auto [ox0, ox1] = valid_range(wout, win, kx, s, p);
          const double wv = w[(static_cast<std::size_t>(o) * cin + i) * k * k + ky * k + kx];
          for (int oy = oy0; oy < oy1; ++oy) {
            const double* row = ip + static_cast<std::size_t>(oy * s + ky - p) * win + (kx - p);
            double* orow = op + static_cast<std::size_t>(oy) * wout;
            for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * row[ox * s];
          }
        }
      }
    }
  }

  return make_result({cout, hout, wout}, std::move(out), {x, weight, bias}, [spec, cin, hin, win, cout, hout, wout](Node& self) {
    const auto& xn = self.parents[0];
    const auto& wn = self.parents[1];
    const auto& bn = self.parents[2];
    const int k = spec.kernel, s = spec.stride, p = spec.pad;
    const double* g = self.grad.data();
    for (int o = 0; o < cout; ++o) {
      const double* gp = g + static_cast<std::size_t>(o) * hout * wout;
      if (bn->requires_grad) {
        double acc = 0.0;
        for (std::size_t t = 0; t < static_cast<std::size_t>(hout) * wout; ++t) acc += gp[t];
        bn->grad[o] += acc;
      }
      for (int i = 0; i < cin; ++i) {
        const double* ip = xn->value.data() + static_cast<std::size_t>(i) * hin * win;
        double* gip = xn->requires_grad ? xn->grad.data() + static_cast<std::size_t>(i) * hin * win : nullptr;
        for (int ky = 0; ky < k; ++ky) {
          const auto [oy0, oy1] = valid_range(hout, hin, ky, s, p);
          for (int kx = 0; kx < k; ++kx) {
            const auto [ox0, ox1] = valid_range(wout, win, kx, s, p);
            const std::size_t widx = (static_cast<std::size_t>(o) * cin + i) * k * k + ky * k + kx;
            const double wv = wn->value[widx];
            double gw = 0.0;
            for (int oy = oy0; oy < oy1; ++oy) {
              const std::size_t base = static_cast<std::size_t>(oy * s + ky - p) * win + (kx - p);
              const double* grow = gp + static_cast<std::size_t>(oy) * wout;
              const double* row = ip + base;
              for (int ox = ox0; ox < ox1; ++ox) gw += grow[ox] * row[ox * s];
              if (gip) {
                double* girow = gip + base;
                for (int ox = ox0; ox < ox1; ++ox) girow[ox * s] += wv * grow[ox];
              }
            }
            if (wn->requires_grad) wn->grad[widx] += gw;
          }
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const int n = static_cast<int>(x->value.size());
  const int out = weight->shape.c;
  if (static_cast<int>(weight->shape.h) * weight->shape.w != n) throw std::invalid_argument("linear: weight shape");
  std::vector<double> y(out);
  for (int o = 0; o < out; ++o) {
    double acc = bias->value[o];
    const double* wr = weight->value.data() + static_cast<std::size_t>(o) * n;
    for (int i = 0; i < n; ++i) acc += wr[i] * x->value[i];
    y[o] = acc;
  }
  return make_result({out, 1, 1}, std::move(y), {x, weight, bias}, [n, out](Node& self) {
    const auto& xn = self.parents[0];
    const auto& wn = self.parents[1];
    const auto& bn = self.parents[2];
    for (int o = 0; o < out; ++o) {
      const double g = self.grad[o];
      if (bn->requires_grad) bn->grad[o] += g;
      for (int i = 0; i < n; ++i) {
        if (wn->requires_grad) wn->grad[static_cast<std::size_t>(o) * n + i] += g * xn->value[i];
        if (xn->requires_grad) xn->grad[i] += g * wn->value[static_cast<std::size_t>(o) * n + i];
      }
    }
  });
}

Var upsample2x(const Var& x) {
  const Shape in = x->shape;
  const Shape out{in.c, in.h * 2, in.w * 2};
  std::vector<double> y(out.size());
  for (int c = 0; c < in.c; ++c)
    for (int yy = 0; yy < out.h; ++yy)
      for (int xx = 0; xx < out.w; ++xx)
        y[(static_cast<std::size_t>(c) * out.h + yy) * out.w + xx] =
            x->value[(static_cast<std::size_t>(c) * in.h + yy / 2) * in.w + xx / 2];
  return make_result(out, std::move(y), {x}, [in, out](Node& self) {
    auto& g = self.parents[0]->grad;
    for (int c = 0; c < in.c; ++c)
      for (int yy = 0; yy < out.h; ++yy)
        for (int xx = 0; xx < out.w; ++xx)
          g[(static_cast<std::size_t>(c) * in.h + yy / 2) * in.w + xx / 2] +=
              self.grad[(static_cast<std::size_t>(c) * out.h + yy) * out.w + xx];
  });
}

Var reflect_pad(const Var& x, int pad) {
  const Shape in = x->shape;
  if (pad < 0 || pad >= in.h || pad >= in.w) throw std::invalid_argument("reflect_pad: pad must be smaller than the input");
  const Shape out{in.c, in.h + 2 * pad, in.w + 2 * pad};
  auto mirror = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * (n - 1) - i : i); };
  std::vector<std::size_t> src(out.size());
  for (int c = 0; c < in.c; ++c)
    for (int yy = 0; yy < out.h; ++yy)
      for (int xx = 0; xx < out.w; ++xx)
        src[(static_cast<std::size_t>(c) * out.h + yy) * out.w + xx] =
            (static_cast<std::size_t>(c) * in.h + mirror(yy - pad, in.h)) * in.w + mirror(xx - pad, in.w);
  std::vector<double> y(out.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x->value[src[i]];
  return make_result(out, std::move(y), {x}, [src = std::move(src)](Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
  });
}

Var global_avg_pool(const Var& x) {
  const Shape in = x->shape;
  const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
  std::vector<double> y(in.c, 0.0);
  for (int c = 0; c < in.c; ++c) {
    double acc = 0.0;
    for (std::size_t t = 0; t < plane; ++t) acc += x->value[c * plane + t];
    y[c] = acc / static_cast<double>(plane);
  }
  return make_result({in.c, 1, 1}, std::move(y), {x}, [in, plane](Node& self) {
    auto& g = self.parents[0]->grad;
    for (int c = 0; c < in.c; ++c) {
      const double gc = self.grad[c] / static_cast<double>(plane);
      for (std::size_t t = 0; t < plane; ++t) g[c * plane + t] += gc;
    }
  });
}

namespace {

template <typename F, typename D>
Var unary(const Var& x, F f, D dfdx_from_xy) {
  std::vector<double> y(x->value.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x->value[i]);
  return make_result(x->shape, std::move(y), {x}, [dfdx_from_xy](Node& self) {
    auto& xn = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      xn.grad[i] += self.grad[i] * dfdx_from_xy(xn.value[i], self.value[i]);
  });
}

}  // namespace

Var relu(const Var& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary(x, [slope](double v) { return v > 0 ? v : slope * v; },
               [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return unary(x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var add(const Var& a, const Var& b) {
  check_same(a, b, "add");
  std::vector<double> y(a->value.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a->value[i] + b->value[i];
  return make_result(a->shape, std::move(y), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same(a, b, "sub");
  std::vector<double> y(a->value.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a->value[i] - b->value[i];
  return make_result(a->shape, std::move(y), {a, b}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i];
      if (pb.requires_grad) pb.grad[i] -= self.grad[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x->value) acc += v;
  return make_result({1, 1, 1}, {acc}, {x}, [](Node& self) {
    auto& p = *self.parents[0];
    for (auto& g : p.grad) g += self.grad[0];
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x->value.size())); }

Var l1_mean(const Var& a, const Var& b) {
  check_same(a, b, "l1_mean");
  const double n = static_cast<double>(a->value.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) acc += std::abs(a->value[i] - b->value[i]);
  return make_result({1, 1, 1}, {acc / n}, {a, b}, [n](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const double g = self.grad[0] / n;
    for (std::size_t i = 0; i < pa.value.size(); ++i) {
      const double d = pa.value[i] - pb.value[i];
      const double sgn = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
      if (pa.requires_grad) pa.grad[i] += g * sgn;
      if (pb.requires_grad) pb.grad[i] -= g * sgn;
    }
  });
}

Var mse_to(const Var& x, double target) {
  const double n = static_cast<double>(x->value.size());
  double acc = 0.0;
  for (double v : x->value) acc += (v - target) * (v - target);
  return make_result({1, 1, 1}, {acc / n}, {x}, [n, target](Node& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += self.grad[0] * 2.0 * (p.value[i] - target) / n;
  });
}

Var sigmoid_focal_loss(const Var& logits, std::span<const int> targets, double alpha, double gamma,
                       double normalizer) {
  if (targets.size() != logits->value.size()) throw std::invalid_argument("focal loss: target count mismatch");
  if (!(normalizer > 0)) throw std::invalid_argument("focal loss: normalizer must be positive");
  std::vector<int> t(targets.begin(), targets.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < 0) continue;
    const double x = logits->value[i];
    const bool pos = t[i] == 1;
    const double log_pt = pos ? log_sigmoid(x) : log_sigmoid(-x);
    const double pt = std::exp(log_pt);
    const double at = pos ? alpha : 1.0 - alpha;
    acc += -at * std::pow(1.0 - pt, gamma) * log_pt;
  }
  return make_result({1, 1, 1}, {acc / normalizer}, {logits},
                     [t = std::move(t), alpha, gamma, normalizer](Node& self) {
                       auto& p = *self.parents[0];
                       const double g = self.grad[0] / normalizer;
                       for (std::size_t i = 0; i < t.size(); ++i) {
                         if (t[i] < 0) continue;
                         const double x = p.value[i];
                         const bool pos = t[i] == 1;
                         const double log_pt = pos ? log_sigmoid(x) : log_sigmoid(-x);
                         const double pt = std::exp(log_pt);
                         const double q = 1.0 - pt;
                         const double at = pos ? alpha : 1.0 - alpha;
                         const double sgn = pos ? 1.0 : -1.0;
                         // dL/dx = -at * sgn * (q^(g+1) - g * q^g * pt * log pt)
                         const double d = -at * sgn * (std::pow(q, gamma + 1.0) - gamma * std::pow(q, gamma) * pt * log_pt);
                         p.grad[i] += g * d;
                       }
                     });
}

Var smooth_l1(const Var& pred, std::span<const double> target, std::span<const unsigned char> mask,
              double beta, double normalizer) {
  const std::size_t n = pred->value.size();
  if (target.size() != n || mask.size() != n) throw std::invalid_argument("smooth_l1: size mismatch");
  if (!(normalizer > 0)) throw std::invalid_argument("smooth_l1: normalizer must be positive");
  std::vector<double> diff(n, 0.0);
  std::vector<unsigned char> m(mask.begin(), mask.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!m[i]) continue;
    const double d = pred->value[i] - target[i];
    diff[i] = d;
    const double ad = std::abs(d);
    acc += ad < beta ? 0.5 * d * d / beta : ad - 0.5 * beta;
  }
  return make_result({1, 1, 1}, {acc / normalizer}, {pred},
                     [diff = std::move(diff), m = std::move(m), beta, normalizer](Node& self) {
                       auto& p = *self.parents[0];
                       const double g = self.grad[0] / normalizer;
                       for (std::size_t i = 0; i < diff.size(); ++i) {
                         if (!m[i]) continue;
                         const double d = diff[i];
                         p.grad[i] += g * (std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0));
                       }
                     });
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double mx = *std::max_element(out.begin(), out.end());
  double z = 0.0;
  for (auto& v : out) z += (v = std::exp(v - mx));
  for (auto& v : out) v /= z;
  return out;
}

Var softmax_cross_entropy(const Var& logits, int label) {
  const auto probs = softmax(logits->value);
  if (label < 0 || label >= static_cast<int>(probs.size())) throw std::invalid_argument("cross entropy: bad label");
  const double loss = -std::log(std::max(probs[label], 1e-300));
  return make_result({1, 1, 1}, {loss}, {logits}, [probs, label](Node& self) {
    auto& p = *self.parents[0];
    for (std::size_t i = 0; i < probs.size(); ++i)
      p.grad[i] += self.grad[0] * (probs[i] - (static_cast<int>(i) == label ? 1.0 : 0.0));
  });
}

}  // namespace mitodet::nn
