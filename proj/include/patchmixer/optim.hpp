// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "patchmixer/tensor.hpp"

namespace pm {

/// Ordered, named collection of learnable tensors. Insertion order is the
/// iteration order, so optimizer updates and serialization are deterministic.
template <class Real>
struct NamedParams {
  std::vector<std::pair<std::string, TensorT<Real>>> items;

  void add(const std::string& name, const TensorT<Real>& t) {
    for (const auto& [n, _] : items)
      if (n == name) throw Error("duplicate parameter name: " + name);
    items.emplace_back(name, t);
  }

  TensorT<Real>* find(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }

  int64_t total_scalars() const {
    int64_t n = 0;
    for (const auto& [_, t] : items) n += t.size();
    return n;
  }
};

/// SGD with Nesterov momentum and decoupled-from-nothing weight decay folded
/// into the gradient, matching the classic formulation:
///   g <- grad + wd*value;  v <- mu*v + g;  value <- value - lr*(g + mu*v)
template <class Real>
struct SgdState {
  Real momentum = Real(0.9);
  Real weight_decay = Real(1e-5);
  Real lr = Real(0);
  std::map<std::string, std::vector<Real>> velocity;
};

template <class Real>
void sgd_nesterov_step(NamedParams<Real>& params, SgdState<Real>& state) {
  for (auto& [name, t] : params.items) {
    if (!t.has_grad()) throw Error("sgd step: missing gradient for " + name);
    auto& v = state.velocity[name];
    if (v.empty()) v.assign(static_cast<size_t>(t.size()), Real(0));
    if (v.size() != t.values().size())
      throw DimError("sgd step: velocity shape mismatch for " + name);
    auto& val = t.values();
    const auto& g = t.grad();
    const Real mu = state.momentum, wd = state.weight_decay, lr = state.lr;
    for (size_t i = 0; i < val.size(); ++i) {
      Real gi = g[i] + wd * val[i];
      v[i] = mu * v[i] + gi;
      val[i] -= lr * (gi + mu * v[i]);
    }
    t.zero_grad();
  }
}

/// Cosine annealing over a period of T epochs:
///   lr(t) = lr_min + (lr_max - lr_min) * (1 + cos(pi*t/T)) / 2
inline double cosine_lr(int epoch, int total_epochs, double lr_max = 1e-2,
                        double lr_min = 1e-4) {
  if (total_epochs < 1) throw Error("cosine_lr: total epochs must be >= 1");
  double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

}  // namespace pm
