// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with tape-based reverse-mode differentiation.
// The graph is built dynamically by the ops below and freed after backward().
// All kernels are plain sequential loops so repeated runs are bit-identical.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "patchmixer/error.hpp"
#include "patchmixer/rng.hpp"

namespace pm {

enum class Mode { kTrain, kEval };

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int e : s) {
    if (e <= 0) throw DimError("tensor extents must be positive");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

template <class Real>
struct TensorNode {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
};

template <class Real>
class TensorT {
 public:
  using Node = TensorNode<Real>;

  TensorT() = default;

  explicit TensorT(Shape shape, Real fill = Real(0)) {
    node_ = std::make_shared<Node>();
    node_->shape = std::move(shape);
    node_->value.assign(static_cast<size_t>(shape_numel(node_->shape)), fill);
  }

  static TensorT from(Shape shape, std::vector<Real> data) {
    TensorT t;
    t.node_ = std::make_shared<Node>();
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw DimError("data length does not match shape " + shape_str(shape));
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    return t;
  }

  static TensorT scalar(Real v) { return from({1}, {v}); }

  static TensorT uniform(Shape shape, Rng& rng, double lo, double hi) {
    TensorT t(std::move(shape));
    for (Real& v : t.values()) v = static_cast<Real>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const {
    int n = ndim();
    if (i < 0) i += n;
    if (i < 0 || i >= n) throw DimError("axis out of range");
    return node_->shape[i];
  }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }

  std::vector<Real>& values() { return node_->value; }
  const std::vector<Real>& values() const { return node_->value; }

  Real item() const {
    if (size() != 1) throw DimError("item() requires a single-element tensor");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  TensorT& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<Real>& grad() {
    if (node_->grad.empty()) throw Error("gradient not populated");
    return node_->grad;
  }
  const std::vector<Real>& grad() const {
    if (node_->grad.empty()) throw Error("gradient not populated");
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  bool all_finite() const {
    for (Real v : node_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  /// Reverse sweep from a scalar root. Frees the graph afterwards; leaf
  /// gradients accumulate in place (call zero_grad between steps).
  void backward() {
    if (size() != 1) throw DimError("backward() requires a scalar root");
    // The order holds shared ownership: clearing a node's parent links must
    // not free nodes still pending in the sweep.
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_set<Node*> seen;
    topo(node_, seen, order);
    ensure_grad(*node_);
    node_->grad[0] = Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = it->get();
      bool interior = static_cast<bool>(n->backward_fn);
      if (interior) {
        for (auto& p : n->parents)
          if (p->requires_grad) ensure_grad(*p);
        n->backward_fn(*n);
      }
      n->backward_fn = nullptr;
      n->parents.clear();
      if (interior) n->grad.clear();
    }
  }

  std::shared_ptr<Node> node() const { return node_; }

  static TensorT wrap(std::shared_ptr<Node> n) {
    TensorT t;
    t.node_ = std::move(n);
    return t;
  }

  static void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad.assign(n.value.size(), Real(0));
  }

 private:
  static void topo(const std::shared_ptr<Node>& root,
                   std::unordered_set<Node*>& seen,
                   std::vector<std::shared_ptr<Node>>& order) {
    // Iterative DFS; graphs from deep models overflow the stack otherwise.
    struct Frame {
      std::shared_ptr<Node> n;
      size_t next_parent;
    };
    std::vector<Frame> stack;
    if (seen.insert(root.get()).second) stack.push_back({root, 0});
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.n->parents.size()) {
        std::shared_ptr<Node> p = f.n->parents[f.next_parent++];
        if (seen.insert(p.get()).second) stack.push_back({std::move(p), 0});
      } else {
        order.push_back(f.n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// RAII guard that disables tape construction on the current thread, so
/// inference passes neither link parents nor save backward buffers.
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_enabled_flag()) {
    detail::grad_enabled_flag() = false;
  }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

template <class Real>
std::shared_ptr<TensorNode<Real>> make_node(
    Shape shape, std::vector<Real> value,
    std::vector<std::shared_ptr<TensorNode<Real>>> parents) {
  auto n = std::make_shared<TensorNode<Real>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_enabled_flag()) {
    for (auto& p : parents)
      if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->parents = std::move(parents);
  }
  return n;
}

template <class Real>
void add_into(std::vector<Real>& dst, const std::vector<Real>& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

template <class Real>
TensorT<Real> add(const TensorT<Real>& a, const TensorT<Real>& b) {
  if (a.shape() != b.shape())
    throw DimError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
  std::vector<Real> out(a.values());
  detail::add_into(out, b.values());
  auto n = detail::make_node(a.shape(), std::move(out), {a.node(), b.node()});
  if (n->requires_grad) {
    auto pa = a.node(), pb = b.node();
    n->backward_fn = [pa, pb](TensorNode<Real>& self) {
      if (pa->requires_grad) detail::add_into(pa->grad, self.grad);
      if (pb->requires_grad) detail::add_into(pb->grad, self.grad);
    };
  }
  return TensorT<Real>::wrap(n);
}

template <class Real>
TensorT<Real> mul(const TensorT<Real>& a, const TensorT<Real>& b) {
  if (a.shape() != b.shape())
    throw DimError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<Real> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto n = detail::make_node(a.shape(), std::move(out), {a.node(), b.node()});
  if (n->requires_grad) {
    auto pa = a.node(), pb = b.node();
    n->backward_fn = [pa, pb](TensorNode<Real>& self) {
      if (pa->requires_grad)
        for (size_t i = 0; i < self.grad.size(); ++i)
          pa->grad[i] += self.grad[i] * pb->value[i];
      if (pb->requires_grad)
        for (size_t i = 0; i < self.grad.size(); ++i)
          pb->grad[i] += self.grad[i] * pa->value[i];
    };
  }
  return TensorT<Real>::wrap(n);
}

template <class Real>
TensorT<Real> scale(const TensorT<Real>& a, Real c) {
  std::vector<Real> out(a.values());
  for (Real& v : out) v *= c;
  auto n = detail::make_node(a.shape(), std::move(out), {a.node()});
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa, c](TensorNode<Real>& self) {
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += c * self.grad[i];
    };
  }
  return TensorT<Real>::wrap(n);
}

template <class Real>
TensorT<Real> sum(const TensorT<Real>& a) {
  Real acc = 0;
  for (Real v : a.values()) acc += v;
  auto n = detail::make_node<Real>({1}, {acc}, {a.node()});
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa](TensorNode<Real>& self) {
      Real g = self.grad[0];
      for (Real& gv : pa->grad) gv += g;
    };
  }
  return TensorT<Real>::wrap(n);
}

template <class Real>
TensorT<Real> reshape(const TensorT<Real>& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw DimError("reshape: element count mismatch");
  auto n = detail::make_node(std::move(shape), a.values(), {a.node()});
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa](TensorNode<Real>& self) {
      detail::add_into(pa->grad, self.grad);
    };
  }
  return TensorT<Real>::wrap(n);
}

template <class Real>
TensorT<Real> relu(const TensorT<Real>& a) {
  std::vector<Real> out(a.values());
  for (Real& v : out)
    if (v < Real(0)) v = Real(0);
  auto n = detail::make_node(a.shape(), std::move(out), {a.node()});
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa](TensorNode<Real>& self) {
      for (size_t i = 0; i < self.grad.size(); ++i)
        if (pa->value[i] > Real(0)) pa->grad[i] += self.grad[i];
    };
  }
  return TensorT<Real>::wrap(n);
}

template <class Real>
TensorT<Real> sigmoid(const TensorT<Real>& a) {
  // Outputs stay strictly inside (0,1): saturated values are nudged to the
  // nearest representable interior value.
  const Real hi = std::nextafter(Real(1), Real(0));
  const Real lo = std::nextafter(Real(0), Real(1));
  std::vector<Real> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) {
    double x = static_cast<double>(a.values()[i]);
    Real y = static_cast<Real>(1.0 / (1.0 + std::exp(-x)));
    out[i] = std::min(hi, std::max(lo, y));
  }
  auto n = detail::make_node(a.shape(), std::move(out), {a.node()});
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa](TensorNode<Real>& self) {
      for (size_t i = 0; i < self.grad.size(); ++i) {
        Real y = self.value[i];
        pa->grad[i] += self.grad[i] * y * (Real(1) - y);
      }
    };
  }
  return TensorT<Real>::wrap(n);
}

template <class Real>
TensorT<Real> dropout(const TensorT<Real>& a, double p, Mode mode, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw DimError("dropout: rate must be in [0,1)");
  if (mode == Mode::kEval || p == 0.0) {
    auto n = detail::make_node(a.shape(), a.values(), {a.node()});
    if (n->requires_grad) {
      auto pa = a.node();
      n->backward_fn = [pa](TensorNode<Real>& self) {
        detail::add_into(pa->grad, self.grad);
      };
    }
    return TensorT<Real>::wrap(n);
  }
  Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<Real>>(a.values().size());
  for (Real& m : *mask) m = (rng.uniform() < p) ? Real(0) : keep_scale;
  std::vector<Real> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * (*mask)[i];
  auto n = detail::make_node(a.shape(), std::move(out), {a.node()});
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa, mask](TensorNode<Real>& self) {
      for (size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[i] += self.grad[i] * (*mask)[i];
    };
  }
  return TensorT<Real>::wrap(n);
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class Real>
TensorT<Real> matmul(const TensorT<Real>& a, const TensorT<Real>& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw DimError("matmul: expects 2-D operands");
  int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw DimError("matmul: inner dimensions disagree " + shape_str(a.shape()) +
                   " vs " + shape_str(b.shape()));
  std::vector<Real> out(static_cast<size_t>(m) * n, Real(0));
  const Real* ap = a.values().data();
  const Real* bp = b.values().data();
  for (int i = 0; i < m; ++i) {
    Real* orow = out.data() + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      Real av = ap[static_cast<size_t>(i) * k + kk];
      const Real* brow = bp + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  auto node = detail::make_node(Shape{m, n}, std::move(out), {a.node(), b.node()});
  if (node->requires_grad) {
    auto pa = a.node(), pb = b.node();
    node->backward_fn = [pa, pb, m, k, n](TensorNode<Real>& self) {
      const Real* g = self.grad.data();
      if (pa->requires_grad) {
        // dA = g . B^T
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            Real acc = 0;
            const Real* grow = g + static_cast<size_t>(i) * n;
            const Real* brow = pb->value.data() + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            pa->grad[static_cast<size_t>(i) * k + kk] += acc;
          }
      }
      if (pb->requires_grad) {
        // dB = A^T . g
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            Real av = pa->value[static_cast<size_t>(i) * k + kk];
            Real* brow = pb->grad.data() + static_cast<size_t>(kk) * n;
            const Real* grow = g + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
      }
    };
  }
  return TensorT<Real>::wrap(node);
}

/// Affine map on the last axis, broadcast over all leading axes.
template <class Real>
TensorT<Real> linear(const TensorT<Real>& x, const TensorT<Real>& w,
                     const TensorT<Real>& b) {
  if (w.ndim() != 2 || b.ndim() != 1) throw DimError("linear: W must be 2-D, b 1-D");
  int fin = w.dim(0), fout = w.dim(1);
  if (x.dim(-1) != fin)
    throw DimError("linear: input feature extent " + std::to_string(x.dim(-1)) +
                   " != " + std::to_string(fin));
  if (b.dim(0) != fout) throw DimError("linear: bias extent mismatch");
  int64_t rows = x.size() / fin;
  std::vector<Real> out(static_cast<size_t>(rows) * fout);
  const Real* __restrict xp = x.values().data();
  const Real* __restrict wp = w.values().data();
  const Real* __restrict bp = b.values().data();
  for (int64_t r = 0; r < rows; ++r) {
    Real* __restrict orow = out.data() + r * fout;
    for (int f = 0; f < fout; ++f) orow[f] = bp[f];
    const Real* __restrict xrow = xp + r * fin;
    for (int k = 0; k < fin; ++k) {
      Real xv = xrow[k];
      const Real* __restrict wrow = wp + static_cast<size_t>(k) * fout;
      for (int f = 0; f < fout; ++f) orow[f] += xv * wrow[f];
    }
  }
  Shape oshape = x.shape();
  oshape.back() = fout;
  auto node =
      detail::make_node(std::move(oshape), std::move(out), {x.node(), w.node(), b.node()});
  if (node->requires_grad) {
    auto px = x.node();
    auto pw = w.node();
    auto pb = b.node();
    node->backward_fn = [px, pw, pb, rows, fin, fout](TensorNode<Real>& self) {
      const Real* g = self.grad.data();
      if (px->requires_grad) {
        for (int64_t r = 0; r < rows; ++r) {
          const Real* __restrict grow = g + r * fout;
          Real* __restrict xg = px->grad.data() + r * fin;
          for (int k = 0; k < fin; ++k) {
            Real acc = 0;
            const Real* __restrict wrow = pw->value.data() + static_cast<size_t>(k) * fout;
            for (int f = 0; f < fout; ++f) acc += grow[f] * wrow[f];
            xg[k] += acc;
          }
        }
      }
      if (pw->requires_grad) {
        for (int64_t r = 0; r < rows; ++r) {
          const Real* __restrict grow = g + r * fout;
          const Real* __restrict xrow = px->value.data() + r * fin;
          for (int k = 0; k < fin; ++k) {
            Real xv = xrow[k];
            Real* __restrict wg = pw->grad.data() + static_cast<size_t>(k) * fout;
            for (int f = 0; f < fout; ++f) wg[f] += xv * grow[f];
          }
        }
      }
      if (pb->requires_grad) {
        for (int64_t r = 0; r < rows; ++r) {
          const Real* grow = g + r * fout;
          for (int f = 0; f < fout; ++f) pb->grad[f] += grow[f];
        }
      }
    };
  }
  return TensorT<Real>::wrap(node);
}

/// Pointwise convolution across the patch axis: out[b,p,f] = sum_q W[p,q] x[b,q,f] + bias[p].
template <class Real>
TensorT<Real> patch_axis_mix(const TensorT<Real>& x, const TensorT<Real>& w,
                             const TensorT<Real>& bias) {
  if (x.ndim() != 3) throw DimError("patch_axis_mix: expects B x P x F input");
  int B = x.dim(0), P = x.dim(1), F = x.dim(2);
  if (w.ndim() != 2 || w.dim(0) != P || w.dim(1) != P)
    throw DimError("patch_axis_mix: W must be P x P with P=" + std::to_string(P));
  if (bias.ndim() != 1 || bias.dim(0) != P)
    throw DimError("patch_axis_mix: bias must have extent P");
  std::vector<Real> out(x.values().size());
  const Real* __restrict xp = x.values().data();
  const Real* __restrict wp = w.values().data();
  const Real* __restrict bp = bias.values().data();
  for (int b = 0; b < B; ++b) {
    const Real* __restrict xb = xp + static_cast<size_t>(b) * P * F;
    Real* __restrict ob = out.data() + static_cast<size_t>(b) * P * F;
    for (int p = 0; p < P; ++p) {
      Real* __restrict orow = ob + static_cast<size_t>(p) * F;
      for (int f = 0; f < F; ++f) orow[f] = bp[p];
      for (int q = 0; q < P; ++q) {
        Real wv = wp[static_cast<size_t>(p) * P + q];
        const Real* __restrict xrow = xb + static_cast<size_t>(q) * F;
        for (int f = 0; f < F; ++f) orow[f] += wv * xrow[f];
      }
    }
  }
  auto node = detail::make_node(x.shape(), std::move(out),
                                {x.node(), w.node(), bias.node()});
  if (node->requires_grad) {
    auto px = x.node();
    auto pw = w.node();
    auto pb = bias.node();
    node->backward_fn = [px, pw, pb, B, P, F](TensorNode<Real>& self) {
      const Real* g = self.grad.data();
      for (int b = 0; b < B; ++b) {
        const Real* gb = g + static_cast<size_t>(b) * P * F;
        if (px->requires_grad) {
          Real* xg = px->grad.data() + static_cast<size_t>(b) * P * F;
          for (int q = 0; q < P; ++q) {
            Real* xrow = xg + static_cast<size_t>(q) * F;
            for (int p = 0; p < P; ++p) {
              Real wv = pw->value[static_cast<size_t>(p) * P + q];
              const Real* grow = gb + static_cast<size_t>(p) * F;
              for (int f = 0; f < F; ++f) xrow[f] += wv * grow[f];
            }
          }
        }
        if (pw->requires_grad) {
          const Real* xb = px->value.data() + static_cast<size_t>(b) * P * F;
          for (int p = 0; p < P; ++p) {
            const Real* grow = gb + static_cast<size_t>(p) * F;
            for (int q = 0; q < P; ++q) {
              Real acc = 0;
              const Real* xrow = xb + static_cast<size_t>(q) * F;
              for (int f = 0; f < F; ++f) acc += grow[f] * xrow[f];
              pw->grad[static_cast<size_t>(p) * P + q] += acc;
            }
          }
        }
        if (pb->requires_grad) {
          for (int p = 0; p < P; ++p) {
            Real acc = 0;
            const Real* grow = gb + static_cast<size_t>(p) * F;
            for (int f = 0; f < F; ++f) acc += grow[f];
            pb->grad[p] += acc;
          }
        }
      }
    };
  }
  return TensorT<Real>::wrap(node);
}

// ---------------------------------------------------------------------------
// Normalization

/// Normalize over the last axis with affine parameters.
template <class Real>
TensorT<Real> layer_norm(const TensorT<Real>& x, const TensorT<Real>& gamma,
                         const TensorT<Real>& beta, Real eps = Real(1e-5)) {
  int F = x.dim(-1);
  if (gamma.ndim() != 1 || gamma.dim(0) != F || beta.ndim() != 1 || beta.dim(0) != F)
    throw DimError("layer_norm: affine params must have extent " + std::to_string(F));
  int64_t rows = x.size() / F;
  std::vector<Real> out(x.values().size());
  auto xhat = std::make_shared<std::vector<Real>>(x.values().size());
  auto inv_std = std::make_shared<std::vector<Real>>(rows);
  const Real* xp = x.values().data();
  const Real* gp = gamma.values().data();
  const Real* bp = beta.values().data();
  for (int64_t r = 0; r < rows; ++r) {
    const Real* xrow = xp + r * F;
    Real mean = 0;
    for (int f = 0; f < F; ++f) mean += xrow[f];
    mean /= F;
    Real var = 0;
    for (int f = 0; f < F; ++f) {
      Real d = xrow[f] - mean;
      var += d * d;
    }
    var /= F;
    Real is = Real(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    Real* hrow = xhat->data() + r * F;
    Real* orow = out.data() + r * F;
    for (int f = 0; f < F; ++f) {
      hrow[f] = (xrow[f] - mean) * is;
      orow[f] = gp[f] * hrow[f] + bp[f];
    }
  }
  auto node = detail::make_node(x.shape(), std::move(out),
                                {x.node(), gamma.node(), beta.node()});
  if (node->requires_grad) {
    auto px = x.node();
    auto pg = gamma.node();
    auto pb = beta.node();
    node->backward_fn = [px, pg, pb, xhat, inv_std, rows, F](TensorNode<Real>& self) {
      const Real* g = self.grad.data();
      for (int64_t r = 0; r < rows; ++r) {
        const Real* grow = g + r * F;
        const Real* hrow = xhat->data() + r * F;
        if (pg->requires_grad)
          for (int f = 0; f < F; ++f) pg->grad[f] += grow[f] * hrow[f];
        if (pb->requires_grad)
          for (int f = 0; f < F; ++f) pb->grad[f] += grow[f];
        if (px->requires_grad) {
          // d xhat = g * gamma; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
          Real mean_dh = 0, mean_dh_h = 0;
          for (int f = 0; f < F; ++f) {
            Real dh = grow[f] * pg->value[f];
            mean_dh += dh;
            mean_dh_h += dh * hrow[f];
          }
          mean_dh /= F;
          mean_dh_h /= F;
          Real is = (*inv_std)[r];
          Real* xg = px->grad.data() + r * F;
          for (int f = 0; f < F; ++f) {
            Real dh = grow[f] * pg->value[f];
            xg[f] += (dh - mean_dh - hrow[f] * mean_dh_h) * is;
          }
        }
      }
    };
  }
  return TensorT<Real>::wrap(node);
}

/// Running statistics for batch_norm1d. Plain buffers, not differentiated.
template <class Real>
struct BnStateT {
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  Real momentum = Real(0.1);
  Real eps = Real(1e-5);

  explicit BnStateT(int channels = 0)
      : running_mean(channels, Real(0)), running_var(channels, Real(1)) {}
};

/// Batch normalization over (batch, length) per channel. Accepts B x C or
/// B x C x L input. Train mode uses biased batch statistics and updates the
/// running buffers as (1-m)*old + m*batch; eval mode uses the running stats.
template <class Real>
TensorT<Real> batch_norm1d(const TensorT<Real>& x, const TensorT<Real>& gamma,
                           const TensorT<Real>& beta, BnStateT<Real>& state,
                           Mode mode) {
  if (x.ndim() != 2 && x.ndim() != 3)
    throw DimError("batch_norm1d: expects B x C or B x C x L input");
  int B = x.dim(0), C = x.dim(1), L = x.ndim() == 3 ? x.dim(2) : 1;
  if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C)
    throw DimError("batch_norm1d: affine params must have extent " + std::to_string(C));
  if (static_cast<int>(state.running_mean.size()) != C)
    throw DimError("batch_norm1d: state channel count mismatch");
  int64_t n_per_c = static_cast<int64_t>(B) * L;
  const Real eps = state.eps;

  auto mean = std::make_shared<std::vector<Real>>(C);
  auto inv_std = std::make_shared<std::vector<Real>>(C);
  bool use_batch_stats = (mode == Mode::kTrain);
  if (use_batch_stats) {
    if (n_per_c < 2)
      throw NumericError(
          "batch_norm1d: batch of a single element has degenerate variance in "
          "train mode");
    // Row-major traversal; per-channel accumulation order matches a
    // channel-major scan, so results are identical either way.
    const Real* xp = x.values().data();
    std::vector<Real> sums(C, Real(0));
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const Real* row = xp + (static_cast<size_t>(b) * C + c) * L;
        Real acc = 0;
        for (int l = 0; l < L; ++l) acc += row[l];
        sums[c] += acc;
      }
    for (int c = 0; c < C; ++c) (*mean)[c] = sums[c] / static_cast<Real>(n_per_c);
    std::vector<Real> vars(C, Real(0));
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const Real* row = xp + (static_cast<size_t>(b) * C + c) * L;
        Real m = (*mean)[c];
        Real acc = 0;
        for (int l = 0; l < L; ++l) {
          Real d = row[l] - m;
          acc += d * d;
        }
        vars[c] += acc;
      }
    for (int c = 0; c < C; ++c) {
      Real v = vars[c] / static_cast<Real>(n_per_c);
      (*inv_std)[c] = Real(1) / std::sqrt(v + eps);
      state.running_mean[c] = (Real(1) - state.momentum) * state.running_mean[c] +
                              state.momentum * (*mean)[c];
      state.running_var[c] =
          (Real(1) - state.momentum) * state.running_var[c] + state.momentum * v;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      (*mean)[c] = state.running_mean[c];
      (*inv_std)[c] = Real(1) / std::sqrt(state.running_var[c] + eps);
    }
  }

  std::vector<Real> out(x.values().size());
  auto xhat = std::make_shared<std::vector<Real>>(x.values().size());
  const Real* gp = gamma.values().data();
  const Real* bp = beta.values().data();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      size_t base = (static_cast<size_t>(b) * C + c) * L;
      Real m = (*mean)[c], is = (*inv_std)[c];
      for (int l = 0; l < L; ++l) {
        Real h = (x.values()[base + l] - m) * is;
        (*xhat)[base + l] = h;
        out[base + l] = gp[c] * h + bp[c];
      }
    }

  auto node = detail::make_node(x.shape(), std::move(out),
                                {x.node(), gamma.node(), beta.node()});
  if (node->requires_grad) {
    auto px = x.node();
    auto pg = gamma.node();
    auto pb = beta.node();
    node->backward_fn = [px, pg, pb, xhat, inv_std, B, C, L, n_per_c,
                         use_batch_stats](TensorNode<Real>& self) {
      const Real* g = self.grad.data();
      std::vector<Real> sum_g(C, Real(0)), sum_gh(C, Real(0));
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          size_t base = (static_cast<size_t>(b) * C + c) * L;
          Real sg = 0, sgh = 0;
          for (int l = 0; l < L; ++l) {
            sg += g[base + l];
            sgh += g[base + l] * (*xhat)[base + l];
          }
          sum_g[c] += sg;
          sum_gh[c] += sgh;
        }
      for (int c = 0; c < C; ++c) {
        if (pg->requires_grad) pg->grad[c] += sum_gh[c];
        if (pb->requires_grad) pb->grad[c] += sum_g[c];
      }
      if (px->requires_grad) {
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            size_t base = (static_cast<size_t>(b) * C + c) * L;
            Real gam = pg->value[c];
            Real is = (*inv_std)[c];
            if (use_batch_stats) {
              Real inv_n = Real(1) / static_cast<Real>(n_per_c);
              for (int l = 0; l < L; ++l) {
                Real h = (*xhat)[base + l];
                px->grad[base + l] +=
                    gam * is * (g[base + l] - inv_n * sum_g[c] - h * inv_n * sum_gh[c]);
              }
            } else {
              for (int l = 0; l < L; ++l) px->grad[base + l] += gam * is * g[base + l];
            }
          }
      }
    };
  }
  return TensorT<Real>::wrap(node);
}

// ---------------------------------------------------------------------------
// Reductions

template <class Real>
struct MaxOut {
  TensorT<Real> values;
  std::vector<int> argmax;  // index along the reduced axis, per output element
};

/// Max over one axis; ties resolve to the first occurrence, and the gradient
/// routes only to the argmax positions.
template <class Real>
MaxOut<Real> max_over_axis(const TensorT<Real>& x, int axis) {
  int nd = x.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw DimError("max_over_axis: axis out of range");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < nd; ++i) inner *= x.dim(i);
  int a_extent = x.dim(axis);
  Shape oshape;
  for (int i = 0; i < nd; ++i)
    if (i != axis) oshape.push_back(x.dim(i));
  if (oshape.empty()) oshape = {1};

  std::vector<Real> out(static_cast<size_t>(outer) * inner);
  auto arg = std::make_shared<std::vector<int>>(out.size());
  const Real* xp = x.values().data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      Real best = xp[o * a_extent * inner + i];
      int best_a = 0;
      for (int a = 1; a < a_extent; ++a) {
        Real v = xp[(o * a_extent + a) * inner + i];
        if (v > best) {
          best = v;
          best_a = a;
        }
      }
      out[o * inner + i] = best;
      (*arg)[o * inner + i] = best_a;
    }
  auto node = detail::make_node(std::move(oshape), std::move(out), {x.node()});
  if (node->requires_grad) {
    auto px = x.node();
    node->backward_fn = [px, arg, outer, inner, a_extent](TensorNode<Real>& self) {
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
          int a = (*arg)[o * inner + i];
          px->grad[(o * a_extent + a) * inner + i] += self.grad[o * inner + i];
        }
    };
  }
  MaxOut<Real> r;
  r.values = TensorT<Real>::wrap(node);
  r.argmax.assign(arg->begin(), arg->end());
  return r;
}

/// Max over the patch axis of B x P x F, restricted to unmasked patches.
/// mask is row-major B*P, nonzero = kept; each row must keep at least one.
template <class Real>
TensorT<Real> masked_max_patches(const TensorT<Real>& x,
                                 const std::vector<uint8_t>& mask) {
  if (x.ndim() != 3) throw DimError("masked_max_patches: expects B x P x F");
  int B = x.dim(0), P = x.dim(1), F = x.dim(2);
  if (static_cast<int>(mask.size()) != B * P)
    throw DimError("masked_max_patches: mask length must be B*P");
  std::vector<Real> out(static_cast<size_t>(B) * F);
  auto arg = std::make_shared<std::vector<int>>(out.size());
  const Real* xp = x.values().data();
  for (int b = 0; b < B; ++b) {
    int first = -1;
    for (int p = 0; p < P; ++p)
      if (mask[static_cast<size_t>(b) * P + p]) {
        first = p;
        break;
      }
    if (first < 0)
      throw NumericError("masked_max_patches: a batch row has no kept patches");
    for (int f = 0; f < F; ++f) {
      Real best = xp[(static_cast<size_t>(b) * P + first) * F + f];
      int best_p = first;
      for (int p = first + 1; p < P; ++p) {
        if (!mask[static_cast<size_t>(b) * P + p]) continue;
        Real v = xp[(static_cast<size_t>(b) * P + p) * F + f];
        if (v > best) {
          best = v;
          best_p = p;
        }
      }
      out[static_cast<size_t>(b) * F + f] = best;
      (*arg)[static_cast<size_t>(b) * F + f] = best_p;
    }
  }
  auto node = detail::make_node(Shape{B, F}, std::move(out), {x.node()});
  if (node->requires_grad) {
    auto px = x.node();
    node->backward_fn = [px, arg, B, P, F](TensorNode<Real>& self) {
      for (int b = 0; b < B; ++b)
        for (int f = 0; f < F; ++f) {
          int p = (*arg)[static_cast<size_t>(b) * F + f];
          px->grad[(static_cast<size_t>(b) * P + p) * F + f] +=
              self.grad[static_cast<size_t>(b) * F + f];
        }
    };
  }
  return TensorT<Real>::wrap(node);
}

/// Mean over rows of -log softmax(logits)[target], stabilized by max-subtraction.
template <class Real>
TensorT<Real> softmax_cross_entropy(const TensorT<Real>& logits,
                                    const std::vector<int>& targets) {
  if (logits.ndim() != 2) throw DimError("softmax_cross_entropy: expects N x C logits");
  int N = logits.dim(0), C = logits.dim(1);
  if (static_cast<int>(targets.size()) != N)
    throw DimError("softmax_cross_entropy: target count mismatch");
  for (int t : targets)
    if (t < 0 || t >= C)
      throw DimError("softmax_cross_entropy: target out of range [0," +
                     std::to_string(C) + ")");
  auto probs = std::make_shared<std::vector<Real>>(logits.values().size());
  const Real* lp = logits.values().data();
  double loss = 0;
  for (int i = 0; i < N; ++i) {
    const Real* row = lp + static_cast<size_t>(i) * C;
    Real mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double denom = 0;
    for (int c = 0; c < C; ++c)
      denom += std::exp(static_cast<double>(row[c] - mx));
    double log_denom = std::log(denom);
    for (int c = 0; c < C; ++c)
      (*probs)[static_cast<size_t>(i) * C + c] =
          static_cast<Real>(std::exp(static_cast<double>(row[c] - mx) - log_denom));
    loss += log_denom - static_cast<double>(row[targets[i]] - mx);
  }
  loss /= N;
  auto node = detail::make_node<Real>({1}, {static_cast<Real>(loss)}, {logits.node()});
  if (node->requires_grad) {
    auto pl = logits.node();
    auto tg = std::make_shared<std::vector<int>>(targets);
    node->backward_fn = [pl, probs, tg, N, C](TensorNode<Real>& self) {
      Real g = self.grad[0] / static_cast<Real>(N);
      for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c) {
          Real p = (*probs)[static_cast<size_t>(i) * C + c];
          Real onehot = (c == (*tg)[i]) ? Real(1) : Real(0);
          pl->grad[static_cast<size_t>(i) * C + c] += g * (p - onehot);
        }
    };
  }
  return TensorT<Real>::wrap(node);
}

/// Concatenate along the last axis; all parts share the leading extents.
template <class Real>
TensorT<Real> concat_last(const std::vector<TensorT<Real>>& parts) {
  if (parts.empty()) throw DimError("concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  int total_f = 0;
  for (const auto& p : parts) {
    Shape l = p.shape();
    int f = l.back();
    l.pop_back();
    if (l != lead) throw DimError("concat_last: leading extents disagree");
    total_f += f;
  }
  int64_t rows = 1;
  for (int e : lead) rows *= e;
  std::vector<Real> out(static_cast<size_t>(rows) * total_f);
  std::vector<std::shared_ptr<TensorNode<Real>>> parents;
  int off = 0;
  for (const auto& p : parts) {
    int f = p.dim(-1);
    const Real* src = p.values().data();
    for (int64_t r = 0; r < rows; ++r)
      std::copy(src + r * f, src + (r + 1) * f,
                out.data() + r * total_f + off);
    off += f;
    parents.push_back(p.node());
  }
  Shape oshape = lead;
  oshape.push_back(total_f);
  auto node = detail::make_node(std::move(oshape), std::move(out), parents);
  if (node->requires_grad) {
    std::vector<int> widths;
    for (const auto& p : parts) widths.push_back(p.dim(-1));
    auto ps = node->parents;
    node->backward_fn = [ps, widths, rows, total_f](TensorNode<Real>& self) {
      int off = 0;
      for (size_t i = 0; i < ps.size(); ++i) {
        int f = widths[i];
        if (ps[i]->requires_grad) {
          for (int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < f; ++j)
              ps[i]->grad[r * f + j] += self.grad[r * total_f + off + j];
        }
        off += f;
      }
    };
  }
  return TensorT<Real>::wrap(node);
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Max over coordinates of |g_ad - g_fd| / max(1, |g_fd|), comparing the
/// reverse-mode gradient of f against central finite differences. Instantiate
/// at Real=double so the oracle runs in 64-bit.
template <class Real>
double grad_check(const std::function<TensorT<Real>()>& f,
                  std::vector<TensorT<Real>> leaves, double h = 1e-3) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  TensorT<Real> y = f();
  y.backward();
  std::vector<std::vector<Real>> ad_grads;
  for (auto& leaf : leaves)
    ad_grads.push_back(leaf.has_grad() ? leaf.grad()
                                       : std::vector<Real>(leaf.size(), Real(0)));

  double max_err = 0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& vals = leaves[li].values();
    for (size_t i = 0; i < vals.size(); ++i) {
      Real saved = vals[i];
      vals[i] = saved + static_cast<Real>(h);
      double fp = static_cast<double>(f().item());
      vals[i] = saved - static_cast<Real>(h);
      double fm = static_cast<double>(f().item());
      vals[i] = saved;
      double fd = (fp - fm) / (2.0 * h);
      double ad = static_cast<double>(ad_grads[li][i]);
      double err = std::abs(ad - fd) / std::max(1.0, std::abs(fd));
      max_err = std::max(max_err, err);
    }
    leaves[li].zero_grad();
  }
  return max_err;
}

}  // namespace pm
