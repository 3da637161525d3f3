// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode differentiation over a dynamically recorded graph.
//
// Every op returns a Var holding its value and, when any input requires a
// gradient, a closure that pushes the output gradient back to the inputs.
// Storage is T; reductions (softmax denominators, norms, losses) accumulate
// in double.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lemb/error.hpp"
#include "lemb/tensor.hpp"

namespace lemb::ad {

template <std::floating_point T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (!has_grad || grad.shape() != value.shape()) {
      grad = Tensor<T>(value.shape());
      has_grad = true;
    }
  }
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) {
    detail::grad_enabled_flag() = false;
  }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <std::floating_point T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  /// A graph constant; never receives a gradient.
  static Var constant(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    return Var(std::move(node));
  }

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Leaf tensor owned by a model. Copies are deep: a copied model never
/// shares storage with its source.
template <std::floating_point T>
class Parameter {
 public:
  Parameter() : node_(std::make_shared<Node<T>>()) {}
  explicit Parameter(Tensor<T> value, bool trainable = true)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = trainable;
  }

  Parameter(const Parameter& other) : node_(std::make_shared<Node<T>>()) {
    copy_from(other);
  }
  Parameter& operator=(const Parameter& other) {
    if (this != &other) {
      node_ = std::make_shared<Node<T>>();
      copy_from(other);
    }
    return *this;
  }
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  Var<T> var() const { return Var<T>(node_); }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->grad; }
  bool has_grad() const { return node_->has_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }

  bool trainable() const { return node_->requires_grad; }
  void set_trainable(bool on) { node_->requires_grad = on; }

  void zero_grad() {
    node_->grad = Tensor<T>(node_->value.shape());
    node_->has_grad = true;
  }

 private:
  void copy_from(const Parameter& other) {
    node_->value = other.node_->value;
    node_->grad = other.node_->grad;
    node_->has_grad = other.node_->has_grad;
    node_->requires_grad = other.node_->requires_grad;
  }

  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <std::floating_point T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& v : inputs) any = any || v.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (auto& v : inputs) node->parents.push_back(v.node_ptr());
      node->backward = std::move(backward);
    }
  }
  return Var<T>(std::move(node));
}

template <std::floating_point T>
Tensor<T>* grad_of(Node<T>& parent) {
  if (!parent.requires_grad) return nullptr;
  parent.ensure_grad();
  return &parent.grad;
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a [m x k] times b [k x n].
template <std::floating_point T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  detail::require(b.rows() == k, "matmul: inner dimensions " +
                                     shape_string(a.shape()) + " x " +
                                     shape_string(b.shape()));
  Tensor<T> out = Tensor<T>::matrix(m, n);
  const T* A = a.value().data().data();
  const T* B = b.value().data().data();
  T* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      if (av == T{0}) continue;
      const T* brow = B + p * n;
      T* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  return detail::make_result<T>(std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    const T* G = self.grad.data().data();
    Node<T>& na = *self.parents[0];
    Node<T>& nb = *self.parents[1];
    if (auto* ga = detail::grad_of(na)) {
      const T* B = nb.value.data().data();
      T* GA = ga->data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
          GA[i * k + p] += acc;
        }
    }
    if (auto* gb = detail::grad_of(nb)) {
      const T* A = na.value.data().data();
      T* GB = gb->data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T av = A[i * k + p];
          if (av == T{0}) continue;
          for (std::size_t j = 0; j < n; ++j) GB[p * n + j] += av * G[i * n + j];
        }
    }
  });
}

/// a [m x k] times b^T where b is [n x k]; avoids materializing the transpose.
template <std::floating_point T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  detail::require(b.cols() == k, "matmul_nt: inner dimensions " +
                                     shape_string(a.shape()) + " x " +
                                     shape_string(b.shape()) + "^T");
  Tensor<T> out = Tensor<T>::matrix(m, n);
  const T* A = a.value().data().data();
  const T* B = b.value().data().data();
  T* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
      C[i * n + j] = acc;
    }
  return detail::make_result<T>(std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    const T* G = self.grad.data().data();
    Node<T>& na = *self.parents[0];
    Node<T>& nb = *self.parents[1];
    if (auto* ga = detail::grad_of(na)) {
      const T* B = nb.value.data().data();
      T* GA = ga->data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T g = G[i * n + j];
          if (g == T{0}) continue;
          for (std::size_t p = 0; p < k; ++p) GA[i * k + p] += g * B[j * k + p];
        }
    }
    if (auto* gb = detail::grad_of(nb)) {
      const T* A = na.value.data().data();
      T* GB = gb->data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T g = G[i * n + j];
          if (g == T{0}) continue;
          for (std::size_t p = 0; p < k; ++p) GB[j * k + p] += g * A[i * k + p];
        }
    }
  });
}

template <std::floating_point T>
Var<T> transpose(const Var<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor<T> out = Tensor<T>::matrix(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a.value()(i, j);
  return detail::make_result<T>(std::move(out), {a}, [m, n](Node<T>& self) {
    if (auto* ga = detail::grad_of(*self.parents[0]))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*ga)(i, j) += self.grad(j, i);
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(),
                  "add: shape mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  Tensor<T> out = a.value();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents)
      if (auto* g = detail::grad_of(*p)) {
        auto gd = g->data();
        auto sd = self.grad.data();
        for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += sd[i];
      }
  });
}

template <std::floating_point T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(),
                  "sub: shape mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  Tensor<T> out = a.value();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] -= bd[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto sd = self.grad.data();
    if (auto* g = detail::grad_of(*self.parents[0]))
      for (std::size_t i = 0; i < sd.size(); ++i) g->data()[i] += sd[i];
    if (auto* g = detail::grad_of(*self.parents[1]))
      for (std::size_t i = 0; i < sd.size(); ++i) g->data()[i] -= sd[i];
  });
}

/// Elementwise product of equally shaped operands.
template <std::floating_point T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(),
                  "mul: shape mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  Tensor<T> out = a.value();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto sd = self.grad.data();
    Node<T>& na = *self.parents[0];
    Node<T>& nb = *self.parents[1];
    if (auto* g = detail::grad_of(na))
      for (std::size_t i = 0; i < sd.size(); ++i)
        g->data()[i] += sd[i] * nb.value.data()[i];
    if (auto* g = detail::grad_of(nb))
      for (std::size_t i = 0; i < sd.size(); ++i)
        g->data()[i] += sd[i] * na.value.data()[i];
  });
}

/// a [m x n] plus the row vector b [n] on every row.
template <std::floating_point T>
Var<T> add_bias(const Var<T>& a, const Var<T>& b) {
  const std::size_t m = a.rows(), n = a.cols();
  detail::require(b.size() == n, "add_bias: bias length " +
                                     std::to_string(b.size()) +
                                     " does not match " + std::to_string(n));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += b.value()[j];
  return detail::make_result<T>(std::move(out), {a, b}, [m, n](Node<T>& self) {
    if (auto* g = detail::grad_of(*self.parents[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g->data()[i] += self.grad.data()[i];
    if (auto* g = detail::grad_of(*self.parents[1]))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*g)[j] += self.grad(i, j);
  });
}

template <std::floating_point T>
Var<T> scale(const Var<T>& a, double factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = static_cast<T>(v * factor);
  return detail::make_result<T>(std::move(out), {a}, [factor](Node<T>& self) {
    if (auto* g = detail::grad_of(*self.parents[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g->data()[i] += static_cast<T>(self.grad.data()[i] * factor);
  });
}

namespace detail {

template <std::floating_point T, class F, class DF>
Var<T> unary(const Var<T>& a, F f, DF df) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = f(v);
  return make_result<T>(std::move(out), {a}, [df](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    if (auto* g = grad_of(pa))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g->data()[i] += self.grad.data()[i] *
                        df(pa.value.data()[i], self.value.data()[i]);
  });
}

}  // namespace detail

template <std::floating_point T>
Var<T> tanh(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return std::tanh(x); },
      [](T, T y) { return T{1} - y * y; });
}

template <std::floating_point T>
Var<T> relu(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return x > T{0} ? x : T{0}; },
      [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

/// GELU, tanh approximation.
template <std::floating_point T>
Var<T> gelu(const Var<T>& a) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  return detail::unary(
      a,
      [](T x) {
        return T(0.5) * x * (T{1} + std::tanh(c * (x + k * x * x * x)));
      },
      [](T x, T) {
        const T u = c * (x + k * x * x * x);
        const T t = std::tanh(u);
        const T du = c * (T{1} + T{3} * k * x * x);
        return T(0.5) * (T{1} + t) + T(0.5) * x * (T{1} - t * t) * du;
      });
}

/// Inverted dropout: zeroes entries with probability p and rescales the rest.
template <std::floating_point T, class Rng>
Var<T> dropout(const Var<T>& a, double p, Rng& rng) {
  detail::require(p >= 0.0 && p < 1.0, "dropout: probability out of [0,1)");
  if (p == 0.0) return a;
  Tensor<T> mask(a.shape());
  std::bernoulli_distribution keep(1.0 - p);
  const T kept = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask.data()) m = keep(rng) ? kept : T{0};
  return mul(a, Var<T>::constant(std::move(mask)));
}

// ---------------------------------------------------------------------------
// Row-wise normalizations

/// Row-wise softmax. With `causal`, entry (i, j) for j > i is masked out.
template <std::floating_point T>
Var<T> softmax_rows(const Var<T>& a, bool causal = false,
                    std::size_t window = std::numeric_limits<std::size_t>::max()) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor<T> out = Tensor<T>::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    // Row i may see columns [first, limit); everything else gets weight 0.
    const std::size_t first = i > window ? i - window : 0;
    std::size_t limit = causal ? std::min(n, i + 1) : n;
    if (window < n) limit = std::min(limit, i + window + 1);
    detail::require(first < limit, "softmax_rows: row with no visible column");
    double mx = -INFINITY;
    for (std::size_t j = first; j < limit; ++j)
      mx = std::max(mx, static_cast<double>(a.value()(i, j)));
    double denom = 0.0;
    for (std::size_t j = first; j < limit; ++j)
      denom += std::exp(static_cast<double>(a.value()(i, j)) - mx);
    for (std::size_t j = first; j < limit; ++j)
      out(i, j) = static_cast<T>(
          std::exp(static_cast<double>(a.value()(i, j)) - mx) / denom);
  }
  return detail::make_result<T>(std::move(out), {a}, [m, n](Node<T>& self) {
    if (auto* g = detail::grad_of(*self.parents[0]))
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          dot += static_cast<double>(self.grad(i, j)) * self.value(i, j);
        for (std::size_t j = 0; j < n; ++j)
          (*g)(i, j) += static_cast<T>(self.value(i, j) *
                                       (self.grad(i, j) - dot));
      }
  });
}

/// Row-wise layer normalization with learned gain and bias of length cols.
template <std::floating_point T>
Var<T> layer_norm(const Var<T>& a, const Var<T>& gain, const Var<T>& bias,
                  double eps = 1e-5) {
  const std::size_t m = a.rows(), n = a.cols();
  detail::require(gain.size() == n && bias.size() == n,
                  "layer_norm: gain/bias length mismatch");
  Tensor<T> out = Tensor<T>::matrix(m, n);
  Tensor<T> normed = Tensor<T>::matrix(m, n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += a.value()(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = a.value()(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      normed(i, j) = static_cast<T>((a.value()(i, j) - mean) * inv_std[i]);
      out(i, j) = normed(i, j) * gain.value()[j] + bias.value()[j];
    }
  }
  return detail::make_result<T>(
      std::move(out), {a, gain, bias},
      [m, n, normed = std::move(normed),
       inv_std = std::move(inv_std)](Node<T>& self) {
        const Tensor<T>& gv = self.parents[1]->value;
        if (auto* gg = detail::grad_of(*self.parents[1]))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              (*gg)[j] += self.grad(i, j) * normed(i, j);
        if (auto* gb = detail::grad_of(*self.parents[2]))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*gb)[j] += self.grad(i, j);
        if (auto* ga = detail::grad_of(*self.parents[0]))
          for (std::size_t i = 0; i < m; ++i) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double gx = static_cast<double>(self.grad(i, j)) * gv[j];
              sum_g += gx;
              sum_gx += gx * normed(i, j);
            }
            for (std::size_t j = 0; j < n; ++j) {
              const double gx = static_cast<double>(self.grad(i, j)) * gv[j];
              (*ga)(i, j) += static_cast<T>(
                  inv_std[i] *
                  (gx - sum_g / n - normed(i, j) * sum_gx / n));
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Indexing

/// Selects rows of `table`; gradients scatter-add back into the table.
template <std::floating_point T>
Var<T> gather_rows(const Var<T>& table, std::vector<std::size_t> indices) {
  const std::size_t n = table.cols();
  Tensor<T> out = Tensor<T>::matrix(indices.size(), n);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    detail::require(indices[i] < table.rows(),
                    "gather_rows: index " + std::to_string(indices[i]) +
                        " out of range " + std::to_string(table.rows()));
    auto src = table.value().row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return detail::make_result<T>(
      std::move(out), {table}, [n, indices = std::move(indices)](Node<T>& self) {
        if (auto* g = detail::grad_of(*self.parents[0]))
          for (std::size_t i = 0; i < indices.size(); ++i)
            for (std::size_t j = 0; j < n; ++j)
              (*g)(indices[i], j) += self.grad(i, j);
      });
}

/// Stacks the rows of every part; all parts must share a column count.
template <std::floating_point T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == n, "concat_rows: column mismatch");
    m += p.rows();
  }
  Tensor<T> out = Tensor<T>::matrix(m, n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.size();
  }
  return detail::make_result<T>(std::move(out), parts, [](Node<T>& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      const std::size_t len = p->value.size();
      if (auto* g = detail::grad_of(*p))
        for (std::size_t i = 0; i < len; ++i)
          g->data()[i] += self.grad.data()[off + i];
      off += len;
    }
  });
}

template <std::floating_point T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t count) {
  detail::require(begin + count <= a.rows(), "slice_rows: range out of bounds");
  const std::size_t n = a.cols();
  Tensor<T> out = Tensor<T>::matrix(count, n);
  std::copy_n(a.value().data().begin() + static_cast<std::ptrdiff_t>(begin * n),
              count * n, out.data().begin());
  return detail::make_result<T>(std::move(out), {a}, [begin, n](Node<T>& self) {
    if (auto* g = detail::grad_of(*self.parents[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g->data()[begin * n + i] += self.grad.data()[i];
  });
}

template <std::floating_point T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t count) {
  detail::require(begin + count <= a.cols(), "slice_cols: range out of bounds");
  const std::size_t m = a.rows();
  Tensor<T> out = Tensor<T>::matrix(m, count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = a.value()(i, begin + j);
  return detail::make_result<T>(std::move(out), {a},
                                [m, begin, count](Node<T>& self) {
    if (auto* g = detail::grad_of(*self.parents[0]))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j)
          (*g)(i, begin + j) += self.grad(i, j);
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <std::floating_point T>
Var<T> sum(const Var<T>& a) {
  double acc = 0.0;
  for (T v : a.value().data()) acc += v;
  return detail::make_result<T>(Tensor<T>::scalar(static_cast<T>(acc)), {a},
                                [](Node<T>& self) {
    if (auto* g = detail::grad_of(*self.parents[0]))
      for (auto& v : g->data()) v += self.grad[0];
  });
}

/// Mean of squared differences.
template <std::floating_point T>
Var<T> mse_loss(const Var<T>& prediction, const Var<T>& target) {
  detail::require(prediction.shape() == target.shape(),
                  "mse_loss: shape mismatch " +
                      shape_string(prediction.shape()) + " vs " +
                      shape_string(target.shape()));
  detail::require(prediction.size() > 0, "mse_loss: empty input");
  const std::size_t n = prediction.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(prediction.value()[i]) - target.value()[i];
    acc += d * d;
  }
  return detail::make_result<T>(
      Tensor<T>::scalar(static_cast<T>(acc / n)), {prediction, target},
      [n](Node<T>& self) {
        const Tensor<T>& p = self.parents[0]->value;
        const Tensor<T>& t = self.parents[1]->value;
        const double g = self.grad[0] * 2.0 / static_cast<double>(n);
        if (auto* gp = detail::grad_of(*self.parents[0]))
          for (std::size_t i = 0; i < n; ++i)
            (*gp)[i] += static_cast<T>(g * (static_cast<double>(p[i]) - t[i]));
        if (auto* gt = detail::grad_of(*self.parents[1]))
          for (std::size_t i = 0; i < n; ++i)
            (*gt)[i] -= static_cast<T>(g * (static_cast<double>(p[i]) - t[i]));
      });
}

/// Mean over rows of -log softmax(logits[row])[targets[row]].
template <std::floating_point T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::size_t> targets) {
  const std::size_t m = logits.rows(), n = logits.cols();
  detail::require(targets.size() == m,
                  "cross_entropy: " + std::to_string(targets.size()) +
                      " targets for " + std::to_string(m) + " rows");
  detail::require(m > 0, "cross_entropy: no rows");
  Tensor<T> probs = Tensor<T>::matrix(m, n);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    detail::require(targets[i] < n, "cross_entropy: target index " +
                                        std::to_string(targets[i]) +
                                        " out of range " + std::to_string(n));
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j)
      mx = std::max(mx, static_cast<double>(logits.value()(i, j)));
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      denom += std::exp(static_cast<double>(logits.value()(i, j)) - mx);
    const double log_denom = std::log(denom) + mx;
    loss += log_denom - logits.value()(i, targets[i]);
    for (std::size_t j = 0; j < n; ++j)
      probs(i, j) = static_cast<T>(
          std::exp(static_cast<double>(logits.value()(i, j)) - log_denom));
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return detail::make_result<T>(
      Tensor<T>::scalar(static_cast<T>(loss / m)), {logits},
      [m, n, probs = std::move(probs), tg = std::move(tg)](Node<T>& self) {
        if (auto* g = detail::grad_of(*self.parents[0])) {
          const double s = self.grad[0] / static_cast<double>(m);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              (*g)(i, j) += static_cast<T>(
                  s * (probs(i, j) - (j == tg[i] ? 1.0 : 0.0)));
        }
      });
}

template <std::floating_point T>
Var<T> cross_entropy(const Var<T>& logits, std::initializer_list<std::size_t> targets) {
  return cross_entropy(logits, std::span<const std::size_t>(targets.begin(), targets.size()));
}

// ---------------------------------------------------------------------------

/// Accumulates d(loss)/d(leaf) into every reachable trainable leaf.
template <std::floating_point T>
void backward(const Var<T>& loss) {
  if (!loss || loss.size() != 1)
    throw InvalidArgument("backward: loss must be a scalar, got shape " +
                          (loss ? shape_string(loss.shape()) : std::string("<null>")));
  if (!std::isfinite(loss.value()[0]))
    throw InvalidArgument("backward: loss is not finite");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; reversed it is a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{&loss.node(), 0}};
  visited.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Intermediate gradients start from zero on every call; leaves accumulate.
  for (Node<T>* node : order)
    if (node->backward) {
      node->grad = Tensor<T>(node->value.shape());
      node->has_grad = true;
    }
  loss.node().ensure_grad();
  loss.node().grad[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

}  // namespace lemb::ad
