// SPDX-License-Identifier: Apache-2.0
#pragma once

// Central finite differences against reverse-mode gradients, in double.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "lemb/autodiff.hpp"

namespace lemb::fixtures {

using DParam = ad::Parameter<double>;
using DVar = ad::Var<double>;

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> n(0.0, sd);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over all
/// parameter entries.
inline double max_relative_grad_error(const std::function<DVar()>& loss_fn,
                                      const std::vector<DParam*>& params,
                                      double h = 1e-5, double floor = 1e-6) {
  for (auto* p : params) p->zero_grad();
  ad::backward(loss_fn());
  double worst = 0.0;
  for (auto* p : params) {
    auto& w = p->mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      w[i] = keep + h;
      const double up = loss_fn().value()[0];
      w[i] = keep - h;
      const double down = loss_fn().value()[0];
      w[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p->grad()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

/// One random composite graph over a handful of parameters. `kind` picks
/// the overall shape; sizes and options come from `rng`.
struct RandomGraph {
  std::vector<DParam> params;
  std::function<DVar()> loss;

  std::vector<DParam*> pointers() {
    std::vector<DParam*> out;
    for (auto& p : params) out.push_back(&p);
    return out;
  }
};

inline RandomGraph make_random_graph(std::size_t kind, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dim(2, 4);
  const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
  RandomGraph g;
  g.params.reserve(6);
  g.params.emplace_back(random_tensor({m, k}, rng));
  g.params.emplace_back(random_tensor({k, n}, rng));
  g.params.emplace_back(random_tensor({n}, rng, 0.5));
  g.params.emplace_back(random_tensor({n}, rng, 0.5));
  g.params.emplace_back(random_tensor({m, n}, rng));
  std::vector<std::size_t> targets(m);
  std::uniform_int_distribution<std::size_t> cls(0, n - 1);
  for (auto& t : targets) t = cls(rng);
  Tensor<double> target = random_tensor({m, n}, rng);
  const bool causal = rng() % 2;
  const std::size_t window = 1 + rng() % 2;
  const std::size_t choice = kind % 5;
  DParam* P = g.params.data();
  g.loss = [=]() {
    namespace A = ad;
    DVar a = P[0].var(), b = P[1].var(), c = P[2].var(), d = P[3].var(), e = P[4].var();
    DVar h = A::add_bias(A::matmul(a, b), c);
    switch (choice) {
      case 0: {  // attention-like block
        DVar s = A::softmax_rows(A::matmul_nt(h, e), causal, window);
        return A::cross_entropy(A::matmul(s, A::tanh(e)), std::span<const std::size_t>(targets));
      }
      case 1: {  // normalized MLP with a residual path
        DVar z = A::layer_norm(h, d, c);
        z = A::add(A::gelu(z), A::scale(e, 0.5));
        return A::mse_loss(A::mul(z, z), DVar::constant(target));
      }
      case 2: {  // row surgery
        DVar top = A::slice_rows(h, 0, 1);
        DVar rows = A::concat_rows<double>({top, A::gather_rows(e, {m - 1, 0}), h});
        DVar cols = A::slice_cols(rows, 0, n > 1 ? n - 1 : 1);
        return A::sum(A::mul(cols, cols));
      }
      case 3: {  // transpose round trip and subtraction
        DVar t = A::transpose(A::transpose(h));
        DVar diff = A::sub(t, A::tanh(e));
        return A::cross_entropy(A::add_bias(diff, d), std::span<const std::size_t>(targets));
      }
      default: {  // deep chain
        DVar z = A::tanh(A::layer_norm(A::add(h, e), d, c));
        z = A::softmax_rows(A::matmul(z, A::transpose(b)));
        return A::sum(A::scale(A::matmul(z, b), 0.3));
      }
    }
  };
  return g;
}

}  // namespace lemb::fixtures
