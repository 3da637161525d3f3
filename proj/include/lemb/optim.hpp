// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lemb/autodiff.hpp"
#include "lemb/error.hpp"

namespace lemb {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0))
      throw InvalidArgument("AdamW: learning_rate must be positive");
    if (!(weight_decay >= 0.0 && weight_decay < 1.0))
      throw InvalidArgument("AdamW: weight_decay must lie in [0, 1)");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
      throw InvalidArgument("AdamW: betas must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw InvalidArgument("AdamW: epsilon must be positive");
  }
};

/// One AdamW update of a single tensor. `step` counts from 1.
///
/// Weight decay is decoupled: weights shrink by lr * weight_decay before the
/// bias-corrected Adam step, and the gradient itself is never modified.
template <std::floating_point T>
void adamw_update(std::span<T> weights, std::span<const T> grads,
                  std::span<T> first_moment, std::span<T> second_moment,
                  const AdamWConfig& cfg, std::uint64_t step) {
  if (step == 0) throw InvalidArgument("adamw_update: step index starts at 1");
  if (grads.size() != weights.size() || first_moment.size() != weights.size() ||
      second_moment.size() != weights.size())
    throw InvalidArgument("adamw_update: buffer length mismatch");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double g = grads[i];
    const double m = cfg.beta1 * first_moment[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * second_moment[i] + (1.0 - cfg.beta2) * g * g;
    first_moment[i] = static_cast<T>(m);
    second_moment[i] = static_cast<T>(v);
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    const double w = weights[i] * decay -
                     cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    weights[i] = static_cast<T>(w);
  }
}

/// AdamW over a fixed set of parameters. Non-trainable parameters are skipped.
template <std::floating_point T>
class AdamW {
 public:
  AdamW(AdamWConfig cfg, std::vector<ad::Parameter<T>*> params)
      : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    for (auto* p : params_) {
      first_.emplace_back(p->shape());
      second_.emplace_back(p->shape());
    }
  }

  const AdamWConfig& config() const { return cfg_; }
  std::uint64_t steps_taken() const { return step_; }

  void zero_grads() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto* p = params_[i];
      if (!p->trainable()) continue;
      if (!p->has_grad())
        throw IllegalState("AdamW: parameter " + std::to_string(i) +
                           " has no gradient; call zero_grads and backward first");
      adamw_update<T>(p->mutable_value().data(), p->grad().data(),
                      first_[i].data(), second_[i].data(), cfg_, step_);
    }
  }

 private:
  AdamWConfig cfg_;
  std::vector<ad::Parameter<T>*> params_;
  std::vector<Tensor<T>> first_;
  std::vector<Tensor<T>> second_;
  std::uint64_t step_ = 0;
};

}  // namespace lemb
