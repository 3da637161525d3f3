// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <vector>

#include "lemb/error.hpp"

namespace lemb {

/// Numerically stable softmax, evaluated in double after max-subtraction.
template <class T>
  requires std::floating_point<T>
std::vector<double> softmax(std::span<const T> logits) {
  if (logits.empty()) throw InvalidArgument("softmax: empty input");
  double mx = -INFINITY;
  for (T v : logits) {
    if (!std::isfinite(v)) throw InvalidArgument("softmax: non-finite input");
    mx = std::max(mx, static_cast<double>(v));
  }
  std::vector<double> out(logits.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(static_cast<double>(logits[i]) - mx);
    denom += out[i];
  }
  for (double& v : out) v /= denom;
  return out;
}

template <class T>
  requires std::floating_point<T>
std::vector<double> softmax(const std::vector<T>& logits) {
  return softmax(std::span<const T>(logits));
}

/// Index of the largest entry; ties resolve to the lowest index.
template <class T>
std::size_t argmax(std::span<const T> values) {
  if (values.empty()) throw InvalidArgument("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

template <class T>
double cosine_similarity(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

/// Mean squared difference of two equally long vectors.
template <class T, class U>
double mean_squared_error(std::span<const T> a, std::span<const U> b) {
  if (a.size() != b.size() || a.empty())
    throw InvalidArgument("mean_squared_error: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

}  // namespace lemb
