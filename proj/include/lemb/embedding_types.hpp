// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lemb/error.hpp"

namespace lemb {

/// Contiguous block of language-tag tokens inside the vocabulary.
struct TagRange {
  std::size_t first = 0;
  std::size_t count = 0;

  bool contains(std::size_t token) const {
    return token >= first && token < first + count;
  }
  std::size_t token(std::size_t tag) const { return first + tag; }

  friend bool operator==(const TagRange&, const TagRange&) = default;
};

/// Index of a language tag relative to TagRange::first.
struct TagIndex {
  std::size_t value = 0;
  friend bool operator==(const TagIndex&, const TagIndex&) = default;
};

/// Probability of each language tag given the input, P(l_i | x, sot).
struct LangDistribution {
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }

  /// Checks entries lie in [0, 1] and sum to one within `tol`.
  void validate(double tol = 1e-9) const {
    if (probs.empty()) throw InvalidArgument("LangDistribution: empty");
    double total = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0 && p <= 1.0))
        throw InvalidArgument("LangDistribution: entry outside [0, 1]");
      total += p;
    }
    if (std::abs(total - 1.0) > tol)
      throw InvalidArgument("LangDistribution: sums to " + std::to_string(total));
  }
};

enum class Provenance { tag, utterance_ws, corpus_ws, parameterized, predicted };

inline std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::tag: return "tag";
    case Provenance::utterance_ws: return "utterance_ws";
    case Provenance::corpus_ws: return "corpus_ws";
    case Provenance::parameterized: return "parameterized";
    case Provenance::predicted: return "predicted";
  }
  return "unknown";
}

/// A vector injected at the language slot of the decoder prefix.
struct WeightedEmbedding {
  std::vector<float> vector;
  Provenance provenance = Provenance::tag;

  std::size_t dim() const { return vector.size(); }
  friend bool operator==(const WeightedEmbedding&, const WeightedEmbedding&) = default;
};

/// Read-only view of a [vocab x dim] embedding matrix and its tag rows.
/// Row `tags.token(i)` is the embedding of the i-th language tag.
struct EmbeddingTable {
  std::span<const float> matrix;
  std::size_t dim = 0;
  TagRange tags;

  std::size_t vocab() const { return dim ? matrix.size() / dim : 0; }
  std::span<const float> row(std::size_t token) const {
    return matrix.subspan(token * dim, dim);
  }
  std::span<const float> tag_row(std::size_t tag) const {
    return row(tags.token(tag));
  }
};

}  // namespace lemb
