// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lemb/error.hpp"

namespace lemb {

/// Levenshtein distance with unit costs, two-row dynamic programming.
template <class T>
std::size_t edit_distance(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <class T>
std::size_t edit_distance(const std::vector<T>& a, const std::vector<T>& b) {
  return edit_distance(std::span<const T>(a), std::span<const T>(b));
}

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  return edit_distance(std::span<const char>(a.data(), a.size()),
                       std::span<const char>(b.data(), b.size()));
}

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

/// Character error rate; exceeds 1 when the hypothesis inserts enough.
inline double cer(std::string_view reference, std::string_view hypothesis) {
  if (reference.empty()) throw InvalidArgument("cer: empty reference");
  return static_cast<double>(edit_distance(reference, hypothesis)) /
         static_cast<double>(reference.size());
}

/// Word error rate over whitespace-separated words.
inline double wer(std::string_view reference, std::string_view hypothesis) {
  const auto ref = split_words(reference);
  if (ref.empty()) throw InvalidArgument("wer: empty reference");
  return static_cast<double>(edit_distance(ref, split_words(hypothesis))) /
         static_cast<double>(ref.size());
}

/// Groups a token sequence into "words" of `word_size` consecutive tokens;
/// the last word may be shorter.
inline std::vector<std::vector<std::size_t>> group_words(std::span<const std::size_t> tokens,
                                                         std::size_t word_size) {
  if (word_size == 0) throw InvalidArgument("group_words: word_size must be positive");
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < tokens.size(); i += word_size)
    out.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                     tokens.begin() + static_cast<std::ptrdiff_t>(
                                          std::min(tokens.size(), i + word_size)));
  return out;
}

struct MetricsResult {
  double cer = 0.0;
  double wer = 0.0;
  std::size_t n_utterances = 0;

  friend bool operator==(const MetricsResult&, const MetricsResult&) = default;
};

/// Corpus-level error rates over token transcripts: total edits divided by
/// total reference length. Tokens play the role of characters; words are
/// fixed-size token groups.
class ErrorAccumulator {
 public:
  explicit ErrorAccumulator(std::size_t word_size = 3) : word_size_(word_size) {}

  void add(std::span<const std::size_t> reference, std::span<const std::size_t> hypothesis) {
    if (reference.empty()) throw InvalidArgument("empty reference transcript");
    char_edits_ += edit_distance(reference, hypothesis);
    char_total_ += reference.size();
    const auto rw = group_words(reference, word_size_);
    const auto hw = group_words(hypothesis, word_size_);
    word_edits_ += edit_distance(rw, hw);
    word_total_ += rw.size();
    ++count_;
  }

  MetricsResult result() const {
    MetricsResult r;
    r.n_utterances = count_;
    if (char_total_) r.cer = static_cast<double>(char_edits_) / char_total_;
    if (word_total_) r.wer = static_cast<double>(word_edits_) / word_total_;
    return r;
  }

 private:
  std::size_t word_size_;
  std::size_t char_edits_ = 0, char_total_ = 0;
  std::size_t word_edits_ = 0, word_total_ = 0;
  std::size_t count_ = 0;
};

}  // namespace lemb
