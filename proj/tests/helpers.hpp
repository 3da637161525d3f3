// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "lemb/lemb.hpp"

namespace lemb::fixtures {

/// A small benchmark that trains in well under a second.
inline Benchmark tiny_benchmark(std::uint64_t seed = 3, std::size_t utterances = 6) {
  BenchmarkOptions o;
  o.transcript_vocab = 6;
  o.feature_dim = 5;
  o.min_length = 2;
  o.max_length = 4;
  o.family_swaps = 2;
  o.swaps_per_language = 1;
  return generate_benchmark(2, 2, 1, utterances, seed, o);
}

inline ModelConfig tiny_model_config(const Benchmark& b) {
  ModelConfig c;
  c.d_model = 8;
  c.ffn_dim = 12;
  c.feature_dim = b.options.feature_dim;
  c.transcript_vocab = b.options.transcript_vocab;
  c.num_language_tags = b.seen_languages.size();
  c.max_decode_len = 6;
  return c;
}

inline std::vector<double> random_distribution(std::size_t n, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.7, 1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& v : p) s += (v = g(rng) + 1e-12);
  for (auto& v : p) v /= s;
  return p;
}

/// Small config for end-to-end runs in unit tests.
inline RunConfig tiny_run_config(std::uint64_t seed = 11) {
  RunConfig c;
  c.seed = seed;
  c.benchmark.families = 2;
  c.benchmark.seen_per_family = 2;
  c.benchmark.unseen_per_family = 1;
  c.benchmark.utterances_per_split = 6;
  c.benchmark.options.transcript_vocab = 6;
  c.benchmark.options.feature_dim = 5;
  c.benchmark.options.min_length = 2;
  c.benchmark.options.max_length = 4;
  c.benchmark.options.family_swaps = 2;
  c.benchmark.options.swaps_per_language = 1;
  c.model.d_model = 8;
  c.model.ffn_dim = 12;
  c.model.max_decode_len = 6;
  c.pretrain.epochs = 2;
  c.finetune.train.epochs = 1;
  c.finetune.adapters.rank = 2;
  c.finetune.adapters.alpha = 4;
  c.predictor.train.epochs = 5;
  c.predictor.validation_fraction = 0.5;
  c.eval.seeds = {1};
  return c;
}

}  // namespace lemb::fixtures
