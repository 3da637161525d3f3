// SPDX-License-Identifier: Apache-2.0
#pragma once

// End-to-end pipeline: benchmark -> pretraining -> predictors -> matrix.
// Every stage is a pure function of the RunConfig.

#include <cstdint>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include "lemb/config.hpp"
#include "lemb/corpus.hpp"
#include "lemb/experiment.hpp"
#include "lemb/langembed.hpp"
#include "lemb/model.hpp"
#include "lemb/trainer.hpp"

namespace lemb {

inline Benchmark make_benchmark(const RunConfig& cfg) {
  const auto& b = cfg.benchmark;
  return generate_benchmark(b.families, b.seen_per_family, b.unseen_per_family,
                            b.utterances_per_split, cfg.benchmark_seed(), b.options);
}

struct PretrainStage {
  TinyASR model;
  PretrainReport report;
};

inline PretrainStage run_pretrain(const RunConfig& cfg, const Benchmark& bench) {
  TinyASR model(cfg.model_config(), cfg.model_seed());
  const auto train = seen_corpora(bench, true);
  const auto held_out = seen_corpora(bench, false);
  PretrainReport rep = pretrain(model, train, held_out, cfg.pretrain_config());
  model.set_trainable(false);
  return {std::move(model), std::move(rep)};
}

/// Held-out error of the predictor next to the two reference estimates:
/// the masked weighted sum itself and the mean of the other tag rows.
struct PredictorQuality {
  double predictor_mse = 0.0;
  double ws_mse = 0.0;
  double mean_tag_mse = 0.0;
  std::size_t examples = 0;
};

inline PredictorQuality predictor_quality(const PredictorParams& p,
                                          std::span<const MaskedExample> held_out,
                                          const EmbeddingTable& table,
                                          std::size_t num_tags) {
  PredictorQuality q;
  for (const auto& e : held_out) {
    std::vector<double> acc(table.dim, 0.0);
    for (std::size_t t = 0; t < num_tags; ++t) {
      if (t == e.masked_lang.value) continue;
      auto row = table.tag_row(t);
      for (std::size_t j = 0; j < table.dim; ++j) acc[j] += row[j];
    }
    std::vector<float> mean(table.dim);
    for (std::size_t j = 0; j < table.dim; ++j)
      mean[j] = static_cast<float>(acc[j] / static_cast<double>(num_tags - 1));
    const auto pred = predict_embedding(p, e.input);
    std::span<const float> target(e.target);
    q.predictor_mse += mean_squared_error(std::span<const float>(pred.vector), target);
    q.ws_mse += mean_squared_error(std::span<const float>(e.input.vector), target);
    q.mean_tag_mse += mean_squared_error(std::span<const float>(mean), target);
  }
  q.examples = held_out.size();
  if (q.examples) {
    const double n = static_cast<double>(q.examples);
    q.predictor_mse /= n;
    q.ws_mse /= n;
    q.mean_tag_mse /= n;
  }
  return q;
}

struct PredictorStage {
  std::vector<TagIndex> train_languages;
  std::vector<TagIndex> validation_languages;
  PredictorTrainResult corpus;     // corpus-wise inputs
  PredictorTrainResult utterance;  // utterance-wise inputs
  PredictorQuality corpus_quality;
  PredictorQuality utterance_quality;
};

/// Trains both predictors on leave-one-out examples of the training split
/// of seen languages and scores them on the held-out languages.
inline PredictorStage run_predictors(const RunConfig& cfg, const Benchmark& bench,
                                     const TinyASR& model) {
  const auto seen = seen_corpora(bench, true);
  std::vector<TagIndex> tags;
  for (const auto& c : seen) tags.push_back(c.tag);
  PredictorStage out;
  std::tie(out.train_languages, out.validation_languages) =
      split_languages(tags, cfg.predictor.validation_fraction, cfg.predictor_seed());

  auto pick = [&](const std::vector<TagIndex>& which) {
    std::vector<TaggedCorpus> sel;
    for (const auto& c : seen)
      for (auto t : which)
        if (t.value == c.tag.value) sel.push_back(c);
    return sel;
  };
  // Masking always spans the full tag set, so examples of a language do not
  // depend on which other languages share its split.
  auto examples_for = [&](const std::vector<TagIndex>& which, LooMode mode) {
    const auto all = build_loo_dataset(model, seen, mode);
    std::vector<MaskedExample> out_ex;
    const auto keep = pick(which);
    for (const auto& e : all)
      for (const auto& c : keep)
        if (c.tag.value == e.masked_lang.value) out_ex.push_back(e);
    return out_ex;
  };

  const PredictorConfig pc = cfg.predictor_config();
  const auto table = model.embedding_table();
  const std::size_t n = model.num_tags();
  for (LooMode mode : {LooMode::corpus_wise, LooMode::utterance_wise}) {
    const auto train = examples_for(out.train_languages, mode);
    const auto val = examples_for(out.validation_languages, mode);
    auto res = train_predictor(train, val, pc);
    auto q = predictor_quality(res.params, val, table, n);
    if (mode == LooMode::corpus_wise) {
      out.corpus = std::move(res);
      out.corpus_quality = q;
    } else {
      out.utterance = std::move(res);
      out.utterance_quality = q;
    }
  }
  return out;
}

inline ExperimentConfig experiment_config(const RunConfig& cfg) {
  ExperimentConfig ec;
  ec.finetune = cfg.finetune.train;
  ec.adapters = cfg.finetune.adapters;
  ec.word_size = cfg.eval.word_size;
  return ec;
}

inline std::vector<std::uint64_t> finetune_seeds(const RunConfig& cfg,
                                                 std::span<const std::uint64_t> runs) {
  std::vector<std::uint64_t> out;
  for (auto r : runs) out.push_back(cfg.finetune_seed(r));
  return out;
}

struct PipelineResult {
  PipelineState state;
  PretrainReport pretrain;
  PredictorStage predictors;
  ExperimentReport report;
};

/// Runs all stages. `runs` overrides eval.seeds when non-empty.
inline PipelineResult run_pipeline(const RunConfig& cfg,
                                   std::span<const MatrixEntry> entries,
                                   std::span<const std::uint64_t> runs = {}) {
  cfg.validate();
  Benchmark bench = make_benchmark(cfg);
  auto pre = run_pretrain(cfg, bench);
  auto preds = run_predictors(cfg, bench, pre.model);
  PipelineState state{std::move(bench), std::move(pre.model), preds.corpus.params,
                      preds.utterance.params};
  const auto seeds =
      finetune_seeds(cfg, runs.empty() ? std::span<const std::uint64_t>(cfg.eval.seeds) : runs);
  auto report = run_experiment_matrix(state, entries, seeds, experiment_config(cfg));
  return {std::move(state), std::move(pre.report), std::move(preds), std::move(report)};
}

}  // namespace lemb
