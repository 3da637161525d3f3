// SPDX-License-Identifier: Apache-2.0
#pragma once

// RunConfig: the JSON document that drives a whole pipeline run.
//
// Sections: benchmark, model, pretrain, finetune, predictor, eval, plus a
// mandatory top-level "seed". Every other field has a default. Keys not
// present in the defaults are rejected, and so are values whose JSON type
// differs from the default's. Overrides use dotted paths
// ("pretrain.epochs=10").

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lemb/corpus.hpp"
#include "lemb/error.hpp"
#include "lemb/langembed.hpp"
#include "lemb/model.hpp"
#include "lemb/random.hpp"
#include "lemb/trainer.hpp"

namespace lemb {

struct BenchmarkConfig {
  std::size_t families = 3;
  std::size_t seen_per_family = 4;
  std::size_t unseen_per_family = 1;
  std::size_t utterances_per_split = 100;
  BenchmarkOptions options;

  std::size_t num_seen() const { return families * seen_per_family; }

  friend bool operator==(const BenchmarkConfig&, const BenchmarkConfig&) = default;
};

/// Architecture knobs the operator may set. Vocabulary, feature and tag
/// sizes follow from the benchmark.
struct ModelSection {
  std::size_t d_model = 64;
  std::size_t decoder_layers = 1;
  std::size_t max_decode_len = 14;
  std::size_t ffn_dim = 128;
  std::size_t encoder_window = 1;
  double tag_init_scale = 0.1;

  friend bool operator==(const ModelSection&, const ModelSection&) = default;
};

struct FinetuneSection {
  TrainConfig train;  // seed is derived, not configured
  AdapterConfig adapters;

  friend bool operator==(const FinetuneSection&, const FinetuneSection&) = default;
};

struct PredictorSection {
  PredictorConfig train;          // seed is derived, not configured
  double validation_fraction = 0.2;  // share of seen languages held out

  friend bool operator==(const PredictorSection&, const PredictorSection&) = default;
};

struct EvalSection {
  std::size_t word_size = 3;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};  // fine-tuning seeds of the matrix

  friend bool operator==(const EvalSection&, const EvalSection&) = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  BenchmarkConfig benchmark;
  ModelSection model;
  PretrainConfig pretrain;
  FinetuneSection finetune;
  PredictorSection predictor;
  EvalSection eval;

  RunConfig() {
    // Desk-scale budget. The tiny model barely moves at the library's
    // default fine-tuning rate within five epochs.
    pretrain.epochs = 40;
    finetune.train.learning_rate = 1e-4;
  }

  // Named sub-seeds, all derived from the root seed.
  std::uint64_t benchmark_seed() const { return derive_seed(seed, "benchmark"); }
  std::uint64_t model_seed() const { return derive_seed(seed, "model"); }
  std::uint64_t pretrain_seed() const { return derive_seed(seed, "pretrain"); }
  std::uint64_t predictor_seed() const { return derive_seed(seed, "predictor"); }
  std::uint64_t finetune_seed(std::uint64_t run) const {
    return derive_seed(derive_seed(seed, "finetune"), run);
  }

  ModelConfig model_config() const {
    ModelConfig c;
    c.d_model = model.d_model;
    c.decoder_layers = model.decoder_layers;
    c.max_decode_len = model.max_decode_len;
    c.ffn_dim = model.ffn_dim;
    c.encoder_window = model.encoder_window;
    c.tag_init_scale = model.tag_init_scale;
    c.feature_dim = benchmark.options.feature_dim;
    c.transcript_vocab = benchmark.options.transcript_vocab;
    c.num_language_tags = benchmark.num_seen();
    return c;
  }

  PretrainConfig pretrain_config() const {
    PretrainConfig c = pretrain;
    c.seed = pretrain_seed();
    return c;
  }

  PredictorConfig predictor_config() const {
    PredictorConfig c = predictor.train;
    c.seed = predictor_seed();
    return c;
  }

  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// ---------------------------------------------------------------------------
// JSON mapping

inline nlohmann::json to_json_doc(const RunConfig& c) {
  const auto& o = c.benchmark.options;
  const auto& ft = c.finetune.train;
  const auto& ad = c.finetune.adapters;
  const auto& pr = c.predictor.train;
  return {
      {"seed", c.seed},
      {"benchmark",
       {{"families", c.benchmark.families},
        {"seen_per_family", c.benchmark.seen_per_family},
        {"unseen_per_family", c.benchmark.unseen_per_family},
        {"utterances_per_split", c.benchmark.utterances_per_split},
        {"transcript_vocab", o.transcript_vocab},
        {"feature_dim", o.feature_dim},
        {"min_length", o.min_length},
        {"max_length", o.max_length},
        {"offset_scale", o.offset_scale},
        {"jitter_sigma", o.jitter_sigma},
        {"family_swaps", o.family_swaps},
        {"swaps_per_language", o.swaps_per_language},
        {"noise_sigma", o.noise_sigma},
        {"family_unigram_scale", o.family_unigram_scale},
        {"language_unigram_scale", o.language_unigram_scale}}},
      {"model",
       {{"d_model", c.model.d_model},
        {"decoder_layers", c.model.decoder_layers},
        {"max_decode_len", c.model.max_decode_len},
        {"ffn_dim", c.model.ffn_dim},
        {"encoder_window", c.model.encoder_window},
        {"tag_init_scale", c.model.tag_init_scale}}},
      {"pretrain",
       {{"learning_rate", c.pretrain.learning_rate},
        {"weight_decay", c.pretrain.weight_decay},
        {"epochs", c.pretrain.epochs},
        {"batch_size", c.pretrain.batch_size},
        {"language_id_weight", c.pretrain.language_id_weight}}},
      {"finetune",
       {{"learning_rate", ft.learning_rate},
        {"weight_decay", ft.weight_decay},
        {"epochs", ft.epochs},
        {"batch_size", ft.batch_size},
        {"adapter_rank", ad.rank},
        {"adapter_alpha", ad.alpha},
        {"adapter_dropout", ad.dropout}}},
      {"predictor",
       {{"learning_rate", pr.learning_rate},
        {"weight_decay", pr.weight_decay},
        {"epochs", pr.epochs},
        {"patience", pr.patience},
        {"batch_size", pr.batch_size},
        {"hidden", pr.hidden},
        {"activation", std::string(to_string(pr.activation))},
        {"validation_fraction", c.predictor.validation_fraction}}},
      {"eval", {{"word_size", c.eval.word_size}, {"seeds", c.eval.seeds}}}};
}

namespace detail {

inline bool same_kind(const nlohmann::json& value, const nlohmann::json& expected) {
  if (expected.is_number_float()) return value.is_number();  // 1 is a fine real
  if (expected.is_number_unsigned())
    return value.is_number_unsigned() ||
           (value.is_number_integer() && value.get<std::int64_t>() >= 0);
  return value.type() == expected.type();
}

/// Rejects keys absent from `schema` and values of the wrong JSON type.
inline void check_against(const nlohmann::json& doc, const nlohmann::json& schema,
                          const std::string& path) {
  if (!doc.is_object())
    throw InvalidArgument("config: " + (path.empty() ? "document" : path) +
                          " must be an object");
  for (const auto& [key, value] : doc.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!schema.contains(key)) throw InvalidArgument("config: unknown key '" + where + "'");
    const auto& expected = schema.at(key);
    if (expected.is_object()) {
      check_against(value, expected, where);
    } else if (expected.is_array()) {
      if (!value.is_array()) throw InvalidArgument("config: '" + where + "' must be a list");
      for (const auto& v : value)
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
          throw InvalidArgument("config: '" + where + "' must hold non-negative integers");
    } else if (!same_kind(value, expected)) {
      throw InvalidArgument("config: '" + where + "' has type " +
                            std::string(value.type_name()) + ", expected " +
                            std::string(expected.type_name()));
    }
  }
}

}  // namespace detail

inline RunConfig from_json_doc(const nlohmann::json& doc) {
  RunConfig c;
  nlohmann::json schema = to_json_doc(c);
  detail::check_against(doc, schema, "");
  if (!doc.contains("seed")) throw InvalidArgument("config: 'seed' is mandatory");
  nlohmann::json full = schema;
  full.merge_patch(doc);
  try {
    full.at("seed").get_to(c.seed);
    const auto& b = full.at("benchmark");
    auto& o = c.benchmark.options;
    b.at("families").get_to(c.benchmark.families);
    b.at("seen_per_family").get_to(c.benchmark.seen_per_family);
    b.at("unseen_per_family").get_to(c.benchmark.unseen_per_family);
    b.at("utterances_per_split").get_to(c.benchmark.utterances_per_split);
    b.at("transcript_vocab").get_to(o.transcript_vocab);
    b.at("feature_dim").get_to(o.feature_dim);
    b.at("min_length").get_to(o.min_length);
    b.at("max_length").get_to(o.max_length);
    b.at("offset_scale").get_to(o.offset_scale);
    b.at("jitter_sigma").get_to(o.jitter_sigma);
    b.at("family_swaps").get_to(o.family_swaps);
    b.at("swaps_per_language").get_to(o.swaps_per_language);
    b.at("noise_sigma").get_to(o.noise_sigma);
    b.at("family_unigram_scale").get_to(o.family_unigram_scale);
    b.at("language_unigram_scale").get_to(o.language_unigram_scale);

    const auto& m = full.at("model");
    m.at("d_model").get_to(c.model.d_model);
    m.at("decoder_layers").get_to(c.model.decoder_layers);
    m.at("max_decode_len").get_to(c.model.max_decode_len);
    m.at("ffn_dim").get_to(c.model.ffn_dim);
    m.at("encoder_window").get_to(c.model.encoder_window);
    m.at("tag_init_scale").get_to(c.model.tag_init_scale);

    const auto& p = full.at("pretrain");
    p.at("learning_rate").get_to(c.pretrain.learning_rate);
    p.at("weight_decay").get_to(c.pretrain.weight_decay);
    p.at("epochs").get_to(c.pretrain.epochs);
    p.at("batch_size").get_to(c.pretrain.batch_size);
    p.at("language_id_weight").get_to(c.pretrain.language_id_weight);

    const auto& f = full.at("finetune");
    f.at("learning_rate").get_to(c.finetune.train.learning_rate);
    f.at("weight_decay").get_to(c.finetune.train.weight_decay);
    f.at("epochs").get_to(c.finetune.train.epochs);
    f.at("batch_size").get_to(c.finetune.train.batch_size);
    f.at("adapter_rank").get_to(c.finetune.adapters.rank);
    f.at("adapter_alpha").get_to(c.finetune.adapters.alpha);
    f.at("adapter_dropout").get_to(c.finetune.adapters.dropout);

    const auto& q = full.at("predictor");
    q.at("learning_rate").get_to(c.predictor.train.learning_rate);
    q.at("weight_decay").get_to(c.predictor.train.weight_decay);
    q.at("epochs").get_to(c.predictor.train.epochs);
    q.at("patience").get_to(c.predictor.train.patience);
    q.at("batch_size").get_to(c.predictor.train.batch_size);
    q.at("hidden").get_to(c.predictor.train.hidden);
    c.predictor.train.activation = parse_activation(q.at("activation").get<std::string>());
    q.at("validation_fraction").get_to(c.predictor.validation_fraction);

    const auto& e = full.at("eval");
    e.at("word_size").get_to(c.eval.word_size);
    e.at("seeds").get_to(c.eval.seeds);
  } catch (const nlohmann::json::exception& ex) {
    throw InvalidArgument(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

inline void RunConfig::validate() const {
  if (benchmark.families == 0 || benchmark.seen_per_family == 0 ||
      benchmark.unseen_per_family == 0 || benchmark.utterances_per_split == 0)
    throw InvalidArgument("config: benchmark counts must be >= 1");
  if (benchmark.num_seen() < 2)
    throw InvalidArgument("config: at least two seen languages are required");
  const auto& o = benchmark.options;
  if (o.transcript_vocab < 2 || o.feature_dim == 0 || o.min_length == 0 ||
      o.max_length < o.min_length)
    throw InvalidArgument("config: invalid benchmark sizes");
  if (o.noise_sigma < 0 || o.jitter_sigma < 0 || o.offset_scale < 0)
    throw InvalidArgument("config: benchmark scales must be >= 0");
  if (model.max_decode_len < o.max_length + 1)
    throw InvalidArgument("config: model.max_decode_len must exceed benchmark.max_length");
  model_config().validate();
  if (pretrain.epochs == 0 || pretrain.batch_size == 0)
    throw InvalidArgument("config: pretrain epochs and batch_size must be >= 1");
  AdamWConfig{pretrain.learning_rate, pretrain.weight_decay}.validate();
  if (!(pretrain.language_id_weight >= 0))
    throw InvalidArgument("config: pretrain.language_id_weight must be >= 0");
  finetune.train.validate();
  finetune.adapters.validate();
  if (finetune.adapters.rank > model.d_model)
    throw InvalidArgument("config: finetune.adapter_rank exceeds d_model");
  if (predictor.train.epochs == 0 || predictor.train.batch_size == 0)
    throw InvalidArgument("config: predictor epochs and batch_size must be >= 1");
  AdamWConfig{predictor.train.learning_rate, predictor.train.weight_decay}.validate();
  if (!(predictor.validation_fraction > 0 && predictor.validation_fraction < 1))
    throw InvalidArgument("config: predictor.validation_fraction must lie in (0, 1)");
  if (eval.word_size == 0) throw InvalidArgument("config: eval.word_size must be >= 1");
  if (eval.seeds.empty()) throw InvalidArgument("config: eval.seeds must not be empty");
}

/// Applies "a.b.c=value". The value is read as JSON when it parses,
/// otherwise as a plain string.
inline void apply_override(nlohmann::json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw InvalidArgument("--set expects KEY=VALUE, got '" + std::string(assignment) + "'");
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw InvalidArgument("--set: malformed key '" + key + "'");
    if (!node->is_object()) throw InvalidArgument("--set: '" + key + "' is not a section");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("config " + path.string() + ": " + e.what());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return from_json_doc(doc);
}

/// Writes the fully resolved configuration (defaults filled in).
inline void save_run_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json_doc(c).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace lemb
