// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lemb/autodiff.hpp"
#include "lemb/corpus.hpp"
#include "lemb/embedding_types.hpp"
#include "lemb/error.hpp"
#include "lemb/langembed.hpp"
#include "lemb/metrics.hpp"
#include "lemb/model.hpp"
#include "lemb/optim.hpp"
#include "lemb/random.hpp"

namespace lemb {

enum class FineTuneMethod {
  Default,
  CorpusWS,
  UtteranceWS,
  Baseline,
  BaselineThenCorpusWS,
  BaselineThenUtteranceWS,
  ParamCorpusWS,
  PredictorCorpusWS,
  PredictorUtteranceWS,
};

/// Row flags of the result table for one method. The applied-stage flags
/// reproduce the published table verbatim.
struct MethodTraits {
  std::string_view key;           // CLI name
  std::string_view display;       // report name
  bool zero_shot = false;         // valid without fine-tuning
  bool fine_tuning = false;       // valid as a fine-tuning method
  bool trainable_embedding = false;
  bool predictor = false;
  bool applied_ft = false;
  bool applied_inf = false;
};

inline MethodTraits traits(FineTuneMethod m) {
  using M = FineTuneMethod;
  switch (m) {
    case M::Default:
      return {"default", "Default", true, false, false, false, false, false};
    case M::CorpusWS:
      return {"corpus_ws", "Corpus-wise", true, true, false, false, true, true};
    case M::UtteranceWS:
      return {"utterance_ws", "Utterance-wise", true, true, false, false, true, true};
    case M::Baseline:
      return {"baseline", "Baseline", false, true, true, false, false, false};
    case M::BaselineThenCorpusWS:
      return {"baseline_then_corpus_ws", "Baseline and Corpus-wise", false, true, true,
              false, false, true};
    case M::BaselineThenUtteranceWS:
      return {"baseline_then_utterance_ws", "Baseline and Utterance-wise", false, true,
              true, false, false, true};
    case M::ParamCorpusWS:
      return {"param_corpus_ws", "Parameterized Corpus-wise", false, true, true, false,
              true, true};
    case M::PredictorCorpusWS:
      return {"predictor_corpus_ws", "Predictor with Corpus-wise", false, true, false,
              true, false, false};
    case M::PredictorUtteranceWS:
      return {"predictor_utterance_ws", "Predictor with Utterance-wise", false, true,
              false, true, false, false};
  }
  throw InvalidArgument("unknown method");
}

/// Zero-shot rows of the table mark the Utterance-wise inference column
/// unset; fine-tuning rows mark it set.
inline MethodTraits zero_shot_traits(FineTuneMethod m) {
  MethodTraits t = traits(m);
  t.applied_ft = false;
  t.applied_inf = m == FineTuneMethod::CorpusWS;
  return t;
}

inline constexpr FineTuneMethod kAllMethods[] = {
    FineTuneMethod::Default,          FineTuneMethod::CorpusWS,
    FineTuneMethod::UtteranceWS,      FineTuneMethod::Baseline,
    FineTuneMethod::BaselineThenCorpusWS, FineTuneMethod::BaselineThenUtteranceWS,
    FineTuneMethod::ParamCorpusWS,    FineTuneMethod::PredictorCorpusWS,
    FineTuneMethod::PredictorUtteranceWS};

inline std::string_view to_string(FineTuneMethod m) { return traits(m).key; }

/// Accepts the CLI key ("corpus_ws"), the enum spelling ("CorpusWS") or the
/// report name ("Corpus-wise").
inline FineTuneMethod parse_method(std::string_view name) {
  static constexpr std::string_view enum_names[] = {
      "Default",       "CorpusWS",          "UtteranceWS",
      "Baseline",      "BaselineThenCorpusWS", "BaselineThenUtteranceWS",
      "ParamCorpusWS", "PredictorCorpusWS", "PredictorUtteranceWS"};
  for (std::size_t i = 0; i < std::size(kAllMethods); ++i) {
    const auto t = traits(kAllMethods[i]);
    if (name == t.key || name == t.display || name == enum_names[i]) return kAllMethods[i];
  }
  throw InvalidArgument("unknown method '" + std::string(name) + "'");
}

struct TrainConfig {
  double learning_rate = 4.7e-5;
  double weight_decay = 0.02;
  std::size_t epochs = 5;
  std::uint64_t seed = 0;
  std::size_t batch_size = 8;

  void validate() const {
    if (epochs < 1) throw InvalidArgument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw InvalidArgument("TrainConfig: batch_size must be >= 1");
    AdamWConfig{learning_rate, weight_decay}.validate();
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct PretrainConfig {
  double learning_rate = 3e-3;
  double weight_decay = 0.01;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double language_id_weight = 1.0;  // weight of the tag loss next to the transcript loss

  friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
};

// ---------------------------------------------------------------------------
// Shared decoding helpers

/// Loss of one utterance: cross entropy of transcript tokens then eot, with
/// the language slot filled by `language`.
inline Var transcript_loss(const TinyASR& model, const Var& enc, const Var& language,
                           const Utterance& u, ForwardContext& ctx) {
  Var logits = model.decode(enc, model.decoder_inputs(language, u.transcript), ctx);
  // Row 2 (transcribe) predicts the first token; the last row predicts eot.
  std::vector<std::size_t> targets(u.transcript.begin(), u.transcript.end());
  targets.push_back(model.eot());
  return ad::cross_entropy(ad::slice_rows(logits, 2, targets.size()),
                           std::span<const std::size_t>(targets));
}

/// Seen-language tag accuracy and token CER/WER on held-out utterances,
/// decoding each with its true tag.
struct SeenEvaluation {
  double tag_accuracy = 0.0;
  MetricsResult metrics;
};

inline SeenEvaluation evaluate_seen(const TinyASR& model,
                                    std::span<const TaggedCorpus> corpora,
                                    std::size_t word_size = 3) {
  SeenEvaluation out;
  ErrorAccumulator acc(word_size);
  std::size_t correct = 0, total = 0;
  for (const auto& c : corpora)
    for (const auto& u : c.utterances) {
      if (argmax_language(model.language_distribution(u.features)).value == c.tag.value)
        ++correct;
      ++total;
      acc.add(u.transcript, model.greedy_decode(u.features, c.tag));
    }
  out.tag_accuracy = total ? static_cast<double>(correct) / total : 0.0;
  out.metrics = acc.result();
  return out;
}

struct PretrainReport {
  std::vector<EpochRecord> history;
  SeenEvaluation held_out;
};

/// Multitask pretraining on seen languages: the language-ID loss on the tag
/// slice at the sot step plus transcript cross entropy with the true tag in
/// the prefix. `held_out` may be empty.
inline PretrainReport pretrain(TinyASR& model, std::span<const TaggedCorpus> train,
                               std::span<const TaggedCorpus> held_out,
                               const PretrainConfig& cfg) {
  if (train.size() < 2) throw InvalidArgument("pretrain: needs at least two seen languages");
  if (cfg.epochs < 1 || cfg.batch_size < 1)
    throw InvalidArgument("pretrain: epochs and batch_size must be positive");
  for (const auto& c : train)
    if (c.tag.value >= model.num_tags())
      throw InvalidArgument("pretrain: corpus tag outside the model's tag range");

  model.set_trainable(true);
  AdamW<float> opt({cfg.learning_rate, cfg.weight_decay}, model.parameters());
  Rng rng(derive_seed(cfg.seed, "pretrain.shuffle"));
  ForwardContext ctx{true, &rng};

  std::vector<std::pair<std::size_t, const Utterance*>> items;
  for (const auto& c : train)
    for (const auto& u : c.utterances) items.emplace_back(c.tag.value, &u);

  const TagRange tags = model.tag_range();
  PretrainReport report;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(items.begin(), items.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < items.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(items.size(), start + cfg.batch_size);
      opt.zero_grads();
      const double weight = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto [tag, u] = items[i];
        Var enc = model.encode(u->features, ctx);
        Var lang = model.tag_embedding(TagIndex{tag});
        Var logits = model.decode(enc, model.decoder_inputs(lang, u->transcript), ctx);
        Var tag_logits = ad::slice_cols(ad::slice_rows(logits, 0, 1), tags.first, tags.count);
        Var id_loss = ad::cross_entropy(tag_logits, {tag});
        std::vector<std::size_t> targets(u->transcript.begin(), u->transcript.end());
        targets.push_back(model.eot());
        Var tx_loss = ad::cross_entropy(ad::slice_rows(logits, 2, targets.size()),
                                        std::span<const std::size_t>(targets));
        Var loss = ad::scale(ad::add(ad::scale(id_loss, cfg.language_id_weight), tx_loss),
                             weight);
        epoch_loss += loss.value()[0];
        ad::backward(loss);
      }
      opt.step();
    }
    const double batches = std::ceil(static_cast<double>(items.size()) / cfg.batch_size);
    report.history.push_back({epoch, epoch_loss / batches});
  }
  if (!held_out.empty()) report.held_out = evaluate_seen(model, held_out);
  return report;
}

// ---------------------------------------------------------------------------
// Adapters

/// Attaches adapters to every decoder attention and feed-forward matrix and
/// freezes all base parameters. Returns the number of trainable adapter
/// values, sum of rank * (d_in + d_out).
inline std::size_t apply_adapters(TinyASR& model, const AdapterConfig& cfg,
                                  std::uint64_t seed) {
  cfg.validate();
  auto layers = model.adaptable_layers();
  for (auto* l : layers)
    if (cfg.rank > std::min(l->in_dim(), l->out_dim()))
      throw InvalidArgument("adapter rank " + std::to_string(cfg.rank) +
                            " exceeds min dimension of a " +
                            shape_string(l->weight.shape()) + " matrix");
  model.set_trainable(false);
  Rng rng(derive_seed(seed, "adapters"));
  std::size_t count = 0;
  for (auto* l : layers) {
    l->attach_adapter(cfg, rng);
    count += l->adapter->down.size() + l->adapter->up.size();
  }
  return count;
}

inline std::vector<Param*> adapter_parameters(TinyASR& model) {
  std::vector<Param*> out;
  for (auto* l : model.adaptable_layers())
    if (l->adapter) {
      out.push_back(&l->adapter->down);
      out.push_back(&l->adapter->up);
    }
  return out;
}

inline void merge_adapters(TinyASR& model) {
  for (auto* l : model.adaptable_layers()) l->merge_adapter();
}

// ---------------------------------------------------------------------------
// Language embedding sources

/// Produces the language-slot vector for an utterance of one language:
/// either a fixed vector or one computed per utterance from a frozen
/// reference recognizer, optionally refined by the predictor.
class EmbeddingSource {
 public:
  static EmbeddingSource fixed(WeightedEmbedding e) {
    EmbeddingSource s;
    s.fixed_ = std::move(e);
    return s;
  }

  static EmbeddingSource per_utterance(std::shared_ptr<const TinyASR> reference,
                                       std::optional<PredictorParams> predictor = {}) {
    EmbeddingSource s;
    s.reference_ = std::move(reference);
    s.predictor_ = std::move(predictor);
    return s;
  }

  bool is_fixed() const { return fixed_.has_value(); }
  const WeightedEmbedding& fixed_embedding() const { return *fixed_; }

  WeightedEmbedding operator()(const Utterance& u) const {
    if (fixed_) return *fixed_;
    WeightedEmbedding ws = utterance_ws_embedding(
        reference_->language_distribution(u.features), reference_->embedding_table());
    return predictor_ ? predict_embedding(*predictor_, ws) : ws;
  }

 private:
  std::optional<WeightedEmbedding> fixed_;
  std::shared_ptr<const TinyASR> reference_;
  std::optional<PredictorParams> predictor_;
};

/// Utterances of one unseen language.
struct LanguageCorpus {
  std::string lang_id;
  std::span<const Utterance> utterances;
};

struct FineTuneResult {
  TinyASR model;
  std::map<std::string, EmbeddingSource> inference;       // per language
  std::map<std::string, WeightedEmbedding> initial;       // trainable slots at step 0
  std::map<std::string, TagIndex> added_tags;             // Baseline* only
  std::vector<EpochRecord> history;
};

/// Distributions of the reference recognizer over a corpus.
inline std::vector<LangDistribution> corpus_distributions(const TinyASR& reference,
                                                          std::span<const Utterance> utts) {
  std::vector<LangDistribution> out;
  out.reserve(utts.size());
  for (const auto& u : utts) out.push_back(reference.language_distribution(u.features));
  return out;
}

/// Fine-tunes a copy of `pretrained` on unseen-language corpora with low-rank
/// adapters and the language-slot policy of `method`. Language
/// distributions always come from the frozen pretrained model; corpus-wise
/// embeddings use the training utterances only.
inline FineTuneResult finetune(const TinyASR& pretrained,
                               std::span<const LanguageCorpus> corpora,
                               FineTuneMethod method, const TrainConfig& cfg,
                               const AdapterConfig& adapters,
                               const PredictorParams* predictor = nullptr) {
  using M = FineTuneMethod;
  cfg.validate();
  if (method == M::Default)
    throw InvalidArgument("finetune: Default is zero-shot only");
  const bool needs_predictor =
      method == M::PredictorCorpusWS || method == M::PredictorUtteranceWS;
  if (needs_predictor && !predictor)
    throw InvalidArgument("finetune: method " + std::string(to_string(method)) +
                          " requires a trained predictor");
  if (corpora.empty()) throw InvalidArgument("finetune: no corpora");

  auto reference = std::make_shared<const TinyASR>(pretrained);
  const EmbeddingTable ref_table = reference->embedding_table();
  FineTuneResult result{pretrained, {}, {}, {}, {}};
  TinyASR& model = result.model;

  // Language-slot policy used while training.
  std::map<std::string, EmbeddingSource> train_sources;
  std::map<std::string, Param> slots;  // trainable slot vectors
  std::map<std::string, WeightedEmbedding> corpus_ws;
  for (const auto& c : corpora) {
    if (c.utterances.empty())
      throw InvalidArgument("finetune: language " + c.lang_id + " has no utterances");
    const auto dists = corpus_distributions(*reference, c.utterances);
    corpus_ws[c.lang_id] = corpus_ws_embedding(dists, ref_table);
  }
  const bool baseline_like = method == M::Baseline || method == M::BaselineThenCorpusWS ||
                             method == M::BaselineThenUtteranceWS;
  for (const auto& c : corpora) {
    const auto& id = c.lang_id;
    if (baseline_like) {
      const TagIndex tag = model.add_language_tag(TagInit::mean_of_tags);
      result.added_tags[id] = tag;
      auto row = model.embedding_table().tag_row(tag.value);
      WeightedEmbedding init{{row.begin(), row.end()}, Provenance::tag};
      slots.emplace(id, Param(Tensor<float>({1, init.dim()}, init.vector)));
      result.initial[id] = std::move(init);
    } else if (method == M::ParamCorpusWS) {
      WeightedEmbedding init = corpus_ws[id];
      slots.emplace(id, Param(Tensor<float>({1, init.dim()}, init.vector)));
      init.provenance = Provenance::parameterized;
      result.initial[id] = std::move(init);
    } else if (method == M::CorpusWS) {
      train_sources[id] = EmbeddingSource::fixed(corpus_ws[id]);
    } else if (method == M::UtteranceWS) {
      train_sources[id] = EmbeddingSource::per_utterance(reference);
    } else if (method == M::PredictorCorpusWS) {
      train_sources[id] = EmbeddingSource::fixed(predict_embedding(*predictor, corpus_ws[id]));
    } else if (method == M::PredictorUtteranceWS) {
      train_sources[id] = EmbeddingSource::per_utterance(reference, *predictor);
    }
  }

  apply_adapters(model, adapters, cfg.seed);
  std::vector<Param*> trainable = adapter_parameters(model);
  for (auto& [id, p] : slots) trainable.push_back(&p);
  AdamW<float> opt({cfg.learning_rate, cfg.weight_decay}, trainable);

  // Fixed per-utterance embeddings are computed once up front.
  std::vector<std::pair<const LanguageCorpus*, const Utterance*>> items;
  std::map<const Utterance*, std::vector<float>> fixed_vectors;
  for (const auto& c : corpora)
    for (const auto& u : c.utterances) {
      items.emplace_back(&c, &u);
      if (!slots.count(c.lang_id)) fixed_vectors[&u] = train_sources.at(c.lang_id)(u).vector;
    }

  Rng rng(derive_seed(cfg.seed, "finetune.shuffle"));
  ForwardContext ctx{true, &rng};
  const std::size_t d = model.config().d_model;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(items.begin(), items.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < items.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(items.size(), start + cfg.batch_size);
      opt.zero_grads();
      const double weight = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto [corpus, u] = items[i];
        Var lang = slots.count(corpus->lang_id)
                       ? slots.at(corpus->lang_id).var()
                       : Var::constant(Tensor<float>({1, d}, fixed_vectors.at(u)));
        Var enc = model.encode(u->features, ctx);
        Var loss = ad::scale(transcript_loss(model, enc, lang, *u, ctx), weight);
        epoch_loss += loss.value()[0];
        ad::backward(loss);
      }
      opt.step();
    }
    const double batches = std::ceil(static_cast<double>(items.size()) / cfg.batch_size);
    result.history.push_back({epoch, epoch_loss / batches});
  }

  // Language-slot policy at inference.
  for (const auto& c : corpora) {
    const auto& id = c.lang_id;
    switch (method) {
      case M::Baseline: {
        const auto& v = slots.at(id).value().values();
        model.set_tag_row(result.added_tags.at(id), v);
        result.inference[id] = EmbeddingSource::fixed({v, Provenance::tag});
        break;
      }
      case M::BaselineThenCorpusWS:
      case M::BaselineThenUtteranceWS: {
        model.set_tag_row(result.added_tags.at(id), slots.at(id).value().values());
        result.inference[id] = method == M::BaselineThenCorpusWS
                                   ? EmbeddingSource::fixed(corpus_ws[id])
                                   : EmbeddingSource::per_utterance(reference);
        break;
      }
      case M::ParamCorpusWS:
        result.inference[id] = EmbeddingSource::fixed(
            {slots.at(id).value().values(), Provenance::parameterized});
        break;
      default:
        result.inference[id] = train_sources.at(id);
        break;
    }
  }
  return result;
}

}  // namespace lemb
