// SPDX-License-Identifier: Apache-2.0
#pragma once

// Language embeddings for languages the recognizer has no tag for.
//
// A weighted-sum embedding mixes the tag rows of the embedding table by the
// recognizer's language probabilities:
//
//   ws(x) = sum_j P(l_j | x, sot) * Emb_j
//
// Utterance-wise uses each utterance's own distribution; corpus-wise averages
// the distributions over a corpus first (in probability space). The predictor
// is a two-layer MLP trained to map a weighted-sum embedding to the true tag
// row, using seen languages with their own tag masked out.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lemb/autodiff.hpp"
#include "lemb/corpus.hpp"
#include "lemb/embedding_types.hpp"
#include "lemb/error.hpp"
#include "lemb/lbt.hpp"
#include "lemb/math.hpp"
#include "lemb/model.hpp"
#include "lemb/optim.hpp"
#include "lemb/random.hpp"

namespace lemb {

/// Most probable tag; ties go to the lowest index.
inline TagIndex argmax_language(const LangDistribution& dist) {
  if (dist.probs.empty()) throw InvalidArgument("argmax_language: empty distribution");
  return TagIndex{argmax(std::span<const double>(dist.probs))};
}

inline WeightedEmbedding weighted_tag_sum(const LangDistribution& dist,
                                          const EmbeddingTable& table,
                                          Provenance provenance) {
  if (dist.size() != table.tags.count)
    throw InvalidArgument("distribution over " + std::to_string(dist.size()) +
                          " tags, table has " + std::to_string(table.tags.count));
  std::vector<double> acc(table.dim, 0.0);
  for (std::size_t j = 0; j < dist.size(); ++j) {
    const double p = dist.probs[j];
    if (p == 0.0) continue;
    auto row = table.tag_row(j);
    for (std::size_t c = 0; c < table.dim; ++c) acc[c] += p * row[c];
  }
  WeightedEmbedding out;
  out.vector.assign(acc.begin(), acc.end());
  out.provenance = provenance;
  return out;
}

inline WeightedEmbedding utterance_ws_embedding(const LangDistribution& dist,
                                                const EmbeddingTable& table) {
  return weighted_tag_sum(dist, table, Provenance::utterance_ws);
}

/// Per-coordinate mean of the distributions.
inline LangDistribution corpus_distribution(std::span<const LangDistribution> dists) {
  if (dists.empty()) throw InvalidArgument("corpus_distribution: empty corpus");
  const std::size_t n = dists.front().size();
  std::vector<double> acc(n, 0.0);
  for (const auto& d : dists) {
    if (d.size() != n)
      throw InvalidArgument("corpus_distribution: distributions differ in length");
    for (std::size_t j = 0; j < n; ++j) acc[j] += d.probs[j];
  }
  for (double& v : acc) v /= static_cast<double>(dists.size());
  return {std::move(acc)};
}

inline WeightedEmbedding corpus_ws_embedding(std::span<const LangDistribution> dists,
                                             const EmbeddingTable& table) {
  return weighted_tag_sum(corpus_distribution(dists), table, Provenance::corpus_ws);
}

/// Tag distribution with `masked` excluded from the softmax denominator; the
/// masked entry is exactly zero and the rest sum to one.
inline LangDistribution masked_distribution(std::span<const float> tag_logits,
                                            TagIndex masked) {
  if (masked.value >= tag_logits.size())
    throw InvalidArgument("masked tag outside the logit vector");
  if (tag_logits.size() < 2)
    throw InvalidArgument("masking needs at least two tags");
  std::vector<float> kept;
  kept.reserve(tag_logits.size() - 1);
  for (std::size_t j = 0; j < tag_logits.size(); ++j)
    if (j != masked.value) kept.push_back(tag_logits[j]);
  const auto probs = softmax(kept);
  LangDistribution out;
  out.probs.assign(tag_logits.size(), 0.0);
  for (std::size_t j = 0, k = 0; j < tag_logits.size(); ++j)
    if (j != masked.value) out.probs[j] = probs[k++];
  return out;
}

// ---------------------------------------------------------------------------
// Leave-one-out dataset

enum class LooMode { corpus_wise, utterance_wise };

/// Utterances of one seen language, identified by its tag.
struct TaggedCorpus {
  TagIndex tag;
  std::span<const Utterance> utterances;
};

struct MaskedExample {
  WeightedEmbedding input;       // built without the masked tag
  std::vector<float> target;     // tag row of the masked language
  TagIndex masked_lang;
  LangDistribution distribution;  // the masked distribution behind `input`
};

/// For each seen language m: take the recognizer's tag logits per utterance,
/// drop tag m, renormalize over the rest and form the weighted sum. Corpus
/// mode averages the masked distributions per language and yields one
/// example per language; utterance mode yields one example per utterance.
inline std::vector<MaskedExample> build_loo_dataset(const TinyASR& model,
                                                    std::span<const TaggedCorpus> seen,
                                                    LooMode mode) {
  if (seen.size() < 2)
    throw InvalidArgument("build_loo_dataset: needs at least two seen languages");
  const EmbeddingTable table = model.embedding_table();
  std::vector<MaskedExample> out;
  for (const auto& corpus : seen) {
    if (corpus.utterances.empty())
      throw InvalidArgument("build_loo_dataset: language with no utterances");
    auto target_row = table.tag_row(corpus.tag.value);
    std::vector<float> target(target_row.begin(), target_row.end());
    std::vector<LangDistribution> dists;
    dists.reserve(corpus.utterances.size());
    for (const auto& u : corpus.utterances)
      dists.push_back(masked_distribution(model.tag_logits(u.features), corpus.tag));
    if (mode == LooMode::corpus_wise) {
      LangDistribution mean = corpus_distribution(dists);
      out.push_back({weighted_tag_sum(mean, table, Provenance::corpus_ws), target,
                     corpus.tag, std::move(mean)});
    } else {
      for (auto& d : dists)
        out.push_back({weighted_tag_sum(d, table, Provenance::utterance_ws), target,
                       corpus.tag, std::move(d)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Predictor

enum class Activation { gelu, tanh, relu };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::gelu: return "gelu";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  return "gelu";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "gelu") return Activation::gelu;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw InvalidArgument("unknown activation '" + std::string(s) + "'");
}

/// layer2(act(layer1(x))): [d -> hidden -> d].
struct PredictorParams {
  Param w1, b1, w2, b2;
  Activation activation = Activation::gelu;

  PredictorParams() = default;

  /// hidden == 0 selects hidden = dim.
  PredictorParams(std::size_t dim, std::size_t hidden, std::uint64_t seed,
                  Activation act = Activation::gelu)
      : activation(act) {
    if (dim == 0) throw InvalidArgument("predictor dimension must be positive");
    if (hidden == 0) hidden = dim;
    Rng rng(seed);
    w1 = Param(nn::gaussian({dim, hidden}, 1.0 / std::sqrt(static_cast<double>(dim)), rng));
    b1 = Param(Tensor<float>({hidden}));
    w2 = Param(nn::gaussian({hidden, dim}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng));
    b2 = Param(Tensor<float>({dim}));
  }

  std::size_t dim() const { return w1.shape()[0]; }
  std::size_t hidden() const { return w1.shape()[1]; }

  std::vector<Param*> parameters() { return {&w1, &b1, &w2, &b2}; }

  Var forward(const Var& x) const {
    Var h = ad::add_bias(ad::matmul(x, w1.var()), b1.var());
    switch (activation) {
      case Activation::gelu: h = ad::gelu(h); break;
      case Activation::tanh: h = ad::tanh(h); break;
      case Activation::relu: h = ad::relu(h); break;
    }
    return ad::add_bias(ad::matmul(h, w2.var()), b2.var());
  }

  void save(const std::filesystem::path& dir, const nlohmann::json& extra = {}) const {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    lbt::write(dir / "layer1.weight.lbt", w1.value());
    lbt::write(dir / "layer1.bias.lbt", b1.value());
    lbt::write(dir / "layer2.weight.lbt", w2.value());
    lbt::write(dir / "layer2.bias.lbt", b2.value());
    nlohmann::json meta = {{"dim", dim()},
                           {"hidden", hidden()},
                           {"activation", std::string(to_string(activation))}};
    if (!extra.is_null()) meta["training"] = extra;
    std::ofstream out(dir / "predictor.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "predictor.json").string());
    out << meta.dump(2) << '\n';
  }

  static PredictorParams load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "predictor.json");
    if (!in) throw IoError("missing predictor metadata in " + dir.string());
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError((dir / "predictor.json").string() + ": " + e.what());
    }
    PredictorParams p;
    p.activation = parse_activation(meta.at("activation").get<std::string>());
    p.w1 = Param(lbt::read(dir / "layer1.weight.lbt"));
    p.b1 = Param(lbt::read(dir / "layer1.bias.lbt"));
    p.w2 = Param(lbt::read(dir / "layer2.weight.lbt"));
    p.b2 = Param(lbt::read(dir / "layer2.bias.lbt"));
    const auto d = meta.at("dim").get<std::size_t>();
    const auto h = meta.at("hidden").get<std::size_t>();
    if (p.w1.shape() != Shape{d, h} || p.b1.size() != h || p.w2.shape() != Shape{h, d} ||
        p.b2.size() != d)
      throw ParseError("predictor tensors disagree with predictor.json shapes");
    return p;
  }
};

inline WeightedEmbedding predict_embedding(const PredictorParams& predictor,
                                           const WeightedEmbedding& ws) {
  if (ws.dim() != predictor.dim())
    throw InvalidArgument("predict_embedding: input dimension " +
                          std::to_string(ws.dim()) + ", predictor expects " +
                          std::to_string(predictor.dim()));
  ad::NoGradGuard no_grad;
  Var out = predictor.forward(Var::constant(Tensor<float>({1, ws.dim()}, ws.vector)));
  return {out.value().values(), Provenance::predicted};
}

struct PredictorConfig {
  double learning_rate = 5e-4;
  double weight_decay = 0.01;
  std::size_t epochs = 200;
  std::size_t patience = 20;  // epochs without validation improvement
  std::size_t batch_size = 4;
  std::size_t hidden = 0;     // 0: same as the embedding size
  Activation activation = Activation::gelu;
  std::uint64_t seed = 0;

  friend bool operator==(const PredictorConfig&, const PredictorConfig&) = default;
};

struct PredictorTrainResult {
  PredictorParams params;
  std::size_t best_epoch = 0;
  double best_validation_mse = 0.0;
  std::vector<double> train_mse;       // per epoch, after the epoch's updates
  std::vector<double> validation_mse;  // empty when no validation set
};

/// Mean over examples of MSE(predict(input), target).
inline double predictor_mse(const PredictorParams& p,
                            std::span<const MaskedExample> examples) {
  if (examples.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& e : examples) {
    const auto pred = predict_embedding(p, e.input);
    acc += mean_squared_error(std::span<const float>(pred.vector),
                              std::span<const float>(e.target));
  }
  return acc / static_cast<double>(examples.size());
}

/// AdamW on MSE. Keeps the parameters of the epoch with the lowest
/// validation MSE (training MSE when no validation set is given) and stops
/// after `patience` epochs without improvement.
inline PredictorTrainResult train_predictor(std::span<const MaskedExample> train,
                                            std::span<const MaskedExample> validation,
                                            const PredictorConfig& cfg) {
  if (train.empty()) throw InvalidArgument("train_predictor: empty training set");
  if (cfg.epochs == 0 || cfg.batch_size == 0)
    throw InvalidArgument("train_predictor: epochs and batch_size must be positive");
  const std::size_t d = train.front().input.dim();
  for (const auto& e : train)
    if (e.input.dim() != d || e.target.size() != d)
      throw InvalidArgument("train_predictor: inconsistent example dimensions");

  PredictorTrainResult result;
  PredictorParams params(d, cfg.hidden, derive_seed(cfg.seed, "predictor.init"),
                         cfg.activation);
  AdamW<float> opt({cfg.learning_rate, cfg.weight_decay}, params.parameters());
  Rng rng(derive_seed(cfg.seed, "predictor.shuffle"));

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  result.params = params;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Tensor<float> x = Tensor<float>::matrix(end - start, d);
      Tensor<float> y = Tensor<float>::matrix(end - start, d);
      for (std::size_t i = start; i < end; ++i) {
        const auto& e = train[order[i]];
        std::copy(e.input.vector.begin(), e.input.vector.end(), x.row(i - start).begin());
        std::copy(e.target.begin(), e.target.end(), y.row(i - start).begin());
      }
      opt.zero_grads();
      Var loss = ad::mse_loss(params.forward(Var::constant(std::move(x))),
                              Var::constant(std::move(y)));
      ad::backward(loss);
      opt.step();
    }
    const double train_mse = predictor_mse(params, train);
    result.train_mse.push_back(train_mse);
    double score = train_mse;
    if (!validation.empty()) {
      score = predictor_mse(params, validation);
      result.validation_mse.push_back(score);
    }
    if (score < best) {
      best = score;
      since_best = 0;
      result.params = params;
      result.best_epoch = epoch;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  result.best_validation_mse = best;
  return result;
}

/// Splits tag indices into (train, validation), holding out
/// max(2, round(fraction * n)) languages when n leaves at least one for
/// training.
inline std::pair<std::vector<TagIndex>, std::vector<TagIndex>> split_languages(
    std::vector<TagIndex> tags, double fraction, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "predictor.split"));
  std::shuffle(tags.begin(), tags.end(), rng);
  std::size_t hold = static_cast<std::size_t>(std::lround(fraction * tags.size()));
  hold = std::max<std::size_t>(hold, 2);
  if (hold >= tags.size()) hold = tags.size() > 1 ? tags.size() - 1 : 0;
  std::vector<TagIndex> val(tags.begin(), tags.begin() + static_cast<std::ptrdiff_t>(hold));
  std::vector<TagIndex> train(tags.begin() + static_cast<std::ptrdiff_t>(hold), tags.end());
  auto by_index = [](TagIndex a, TagIndex b) { return a.value < b.value; };
  std::sort(val.begin(), val.end(), by_index);
  std::sort(train.begin(), train.end(), by_index);
  return {std::move(train), std::move(val)};
}

}  // namespace lemb
