// SPDX-License-Identifier: Apache-2.0
#pragma once

// TinyASR: a small encoder-decoder recognizer conditioned on a decoder
// prefix [sot, language, transcribe].
//
// Vocabulary layout:
//   [0, V)            transcript tokens
//   V, V+1, V+2       sot, transcribe, eot
//   [V+3, V+3+L)      language tags; new tags are appended at the end
//
// The embedding matrix is tied: it embeds decoder inputs and, transposed,
// projects decoder states to logits.

#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lemb/autodiff.hpp"
#include "lemb/embedding_types.hpp"
#include "lemb/error.hpp"
#include "lemb/lbt.hpp"
#include "lemb/math.hpp"
#include "lemb/random.hpp"
#include "lemb/tensor.hpp"

namespace lemb {

using Var = ad::Var<float>;
using Param = ad::Parameter<float>;

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t feature_dim = 16;
  std::size_t transcript_vocab = 16;
  std::size_t num_language_tags = 12;
  std::size_t num_special_tokens = 3;  // sot, transcribe, eot
  std::size_t decoder_layers = 1;
  std::size_t max_decode_len = 14;
  std::size_t ffn_dim = 128;
  std::size_t encoder_window = 1;  // encoder self-attention sees frames i-w..i+w
  double tag_init_scale = 0.1;      // tag rows start this much smaller than token rows

  std::size_t total_vocab() const {
    return transcript_vocab + num_special_tokens + num_language_tags;
  }

  void validate() const {
    if (!d_model || !feature_dim || !transcript_vocab || !num_language_tags ||
        !decoder_layers || !max_decode_len || !ffn_dim)
      throw InvalidArgument("ModelConfig: all sizes must be positive");
    if (num_special_tokens != 3)
      throw InvalidArgument("ModelConfig: exactly 3 special tokens (sot, transcribe, eot)");
    if (!(tag_init_scale >= 0.0) || !std::isfinite(tag_init_scale))
      throw InvalidArgument("ModelConfig: tag_init_scale must be finite and >= 0");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"d_model", c.d_model},
       {"feature_dim", c.feature_dim},
       {"transcript_vocab", c.transcript_vocab},
       {"num_language_tags", c.num_language_tags},
       {"num_special_tokens", c.num_special_tokens},
       {"decoder_layers", c.decoder_layers},
       {"max_decode_len", c.max_decode_len},
       {"ffn_dim", c.ffn_dim},
       {"encoder_window", c.encoder_window},
       {"tag_init_scale", c.tag_init_scale}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("d_model").get_to(c.d_model);
  j.at("feature_dim").get_to(c.feature_dim);
  j.at("transcript_vocab").get_to(c.transcript_vocab);
  j.at("num_language_tags").get_to(c.num_language_tags);
  j.at("num_special_tokens").get_to(c.num_special_tokens);
  j.at("decoder_layers").get_to(c.decoder_layers);
  j.at("max_decode_len").get_to(c.max_decode_len);
  j.at("ffn_dim").get_to(c.ffn_dim);
  j.at("encoder_window").get_to(c.encoder_window);
  j.at("tag_init_scale").get_to(c.tag_init_scale);
}

/// Low-rank adapter settings: W is used as W + (alpha / rank) * A * B.
struct AdapterConfig {
  std::size_t rank = 4;
  double alpha = 8.0;
  double dropout = 0.05;

  double scale() const { return alpha / static_cast<double>(rank); }

  void validate() const {
    if (rank < 1) throw InvalidArgument("AdapterConfig: rank must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw InvalidArgument("AdapterConfig: dropout must lie in [0, 1)");
  }

  friend bool operator==(const AdapterConfig&, const AdapterConfig&) = default;
};

/// Per-forward state: dropout is active only when training with an rng.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

namespace nn {

inline Tensor<float> gaussian(Shape shape, double stddev, Rng& rng) {
  Tensor<float> t(std::move(shape));
  std::normal_distribution<double> normal(0.0, stddev);
  for (auto& v : t.data()) v = static_cast<float>(normal(rng));
  return t;
}

struct Adapter {
  Param down;  // A: [in x rank], gaussian
  Param up;    // B: [rank x out], zero
  double scale = 1.0;
  double dropout = 0.0;
};

/// Affine map x W + b with an optional low-rank adapter.
struct Linear {
  Param weight;  // [in x out]
  Param bias;    // [out]
  std::optional<Adapter> adapter;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : weight(gaussian({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
        bias(Tensor<float>({out})) {}

  std::size_t in_dim() const { return weight.shape()[0]; }
  std::size_t out_dim() const { return weight.shape()[1]; }

  Var forward(const Var& x, ForwardContext& ctx) const {
    Var y = ad::add_bias(ad::matmul(x, weight.var()), bias.var());
    if (!adapter) return y;
    Var h = x;
    if (ctx.training && ctx.rng && adapter->dropout > 0.0)
      h = ad::dropout(h, adapter->dropout, *ctx.rng);
    Var delta = ad::matmul(ad::matmul(h, adapter->down.var()), adapter->up.var());
    return ad::add(y, ad::scale(delta, adapter->scale));
  }

  void attach_adapter(const AdapterConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.rank > std::min(in_dim(), out_dim()))
      throw InvalidArgument("adapter rank " + std::to_string(cfg.rank) +
                            " exceeds min dimension of a " +
                            shape_string(weight.shape()) + " matrix");
    Adapter a;
    a.down = Param(gaussian({in_dim(), cfg.rank},
                            1.0 / std::sqrt(static_cast<double>(in_dim())), rng));
    a.up = Param(Tensor<float>({cfg.rank, out_dim()}));
    a.scale = cfg.scale();
    a.dropout = cfg.dropout;
    adapter = std::move(a);
  }

  /// Folds the adapter into the base weight and removes it.
  void merge_adapter() {
    if (!adapter) return;
    const auto& A = adapter->down.value();
    const auto& B = adapter->up.value();
    auto& W = weight.mutable_value();
    const std::size_t r = A.cols();
    for (std::size_t i = 0; i < in_dim(); ++i)
      for (std::size_t j = 0; j < out_dim(); ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < r; ++k)
          acc += static_cast<double>(A(i, k)) * B(k, j);
        W(i, j) = static_cast<float>(W(i, j) + adapter->scale * acc);
      }
    adapter.reset();
  }
};

struct LayerNorm {
  Param gain;
  Param bias;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim)
      : gain(Tensor<float>({dim}, 1.0f)), bias(Tensor<float>({dim})) {}

  Var forward(const Var& x) const {
    return ad::layer_norm(x, gain.var(), bias.var());
  }
};

/// Single-head scaled dot-product attention.
struct Attention {
  Linear query, key, value, output;

  Attention() = default;
  Attention(std::size_t d, Rng& rng)
      : query(d, d, rng), key(d, d, rng), value(d, d, rng), output(d, d, rng) {}

  Var forward(const Var& q_in, const Var& kv_in, bool causal, ForwardContext& ctx,
              std::size_t window = std::numeric_limits<std::size_t>::max()) const {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q_in.cols()));
    Var q = query.forward(q_in, ctx);
    Var k = key.forward(kv_in, ctx);
    Var v = value.forward(kv_in, ctx);
    Var weights = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt_d), causal, window);
    return output.forward(ad::matmul(weights, v), ctx);
  }
};

struct DecoderLayer {
  LayerNorm self_norm, cross_norm, ffn_norm;
  Attention self_attn, cross_attn;
  Linear ffn_in, ffn_out;

  DecoderLayer() = default;
  DecoderLayer(std::size_t d, std::size_t ffn, Rng& rng)
      : self_norm(d), cross_norm(d), ffn_norm(d),
        self_attn(d, rng), cross_attn(d, rng),
        ffn_in(d, ffn, rng), ffn_out(ffn, d, rng) {}

  Var forward(const Var& h_in, const Var& enc, ForwardContext& ctx) const {
    Var n = self_norm.forward(h_in);
    Var h = ad::add(h_in, self_attn.forward(n, n, true, ctx));
    Var c = cross_norm.forward(h);
    h = ad::add(h, cross_attn.forward(c, enc, false, ctx));
    Var f = ffn_out.forward(ad::gelu(ffn_in.forward(ffn_norm.forward(h), ctx)), ctx);
    return ad::add(h, f);
  }

  std::vector<Linear*> adaptable() {
    return {&self_attn.query,  &self_attn.key,  &self_attn.value,
            &self_attn.output, &cross_attn.query, &cross_attn.key,
            &cross_attn.value, &cross_attn.output, &ffn_in, &ffn_out};
  }
};

/// Sinusoidal positions with each component in [-amplitude, amplitude].
inline Tensor<float> positional_encoding(std::size_t rows, std::size_t d,
                                         double amplitude = 1.0) {
  Tensor<float> pe = Tensor<float>::matrix(rows, d);
  for (std::size_t p = 0; p < rows; ++p)
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i / 2 * 2) / d);
      const double a = static_cast<double>(p) * freq;
      pe(p, i) = static_cast<float>(amplitude * (i % 2 == 0 ? std::sin(a) : std::cos(a)));
    }
  return pe;
}

}  // namespace nn

/// Decoder-side prefix embeddings, rows [sot, language, transcribe].
using EmbeddedPrefix = Tensor<float>;

using LanguageChoice = std::variant<TagIndex, WeightedEmbedding>;

enum class TagInit { mean_of_tags, gaussian };

/// Scores continuations of a partial transcript over the full vocabulary.
template <class S>
concept NextTokenScorer = requires(const S& s, std::span<const std::size_t> generated) {
  { s(generated) } -> std::convertible_to<std::vector<float>>;
};

/// Argmax decoding restricted to transcript tokens [0, transcript_vocab) and
/// eot; stops at eot or after max_len tokens. Ties go to the lowest index.
template <NextTokenScorer S>
std::vector<std::size_t> greedy_decode(const S& scorer, std::size_t transcript_vocab,
                                       std::size_t eot, std::size_t max_len) {
  if (max_len == 0) throw InvalidArgument("greedy_decode: max_len must be >= 1");
  std::vector<std::size_t> out;
  while (out.size() < max_len) {
    const std::vector<float> logits = scorer(std::span<const std::size_t>(out));
    if (logits.size() <= std::max(eot, transcript_vocab - 1))
      throw InvalidArgument("greedy_decode: scorer returned too few logits");
    std::size_t best = 0;
    for (std::size_t t = 1; t < transcript_vocab; ++t)
      if (logits[t] > logits[best]) best = t;
    if (logits[eot] > logits[best] || (logits[eot] == logits[best] && eot < best))
      best = eot;
    if (best == eot) break;
    out.push_back(best);
  }
  return out;
}

class TinyASR {
 public:
  TinyASR() = default;

  TinyASR(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t d = cfg_.d_model;
    tags_ = {cfg_.transcript_vocab + cfg_.num_special_tokens, cfg_.num_language_tags};
    embedding_ = Param(nn::gaussian({cfg_.total_vocab(), d},
                                    1.0 / std::sqrt(static_cast<double>(d)), rng));
    {
      auto& table = embedding_.mutable_value();
      for (std::size_t t = 0; t < tags_.count; ++t)
        for (auto& v : table.row(tags_.token(t))) v *= static_cast<float>(cfg_.tag_init_scale);
    }
    enc_in_ = nn::Linear(cfg_.feature_dim, d, rng);
    enc_attn_norm_ = nn::LayerNorm(d);
    enc_attn_ = nn::Attention(d, rng);
    enc_out_norm_ = nn::LayerNorm(d);
    for (std::size_t i = 0; i < cfg_.decoder_layers; ++i)
      layers_.emplace_back(d, cfg_.ffn_dim, rng);
    final_norm_ = nn::LayerNorm(d);
  }

  const ModelConfig& config() const { return cfg_; }
  const TagRange& tag_range() const { return tags_; }
  std::size_t num_tags() const { return tags_.count; }
  std::size_t vocab_size() const { return embedding_.shape()[0]; }
  std::size_t sot() const { return cfg_.transcript_vocab; }
  std::size_t transcribe() const { return cfg_.transcript_vocab + 1; }
  std::size_t eot() const { return cfg_.transcript_vocab + 2; }

  EmbeddingTable embedding_table() const {
    return {embedding_.value().data(), cfg_.d_model, tags_};
  }
  Param& embedding() { return embedding_; }
  const Param& embedding() const { return embedding_; }
  nn::LayerNorm& final_norm() { return final_norm_; }

  // ---- graph-building forward pieces -------------------------------------

  Var encode(const Tensor<float>& features, ForwardContext& ctx) const {
    if (features.rank() != 2 || features.cols() != cfg_.feature_dim)
      throw InvalidArgument("features shape " + shape_string(features.shape()) +
                            " does not match feature_dim " +
                            std::to_string(cfg_.feature_dim));
    if (features.rows() == 0) throw InvalidArgument("features have no frames");
    Var x = Var::constant(features);
    Var h = ad::gelu(enc_in_.forward(x, ctx));
    h = ad::add(h, Var::constant(nn::positional_encoding(features.rows(), cfg_.d_model)));
    Var n = enc_attn_norm_.forward(h);
    h = ad::add(h, enc_attn_.forward(n, n, false, ctx, cfg_.encoder_window));
    return enc_out_norm_.forward(h);
  }

  /// Logits [P x vocab] for every position of the decoder input rows.
  Var decode(const Var& enc, const Var& inputs, ForwardContext& ctx) const {
    if (inputs.cols() != cfg_.d_model)
      throw InvalidArgument("decoder inputs must have d_model columns");
    Var h = ad::add(inputs, Var::constant(nn::positional_encoding(
                                   inputs.rows(), cfg_.d_model, decoder_position_scale())));
    for (const auto& layer : layers_) h = layer.forward(h, enc, ctx);
    return ad::matmul_nt(final_norm_.forward(h), embedding_.var());
  }

  /// Decoder input rows [sot, language, transcribe, tokens...].
  Var decoder_inputs(const Var& language, std::span<const std::size_t> tokens) const {
    if (language.size() != cfg_.d_model)
      throw InvalidArgument("language embedding has dimension " +
                            std::to_string(language.size()) + ", expected " +
                            std::to_string(cfg_.d_model));
    std::vector<Var> parts;
    parts.push_back(ad::gather_rows(embedding_.var(), {sot()}));
    parts.push_back(as_row(language));
    std::vector<std::size_t> rest{transcribe()};
    rest.insert(rest.end(), tokens.begin(), tokens.end());
    parts.push_back(ad::gather_rows(embedding_.var(), rest));
    return ad::concat_rows(parts);
  }

  Var tag_embedding(TagIndex tag) const {
    check_tag(tag);
    return ad::gather_rows(embedding_.var(), {tags_.token(tag.value)});
  }

  Var language_var(const LanguageChoice& language) const {
    if (const auto* tag = std::get_if<TagIndex>(&language)) return tag_embedding(*tag);
    const auto& we = std::get<WeightedEmbedding>(language);
    if (we.dim() != cfg_.d_model)
      throw InvalidArgument("weighted embedding has dimension " +
                            std::to_string(we.dim()) + ", expected " +
                            std::to_string(cfg_.d_model));
    return Var::constant(Tensor<float>({1, cfg_.d_model}, we.vector));
  }

  /// Decoder positions get unit row norm so they stay on the scale of the
  /// embedding rows; encoder positions use unit amplitude against the
  /// larger projected frames.
  double decoder_position_scale() const {
    return std::sqrt(2.0 / static_cast<double>(cfg_.d_model));
  }

  // ---- inference API -----------------------------------------------------

  /// Logits for the token following `prefix` (rows of decoder input vectors).
  std::vector<float> next_token_logits(const Tensor<float>& features,
                                       const Tensor<float>& prefix) const {
    if (prefix.rows() == 0 || prefix.cols() != cfg_.d_model || prefix.rank() != 2)
      throw InvalidArgument("prefix must be a non-empty [P x d_model] matrix");
    ad::NoGradGuard no_grad;
    ForwardContext ctx;
    Var logits = decode(encode(features, ctx), Var::constant(prefix), ctx);
    auto last = logits.value().row(logits.rows() - 1);
    return {last.begin(), last.end()};
  }

  /// Raw logits of the language tags at the first decode step, given [sot].
  std::vector<float> tag_logits(const Tensor<float>& features) const {
    Tensor<float> prefix({1, cfg_.d_model});
    auto row = embedding_table().row(sot());
    std::copy(row.begin(), row.end(), prefix.data().begin());
    const auto logits = next_token_logits(features, prefix);
    return {logits.begin() + static_cast<std::ptrdiff_t>(tags_.first),
            logits.begin() + static_cast<std::ptrdiff_t>(tags_.first + tags_.count)};
  }

  LangDistribution language_distribution(const Tensor<float>& features) const {
    if (tags_.count == 0) throw IllegalState("model has no language tags");
    return {softmax(tag_logits(features))};
  }

  EmbeddedPrefix embed_prefix(const LanguageChoice& language) const {
    ad::NoGradGuard no_grad;
    Var v = decoder_inputs(language_var(language), {});
    return v.value();
  }

  std::vector<std::size_t> greedy_decode(const Tensor<float>& features,
                                         const LanguageChoice& language) const {
    ad::NoGradGuard no_grad;
    ForwardContext ctx;
    Var enc = encode(features, ctx);
    Var lang = language_var(language);
    auto scorer = [&](std::span<const std::size_t> generated) {
      Var logits = decode(enc, decoder_inputs(lang, generated), ctx);
      auto last = logits.value().row(logits.rows() - 1);
      return std::vector<float>(last.begin(), last.end());
    };
    return lemb::greedy_decode(scorer, cfg_.transcript_vocab, eot(), cfg_.max_decode_len);
  }

  // ---- mutation ------------------------------------------------------------

  /// Appends a tag row and returns its tag index.
  TagIndex add_language_tag(TagInit init, double sigma = 0.0, Rng* rng = nullptr) {
    const std::size_t d = cfg_.d_model;
    const Tensor<float>& old = embedding_.value();
    std::vector<float> row(d, 0.0f);
    if (init == TagInit::mean_of_tags) {
      if (tags_.count == 0) throw IllegalState("mean_of_tags needs at least one tag");
      std::vector<double> acc(d, 0.0);
      for (std::size_t t = 0; t < tags_.count; ++t)
        for (std::size_t j = 0; j < d; ++j) acc[j] += old(tags_.token(t), j);
      for (std::size_t j = 0; j < d; ++j)
        row[j] = static_cast<float>(acc[j] / static_cast<double>(tags_.count));
    } else if (sigma > 0.0) {
      if (!rng) throw InvalidArgument("gaussian tag init needs an rng");
      std::normal_distribution<double> normal(0.0, sigma);
      for (auto& v : row) v = static_cast<float>(normal(*rng));
    }
    std::vector<float> data(old.data().begin(), old.data().end());
    data.insert(data.end(), row.begin(), row.end());
    const bool trainable = embedding_.trainable();
    embedding_ = Param(Tensor<float>({old.rows() + 1, d}, std::move(data)), trainable);
    ++tags_.count;
    ++cfg_.num_language_tags;
    return TagIndex{tags_.count - 1};
  }

  void set_tag_row(TagIndex tag, std::span<const float> values) {
    check_tag(tag);
    if (values.size() != cfg_.d_model) throw InvalidArgument("set_tag_row: wrong length");
    auto row = embedding_.mutable_value().row(tags_.token(tag.value));
    std::copy(values.begin(), values.end(), row.begin());
  }

  // ---- parameters ----------------------------------------------------------

  std::vector<std::pair<std::string, Param*>> named_parameters() {
    return collect_parameters<Param>(*this);
  }
  std::vector<std::pair<std::string, const Param*>> named_parameters() const {
    return collect_parameters<const Param>(*this);
  }

  std::vector<Param*> parameters() {
    std::vector<Param*> out;
    for (auto& [name, p] : named_parameters()) out.push_back(p);
    return out;
  }

  void set_trainable(bool on) {
    for (auto* p : parameters()) p->set_trainable(on);
  }

  /// FNV-1a over every parameter's bytes, in a fixed order.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, p] : named_parameters())
      for (float v : p->value().data()) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int b = 0; b < 4; ++b) {
          h ^= (bits >> (8 * b)) & 0xffu;
          h *= 0x100000001b3ULL;
        }
      }
    return h;
  }

  // ---- adapters --------------------------------------------------------------

  /// Decoder attention and feed-forward matrices; the encoder is never adapted.
  std::vector<nn::Linear*> adaptable_layers() {
    std::vector<nn::Linear*> out;
    for (auto& l : layers_)
      for (auto* lin : l.adaptable()) out.push_back(lin);
    return out;
  }

  bool has_adapters() const {
    for (const auto& l : layers_)
      if (l.ffn_in.adapter) return true;
    return false;
  }

  // ---- checkpoints -------------------------------------------------------

  /// Directory of LBT1 tensors plus config.json with shapes and the tag range.
  /// Adapters, if attached, are merged into the saved weights.
  void save(const std::filesystem::path& dir) const {
    if (has_adapters()) {
      TinyASR merged = *this;
      for (auto* l : merged.adaptable_layers()) l->merge_adapter();
      merged.save(dir);
      return;
    }
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& [name, p] : named_parameters()) {
      lbt::write(dir / (name + ".lbt"), p->value());
      tensors[name] = p->shape();
    }
    nlohmann::json cfg = {{"model", cfg_},
                          {"tag_range", {{"first", tags_.first}, {"count", tags_.count}}},
                          {"tensors", tensors}};
    std::ofstream out(dir / "config.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "config.json").string());
    out << cfg.dump(2) << '\n';
  }

  static TinyASR load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "config.json");
    if (!in) throw IoError("missing checkpoint config " + (dir / "config.json").string());
    nlohmann::json cfg;
    try {
      cfg = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError((dir / "config.json").string() + ": " + e.what());
    }
    TinyASR m(cfg.at("model").get<ModelConfig>(), 0);
    const std::size_t count = cfg.at("tag_range").at("count").get<std::size_t>();
    while (m.tags_.count < count) m.add_language_tag(TagInit::gaussian);
    if (m.tags_.first != cfg.at("tag_range").at("first").get<std::size_t>())
      throw ParseError("checkpoint tag_range.first disagrees with model config");
    for (auto& [name, p] : m.named_parameters()) {
      Tensor<float> t = lbt::read(dir / (name + ".lbt"));
      if (t.shape() != p->shape())
        throw ParseError("checkpoint tensor " + name + " has shape " +
                         shape_string(t.shape()) + ", expected " +
                         shape_string(p->shape()));
      p->mutable_value() = std::move(t);
    }
    return m;
  }

 private:
  void check_tag(TagIndex tag) const {
    if (tag.value >= tags_.count)
      throw InvalidArgument("tag index " + std::to_string(tag.value) +
                            " outside tag range of " + std::to_string(tags_.count));
  }

  static Var as_row(const Var& v) {
    if (v.value().rank() == 2 && v.rows() == 1) return v;
    // Reshape a flat vector into a [1 x d] row; gradient passes straight through.
    return ad::concat_rows<float>({v});
  }

  template <class P, class Self>
  static std::vector<std::pair<std::string, P*>> collect_parameters(Self& self) {
    std::vector<std::pair<std::string, P*>> out;
    auto linear = [&](const std::string& p, auto& l) {
      out.emplace_back(p + ".weight", &l.weight);
      out.emplace_back(p + ".bias", &l.bias);
    };
    auto norm = [&](const std::string& p, auto& n) {
      out.emplace_back(p + ".gain", &n.gain);
      out.emplace_back(p + ".bias", &n.bias);
    };
    auto attention = [&](const std::string& p, auto& a) {
      linear(p + ".query", a.query);
      linear(p + ".key", a.key);
      linear(p + ".value", a.value);
      linear(p + ".output", a.output);
    };
    out.emplace_back("embedding", &self.embedding_);
    linear("encoder.input", self.enc_in_);
    norm("encoder.attn_norm", self.enc_attn_norm_);
    attention("encoder.attn", self.enc_attn_);
    norm("encoder.out_norm", self.enc_out_norm_);
    for (std::size_t i = 0; i < self.layers_.size(); ++i) {
      const std::string p = "decoder." + std::to_string(i);
      auto& l = self.layers_[i];
      norm(p + ".self_norm", l.self_norm);
      attention(p + ".self_attn", l.self_attn);
      norm(p + ".cross_norm", l.cross_norm);
      attention(p + ".cross_attn", l.cross_attn);
      norm(p + ".ffn_norm", l.ffn_norm);
      linear(p + ".ffn_in", l.ffn_in);
      linear(p + ".ffn_out", l.ffn_out);
    }
    norm("final_norm", self.final_norm_);
    return out;
  }

  ModelConfig cfg_;
  TagRange tags_;
  Param embedding_;
  nn::Linear enc_in_;
  nn::LayerNorm enc_attn_norm_;
  nn::Attention enc_attn_;
  nn::LayerNorm enc_out_norm_;
  std::vector<nn::DecoderLayer> layers_;
  nn::LayerNorm final_norm_;
};

}  // namespace lemb
