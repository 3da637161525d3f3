// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic language families and utterance manifests.
//
// All families draw frames from one shared set of acoustic rows. A family's
// prototype basis assigns those rows to tokens through its own permutation
// and adds a family offset; each member language swaps a few more token rows
// and may add a per-row jitter. Members of a family therefore sound alike
// without being interchangeable, and a single frame says little about which
// family it came from. Transcripts draw from a shared vocabulary with a
// per-language unigram distribution.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lemb/error.hpp"
#include "lemb/lbt.hpp"
#include "lemb/math.hpp"
#include "lemb/random.hpp"
#include "lemb/tensor.hpp"

namespace lemb {

struct LanguageSpec {
  std::string lang_id;
  std::string family_id;
  std::vector<double> token_unigram;  // over the transcript vocabulary
  Tensor<float> acoustic_basis;       // [V x F]
  std::vector<float> family_offset;   // [F], shared within a family
  double noise_sigma = 0.0;

  std::size_t vocab_size() const { return token_unigram.size(); }
  std::size_t feature_dim() const { return family_offset.size(); }

  friend bool operator==(const LanguageSpec&, const LanguageSpec&) = default;
};

struct Utterance {
  std::string id;
  Tensor<float> features;            // [T x F], one frame per token
  std::vector<std::size_t> transcript;
  std::string lang_id;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Split {
  std::vector<Utterance> train;
  std::vector<Utterance> test;

  friend bool operator==(const Split&, const Split&) = default;
};

/// Knobs for the synthetic generator. Defaults are modeling choices, not
/// measurements of any real language set.
struct BenchmarkOptions {
  std::size_t transcript_vocab = 16;
  std::size_t feature_dim = 16;
  std::size_t min_length = 6;
  std::size_t max_length = 12;
  double offset_scale = 0.1;      // family offset ~ N(0, offset_scale)
  double jitter_sigma = 0.0;      // per-language perturbation of basis rows
  std::size_t family_swaps = 12;  // row swaps turning the shared rows into a family prototype
  std::size_t swaps_per_language = 3;
  double noise_sigma = 0.25;      // per-frame observation noise
  double family_unigram_scale = 1.0;
  double language_unigram_scale = 2.0;

  friend bool operator==(const BenchmarkOptions&, const BenchmarkOptions&) = default;
};

struct Benchmark {
  std::vector<LanguageSpec> seen_languages;
  std::vector<LanguageSpec> unseen_languages;
  std::map<std::string, Split> splits;
  std::uint64_t seed = 0;
  BenchmarkOptions options;

  const LanguageSpec& language(const std::string& id) const {
    for (const auto& l : seen_languages)
      if (l.lang_id == id) return l;
    for (const auto& l : unseen_languages)
      if (l.lang_id == id) return l;
    throw InvalidArgument("unknown language " + id);
  }

  friend bool operator==(const Benchmark&, const Benchmark&) = default;
};

/// Draws one utterance. features[t] = basis[token_t] + offset + N(0, sigma).
inline Utterance synth_utterance(const LanguageSpec& spec, std::size_t length,
                                 Rng& rng, std::string id = {}) {
  if (length == 0) throw InvalidArgument("synth_utterance: length must be >= 1");
  const std::size_t F = spec.feature_dim();
  std::discrete_distribution<std::size_t> token_dist(spec.token_unigram.begin(),
                                                     spec.token_unigram.end());
  std::normal_distribution<double> noise(0.0, 1.0);
  Utterance u;
  u.id = std::move(id);
  u.lang_id = spec.lang_id;
  u.features = Tensor<float>::matrix(length, F);
  u.transcript.resize(length);
  for (std::size_t t = 0; t < length; ++t) {
    const std::size_t tok = token_dist(rng);
    u.transcript[t] = tok;
    for (std::size_t f = 0; f < F; ++f) {
      double v = static_cast<double>(spec.acoustic_basis(tok, f)) + spec.family_offset[f];
      if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise(rng);
      u.features(t, f) = static_cast<float>(v);
    }
  }
  return u;
}

/// Builds num_families families; in each, the first seen_per_family members
/// are seen and the remaining unseen_per_family members are unseen.
inline Benchmark generate_benchmark(std::size_t num_families,
                                    std::size_t seen_per_family,
                                    std::size_t unseen_per_family,
                                    std::size_t utterances_per_split,
                                    std::uint64_t seed,
                                    const BenchmarkOptions& opt = {}) {
  if (num_families == 0 || seen_per_family == 0 || unseen_per_family == 0 ||
      utterances_per_split == 0)
    throw InvalidArgument("generate_benchmark: all counts must be >= 1");
  if (opt.transcript_vocab < 2 || opt.feature_dim == 0 || opt.min_length == 0 ||
      opt.max_length < opt.min_length)
    throw InvalidArgument("generate_benchmark: invalid options");

  const std::size_t V = opt.transcript_vocab, F = opt.feature_dim;
  Benchmark bench;
  bench.seed = seed;
  bench.options = opt;
  Rng rng(derive_seed(seed, "benchmark"));
  std::normal_distribution<double> normal(0.0, 1.0);

  auto random_swaps = [&](std::vector<std::size_t>& perm, std::size_t count) {
    std::uniform_int_distribution<std::size_t> pick(0, V - 1);
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t a = pick(rng);
      std::size_t b = pick(rng);
      if (b == a) b = (a + 1) % V;
      std::swap(perm[a], perm[b]);
    }
  };

  Tensor<float> shared = Tensor<float>::matrix(V, F);
  for (auto& v : shared.data()) v = static_cast<float>(normal(rng));

  for (std::size_t f = 0; f < num_families; ++f) {
    const std::string family = "fam" + std::to_string(f);
    std::vector<std::size_t> family_perm(V);
    std::iota(family_perm.begin(), family_perm.end(), std::size_t{0});
    random_swaps(family_perm, opt.family_swaps);
    std::vector<float> offset(F);
    for (auto& v : offset) v = static_cast<float>(opt.offset_scale * normal(rng));
    std::vector<double> family_logits(V);
    for (auto& v : family_logits) v = opt.family_unigram_scale * normal(rng);

    for (std::size_t k = 0; k < seen_per_family + unseen_per_family; ++k) {
      LanguageSpec spec;
      spec.lang_id = family + "-lang" + std::to_string(k);
      spec.family_id = family;
      spec.family_offset = offset;
      spec.noise_sigma = opt.noise_sigma;

      std::vector<std::size_t> perm = family_perm;
      random_swaps(perm, opt.swaps_per_language);
      spec.acoustic_basis = Tensor<float>::matrix(V, F);
      for (std::size_t tok = 0; tok < V; ++tok)
        for (std::size_t d = 0; d < F; ++d)
          spec.acoustic_basis(tok, d) = static_cast<float>(
              shared(perm[tok], d) + opt.jitter_sigma * normal(rng));

      std::vector<double> logits(V);
      for (std::size_t i = 0; i < V; ++i)
        logits[i] = family_logits[i] + opt.language_unigram_scale * normal(rng);
      spec.token_unigram = softmax(logits);

      (k < seen_per_family ? bench.seen_languages : bench.unseen_languages)
          .push_back(std::move(spec));
    }
  }

  std::uniform_int_distribution<std::size_t> length(opt.min_length, opt.max_length);
  auto fill = [&](const LanguageSpec& spec) {
    Split split;
    for (const char* name : {"train", "test"}) {
      auto& dst = std::string(name) == "train" ? split.train : split.test;
      for (std::size_t i = 0; i < utterances_per_split; ++i)
        dst.push_back(synth_utterance(
            spec, length(rng), rng,
            spec.lang_id + "-" + name + "-" + std::to_string(i)));
    }
    bench.splits.emplace(spec.lang_id, std::move(split));
  };
  for (const auto& spec : bench.seen_languages) fill(spec);
  for (const auto& spec : bench.unseen_languages) fill(spec);
  return bench;
}

/// Mean pairwise cosine similarity of flattened acoustic bases, split into
/// same-family and cross-family pairs.
struct FamilySimilarity {
  double within = 0.0;
  double across = 0.0;
};

inline FamilySimilarity family_similarity(const Benchmark& bench) {
  std::vector<const LanguageSpec*> all;
  for (const auto& l : bench.seen_languages) all.push_back(&l);
  for (const auto& l : bench.unseen_languages) all.push_back(&l);
  double within = 0.0, across = 0.0;
  std::size_t nw = 0, na = 0;
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      const double c = cosine_similarity(all[i]->acoustic_basis.data(),
                                         all[j]->acoustic_basis.data());
      if (all[i]->family_id == all[j]->family_id) {
        within += c;
        ++nw;
      } else {
        across += c;
        ++na;
      }
    }
  return {nw ? within / nw : 0.0, na ? across / na : 0.0};
}

// ---------------------------------------------------------------------------
// Manifests: one JSON object per line, {id, lang, text, features_file}.
// features_file is relative to the manifest's directory.

inline std::string transcript_text(const std::vector<std::size_t>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(tokens[i]);
  }
  return out;
}

inline std::vector<std::size_t> parse_transcript(const std::string& text) {
  std::vector<std::size_t> out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(word, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != word.size() || word.front() == '-')
      throw ParseError("transcript token '" + word + "' is not an index");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

inline void save_manifest(const std::vector<Utterance>& utterances,
                          const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  const fs::path feature_dir = dir / "features";
  std::error_code ec;
  fs::create_directories(feature_dir, ec);
  if (ec) throw IoError("cannot create " + feature_dir.string() + ": " + ec.message());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& u : utterances) {
    const std::string rel = "features/" + u.id + ".lbt";
    lbt::write(dir / rel, u.features);
    nlohmann::json line = {{"id", u.id},
                           {"lang", u.lang_id},
                           {"text", transcript_text(u.transcript)},
                           {"features_file", rel}};
    out << line.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<Utterance> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  const auto dir = path.has_parent_path() ? path.parent_path()
                                          : std::filesystem::path(".");
  std::vector<Utterance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": invalid JSON: " + e.what(), line_no);
    }
    if (!obj.is_object()) throw ParseError(path.string() + ": not a JSON object", line_no);
    for (const char* key : {"id", "lang", "text", "features_file"})
      if (!obj.contains(key) || !obj[key].is_string())
        throw ParseError(path.string() + ": missing string field \"" +
                             std::string(key) + "\"",
                         line_no);
    Utterance u;
    u.id = obj["id"].get<std::string>();
    u.lang_id = obj["lang"].get<std::string>();
    try {
      u.transcript = parse_transcript(obj["text"].get<std::string>());
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": " + e.what(), line_no);
    }
    u.features = lbt::read(dir / obj["features_file"].get<std::string>());
    if (u.features.rank() != 2)
      throw ParseError(path.string() + ": features tensor must be rank 2", line_no);
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace lemb
