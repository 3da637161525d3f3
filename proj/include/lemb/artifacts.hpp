// SPDX-License-Identifier: Apache-2.0
#pragma once

// On-disk artifacts of a run directory.
//
//   config.json                   resolved RunConfig
//   data/benchmark.json           language specs and split manifests
//   data/<lang>/{train,test}.jsonl + features/*.lbt
//   model/                        pretrained checkpoint (LBT1 tensors)
//   pretrain/metrics.jsonl        per-epoch loss, then held-out summary
//   langdist/<lang>.<split>.jsonl one distribution per utterance
//   embed/<mode>/<lang>.<split>.jsonl
//   predictor/{corpus,utterance}/ predictor weights; predictor/quality.json
//   finetune/<method>/run-<n>/    merged model, inference.json, metrics.jsonl
//   eval/<setting>.<method>.json  metrics of one evaluated method
//   report/report.{csv,md}

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lemb/corpus.hpp"
#include "lemb/embedding_types.hpp"
#include "lemb/error.hpp"
#include "lemb/tensor.hpp"

namespace lemb {

/// Thrown when a subcommand needs an artifact another subcommand produces.
class MissingArtifact : public Error {
 public:
  MissingArtifact(const std::filesystem::path& path, const std::string& producer)
      : Error("missing artifact " + path.string() + "; run `" + producer + "` first") {}
};

inline void require_artifact(const std::filesystem::path& path, const std::string& producer) {
  if (!std::filesystem::exists(path)) throw MissingArtifact(path, producer);
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_jsonl(const std::filesystem::path& path,
                        const std::vector<nlohmann::json>& lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : lines) out << l.dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), n);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark

namespace detail {

inline nlohmann::json spec_to_json(const LanguageSpec& s) {
  return {{"lang_id", s.lang_id},
          {"family_id", s.family_id},
          {"token_unigram", s.token_unigram},
          {"basis_shape", s.acoustic_basis.shape()},
          {"acoustic_basis", s.acoustic_basis.values()},
          {"family_offset", s.family_offset},
          {"noise_sigma", s.noise_sigma}};
}

inline LanguageSpec spec_from_json(const nlohmann::json& j) {
  LanguageSpec s;
  j.at("lang_id").get_to(s.lang_id);
  j.at("family_id").get_to(s.family_id);
  j.at("token_unigram").get_to(s.token_unigram);
  s.acoustic_basis = Tensor<float>(j.at("basis_shape").get<Shape>(),
                                   j.at("acoustic_basis").get<std::vector<float>>());
  j.at("family_offset").get_to(s.family_offset);
  j.at("noise_sigma").get_to(s.noise_sigma);
  return s;
}

}  // namespace detail

inline void save_benchmark(const Benchmark& b, const std::filesystem::path& dir) {
  ensure_dir(dir);
  nlohmann::json seen = nlohmann::json::array(), unseen = nlohmann::json::array();
  for (const auto& s : b.seen_languages) seen.push_back(detail::spec_to_json(s));
  for (const auto& s : b.unseen_languages) unseen.push_back(detail::spec_to_json(s));
  for (const auto& [id, split] : b.splits) {
    save_manifest(split.train, dir / id / "train.jsonl");
    save_manifest(split.test, dir / id / "test.jsonl");
  }
  const auto& o = b.options;
  write_json(dir / "benchmark.json",
             {{"seed", b.seed},
              {"options",
               {{"transcript_vocab", o.transcript_vocab},
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
              {"seen", seen},
              {"unseen", unseen}});
}

inline Benchmark load_benchmark(const std::filesystem::path& dir) {
  const auto j = read_json(dir / "benchmark.json");
  Benchmark b;
  try {
    j.at("seed").get_to(b.seed);
    const auto& o = j.at("options");
    auto& opt = b.options;
    o.at("transcript_vocab").get_to(opt.transcript_vocab);
    o.at("feature_dim").get_to(opt.feature_dim);
    o.at("min_length").get_to(opt.min_length);
    o.at("max_length").get_to(opt.max_length);
    o.at("offset_scale").get_to(opt.offset_scale);
    o.at("jitter_sigma").get_to(opt.jitter_sigma);
    o.at("family_swaps").get_to(opt.family_swaps);
    o.at("swaps_per_language").get_to(opt.swaps_per_language);
    o.at("noise_sigma").get_to(opt.noise_sigma);
    o.at("family_unigram_scale").get_to(opt.family_unigram_scale);
    o.at("language_unigram_scale").get_to(opt.language_unigram_scale);
    for (const auto& s : j.at("seen")) b.seen_languages.push_back(detail::spec_from_json(s));
    for (const auto& s : j.at("unseen"))
      b.unseen_languages.push_back(detail::spec_from_json(s));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((dir / "benchmark.json").string() + ": " + e.what());
  }
  auto load = [&](const LanguageSpec& s) {
    b.splits[s.lang_id] = {load_manifest(dir / s.lang_id / "train.jsonl"),
                           load_manifest(dir / s.lang_id / "test.jsonl")};
  };
  for (const auto& s : b.seen_languages) load(s);
  for (const auto& s : b.unseen_languages) load(s);
  return b;
}

// ---------------------------------------------------------------------------
// Distributions and embeddings

inline nlohmann::json to_json(const LangDistribution& d) { return d.probs; }

inline LangDistribution distribution_from_json(const nlohmann::json& j) {
  LangDistribution d;
  d.probs = j.get<std::vector<double>>();
  return d;
}

inline nlohmann::json to_json(const WeightedEmbedding& e) {
  return {{"provenance", std::string(to_string(e.provenance))}, {"vector", e.vector}};
}

inline WeightedEmbedding embedding_from_json(const nlohmann::json& j) {
  WeightedEmbedding e;
  j.at("vector").get_to(e.vector);
  const auto p = j.at("provenance").get<std::string>();
  for (Provenance c : {Provenance::tag, Provenance::utterance_ws, Provenance::corpus_ws,
                       Provenance::parameterized, Provenance::predicted})
    if (p == to_string(c)) e.provenance = c;
  return e;
}

}  // namespace lemb
