// SPDX-License-Identifier: Apache-2.0
#pragma once

// Zero-shot evaluation, the method x seed experiment matrix and its report.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lemb/corpus.hpp"
#include "lemb/error.hpp"
#include "lemb/langembed.hpp"
#include "lemb/metrics.hpp"
#include "lemb/model.hpp"
#include "lemb/trainer.hpp"

namespace lemb {

enum class Setting { zero_shot, fine_tuning };

inline std::string_view to_string(Setting s) {
  return s == Setting::zero_shot ? "zero_shot" : "fine_tuning";
}

inline Setting parse_setting(std::string_view s) {
  if (s == "zero_shot") return Setting::zero_shot;
  if (s == "fine_tuning") return Setting::fine_tuning;
  throw InvalidArgument("unknown setting '" + std::string(s) + "'");
}

/// Decodes every utterance with the language vector chosen by `language_for`
/// and accumulates corpus-level CER/WER.
inline MetricsResult evaluate_corpora(
    const TinyASR& model, std::span<const LanguageCorpus> corpora,
    const std::function<LanguageChoice(const LanguageCorpus&, const Utterance&)>& language_for,
    std::size_t word_size = 3) {
  ErrorAccumulator acc(word_size);
  for (const auto& c : corpora)
    for (const auto& u : c.utterances)
      acc.add(u.transcript, model.greedy_decode(u.features, language_for(c, u)));
  return acc.result();
}

/// Zero-shot decoding with frozen parameters. Default takes the argmax tag
/// per utterance; CorpusWS averages distributions over the evaluated corpus
/// itself; UtteranceWS uses each utterance's own distribution.
inline MetricsResult zero_shot_eval(const TinyASR& model,
                                    std::span<const LanguageCorpus> corpora,
                                    FineTuneMethod method, std::size_t word_size = 3) {
  using M = FineTuneMethod;
  if (!traits(method).zero_shot)
    throw InvalidArgument("method " + std::string(to_string(method)) +
                          " is not a zero-shot method");
  const EmbeddingTable table = model.embedding_table();
  switch (method) {
    case M::Default:
      return evaluate_corpora(
          model, corpora,
          [&](const LanguageCorpus&, const Utterance& u) -> LanguageChoice {
            return argmax_language(model.language_distribution(u.features));
          },
          word_size);
    case M::CorpusWS: {
      std::map<std::string, WeightedEmbedding> per_language;
      for (const auto& c : corpora)
        per_language[c.lang_id] =
            corpus_ws_embedding(corpus_distributions(model, c.utterances), table);
      return evaluate_corpora(
          model, corpora,
          [&](const LanguageCorpus& c, const Utterance&) -> LanguageChoice {
            return per_language.at(c.lang_id);
          },
          word_size);
    }
    default:
      return evaluate_corpora(
          model, corpora,
          [&](const LanguageCorpus&, const Utterance& u) -> LanguageChoice {
            return utterance_ws_embedding(model.language_distribution(u.features), table);
          },
          word_size);
  }
}

inline MetricsResult evaluate_finetuned(const FineTuneResult& ft,
                                        std::span<const LanguageCorpus> corpora,
                                        std::size_t word_size = 3) {
  return evaluate_corpora(
      ft.model, corpora,
      [&](const LanguageCorpus& c, const Utterance& u) -> LanguageChoice {
        return ft.inference.at(c.lang_id)(u);
      },
      word_size);
}

// ---------------------------------------------------------------------------
// Report

struct ExperimentRow {
  Setting setting = Setting::zero_shot;
  std::string method;  // display name
  bool trainable_embedding = false;
  bool predictor = false;
  bool applied_ft = false;
  bool applied_inf = false;
  double cer_mean = 0.0;
  std::optional<double> cer_std;
  double wer_mean = 0.0;
  std::optional<double> wer_std;
  bool best_cer = false;
  bool best_wer = false;
  std::vector<MetricsResult> runs;

  friend bool operator==(const ExperimentRow&, const ExperimentRow&) = default;
};

struct ExperimentReport {
  std::vector<ExperimentRow> rows;
  std::size_t word_size = 3;

  const ExperimentRow* find(Setting s, std::string_view method) const {
    for (const auto& r : rows)
      if (r.setting == s && r.method == method) return &r;
    return nullptr;
  }

  friend bool operator==(const ExperimentReport&, const ExperimentReport&) = default;
};

/// Sample standard deviation; absent for fewer than two runs.
inline std::optional<double> sample_std(std::span<const double> xs) {
  if (xs.size() < 2) return std::nullopt;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

inline ExperimentRow make_row(Setting setting, FineTuneMethod method,
                              std::vector<MetricsResult> runs) {
  const MethodTraits t = setting == Setting::zero_shot ? zero_shot_traits(method)
                                                       : traits(method);
  ExperimentRow row;
  row.setting = setting;
  row.method = std::string(t.display);
  row.trainable_embedding = t.trainable_embedding;
  row.predictor = t.predictor;
  row.applied_ft = t.applied_ft;
  row.applied_inf = t.applied_inf;
  std::vector<double> c, w;
  for (const auto& r : runs) {
    c.push_back(r.cer);
    w.push_back(r.wer);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  row.cer_mean = mean(c);
  row.wer_mean = mean(w);
  row.cer_std = sample_std(c);
  row.wer_std = sample_std(w);
  row.runs = std::move(runs);
  return row;
}

/// Flags the lowest cer_mean and wer_mean inside each setting block.
inline void mark_best(ExperimentReport& report) {
  for (Setting s : {Setting::zero_shot, Setting::fine_tuning}) {
    double best_c = std::numeric_limits<double>::infinity();
    double best_w = best_c;
    for (const auto& r : report.rows)
      if (r.setting == s) {
        best_c = std::min(best_c, r.cer_mean);
        best_w = std::min(best_w, r.wer_mean);
      }
    for (auto& r : report.rows)
      if (r.setting == s) {
        r.best_cer = r.cer_mean == best_c;
        r.best_wer = r.wer_mean == best_w;
      }
  }
}

struct MatrixEntry {
  Setting setting;
  FineTuneMethod method;

  friend bool operator==(const MatrixEntry&, const MatrixEntry&) = default;
};

/// The eleven rows of the result table: three zero-shot, eight fine-tuning.
inline std::vector<MatrixEntry> default_matrix() {
  using M = FineTuneMethod;
  return {{Setting::zero_shot, M::Default},
          {Setting::zero_shot, M::CorpusWS},
          {Setting::zero_shot, M::UtteranceWS},
          {Setting::fine_tuning, M::Baseline},
          {Setting::fine_tuning, M::CorpusWS},
          {Setting::fine_tuning, M::BaselineThenCorpusWS},
          {Setting::fine_tuning, M::UtteranceWS},
          {Setting::fine_tuning, M::BaselineThenUtteranceWS},
          {Setting::fine_tuning, M::ParamCorpusWS},
          {Setting::fine_tuning, M::PredictorCorpusWS},
          {Setting::fine_tuning, M::PredictorUtteranceWS}};
}

/// Parses "zero_shot:corpus_ws" / "fine_tuning:baseline". A bare method name
/// selects fine-tuning, except for "default" which is zero-shot only.
inline MatrixEntry parse_matrix_entry(std::string_view spec) {
  const auto colon = spec.find(':');
  MatrixEntry e{};
  if (colon == std::string_view::npos) {
    e.method = parse_method(spec);
    e.setting = traits(e.method).fine_tuning ? Setting::fine_tuning : Setting::zero_shot;
  } else {
    e.setting = parse_setting(spec.substr(0, colon));
    e.method = parse_method(spec.substr(colon + 1));
  }
  const auto t = traits(e.method);
  if (e.setting == Setting::zero_shot ? !t.zero_shot : !t.fine_tuning)
    throw InvalidArgument("method " + std::string(t.key) + " is not valid in setting " +
                          std::string(to_string(e.setting)));
  return e;
}

/// Everything the matrix needs: benchmark, pretrained recognizer and (for
/// predictor rows) the trained predictors.
struct PipelineState {
  Benchmark benchmark;
  TinyASR pretrained;
  std::optional<PredictorParams> corpus_predictor;     // trained on corpus-wise inputs
  std::optional<PredictorParams> utterance_predictor;  // trained on utterance-wise inputs
};

struct ExperimentConfig {
  TrainConfig finetune;
  AdapterConfig adapters;
  std::size_t word_size = 3;
};

inline std::vector<LanguageCorpus> unseen_corpora(const Benchmark& bench, bool train) {
  std::vector<LanguageCorpus> out;
  for (const auto& l : bench.unseen_languages) {
    const auto& split = bench.splits.at(l.lang_id);
    out.push_back({l.lang_id, train ? std::span<const Utterance>(split.train)
                                    : std::span<const Utterance>(split.test)});
  }
  return out;
}

inline std::vector<TaggedCorpus> seen_corpora(const Benchmark& bench, bool train) {
  std::vector<TaggedCorpus> out;
  for (std::size_t i = 0; i < bench.seen_languages.size(); ++i) {
    const auto& split = bench.splits.at(bench.seen_languages[i].lang_id);
    out.push_back({TagIndex{i}, train ? std::span<const Utterance>(split.train)
                                      : std::span<const Utterance>(split.test)});
  }
  return out;
}

/// Fine-tunes one method with one seed and evaluates on the unseen test split.
inline MetricsResult run_finetune_cell(const PipelineState& state, FineTuneMethod method,
                                       std::uint64_t seed, const ExperimentConfig& cfg) {
  const auto train = unseen_corpora(state.benchmark, true);
  const auto test = unseen_corpora(state.benchmark, false);
  TrainConfig tc = cfg.finetune;
  tc.seed = seed;
  const PredictorParams* predictor = nullptr;
  if (method == FineTuneMethod::PredictorCorpusWS && state.corpus_predictor)
    predictor = &*state.corpus_predictor;
  if (method == FineTuneMethod::PredictorUtteranceWS && state.utterance_predictor)
    predictor = &*state.utterance_predictor;
  const auto ft = finetune(state.pretrained, train, method, tc, cfg.adapters, predictor);
  return evaluate_finetuned(ft, test, cfg.word_size);
}

/// Runs every (entry x seed). Zero-shot rows do not depend on the seed and
/// run once; fine-tuning rows aggregate mean and sample std over seeds.
inline ExperimentReport run_experiment_matrix(const PipelineState& state,
                                              std::span<const MatrixEntry> entries,
                                              std::span<const std::uint64_t> seeds,
                                              const ExperimentConfig& cfg) {
  if (seeds.empty()) throw InvalidArgument("run_experiment_matrix: no seeds");
  ExperimentReport report;
  report.word_size = cfg.word_size;
  const auto test = unseen_corpora(state.benchmark, false);
  for (const auto& e : entries) {
    std::vector<MetricsResult> runs;
    if (e.setting == Setting::zero_shot) {
      runs.push_back(zero_shot_eval(state.pretrained, test, e.method, cfg.word_size));
    } else {
      for (std::uint64_t seed : seeds)
        runs.push_back(run_finetune_cell(state, e.method, seed, cfg));
    }
    report.rows.push_back(make_row(e.setting, e.method, std::move(runs)));
  }
  mark_best(report);
  return report;
}

// ---------------------------------------------------------------------------
// Emission

inline constexpr std::string_view kCsvHeader =
    "setting,method,trainable_embedding,predictor,applied_ft,applied_inf,"
    "cer_mean,cer_std,wer_mean,wer_std";

namespace detail {
inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}
inline std::string fmt_percent(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v * 100.0 << "%";
  return os.str();
}
}  // namespace detail

inline std::string to_csv(const ExperimentReport& report) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& r : report.rows) {
    out += std::string(to_string(r.setting)) + ',' + r.method + ',' +
           (r.trainable_embedding ? "true" : "false") + ',' +
           (r.predictor ? "true" : "false") + ',' + (r.applied_ft ? "true" : "false") +
           ',' + (r.applied_inf ? "true" : "false") + ',' +
           detail::fmt_double(r.cer_mean) + ',' +
           (r.cer_std ? detail::fmt_double(*r.cer_std) : "") + ',' +
           detail::fmt_double(r.wer_mean) + ',' +
           (r.wer_std ? detail::fmt_double(*r.wer_std) : "") + '\n';
  }
  return out;
}

/// Inverse of to_csv for the ten emitted columns; per-run details and best
/// flags are recomputed, not parsed.
inline ExperimentReport parse_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw ParseError("report CSV header mismatch", 1);
  ++line_no;
  ExperimentReport report;
  auto parse_bool = [&](const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ParseError("expected true/false, got '" + s + "'", line_no);
  };
  auto parse_num = [&](const std::string& s) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ParseError("expected a number, got '" + s + "'", line_no);
    }
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 10) throw ParseError("expected 10 columns", line_no);
    ExperimentRow r;
    r.setting = parse_setting(f[0]);
    r.method = f[1];
    r.trainable_embedding = parse_bool(f[2]);
    r.predictor = parse_bool(f[3]);
    r.applied_ft = parse_bool(f[4]);
    r.applied_inf = parse_bool(f[5]);
    r.cer_mean = parse_num(f[6]);
    if (!f[7].empty()) r.cer_std = parse_num(f[7]);
    r.wer_mean = parse_num(f[8]);
    if (!f[9].empty()) r.wer_std = parse_num(f[9]);
    report.rows.push_back(std::move(r));
  }
  mark_best(report);
  return report;
}

inline std::string to_markdown(const ExperimentReport& report) {
  std::ostringstream os;
  os << "CER counts token edits; WER counts edits over words of " << report.word_size
     << " consecutive tokens. Best CER and WER per setting in bold.\n\n";
  os << "| Setting | Method | Trainable Embedding | Predictor | Applied: Fine-tuning "
        "| Applied: Inference | CER | WER |\n";
  os << "|---|---|---|---|---|---|---|---|\n";
  auto mark = [](bool b) { return b ? "yes" : "no"; };
  auto cell = [](double mean, const std::optional<double>& sd, bool best) {
    std::string s = detail::fmt_percent(mean);
    if (sd) s += " ± " + detail::fmt_percent(*sd);
    return best ? "**" + s + "**" : s;
  };
  for (const auto& r : report.rows)
    os << "| " << (r.setting == Setting::zero_shot ? "Zero-shot" : "Fine-tuning") << " | "
       << r.method << " | " << mark(r.trainable_embedding) << " | " << mark(r.predictor)
       << " | " << mark(r.applied_ft) << " | " << mark(r.applied_inf) << " | "
       << cell(r.cer_mean, r.cer_std, r.best_cer) << " | "
       << cell(r.wer_mean, r.wer_std, r.best_wer) << " |\n";
  return os.str();
}

enum class ReportFormat { csv, markdown };

inline void emit_report(const ExperimentReport& report, ReportFormat format,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << (format == ReportFormat::csv ? to_csv(report) : to_markdown(report));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace lemb
