// SPDX-License-Identifier: Apache-2.0
// Command-line driver. Every subcommand reads the run configuration, works
// inside one run directory (--out) and touches only its own artifacts.
//
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lemb/lemb.hpp"

namespace fs = std::filesystem;
using namespace lemb;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out = "run";
};

RunConfig resolve(const Common& c) { return load_run_config(c.config, c.overrides); }

fs::path data_dir(const fs::path& out) { return out / "data"; }
fs::path model_dir(const fs::path& out) { return out / "model"; }
fs::path predictor_dir(const fs::path& out, LooMode m) {
  return out / "predictor" / (m == LooMode::corpus_wise ? "corpus" : "utterance");
}
fs::path finetune_dir(const fs::path& out, FineTuneMethod m, std::uint64_t run) {
  return out / "finetune" / std::string(to_string(m)) / ("run-" + std::to_string(run));
}

Benchmark need_benchmark(const fs::path& out) {
  require_artifact(data_dir(out) / "benchmark.json", "gen-data");
  return load_benchmark(data_dir(out));
}

TinyASR need_model(const fs::path& out) {
  require_artifact(model_dir(out) / "config.json", "pretrain");
  return TinyASR::load(model_dir(out));
}

PredictorParams need_predictor(const fs::path& out, LooMode m) {
  const auto dir = predictor_dir(out, m);
  require_artifact(dir / "predictor.json", "train-predictor");
  return PredictorParams::load(dir);
}

/// Languages and splits covered by distribution/embedding artifacts.
std::vector<std::pair<std::string, bool>> all_corpora(const Benchmark& b) {
  std::vector<std::pair<std::string, bool>> out;
  for (const auto* group : {&b.seen_languages, &b.unseen_languages})
    for (const auto& l : *group)
      for (bool train : {true, false}) out.emplace_back(l.lang_id, train);
  return out;
}

std::string split_name(bool train) { return train ? "train" : "test"; }

nlohmann::json metrics_json(const MetricsResult& m) {
  return {{"cer", m.cer}, {"wer", m.wer}, {"n_utterances", m.n_utterances}};
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& c) {
  const RunConfig cfg = resolve(c);
  const fs::path out(c.out);
  ensure_dir(out);
  save_run_config(cfg, out / "config.json");
  const Benchmark b = make_benchmark(cfg);
  save_benchmark(b, data_dir(out));
  const auto sim = family_similarity(b);
  std::cout << "wrote " << b.seen_languages.size() << " seen and "
            << b.unseen_languages.size() << " unseen languages to " << data_dir(out)
            << " (basis cosine within " << sim.within << ", across " << sim.across << ")\n";
  return 0;
}

int cmd_pretrain(const Common& c) {
  const RunConfig cfg = resolve(c);
  const fs::path out(c.out);
  const Benchmark b = need_benchmark(out);
  auto stage = run_pretrain(cfg, b);
  stage.model.save(model_dir(out));
  ensure_dir(out / "pretrain");
  save_run_config(cfg, out / "pretrain" / "config.json");
  std::vector<nlohmann::json> lines;
  for (const auto& e : stage.report.history)
    lines.push_back({{"epoch", e.epoch}, {"loss", e.loss}});
  const auto& h = stage.report.held_out;
  lines.push_back({{"held_out", {{"tag_accuracy", h.tag_accuracy},
                                 {"cer", h.metrics.cer},
                                 {"wer", h.metrics.wer}}}});
  write_jsonl(out / "pretrain" / "metrics.jsonl", lines);
  std::cout << "held-out seen tag accuracy " << h.tag_accuracy << ", CER " << h.metrics.cer
            << "\n";
  return 0;
}

int cmd_langdist(const Common& c) {
  resolve(c);  // validates the configuration
  const fs::path out(c.out);
  const Benchmark b = need_benchmark(out);
  const TinyASR model = need_model(out);
  ensure_dir(out / "langdist");
  for (const auto& [lang, train] : all_corpora(b)) {
    const auto& split = b.splits.at(lang);
    std::vector<nlohmann::json> lines;
    for (const auto& u : train ? split.train : split.test)
      lines.push_back({{"id", u.id},
                       {"lang", u.lang_id},
                       {"probs", to_json(model.language_distribution(u.features))}});
    write_jsonl(out / "langdist" / (lang + "." + split_name(train) + ".jsonl"), lines);
  }
  std::cout << "wrote language distributions to " << out / "langdist" << "\n";
  return 0;
}

int cmd_embed(const Common& c, const std::string& mode) {
  resolve(c);
  const fs::path out(c.out);
  const Benchmark b = need_benchmark(out);
  const TinyASR model = need_model(out);
  const auto table = model.embedding_table();
  const fs::path dir = out / "embed" / mode;
  ensure_dir(dir);
  for (const auto& [lang, train] : all_corpora(b)) {
    const auto src = out / "langdist" / (lang + "." + split_name(train) + ".jsonl");
    require_artifact(src, "langdist");
    std::vector<LangDistribution> dists;
    std::vector<std::string> ids;
    for (const auto& line : read_jsonl(src)) {
      dists.push_back(distribution_from_json(line.at("probs")));
      ids.push_back(line.at("id").get<std::string>());
    }
    const std::string stem = lang + "." + split_name(train);
    if (mode == "corpus") {
      nlohmann::json j = to_json(corpus_ws_embedding(dists, table));
      j["lang"] = lang;
      j["n_utterances"] = dists.size();
      write_json(dir / (stem + ".json"), j);
    } else {
      std::vector<nlohmann::json> lines;
      for (std::size_t i = 0; i < dists.size(); ++i) {
        nlohmann::json j = to_json(utterance_ws_embedding(dists[i], table));
        j["id"] = ids[i];
        lines.push_back(std::move(j));
      }
      write_jsonl(dir / (stem + ".jsonl"), lines);
    }
  }
  std::cout << "wrote " << mode << "-wise embeddings to " << dir << "\n";
  return 0;
}

int cmd_train_predictor(const Common& c) {
  const RunConfig cfg = resolve(c);
  const fs::path out(c.out);
  const Benchmark b = need_benchmark(out);
  const TinyASR model = need_model(out);
  const auto stage = run_predictors(cfg, b, model);
  auto langs = [](const std::vector<TagIndex>& v) {
    std::vector<std::size_t> o;
    for (auto t : v) o.push_back(t.value);
    return o;
  };
  auto quality = [](const PredictorQuality& q) {
    return nlohmann::json{{"predictor_mse", q.predictor_mse},
                          {"ws_mse", q.ws_mse},
                          {"mean_tag_mse", q.mean_tag_mse},
                          {"examples", q.examples}};
  };
  auto meta = [&](const PredictorTrainResult& r) {
    return nlohmann::json{{"best_epoch", r.best_epoch},
                          {"best_validation_mse", r.best_validation_mse},
                          {"train_languages", langs(stage.train_languages)},
                          {"validation_languages", langs(stage.validation_languages)}};
  };
  stage.corpus.params.save(predictor_dir(out, LooMode::corpus_wise), meta(stage.corpus));
  stage.utterance.params.save(predictor_dir(out, LooMode::utterance_wise),
                              meta(stage.utterance));
  save_run_config(cfg, out / "predictor" / "config.json");
  write_json(out / "predictor" / "quality.json",
             {{"corpus", quality(stage.corpus_quality)},
              {"utterance", quality(stage.utterance_quality)}});
  const auto& q = stage.corpus_quality;
  std::cout << "held-out MSE (corpus-wise): predictor " << q.predictor_mse << ", weighted sum "
            << q.ws_mse << ", mean of tags " << q.mean_tag_mse << "\n";
  return 0;
}

std::optional<PredictorParams> predictor_for(const fs::path& out, FineTuneMethod m) {
  if (m == FineTuneMethod::PredictorCorpusWS) return need_predictor(out, LooMode::corpus_wise);
  if (m == FineTuneMethod::PredictorUtteranceWS)
    return need_predictor(out, LooMode::utterance_wise);
  return std::nullopt;
}

int cmd_finetune(const Common& c, const std::string& method_name, std::uint64_t run) {
  const RunConfig cfg = resolve(c);
  const MatrixEntry entry = parse_matrix_entry("fine_tuning:" + method_name);
  const fs::path out(c.out);
  const Benchmark b = need_benchmark(out);
  const TinyASR model = need_model(out);
  const auto predictor = predictor_for(out, entry.method);
  TrainConfig tc = cfg.finetune.train;
  tc.seed = cfg.finetune_seed(run);
  const auto ft = finetune(model, unseen_corpora(b, true), entry.method, tc,
                           cfg.finetune.adapters, predictor ? &*predictor : nullptr);

  const fs::path dir = finetune_dir(out, entry.method, run);
  ft.model.save(dir / "model");
  save_run_config(cfg, dir / "config.json");
  nlohmann::json inference = nlohmann::json::object();
  for (const auto& [lang, src] : ft.inference) {
    if (src.is_fixed())
      inference[lang] = {{"kind", "fixed"}, {"embedding", to_json(src.fixed_embedding())}};
    else
      inference[lang] = {{"kind", "per_utterance"},
                         {"predictor", entry.method == FineTuneMethod::PredictorUtteranceWS}};
  }
  write_json(dir / "inference.json", {{"method", to_string(entry.method)}, {"languages", inference}});
  std::vector<nlohmann::json> lines;
  for (const auto& e : ft.history) lines.push_back({{"epoch", e.epoch}, {"loss", e.loss}});
  const auto m = evaluate_finetuned(ft, unseen_corpora(b, false), cfg.eval.word_size);
  lines.push_back({{"test", metrics_json(m)}});
  write_jsonl(dir / "metrics.jsonl", lines);
  std::cout << to_string(entry.method) << " run " << run << ": unseen CER " << m.cer
            << ", WER " << m.wer << "\n";
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& spec, std::uint64_t run) {
  const RunConfig cfg = resolve(c);
  const MatrixEntry entry = parse_matrix_entry(spec);
  const fs::path out(c.out);
  const Benchmark b = need_benchmark(out);
  const auto test = unseen_corpora(b, false);
  const auto reference = std::make_shared<const TinyASR>(need_model(out));
  MetricsResult m;
  std::string name =
      std::string(to_string(entry.setting)) + "." + std::string(to_string(entry.method));
  if (entry.setting == Setting::zero_shot) {
    m = zero_shot_eval(*reference, test, entry.method, cfg.eval.word_size);
  } else {
    const fs::path dir = finetune_dir(out, entry.method, run);
    require_artifact(dir / "inference.json",
                     "finetune --method " + std::string(to_string(entry.method)));
    const TinyASR tuned = TinyASR::load(dir / "model");
    const auto inf = read_json(dir / "inference.json").at("languages");
    std::map<std::string, EmbeddingSource> sources;
    for (const auto& [lang, j] : inf.items()) {
      if (j.at("kind") == "fixed") {
        sources[lang] = EmbeddingSource::fixed(embedding_from_json(j.at("embedding")));
      } else {
        std::optional<PredictorParams> p;
        if (j.at("predictor").get<bool>()) p = need_predictor(out, LooMode::utterance_wise);
        sources[lang] = EmbeddingSource::per_utterance(reference, std::move(p));
      }
    }
    m = evaluate_corpora(
        tuned, test,
        [&](const LanguageCorpus& lc, const Utterance& u) -> LanguageChoice {
          return sources.at(lc.lang_id)(u);
        },
        cfg.eval.word_size);
    name += ".run-" + std::to_string(run);
  }
  ensure_dir(out / "eval");
  nlohmann::json j = metrics_json(m);
  j["setting"] = to_string(entry.setting);
  j["method"] = to_string(entry.method);
  write_json(out / "eval" / (name + ".json"), j);
  std::cout << name << ": CER " << m.cer << ", WER " << m.wer << "\n";
  return 0;
}

int cmd_report(const Common& c, std::vector<std::uint64_t> runs) {
  const RunConfig cfg = resolve(c);
  const fs::path out(c.out);
  if (runs.empty()) runs = cfg.eval.seeds;
  PipelineState state{need_benchmark(out), need_model(out),
                      need_predictor(out, LooMode::corpus_wise),
                      need_predictor(out, LooMode::utterance_wise)};
  const auto entries = default_matrix();
  const auto report = run_experiment_matrix(state, entries, finetune_seeds(cfg, runs),
                                            experiment_config(cfg));
  const fs::path dir = out / "report";
  ensure_dir(dir);
  save_run_config(cfg, dir / "config.json");
  emit_report(report, ReportFormat::csv, dir / "report.csv");
  emit_report(report, ReportFormat::markdown, dir / "report.md");
  std::cout << to_markdown(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-embedding testbed for unseen-language recognition"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "run configuration (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--set", common.overrides, "override KEY=VALUE (dotted key)")
        ->take_all()
        ->allow_extra_args(false);
    sub->add_option("--out", common.out, "run directory")->capture_default_str();
  };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark");
  auto* pre = app.add_subcommand("pretrain", "pretrain the recognizer on seen languages");
  auto* ld = app.add_subcommand("langdist", "write per-utterance language distributions");
  auto* emb = app.add_subcommand("embed", "write weighted-sum embeddings");
  auto* tp = app.add_subcommand("train-predictor", "train the embedding predictors");
  auto* ft = app.add_subcommand("finetune", "fine-tune on unseen languages with one method");
  auto* ev = app.add_subcommand("evaluate", "evaluate one method on unseen test data");
  auto* rep = app.add_subcommand("report", "run the experiment matrix and emit the report");
  for (auto* s : {gen, pre, ld, emb, tp, ft, ev, rep}) add_common(s);

  std::string mode;
  emb->add_option("--mode", mode, "utterance or corpus")
      ->required()
      ->check(CLI::IsMember({"utterance", "corpus"}));
  std::string ft_method, ev_method;
  std::uint64_t ft_run = 1, ev_run = 1;
  ft->add_option("--method", ft_method, "fine-tuning method")->required();
  ft->add_option("--run", ft_run, "run index; the seed derives from it")->capture_default_str();
  ev->add_option("--method", ev_method, "method, optionally prefixed by zero_shot: or fine_tuning:")
      ->required();
  ev->add_option("--run", ev_run, "run index of the fine-tuned model")->capture_default_str();
  std::vector<std::uint64_t> seeds;
  rep->add_option("--seeds", seeds, "fine-tuning run indices (comma separated)")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(common);
    if (*pre) return cmd_pretrain(common);
    if (*ld) return cmd_langdist(common);
    if (*emb) return cmd_embed(common, mode);
    if (*tp) return cmd_train_predictor(common);
    if (*ft) return cmd_finetune(common, ft_method, ft_run);
    if (*ev) return cmd_evaluate(common, ev_method, ev_run);
    if (*rep) return cmd_report(common, seeds);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
