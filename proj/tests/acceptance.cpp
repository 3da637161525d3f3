// SPDX-License-Identifier: Apache-2.0
// Acceptance checks. One PASS/FAIL line per criterion; exits non-zero when
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace lemb;
using M = FineTuneMethod;

namespace {

int failures = 0;

void verdict(int id, bool ok, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------

void criterion_softmax() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> len(1, 40);
  std::uniform_real_distribution<double> scale(0.1, 60.0);
  double worst = 0.0;
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = len(rng);
    std::normal_distribution<double> nd(0.0, scale(rng));
    std::vector<double> x(n);
    for (auto& v : x) v = nd(rng);
    const auto p = softmax(x);
    // Oracle: p_i = 1 / sum_j exp(x_j - x_i), no max subtraction involved.
    auto oracle = [](const std::vector<double>& v, std::size_t i, std::size_t skip) {
      long double s = 0.0L;
      for (std::size_t j = 0; j < v.size(); ++j)
        if (j != skip) s += std::exp(static_cast<long double>(v[j]) - v[i]);
      return static_cast<double>(1.0L / s);
    };
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      worst = std::max(worst, std::abs(p[i] - oracle(x, i, n)));
      total += p[i];
    }
    worst = std::max(worst, std::abs(total - 1.0));
    // Shift invariance.
    std::vector<double> shifted(x);
    for (auto& v : shifted) v += 123.25;
    const auto q = softmax(shifted);
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(p[i] - q[i]));
    // Dropping one entry renormalizes the rest.
    if (n >= 2) {
      const std::size_t m = c % n;
      std::vector<float> xf(x.begin(), x.end());
      const auto d = masked_distribution(xf, TagIndex{m});
      const std::vector<double> xr(xf.begin(), xf.end());
      worst = std::max(worst, d.probs[m]);
      for (std::size_t i = 0; i < n; ++i)
        if (i != m) worst = std::max(worst, std::abs(d.probs[i] - oracle(xr, i, m)));
    }
  }
  verdict(1, worst < 1e-9, fmt("softmax over 1000 cases, max deviation %.3g", worst));
}

void criterion_weighted_sum() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> tags_d(2, 12), dim_d(1, 16);
  std::normal_distribution<float> nf;
  double worst = 0.0;
  for (int c = 0; c < 500; ++c) {
    const std::size_t k = tags_d(rng), d = dim_d(rng);
    std::vector<float> storage((k + 3) * d);
    for (auto& v : storage) v = nf(rng);
    const EmbeddingTable t{storage, d, TagRange{3, k}};
    const LangDistribution p{fixtures::random_distribution(k, rng)};
    const LangDistribution q{fixtures::random_distribution(k, rng)};
    const auto ep = utterance_ws_embedding(p, t);
    const auto eq = utterance_ws_embedding(q, t);
    // Direct oracle sum and convex hull bounds.
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0, lo = INFINITY, hi = -INFINITY;
      for (std::size_t i = 0; i < k; ++i) {
        const double r = storage[(3 + i) * d + j];
        s += p.probs[i] * r;
        lo = std::min(lo, r);
        hi = std::max(hi, r);
      }
      worst = std::max(worst, std::abs(ep.vector[j] - s));
      worst = std::max({worst, lo - ep.vector[j] - 1e-6, ep.vector[j] - hi - 1e-6, 0.0});
    }
    // Vertex and uniform mean.
    const std::size_t v = c % k;
    LangDistribution one{std::vector<double>(k, 0.0)};
    one.probs[v] = 1.0;
    const auto ev = utterance_ws_embedding(one, t);
    const auto eu = utterance_ws_embedding({std::vector<double>(k, 1.0 / k)}, t);
    for (std::size_t j = 0; j < d; ++j) {
      worst = std::max(worst, std::abs(static_cast<double>(ev.vector[j]) - storage[(3 + v) * d + j]));
      double mean = 0.0;
      for (std::size_t i = 0; i < k; ++i) mean += storage[(3 + i) * d + j];
      worst = std::max(worst, std::abs(eu.vector[j] - mean / k));
    }
    // Linearity in the distribution.
    const double a = std::uniform_real_distribution<double>(0, 1)(rng);
    LangDistribution mix{std::vector<double>(k)};
    for (std::size_t i = 0; i < k; ++i) mix.probs[i] = a * p.probs[i] + (1 - a) * q.probs[i];
    const auto em = utterance_ws_embedding(mix, t);
    for (std::size_t j = 0; j < d; ++j)
      worst = std::max(worst,
                       std::abs(em.vector[j] - (a * ep.vector[j] + (1 - a) * eq.vector[j])));
    // Permuting tags together with their rows leaves the sum unchanged.
    std::vector<std::size_t> perm(k);
    for (std::size_t i = 0; i < k; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<float> pstore(storage);
    LangDistribution pp{std::vector<double>(k)};
    for (std::size_t i = 0; i < k; ++i) {
      pp.probs[i] = p.probs[perm[i]];
      for (std::size_t j = 0; j < d; ++j)
        pstore[(3 + i) * d + j] = storage[(3 + perm[i]) * d + j];
    }
    const auto epp = utterance_ws_embedding(pp, EmbeddingTable{pstore, d, TagRange{3, k}});
    for (std::size_t j = 0; j < d; ++j)
      worst = std::max(worst, static_cast<double>(std::abs(epp.vector[j] - ep.vector[j])));
    // Corpus-wise equals the mean of utterance-wise embeddings.
    std::vector<LangDistribution> corpus{p, q, mix};
    const auto ec = corpus_ws_embedding(corpus, t);
    for (std::size_t j = 0; j < d; ++j)
      worst = std::max(worst,
                       std::abs(static_cast<double>(ec.vector[j]) -
                                (static_cast<double>(ep.vector[j]) + eq.vector[j] + em.vector[j]) / 3));
  }
  verdict(2, worst < 1e-6, fmt("weighted-sum properties over 500 pairs, max deviation %.3g", worst));
}

void criterion_autodiff() {
  std::mt19937_64 rng(303);
  double worst = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    auto g = fixtures::make_random_graph(i, rng);
    worst = std::max(worst, fixtures::max_relative_grad_error(g.loss, g.pointers()));
  }
  verdict(3, worst < 1e-4, fmt("20 random graphs, max relative gradient error %.3g", worst));
}

Tensor<float> decoder_logits(const TinyASR& m, const Utterance& u, const LanguageChoice& lang) {
  ad::NoGradGuard guard;
  ForwardContext ctx;
  std::vector<std::size_t> tokens(u.transcript.begin(), u.transcript.end());
  return m.decode(m.encode(u.features, ctx), m.decoder_inputs(m.language_var(lang), tokens), ctx)
      .value();
}

void criterion_adapters() {
  const auto b = fixtures::tiny_benchmark(9);
  const TinyASR base(fixtures::tiny_model_config(b), 4);
  const Utterance& u = b.splits.at(b.seen_languages[0].lang_id).train[0];
  TinyASR adapted = base;
  apply_adapters(adapted, {2, 4.0, 0.05}, 7);
  const auto ta1 = decoder_logits(adapted, u, TagIndex{1});
  const auto tb1 = decoder_logits(base, u, TagIndex{1});
  const auto la = ta1.data();
  const auto lb = tb1.data();
  const bool identity = std::equal(la.begin(), la.end(), lb.begin(), lb.end());
  Rng rng(8);
  std::normal_distribution<float> n(0.0f, 0.3f);
  for (auto* p : adapter_parameters(adapted))
    for (auto& v : p->mutable_value().data()) v = n(rng);
  TinyASR merged = adapted;
  merge_adapters(merged);
  const auto ta = decoder_logits(adapted, u, TagIndex{2});
  const auto tm = decoder_logits(merged, u, TagIndex{2});
  const auto a = ta.data();
  const auto m = tm.data();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - m[i]));
  verdict(4, identity && worst < 1e-5 && !merged.has_adapters(),
          std::string("zero-init identity ") + (identity ? "bitwise" : "broken") +
              fmt(", merge deviation %.3g", worst));
}

void criterion_metrics() {
  std::mt19937_64 rng(505);
  std::uniform_int_distribution<std::size_t> len(1, 20), ch(0, 3);
  std::size_t bad = 0;
  for (int c = 0; c < 200; ++c) {
    std::string r(len(rng), ' '), h(len(rng) - 1, ' ');
    for (auto& x : r) x = static_cast<char>('a' + ch(rng));
    for (auto& x : h) x = static_cast<char>('a' + ch(rng));
    // Words are runs of two letters so that word edits are exercised.
    std::string rw, hw;
    for (std::size_t i = 0; i < r.size(); ++i) rw += std::string(i && i % 2 == 0 ? " " : "") + r[i];
    for (std::size_t i = 0; i < h.size(); ++i) hw += std::string(i && i % 2 == 0 ? " " : "") + h[i];
    const double ec = static_cast<double>(fixtures::edit_distance_oracle(r, h)) / r.size();
    const auto rws = fixtures::words_oracle(rw), hws = fixtures::words_oracle(hw);
    const double ew = static_cast<double>(fixtures::edit_distance_oracle(rws, hws)) / rws.size();
    if (std::abs(cer(r, h) - ec) > 1e-12 || std::abs(wer(rw, hw) - ew) > 1e-12) ++bad;
  }
  const bool example = cer("a", "abc") == 2.0;
  verdict(5, bad == 0 && example,
          fmt("%.0f of 200 pairs disagree with the oracle; CER(a, abc) = %.1f", bad,
              cer("a", "abc")));
}

void criterion_loo() {
  const auto b = fixtures::tiny_benchmark(13);
  const TinyASR model(fixtures::tiny_model_config(b), 6);
  const auto seen = seen_corpora(b, true);
  const auto table = model.embedding_table();
  bool ok = true;
  std::size_t utterances = 0;
  for (const auto& c : seen) utterances += c.utterances.size();
  const auto corpus = build_loo_dataset(model, seen, LooMode::corpus_wise);
  const auto utt = build_loo_dataset(model, seen, LooMode::utterance_wise);
  ok &= corpus.size() == seen.size() && utt.size() == utterances;
  double worst = 0.0;
  std::size_t k = 0;
  for (const auto& c : seen) {
    std::vector<double> mean(model.num_tags(), 0.0);
    for (const auto& u : c.utterances) {
      const auto& e = utt[k++];
      ok &= e.masked_lang.value == c.tag.value;
      // Oracle: full softmax, drop the masked entry, renormalize.
      const auto full = softmax(model.tag_logits(u.features));
      double total = 0.0;
      for (std::size_t j = 0; j < full.size(); ++j) {
        const double expect = j == c.tag.value ? 0.0 : full[j] / (1.0 - full[c.tag.value]);
        worst = std::max(worst, std::abs(e.distribution.probs[j] - expect));
        mean[j] += expect / c.utterances.size();
        total += e.distribution.probs[j];
      }
      ok &= e.distribution.probs[c.tag.value] == 0.0;
      worst = std::max(worst, std::abs(total - 1.0));
      const auto ws = utterance_ws_embedding(e.distribution, table);
      ok &= ws.vector == e.input.vector;
      const auto row = table.tag_row(c.tag.value);
      ok &= std::equal(row.begin(), row.end(), e.target.begin(), e.target.end());
    }
    const auto& ce = corpus[&c - seen.data()];
    ok &= ce.masked_lang.value == c.tag.value && ce.distribution.probs[c.tag.value] == 0.0;
    for (std::size_t j = 0; j < mean.size(); ++j)
      worst = std::max(worst, std::abs(ce.distribution.probs[j] - mean[j]));
  }
  verdict(6, ok && worst < 1e-9,
          fmt("%.0f corpus and %.0f utterance examples, max deviation %.3g",
              static_cast<double>(corpus.size()), static_cast<double>(utt.size()), worst));
}

// ---------------------------------------------------------------------------

struct SeedOutcome {
  PipelineResult result;
  double seconds = 0.0;
};

SeedOutcome run_seed(std::uint64_t seed) {
  RunConfig cfg;
  cfg.seed = seed;
  const auto entries = default_matrix();
  const std::uint64_t runs[] = {1};
  const auto t0 = std::chrono::steady_clock::now();
  auto r = run_pipeline(cfg, entries, runs);
  const double s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(r), s};
}

}  // namespace

int main() {
  criterion_softmax();
  criterion_weighted_sum();
  criterion_autodiff();
  criterion_adapters();
  criterion_metrics();
  criterion_loo();

  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<SeedOutcome> outcomes;
  for (auto s : seeds) {
    outcomes.push_back(run_seed(s));
    const auto& r = outcomes.back();
    std::printf("  seed %llu done in %.1f s\n", static_cast<unsigned long long>(s), r.seconds);
    std::fflush(stdout);
  }

  std::vector<double> tag_acc, seen_cer, pred_mse, ws_mse, mean_mse;
  for (const auto& o : outcomes) {
    tag_acc.push_back(o.result.pretrain.held_out.tag_accuracy);
    seen_cer.push_back(o.result.pretrain.held_out.metrics.cer);
    const auto& q = o.result.predictors.corpus_quality;
    pred_mse.push_back(q.predictor_mse);
    ws_mse.push_back(q.ws_mse);
    mean_mse.push_back(q.mean_tag_mse);
  }
  verdict(7, median(tag_acc) > 0.9 && median(seen_cer) < 0.1,
          fmt("median tag accuracy %.3f, median seen CER %.4f", median(tag_acc),
              median(seen_cer)));
  verdict(8, median(pred_mse) < median(ws_mse) && median(pred_mse) < median(mean_mse),
          fmt("median held-out MSE: predictor %.4f, weighted sum %.4f, mean of tags %.4f",
              median(pred_mse), median(ws_mse), median(mean_mse)));

  // Median CER per row across seeds, and the aggregated table.
  std::map<std::pair<Setting, std::string>, double> cer_of;
  ExperimentReport table;
  table.word_size = outcomes.front().result.report.word_size;
  for (const auto& e : default_matrix()) {
    std::vector<MetricsResult> per_seed;
    std::vector<double> cers;
    const std::string name(traits(e.method).display);
    for (const auto& o : outcomes) {
      const auto* row = o.result.report.find(e.setting, name);
      per_seed.push_back({row->cer_mean, row->wer_mean, 0});
      cers.push_back(row->cer_mean);
    }
    cer_of[{e.setting, name}] = median(cers);
    table.rows.push_back(make_row(e.setting, e.method, per_seed));
  }
  mark_best(table);
  auto zs = [&](M m) { return cer_of.at({Setting::zero_shot, std::string(traits(m).display)}); };
  auto ft = [&](M m) { return cer_of.at({Setting::fine_tuning, std::string(traits(m).display)}); };

  verdict(9, zs(M::CorpusWS) <= zs(M::Default) && zs(M::UtteranceWS) <= zs(M::Default),
          fmt("zero-shot median CER: default %.4f, corpus-wise %.4f, utterance-wise %.4f",
              zs(M::Default), zs(M::CorpusWS), zs(M::UtteranceWS)));

  const M proposed[] = {M::CorpusWS, M::UtteranceWS, M::ParamCorpusWS, M::PredictorCorpusWS};
  bool c10 = true;
  double best = INFINITY;
  for (M m : proposed) {
    c10 &= ft(m) <= ft(M::Baseline);
    best = std::min(best, ft(m));
  }
  for (M m : kAllMethods)
    if (traits(m).fine_tuning) best = std::min(best, ft(m));
  c10 &= ft(M::PredictorCorpusWS) <= best + 0.01;
  verdict(10, c10,
          fmt("fine-tuning median CER: baseline %.4f, predictor corpus-wise %.4f, best %.4f",
              ft(M::Baseline), ft(M::PredictorCorpusWS), best) +
              fmt(", corpus-wise %.4f, utterance-wise %.4f, parameterized %.4f", ft(M::CorpusWS),
                  ft(M::UtteranceWS), ft(M::ParamCorpusWS)));

  const bool c11 = ft(M::BaselineThenCorpusWS) >= ft(M::CorpusWS) &&
                   ft(M::BaselineThenUtteranceWS) >= ft(M::UtteranceWS);
  verdict(11, c11,
          fmt("baseline-then-corpus %.4f vs corpus %.4f", ft(M::BaselineThenCorpusWS),
              ft(M::CorpusWS)) +
              fmt(", baseline-then-utterance %.4f vs utterance %.4f",
                  ft(M::BaselineThenUtteranceWS), ft(M::UtteranceWS)));

  const auto again = run_seed(seeds.front());
  const auto& first = outcomes.front().result;
  const bool c12 = to_csv(again.result.report) == to_csv(first.report) &&
                   again.result.report == first.report &&
                   again.result.state.pretrained.fingerprint() ==
                       first.state.pretrained.fingerprint() &&
                   again.result.predictors.corpus.validation_mse ==
                       first.predictors.corpus.validation_mse;
  verdict(12, c12, "rerun of seed 1 compared bitwise (report, checkpoint, predictor)");

  double total = again.seconds;
  for (const auto& o : outcomes) total += o.seconds;
  std::printf("\npipeline time %.1f s\n\n", total);
  std::cout << to_markdown(table) << "\n";
  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
