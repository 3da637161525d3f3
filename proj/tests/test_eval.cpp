// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "helpers.hpp"
#include "oracles.hpp"

using namespace lemb;
using M = FineTuneMethod;

namespace {

std::string random_string(std::mt19937_64& rng, std::size_t max_len, const char* alphabet) {
  const std::string al(alphabet);
  std::uniform_int_distribution<std::size_t> len(0, max_len), pick(0, al.size() - 1);
  std::string s(len(rng), ' ');
  for (auto& c : s) c = al[pick(rng)];
  return s;
}

ExperimentRow row(Setting s, const char* name, double cer, double wer) {
  ExperimentRow r;
  r.setting = s;
  r.method = name;
  r.cer_mean = cer;
  r.wer_mean = wer;
  return r;
}

}  // namespace

TEST(EditDistance, Examples) {
  EXPECT_EQ(edit_distance("", ""), 0u);
  EXPECT_EQ(edit_distance("kitten", "sitting"), 3u);
  EXPECT_EQ(edit_distance("abc", ""), 3u);
  EXPECT_EQ(edit_distance(std::vector<int>{1, 2, 3}, std::vector<int>{1, 3}), 1u);
}

TEST(EditDistance, MetricAxiomsAndOracle) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_string(rng, 12, "abc"), b = random_string(rng, 12, "abc"),
               c = random_string(rng, 12, "abc");
    const auto ab = edit_distance(a, b);
    EXPECT_EQ(ab, fixtures::edit_distance_oracle(a, b));
    EXPECT_EQ(ab, edit_distance(b, a));
    EXPECT_LE(edit_distance(a, c), ab + edit_distance(b, c));
    EXPECT_EQ(ab == 0, a == b);
  }
}

TEST(ErrorRates, Examples) {
  EXPECT_DOUBLE_EQ(cer("abc", "abc"), 0.0);
  EXPECT_DOUBLE_EQ(cer("abc", "abd"), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(cer("a", "abc"), 2.0);
  EXPECT_DOUBLE_EQ(wer("the cat sat", "the cat"), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(wer("a", "x y z"), 3.0);
  EXPECT_THROW(cer("", "a"), InvalidArgument);
  EXPECT_THROW(wer("   ", "a"), InvalidArgument);
}

TEST(ErrorRates, AccumulatorPoolsEdits) {
  ErrorAccumulator acc(2);
  std::vector<std::size_t> r1{1, 2, 3, 4}, h1{1, 2, 3, 5}, r2{7, 7}, h2{};
  acc.add(r1, h1);
  acc.add(r2, h2);
  const auto m = acc.result();
  EXPECT_EQ(m.n_utterances, 2u);
  EXPECT_DOUBLE_EQ(m.cer, 3.0 / 6.0);  // 1 + 2 edits over 6 tokens
  EXPECT_DOUBLE_EQ(m.wer, 2.0 / 3.0);  // words {12}{34} vs {12}{35}; {77} vs nothing
  EXPECT_THROW(acc.add({}, h1), InvalidArgument);
  EXPECT_THROW(group_words(r1, 0), InvalidArgument);
  EXPECT_EQ(group_words(std::vector<std::size_t>{1, 2, 3}, 2).size(), 2u);
}

TEST(Report, MarkBestAndStd) {
  ExperimentReport r;
  r.rows = {row(Setting::zero_shot, "A", 0.5, 0.9), row(Setting::zero_shot, "B", 0.4, 1.1),
            row(Setting::fine_tuning, "C", 0.3, 0.6), row(Setting::fine_tuning, "D", 0.3, 0.5)};
  mark_best(r);
  EXPECT_FALSE(r.rows[0].best_cer);
  EXPECT_TRUE(r.rows[0].best_wer);
  EXPECT_TRUE(r.rows[1].best_cer);
  EXPECT_TRUE(r.rows[2].best_cer);  // tie
  EXPECT_TRUE(r.rows[3].best_cer);
  EXPECT_TRUE(r.rows[3].best_wer);
  const std::vector<double> xs{1.0, 2.0, 4.0};
  EXPECT_NEAR(*sample_std(xs), std::sqrt(7.0 / 3.0), 1e-12);
  EXPECT_FALSE(sample_std(std::vector<double>{1.0}).has_value());
}

TEST(Report, SingleSeedHasNoStd) {
  const auto r = make_row(Setting::fine_tuning, M::Baseline, {{0.2, 0.4, 3}});
  EXPECT_FALSE(r.cer_std.has_value());
  EXPECT_EQ(r.method, "Baseline");
  EXPECT_TRUE(r.trainable_embedding);
  const auto two = make_row(Setting::fine_tuning, M::Baseline, {{0.2, 0.4, 3}, {0.4, 0.4, 3}});
  EXPECT_NEAR(two.cer_mean, 0.3, 1e-12);
  EXPECT_NEAR(*two.cer_std, std::sqrt(0.02), 1e-12);
  EXPECT_DOUBLE_EQ(*two.wer_std, 0.0);
}

TEST(Report, CsvRoundTripAndHeader) {
  ExperimentReport empty;
  EXPECT_EQ(to_csv(empty), std::string(kCsvHeader) + "\n");
  EXPECT_EQ(kCsvHeader,
            "setting,method,trainable_embedding,predictor,applied_ft,applied_inf,cer_mean,"
            "cer_std,wer_mean,wer_std");
  ExperimentReport r;
  r.rows.push_back(make_row(Setting::zero_shot, M::CorpusWS, {{0.123456789012345, 1.4, 5}}));
  r.rows.push_back(make_row(Setting::fine_tuning, M::ParamCorpusWS,
                            {{0.1, 0.3, 5}, {0.2 / 3.0, 0.25, 5}}));
  mark_best(r);
  const auto back = parse_csv(to_csv(r));
  ASSERT_EQ(back.rows.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    auto expect = r.rows[i];
    expect.runs.clear();
    EXPECT_EQ(back.rows[i], expect);
  }
  EXPECT_THROW(parse_csv("bad header\n"), ParseError);
  EXPECT_THROW(parse_csv(std::string(kCsvHeader) + "\nzero_shot,X,maybe,false,false,false,1,,1,\n"),
               ParseError);
}

TEST(Report, MarkdownBoldsBestAndNotesWordSize) {
  ExperimentReport r;
  r.word_size = 3;
  r.rows = {row(Setting::fine_tuning, "C", 0.3, 0.7), row(Setting::fine_tuning, "D", 0.2, 0.8)};
  mark_best(r);
  const auto md = to_markdown(r);
  EXPECT_NE(md.find("words of 3"), std::string::npos);
  EXPECT_NE(md.find("**20.00%**"), std::string::npos);
  EXPECT_NE(md.find("**70.00%**"), std::string::npos);
  EXPECT_EQ(md.find("**30.00%**"), std::string::npos);
}

TEST(Report, EmitToUnwritablePathThrows) {
  EXPECT_THROW(emit_report({}, ReportFormat::csv, "/nonexistent/dir/r.csv"), IoError);
}

TEST(Matrix, DefaultLayoutAndEntryParsing) {
  const auto m = default_matrix();
  ASSERT_EQ(m.size(), 11u);
  EXPECT_EQ(std::count_if(m.begin(), m.end(),
                          [](const MatrixEntry& e) { return e.setting == Setting::zero_shot; }),
            3);
  EXPECT_EQ(parse_matrix_entry("default").setting, Setting::zero_shot);
  EXPECT_EQ(parse_matrix_entry("corpus_ws").setting, Setting::fine_tuning);
  EXPECT_EQ(parse_matrix_entry("zero_shot:corpus_ws").setting, Setting::zero_shot);
  EXPECT_THROW(parse_matrix_entry("zero_shot:baseline"), InvalidArgument);
  EXPECT_THROW(parse_matrix_entry("fine_tuning:default"), InvalidArgument);
  EXPECT_THROW(parse_matrix_entry("bogus"), InvalidArgument);
}

TEST(ZeroShot, ThreeMethodsLeaveModelUntouched) {
  const auto b = fixtures::tiny_benchmark();
  const TinyASR m(fixtures::tiny_model_config(b), 2);
  const auto before = m.fingerprint();
  const auto test = unseen_corpora(b, false);
  for (M method : {M::Default, M::CorpusWS, M::UtteranceWS}) {
    const auto r = zero_shot_eval(m, test, method);
    EXPECT_EQ(r.n_utterances, b.unseen_languages.size() * 6);
    EXPECT_GE(r.cer, 0.0);
  }
  EXPECT_EQ(m.fingerprint(), before);
  EXPECT_THROW(zero_shot_eval(m, test, M::Baseline), InvalidArgument);
}

TEST(ZeroShot, DefaultUsesArgmaxTag) {
  const auto b = fixtures::tiny_benchmark();
  const TinyASR m(fixtures::tiny_model_config(b), 2);
  const auto test = unseen_corpora(b, false);
  ErrorAccumulator acc;
  for (const auto& c : test)
    for (const auto& u : c.utterances)
      acc.add(u.transcript,
              m.greedy_decode(u.features, argmax_language(m.language_distribution(u.features))));
  EXPECT_EQ(zero_shot_eval(m, test, M::Default), acc.result());
}

TEST(Matrix, SmallRunShapeAndDeterminism) {
  const auto cfg = fixtures::tiny_run_config();
  const auto entries = default_matrix();
  const auto a = run_pipeline(cfg, entries);
  ASSERT_EQ(a.report.rows.size(), 11u);
  for (const auto& r : a.report.rows) {
    EXPECT_FALSE(r.cer_std.has_value());
    EXPECT_EQ(r.runs.size(), 1u);
  }
  const auto b = run_pipeline(cfg, entries);
  EXPECT_EQ(to_csv(a.report), to_csv(b.report));
  EXPECT_EQ(a.report, b.report);
  const std::uint64_t two[] = {1, 2};
  const auto c = run_experiment_matrix(a.state, entries, finetune_seeds(cfg, two),
                                       experiment_config(cfg));
  EXPECT_TRUE(c.rows[3].cer_std.has_value());
  EXPECT_FALSE(c.rows[0].cer_std.has_value());
  EXPECT_THROW(run_experiment_matrix(a.state, entries, {}, experiment_config(cfg)),
               InvalidArgument);
}
