// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "helpers.hpp"

using namespace lemb;

namespace {

struct ModelFixture : ::testing::Test {
  Benchmark bench = fixtures::tiny_benchmark();
  ModelConfig cfg = fixtures::tiny_model_config(bench);
  TinyASR model{cfg, 21};
  const Utterance& utt() const { return bench.splits.at(bench.seen_languages[0].lang_id).train[0]; }

  Tensor<float> logits(const TinyASR& m, const LanguageChoice& lang) const {
    ad::NoGradGuard guard;
    ForwardContext ctx;
    std::vector<std::size_t> tokens(utt().transcript.begin(), utt().transcript.end());
    return m.decode(m.encode(utt().features, ctx),
                    m.decoder_inputs(m.language_var(lang), tokens), ctx)
        .value();
  }
};

}  // namespace

TEST_F(ModelFixture, VocabularyLayout) {
  EXPECT_EQ(model.vocab_size(), cfg.transcript_vocab + 3 + cfg.num_language_tags);
  EXPECT_EQ(model.sot(), cfg.transcript_vocab);
  EXPECT_EQ(model.eot(), cfg.transcript_vocab + 2);
  EXPECT_EQ(model.tag_range().first, cfg.transcript_vocab + 3);
  EXPECT_EQ(model.num_tags(), cfg.num_language_tags);
}

TEST_F(ModelFixture, ConfigValidation) {
  ModelConfig bad = cfg;
  bad.d_model = 0;
  EXPECT_THROW(TinyASR(bad, 1), InvalidArgument);
  bad = cfg;
  bad.num_special_tokens = 4;
  EXPECT_THROW(TinyASR(bad, 1), InvalidArgument);
  bad = cfg;
  bad.tag_init_scale = -1;
  EXPECT_THROW(TinyASR(bad, 1), InvalidArgument);
}

TEST_F(ModelFixture, SameSeedSameParameters) {
  EXPECT_EQ(TinyASR(cfg, 21).fingerprint(), model.fingerprint());
  EXPECT_NE(TinyASR(cfg, 22).fingerprint(), model.fingerprint());
}

TEST_F(ModelFixture, PrefixCarriesLanguageVectorInSlotOne) {
  const auto table = model.embedding_table();
  WeightedEmbedding w{std::vector<float>(cfg.d_model, 0.25f), Provenance::corpus_ws};
  const auto prefix = model.embed_prefix(w);
  ASSERT_EQ(prefix.rows(), 3u);
  for (std::size_t j = 0; j < cfg.d_model; ++j) {
    EXPECT_EQ(prefix(0, j), table.row(model.sot())[j]);
    EXPECT_EQ(prefix(1, j), 0.25f);
    EXPECT_EQ(prefix(2, j), table.row(model.transcribe())[j]);
  }
}

TEST_F(ModelFixture, TagChoiceEqualsItsRowAsWeightedEmbedding) {
  const auto row = model.embedding_table().tag_row(1);
  WeightedEmbedding w{{row.begin(), row.end()}, Provenance::tag};
  EXPECT_EQ(logits(model, TagIndex{1}), logits(model, w));
  EXPECT_EQ(model.greedy_decode(utt().features, TagIndex{1}),
            model.greedy_decode(utt().features, w));
}

TEST_F(ModelFixture, LanguageDistributionIsNormalizedAndPure) {
  const auto before = model.fingerprint();
  const auto d = model.language_distribution(utt().features);
  EXPECT_EQ(d.size(), model.num_tags());
  EXPECT_NO_THROW(d.validate(1e-9));
  EXPECT_EQ(model.fingerprint(), before);
  EXPECT_EQ(model.language_distribution(utt().features).probs, d.probs);
}

TEST_F(ModelFixture, InputValidation) {
  EXPECT_THROW(model.tag_embedding(TagIndex{99}), InvalidArgument);
  WeightedEmbedding wrong{std::vector<float>(cfg.d_model + 1), Provenance::tag};
  EXPECT_THROW(model.greedy_decode(utt().features, wrong), InvalidArgument);
  EXPECT_THROW(model.language_distribution(Tensor<float>::matrix(3, cfg.feature_dim + 1)),
               InvalidArgument);
  EXPECT_THROW(model.language_distribution(Tensor<float>::matrix(0, cfg.feature_dim)),
               InvalidArgument);
}

TEST_F(ModelFixture, GreedyDecodeEmitsTranscriptTokensOnly) {
  const auto out = model.greedy_decode(utt().features, TagIndex{0});
  EXPECT_LE(out.size(), cfg.max_decode_len);
  for (auto t : out) EXPECT_LT(t, cfg.transcript_vocab);
}

TEST(GreedyDecode, StopsAtEotAndRespectsLimit) {
  // Scorer prefers token 1 twice, then eot (index 4: vocab 2, then sot, transcribe, eot).
  auto scorer = [](std::span<const std::size_t> g) {
    std::vector<float> l(6, 0.0f);
    if (g.size() < 2) l[1] = 1.0f;
    else l[4] = 1.0f;
    return l;
  };
  EXPECT_EQ(greedy_decode(scorer, 2, 4, 10), (std::vector<std::size_t>{1, 1}));
  EXPECT_EQ(greedy_decode(scorer, 2, 4, 1), (std::vector<std::size_t>{1}));
  EXPECT_THROW(greedy_decode(scorer, 2, 4, 0), InvalidArgument);
}

TEST_F(ModelFixture, NewTagStartsAtMeanOfTags) {
  TinyASR m = model;
  const auto tag = m.add_language_tag(TagInit::mean_of_tags);
  EXPECT_EQ(tag.value, cfg.num_language_tags);
  const auto table = m.embedding_table();
  for (std::size_t j = 0; j < cfg.d_model; ++j) {
    double acc = 0.0;
    for (std::size_t t = 0; t < cfg.num_language_tags; ++t) acc += table.tag_row(t)[j];
    EXPECT_NEAR(table.tag_row(tag.value)[j], acc / cfg.num_language_tags, 1e-6);
  }
  // Original rows are untouched.
  const auto old_table = model.embedding_table();
  for (std::size_t t = 0; t < cfg.num_language_tags; ++t)
    for (std::size_t j = 0; j < cfg.d_model; ++j)
      EXPECT_EQ(table.tag_row(t)[j], old_table.tag_row(t)[j]);
}

TEST_F(ModelFixture, CheckpointRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "lemb_test_ckpt";
  std::filesystem::remove_all(dir);
  TinyASR m = model;
  m.add_language_tag(TagInit::mean_of_tags);
  m.save(dir);
  const TinyASR back = TinyASR::load(dir);
  EXPECT_EQ(back.fingerprint(), m.fingerprint());
  EXPECT_EQ(back.num_tags(), m.num_tags());
  EXPECT_EQ(logits(back, TagIndex{0}), logits(m, TagIndex{0}));
  lbt::write(dir / "final_norm.gain.lbt", Tensor<float>::matrix(2, 2));
  EXPECT_THROW(TinyASR::load(dir), ParseError);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(TinyASR::load(dir), IoError);
}

TEST_F(ModelFixture, AdapterZeroInitIsBitwiseIdentity) {
  TinyASR adapted = model;
  apply_adapters(adapted, {2, 4.0, 0.05}, 5);
  EXPECT_EQ(logits(adapted, TagIndex{0}), logits(model, TagIndex{0}));
  EXPECT_EQ(adapted.greedy_decode(utt().features, TagIndex{1}),
            model.greedy_decode(utt().features, TagIndex{1}));
}

TEST_F(ModelFixture, AdapterParameterCountAndFreezing) {
  TinyASR adapted = model;
  const std::size_t r = 2, d = cfg.d_model, f = cfg.ffn_dim;
  const std::size_t count = apply_adapters(adapted, {r, 4.0, 0.0}, 5);
  // Per decoder layer: 8 attention matrices d x d, ffn_in d x f, ffn_out f x d.
  const std::size_t expected = cfg.decoder_layers * (8 * r * (d + d) + 2 * r * (d + f));
  EXPECT_EQ(count, expected);
  std::size_t trainable = 0;
  for (auto* p : adapter_parameters(adapted)) trainable += p->trainable() ? p->size() : 0;
  EXPECT_EQ(trainable, expected);
  for (auto* p : adapted.parameters()) EXPECT_FALSE(p->trainable());
}

TEST_F(ModelFixture, AdapterRankTooLargeIsRejected) {
  TinyASR adapted = model;
  EXPECT_THROW(apply_adapters(adapted, {cfg.d_model + 1, 1.0, 0.0}, 5), InvalidArgument);
  EXPECT_THROW(apply_adapters(adapted, {0, 1.0, 0.0}, 5), InvalidArgument);
  EXPECT_THROW(apply_adapters(adapted, {1, 1.0, 1.0}, 5), InvalidArgument);
}

TEST_F(ModelFixture, MergedAdaptersMatchAdapterForm) {
  TinyASR adapted = model;
  apply_adapters(adapted, {2, 4.0, 0.0}, 5);
  Rng rng(8);
  std::normal_distribution<float> n(0.0f, 0.3f);
  for (auto* p : adapter_parameters(adapted))
    for (auto& v : p->mutable_value().data()) v = n(rng);
  const auto unmerged = logits(adapted, TagIndex{2});
  EXPECT_NE(unmerged, logits(model, TagIndex{2}));
  TinyASR merged = adapted;
  merge_adapters(merged);
  EXPECT_FALSE(merged.has_adapters());
  const auto m = logits(merged, TagIndex{2});
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(m[i], unmerged[i], 1e-5);
}

TEST(PositionalEncoding, AmplitudeBoundsAndScale) {
  const auto pe = nn::positional_encoding(5, 8, 0.5);
  for (float v : pe.data()) EXPECT_LE(std::abs(v), 0.5f + 1e-7f);
  EXPECT_FLOAT_EQ(pe(0, 1), 0.5f);  // cos(0)
  EXPECT_FLOAT_EQ(pe(0, 0), 0.0f);  // sin(0)
}
