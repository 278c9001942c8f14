#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "dxformer/model.hpp"
#include "forward_oracle.hpp"
#include "test_util.hpp"

namespace {

using namespace dxformer;
using dxtest::Oracle;
using Rng = std::mt19937_64;

ModelConfig tiny_config() {
  ModelConfig c;
  c.decoder_layers = 2;
  c.encoder_layers = 1;
  c.embed_dim = 8;
  c.ff_dim = 12;
  c.heads = 2;
  c.symptoms = 5;
  c.diseases = 3;
  c.max_sequence_length = 8;
  return c;
}

std::vector<Observation> random_context(std::size_t len, std::size_t ns, std::mt19937_64& rng) {
  std::vector<SymptomId> ids(ns);
  for (std::size_t i = 0; i < ns; ++i) ids[i] = i;
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<Observation> out;
  for (std::size_t i = 0; i < len; ++i) out.push_back({ids[i % ns], static_cast<Attribute>(rng() % 3)});
  return out;
}

TEST(Config, EncoderMustBeShallower) {
  auto c = tiny_config();
  c.encoder_layers = 2;
  EXPECT_THROW(DxFormer(c, 0), Error);
  c = tiny_config();
  c.heads = 3;
  EXPECT_THROW(DxFormer(c, 0), Error);
  ModelConfig defaults;
  defaults.symptoms = 41;
  defaults.diseases = 5;
  EXPECT_NO_THROW(defaults.validate());
  EXPECT_LT(defaults.encoder_layers, defaults.decoder_layers);
}

TEST(Config, JsonRoundTrip) {
  auto c = tiny_config();
  c.sparse_inputs = true;
  EXPECT_EQ(ModelConfig::from_json(json::parse(c.to_json().dump())), c);
  EXPECT_THROW(c.merge_json(json{{"embed_dim", "wide"}}), Error);
}

TEST(Init, FollowsDeclaredScheme) {
  ModelConfig c = tiny_config();
  c.embed_dim = 64;
  c.ff_dim = 64;
  const DxFormer m(c, 3);
  const auto& ps = m.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& name = ps.name(i);
    const auto& t = ps[i];
    if (name.ends_with("gain")) {
      for (double v : t.data()) EXPECT_EQ(v, 1.0) << name;
    } else if (name.ends_with("bias")) {
      for (double v : t.data()) EXPECT_EQ(v, 0.0) << name;
    } else if (t.size() >= 1000) {
      double mean = 0, sq = 0;
      for (double v : t.data()) mean += v / t.size();
      for (double v : t.data()) sq += (v - mean) * (v - mean) / t.size();
      EXPECT_NEAR(std::sqrt(sq), 0.02, 0.003) << name;
      EXPECT_NEAR(mean, 0.0, 0.003) << name;
    }
  }
}

TEST(Decoder, LogitsHaveSymptomLengthAndNormalize) {
  const DxFormer m(tiny_config(), 1);
  const auto logits = m.decoder_logits(std::vector<Observation>{{0, Attribute::pos}, {3, Attribute::unk}});
  ASSERT_EQ(logits.size(), 5u);
  double s = 0;
  for (double p : num::softmax(logits)) s += p;
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Decoder, RejectsEmptyAndOverlongContext) {
  const DxFormer m(tiny_config(), 1);
  EXPECT_THROW(m.decoder_logits(std::vector<Observation>{}), Error);
  std::vector<Observation> ctx(9, {0, Attribute::pos});
  EXPECT_THROW(m.decoder_logits(ctx), Error);
  EXPECT_THROW(m.decoder_logits(std::vector<Observation>{{5, Attribute::pos}}), Error);
}

TEST(Decoder, MatchesLiteralOracle) {
  for (bool sparse : {false, true}) {
    auto c = tiny_config();
    c.sparse_inputs = sparse;
    DxFormer m(c, 11);
    dxtest::scramble(m, 12);
    const Oracle oracle(m);
    std::mt19937_64 rng(13);
    for (std::size_t len : {1u, 3u, 6u}) {
      const auto ctx = random_context(len, 5, rng);
      num::Graph g(m.parameters());
      const auto& got = g.value(m.decoder_forward(g, ctx));
      const auto expected = oracle.decoder(ctx);
      for (std::size_t r = 0; r < len; ++r)
        for (std::size_t s = 0; s < 5; ++s) EXPECT_NEAR(got(r, s), expected[r][s], 1e-10) << sparse << " " << len;
    }
  }
}

TEST(Decoder, CausalityUnderSuffixMutation) {
  DxFormer m(tiny_config(), 5);
  dxtest::scramble(m, 6);
  std::mt19937_64 rng(7);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t len = 2 + rng() % 6;
    auto ctx = random_context(len, 5, rng);
    const std::size_t cut = 1 + rng() % (len - 1);
    auto mutated = ctx;
    for (std::size_t i = cut; i < len; ++i) mutated[i] = {static_cast<SymptomId>(rng() % 5), static_cast<Attribute>(rng() % 3)};
    num::Graph g1(m.parameters()), g2(m.parameters());
    const auto& a = g1.value(m.decoder_forward(g1, ctx));
    const auto& b = g2.value(m.decoder_forward(g2, mutated));
    for (std::size_t r = 0; r < cut; ++r)
      for (std::size_t s = 0; s < 5; ++s) worst = std::max(worst, std::abs(a(r, s) - b(r, s)));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Encoder, MatchesLiteralOracleAndNormalizes) {
  for (bool sparse : {false, true}) {
    auto c = tiny_config();
    c.sparse_inputs = sparse;
    DxFormer m(c, 21);
    dxtest::scramble(m, 22);
    const Oracle oracle(m);
    const std::vector<Observation> in{{4, Attribute::pos}, {1, Attribute::neg}, {2, Attribute::pos}};
    const auto got = m.classify(in);
    const auto expected = oracle.encoder_probs(in);
    ASSERT_EQ(got.size(), 3u);
    double s = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_NEAR(got[i], expected[i], 1e-12);
      s += got[i];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Encoder, PermutationInvariant) {
  DxFormer m(tiny_config(), 31);
  dxtest::scramble(m, 32);
  std::mt19937_64 rng(33);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto in = random_context(1 + rng() % 5, 5, rng);
    const auto a = m.classify(in);
    std::shuffle(in.begin(), in.end(), rng);
    const auto b = m.classify(in);
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  EXPECT_LT(worst, 1e-9);
  EXPECT_THROW(m.classify(std::vector<Observation>{}), Error);
}

TEST(SharedEmbeddings, BothStacksWriteTheSameStorage) {
  const DxFormer m(tiny_config(), 41);
  ASSERT_EQ(m.parameters().name(0), "embedding.symptom");
  const std::vector<Observation> in{{2, Attribute::pos}};
  num::Graph gd(m.parameters());
  gd.backward(num::ops::sum(gd, m.decoder_forward(gd, in)));
  num::Graph ge(m.parameters());
  ge.backward(num::ops::pick(ge, m.encoder_forward(ge, in), 0, 1));
  const auto dg = gd.parameter_gradients(), eg = ge.parameter_gradients();
  ASSERT_FALSE(dg[0].empty());
  ASSERT_FALSE(eg[0].empty());
  EXPECT_TRUE(m.is_shared_parameter(0));
  EXPECT_TRUE(m.is_shared_parameter(1));
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    const auto& name = m.parameters().name(i);
    EXPECT_EQ(m.is_decoder_parameter(i), name.starts_with("decoder.")) << name;
    EXPECT_EQ(m.is_encoder_parameter(i), name.starts_with("encoder.")) << name;
    if (m.is_decoder_parameter(i)) {
      EXPECT_TRUE(eg[i].empty()) << name;
    }
  }
}

TEST(NextSymptom, GreedyArgmaxAndMasking) {
  Rng rng(0);
  const std::vector<double> logits{2, 1, 0};
  EXPECT_EQ(next_symptom(logits, {true, true, true}, DecodeMode::greedy, rng).symptom, 0u);
  const auto c = next_symptom(logits, {false, true, true}, DecodeMode::greedy, rng);
  EXPECT_EQ(c.symptom, 1u);
  EXPECT_NEAR(c.log_prob, 1.0 - std::log(std::exp(1.0) + 1.0), 1e-12);
  EXPECT_EQ(next_symptom(std::vector<double>{1, 3, 3}, {true, true, true}, DecodeMode::greedy, rng).symptom, 1u);
  EXPECT_THROW(next_symptom(logits, {false, false, false}, DecodeMode::greedy, rng), Error);
  EXPECT_THROW(next_symptom(logits, {true, true}, DecodeMode::greedy, rng), Error);
}

TEST(NextSymptom, GreedyInvariantToConstantShift) {
  std::mt19937_64 rng(3);
  Rng dummy(0);
  for (int trial = 0; trial < 200; ++trial) {
    auto logits = dxtest::random_tensor(1, 7, rng).data();
    std::vector<bool> mask(7);
    for (std::size_t i = 0; i < 7; ++i) mask[i] = rng() % 3 != 0;
    mask[rng() % 7] = true;
    const auto a = next_symptom(logits, mask, DecodeMode::greedy, dummy);
    for (auto& v : logits) v += 123.25;
    const auto b = next_symptom(logits, mask, DecodeMode::greedy, dummy);
    EXPECT_EQ(a.symptom, b.symptom);
    EXPECT_TRUE(mask[a.symptom]);
  }
}

TEST(NextSymptom, SamplingFrequenciesMatchMaskedSoftmax) {
  Rng rng(2024);
  const std::vector<double> logits{0.0, 0.0, std::log(3.0)};
  const std::vector<bool> mask{true, true, true};
  std::vector<int> counts(3, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto c = next_symptom(logits, mask, DecodeMode::sample, rng);
    ++counts[c.symptom];
  }
  const std::vector<double> p{0.2, 0.2, 0.6};
  for (int i = 0; i < 3; ++i) {
    const double sigma = std::sqrt(draws * p[i] * (1 - p[i]));
    EXPECT_LT(std::abs(counts[i] - draws * p[i]), 3 * sigma) << i;
  }
  // Masked entries are never drawn.
  for (int i = 0; i < 500; ++i) EXPECT_NE(next_symptom(logits, {true, true, false}, DecodeMode::sample, rng).symptom, 2u);
}

TEST(Positions, SinusoidalTable) {
  const auto pe = sinusoidal_positions(4, 6);
  EXPECT_EQ(pe(0, 0), 0.0);
  EXPECT_EQ(pe(0, 1), 1.0);
  EXPECT_NEAR(pe(3, 0), std::sin(3.0), 1e-15);
  EXPECT_NEAR(pe(2, 3), std::cos(2.0 / std::pow(10000.0, 2.0 / 6)), 1e-15);
}

}  // namespace
