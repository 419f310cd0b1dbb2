// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/beam_search.hpp"

#include <gtest/gtest.h>

#include <map>
#include <random>

#include "modatt/gradcheck.hpp"
#include "oracles.hpp"

namespace modatt {
namespace {

// Next-token logits looked up by the full token history.
class TableModel {
 public:
  using State = std::vector<int>;

  TableModel(std::size_t vocab, std::size_t depth, std::mt19937_64& rng, double scale = 2.0) {
    std::normal_distribution<double> n(0.0, scale);
    for (std::size_t d = 0; d < depth; ++d) {
      for (const auto& h : testing::all_sequences(vocab, d)) {
        auto& row = table_[h];
        for (std::size_t v = 0; v < vocab; ++v) row.push_back(n(rng));
      }
    }
  }

  State initial_state() const { return {}; }
  SearchStep advance(State& s, int token) const {
    if (token != sos()) s.push_back(token);
    return {table_.at(s), {}};
  }
  int sos() const { return -1; }  // never emitted, keeps every table token live
  int eos() const { return 1; }

  std::vector<double>& row(const std::vector<int>& h) { return table_.at(h); }

 private:
  std::map<std::vector<int>, std::vector<double>> table_;
};

TEST(BeamSearch, WidthOneEqualsGreedy) {
  for (FusionStrategy s : {FusionStrategy::kAudioOnly, FusionStrategy::kModalityAttention}) {
    Seq2SeqModel m(tiny_model_config(s), 1);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Utterance u = tiny_utterance(seed, 2);
      const DecodeOptions opt{1, 1.0, 6};
      const UtteranceSearch search(m, u);
      EXPECT_EQ(beam_search(search, opt), greedy_decode(search, opt));
    }
  }
}

TEST(BeamSearch, HandSetTrapIsEscapedByWiderBeam) {
  // Token 3 looks best at step one but every continuation is poor; token 2
  // leads to a confident EOS.
  std::mt19937_64 rng(2);
  TableModel m(4, 3, rng);
  m.row({}) = {-5.0, -5.0, 1.0, 1.2};
  m.row({3}) = {0.0, 0.0, 0.0, 0.0};
  m.row({2}) = {-9.0, 6.0, -9.0, -9.0};
  const DecodeOptions opt{3, 1.0, 3};
  const DecodeResult greedy = greedy_decode(m, {1, 1.0, 3});
  const DecodeResult beam = beam_search(m, opt);
  EXPECT_EQ(greedy.tokens.front(), 3);
  EXPECT_EQ(beam.tokens, (std::vector<int>{2, 1}));
  EXPECT_GT(beam.log_prob, greedy.log_prob);
}

TEST(BeamSearch, FullWidthMatchesExhaustiveEnumeration) {
  // With room for all V^3 prefixes nothing is pruned, so the search must
  // find the global optimum over every sequence.
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const TableModel m(4, 3, rng);
    const DecodeResult r = beam_search(m, {64, 1.0, 3});
    const testing::ScoredSequence best = testing::exhaustive_best(m, 4, 3, 1.0);
    EXPECT_EQ(r.tokens, best.tokens);
    EXPECT_EQ(r.truncated, best.truncated);
    EXPECT_NEAR(r.log_prob, best.score, 1e-12);
  }
}

TEST(BeamSearch, NarrowBeamMatchesEnumeratedSurvivorSets) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const TableModel m(4, 3, rng);
    for (std::size_t width : {1u, 2u, 3u}) {
      const DecodeResult r = beam_search(m, {width, 1.0, 3});
      const auto e = testing::enumerated_beam(m, 4, width, 3, 1.0);
      EXPECT_EQ(r.tokens, e.tokens) << "width " << width;
      EXPECT_NEAR(r.log_prob, e.score, 1e-12);
    }
  }
}

TEST(BeamSearch, InfiniteTemperatureKeepsLowestTokenIds) {
  std::mt19937_64 rng(5);
  const TableModel m(6, 2, rng);
  BeamTrace trace;
  beam_search(m, {3, 1e30, 2}, &trace);
  ASSERT_FALSE(trace.steps.empty());
  ASSERT_EQ(trace.steps[0].size(), 3u);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(trace.steps[0][k].tokens, std::vector<int>{k});
    EXPECT_EQ(trace.steps[0][k].score, trace.steps[0][0].score);
  }
}

TEST(BeamSearch, TemperatureFlattensTheDistribution) {
  const std::vector<double> logits{2.0, 0.0, -1.0};
  const auto sharp = scaled_log_softmax(logits, 0.5);
  const auto flat = scaled_log_softmax(logits, 4.0);
  EXPECT_GT(sharp[0], flat[0]);
  EXPECT_LT(sharp[2], flat[2]);
  double total = 0.0;
  for (double x : flat) total += std::exp(x);
  EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(BeamSearch, NeverScoresBelowGreedy) {
  Seq2SeqModel m(tiny_model_config(FusionStrategy::kConcat), 6);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const UtteranceSearch search(m, tiny_utterance(100 + seed, 1 + seed % 3));
    const DecodeOptions opt{5, 1.0, 8};
    EXPECT_GE(beam_search(search, opt).log_prob, greedy_decode(search, opt).log_prob - 1e-12);
  }
}

TEST(BeamSearch, MaxLenClosesAndFlagsTruncation) {
  std::mt19937_64 rng(7);
  TableModel m(4, 4, rng);
  for (std::size_t d = 0; d < 4; ++d) {
    for (const auto& h : testing::all_sequences(4, d)) m.row(h)[1] = -50.0;
  }
  for (std::size_t width : {1u, 3u}) {
    const DecodeResult r = beam_search(m, {width, 1.0, 4});
    EXPECT_TRUE(r.truncated);
    ASSERT_EQ(r.tokens.size(), 5u);
    EXPECT_EQ(r.tokens.back(), 1);
    EXPECT_EQ(r.hypothesis().size(), 4u);
  }
}

TEST(BeamSearch, RejectsInvalidOptions) {
  std::mt19937_64 rng(8);
  const TableModel m(4, 1, rng);
  EXPECT_THROW(beam_search(m, {0, 1.0, 3}), ContractError);
  EXPECT_THROW(beam_search(m, {3, 0.0, 3}), ContractError);
  EXPECT_THROW(beam_search(m, {3, -1.0, 3}), ContractError);
  EXPECT_THROW(greedy_decode(m, {1, 1.0, 0}), ContractError);
}

TEST(DecodeUtterance, TelemetryFollowsTheReturnedPath) {
  Seq2SeqModel m(tiny_model_config(FusionStrategy::kModalityAttention), 9);
  const Utterance u = tiny_utterance(10, 2);
  const DecodeResult r = decode_utterance(m, u, {3, 1.0, 6});
  ASSERT_EQ(r.attention.size(), r.tokens.size() - (r.truncated ? 1 : 0));
  ASSERT_EQ(r.modality_weights.size(), r.attention.size());
  for (const auto& step : r.attention) {
    ASSERT_EQ(step.size(), 2u);
    EXPECT_EQ(step[0].size(), 4u);  // 16 audio frames after two halvings
    EXPECT_EQ(step[1].size(), 4u);
  }
  const double replay = testing::path_score(UtteranceSearch(m, u),
                                            std::span(r.tokens).first(r.attention.size()), 1.0);
  EXPECT_NEAR(replay, r.log_prob, 1e-12);
}

}  // namespace
}  // namespace modatt
