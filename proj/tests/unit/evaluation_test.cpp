// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/evaluation.hpp"

#include <gtest/gtest.h>

#include <json.hpp>
#include <sstream>

#include "modatt/errors.hpp"
#include "modatt/gradcheck.hpp"
#include "modatt/training.hpp"

namespace modatt {
namespace {

CorpusSpec toy_corpus() {
  CorpusSpec s;
  s.symbols = 2;
  s.min_length = 1;
  s.max_length = 3;
  s.audio_dim = s.video_dim = 3;
  s.train_size = 5;
  s.dev_size = 5;
  s.test_size = 12;
  s.multi_condition = true;
  return s;
}

void expect_same_records(const EvalReport& a, const EvalReport& b) {
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].id, b.records[i].id);
    EXPECT_EQ(a.records[i].decode, b.records[i].decode);
    EXPECT_EQ(a.records[i].ops, b.records[i].ops);
  }
  EXPECT_EQ(a.cer, b.cer);
  EXPECT_EQ(a.attention, b.attention);
}

TEST(Evaluate, MemorisedUtterancesScoreZero) {
  CorpusSpec clean = toy_corpus();
  clean.multi_condition = false;
  const auto train_set = generate_split(clean, Split::kTrain);
  ModelConfig cfg = tiny_model_config(FusionStrategy::kConcat);
  cfg.label_smoothing = 0.0;
  cfg.audio.hidden = cfg.video.hidden = 8;
  cfg.decoder_hidden = 16;
  TrainSchedule s = TrainSchedule::scaled(200);
  s.learning_rate = 1e-2;
  s.halve_from = s.epochs;
  s.ss_final = 0.0;
  s.batch_size = 1;
  s.dev_beam = 3;  // select the checkpoint with the decoder used below
  const TrainResult r = train(cfg, s, train_set, train_set, 1);
  const EvalReport rep = evaluate(r.model(), train_set, {3, 1.0, 6});
  EXPECT_EQ(rep.cer.cer(), 0.0);
  EXPECT_EQ(rep.cer.utterances, 5u);
  for (const auto& rec : rep.records) EXPECT_EQ(rec.decode.hypothesis(), rec.reference);
}

TEST(Evaluate, OnlyModalityAttentionReportsWeights) {
  const auto test_set = generate_split(toy_corpus(), Split::kTest);
  for (FusionStrategy s : {FusionStrategy::kAudioOnly, FusionStrategy::kConcat}) {
    const EvalReport rep = evaluate(Seq2SeqModel(tiny_model_config(s), 2), test_set, {2, 1.0, 6});
    EXPECT_FALSE(rep.attention.has_value());
    for (const auto& rec : rep.records) EXPECT_FALSE(rec.mean_alpha_audio().has_value());
  }
}

TEST(Evaluate, ModalityWeightsAverageToOneAndMatchRecords) {
  const auto test_set = generate_split(toy_corpus(), Split::kTest);
  const Seq2SeqModel m(tiny_model_config(FusionStrategy::kModalityAttention), 3);
  const EvalReport rep = evaluate(m, test_set, {2, 1.0, 6});
  ASSERT_TRUE(rep.attention.has_value());
  double audio = 0.0;
  std::size_t steps = 0;
  for (const auto& rec : rep.records) {
    EXPECT_NEAR(*rec.mean_alpha_audio() + *rec.mean_alpha_video(), 1.0, 1e-12);
    for (const auto& w : rec.decode.modality_weights) audio += w[0];
    steps += rec.decode.modality_weights.size();
  }
  EXPECT_EQ(rep.attention->overall.steps, steps);
  EXPECT_NEAR(rep.attention->overall.audio(), audio / static_cast<double>(steps), 1e-12);
  std::size_t bucketed = 0;
  for (const auto& [label, mean] : rep.attention->by_audio_snr) bucketed += mean.steps;
  EXPECT_EQ(bucketed, steps);
}

TEST(Evaluate, RecordsAgreeWithTheAggregate) {
  const auto test_set = generate_split(toy_corpus(), Split::kTest);
  const Seq2SeqModel m(tiny_model_config(FusionStrategy::kModalityAttention), 4);
  const EvalReport rep = evaluate(m, test_set, {2, 1.0, 6});
  std::size_t edits = 0, refs = 0;
  for (std::size_t i = 0; i < rep.records.size(); ++i) {
    const auto& rec = rep.records[i];
    EXPECT_EQ(rec.id, test_set[i].id);
    EXPECT_EQ(rec.reference, test_set[i].symbols);
    EXPECT_EQ(rec.audio_snr, test_set[i].audio_snr);
    EXPECT_EQ(rec.ops, edit_distance(rec.reference, rec.decode.hypothesis()));
    edits += rec.ops.distance;
    refs += rec.reference.size();
  }
  EXPECT_DOUBLE_EQ(rep.cer.cer(), static_cast<double>(edits) / static_cast<double>(refs));
  expect_same_records(summarize(rep.records, true), rep);
}

TEST(Evaluate, WorkerCountDoesNotChangeAnything) {
  const auto test_set = generate_split(toy_corpus(), Split::kTest);
  const Seq2SeqModel m(tiny_model_config(FusionStrategy::kModalityAttention), 5);
  const EvalReport one = evaluate(m, test_set, {3, 1.0, 6}, 1);
  expect_same_records(one, evaluate(m, test_set, {3, 1.0, 6}, 3));
  expect_same_records(one, evaluate(m, test_set, {3, 1.0, 6}, 1));
}

TEST(Evaluate, RecordsSerialiseOneObjectPerLine) {
  const auto test_set = generate_split(toy_corpus(), Split::kTest);
  const Seq2SeqModel m(tiny_model_config(FusionStrategy::kModalityAttention), 6);
  const EvalReport rep = evaluate(m, test_set, {2, 1.0, 6});
  std::istringstream in(records_jsonl(rep.records));
  std::string line;
  std::size_t i = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    const auto& rec = rep.records.at(i++);
    EXPECT_EQ(j.at("id"), rec.id);
    EXPECT_EQ(j.at("hypothesis").get<std::vector<int>>(), rec.decode.hypothesis());
    EXPECT_EQ(j.at("edits").at("distance").get<std::size_t>(), rec.ops.distance);
    EXPECT_EQ(j.at("audio_snr"), snr_label(rec.audio_snr));
    EXPECT_DOUBLE_EQ(j.at("mean_alpha_audio").get<double>(), *rec.mean_alpha_audio());
  }
  EXPECT_EQ(i, rep.records.size());
}

TEST(CheckCompatible, RejectsMismatchedDimensions) {
  const CorpusSpec c = toy_corpus();
  ModelConfig m = tiny_model_config(FusionStrategy::kConcat);
  EXPECT_NO_THROW(check_compatible(m, c));
  m.vocab_size = 6;
  EXPECT_THROW(check_compatible(m, c), ConfigError);
  m = tiny_model_config(FusionStrategy::kConcat);
  m.video.input_dim = 4;
  EXPECT_THROW(check_compatible(m, c), ConfigError);
  m.strategy = FusionStrategy::kAudioOnly;
  EXPECT_NO_THROW(check_compatible(m, c));
  m.audio.input_dim = 4;
  EXPECT_THROW(check_compatible(m, c), ConfigError);
}

}  // namespace
}  // namespace modatt
