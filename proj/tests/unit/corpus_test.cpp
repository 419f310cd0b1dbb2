// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/corpus.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "modatt/errors.hpp"
#include "test_support.hpp"

namespace modatt {
namespace {

using testing::to_vector;

CorpusSpec small_spec() {
  CorpusSpec s;
  s.train_size = 40;
  s.dev_size = 10;
  s.test_size = 200;
  return s;
}

void expect_same(const Utterance& a, const Utterance& b) {
  EXPECT_EQ(a.id, b.id);
  EXPECT_EQ(a.symbols, b.symbols);
  EXPECT_EQ(to_vector(a.audio), to_vector(b.audio));
  EXPECT_EQ(to_vector(a.video), to_vector(b.video));
  EXPECT_EQ(a.audio_snr, b.audio_snr);
  EXPECT_EQ(a.video_snr, b.video_snr);
  EXPECT_EQ(a.audio_burst, b.audio_burst);
  EXPECT_EQ(a.audio_frames, b.audio_frames);
  EXPECT_EQ(a.video_frames, b.video_frames);
}

// Share of frames whose nearest prototype (after removing the stream offset)
// is the symbol that generated them.
double nearest_prototype_accuracy(const CorpusSpec& spec, std::span<const Utterance> us) {
  const Prototypes p = make_prototypes(spec);
  std::size_t hits = 0, total = 0;
  for (const Utterance& u : us) {
    for (std::size_t t = 0; t < u.audio_frames; ++t) {
      std::size_t best = 0;
      double best_d = INFINITY;
      for (std::size_t k = 0; k < spec.symbols; ++k) {
        double d = 0.0;
        for (std::size_t j = 0; j < spec.audio_dim; ++j) {
          const double e = u.audio.at(t, j) - p.audio_offset[j] - p.audio.at(k, j);
          d += e * e;
        }
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      const int truth = u.symbols[t / spec.audio_frames_per_symbol] - kFirstSymbol;
      hits += static_cast<int>(best) == truth;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

TEST(Generate, PureFunctionOfSpecSplitAndIndex) {
  const CorpusSpec s = small_spec();
  expect_same(generate(s, Split::kTest, 7), generate(s, Split::kTest, 7));
  EXPECT_NE(to_vector(generate(s, Split::kTest, 7).audio),
            to_vector(generate(s, Split::kTest, 8).audio));
  EXPECT_NE(generate(s, Split::kTrain, 7).id, generate(s, Split::kTest, 7).id);
  const auto all = generate_split(s, Split::kDev);
  ASSERT_EQ(all.size(), 10u);
  expect_same(all[3], generate(s, Split::kDev, 3));
}

TEST(Generate, FixedLengthGivesFixedFrameCounts) {
  CorpusSpec s = small_spec();
  s.min_length = s.max_length = 3;
  for (const Utterance& u : generate_split(s, Split::kDev)) {
    EXPECT_EQ(u.symbols.size(), 3u);
    EXPECT_EQ(u.audio.shape(), (Shape{24, 16}));
    EXPECT_EQ(u.video.shape(), (Shape{6, 16}));
    EXPECT_EQ(u.audio_frames, 24u);
    EXPECT_EQ(u.video_frames, 6u);
  }
}

TEST(Generate, LengthsAndRatesStayInRange) {
  const CorpusSpec s = small_spec();
  for (const Utterance& u : generate_split(s, Split::kTest)) {
    EXPECT_GE(u.symbols.size(), s.min_length);
    EXPECT_LE(u.symbols.size(), s.max_length);
    EXPECT_EQ(u.audio_frames, 4 * u.video_frames);
    for (int sym : u.symbols) {
      EXPECT_GE(sym, kFirstSymbol);
      EXPECT_LT(sym, static_cast<int>(s.vocab_size()));
    }
  }
}

TEST(Generate, CleanFramesSitOnTheirPrototype) {
  const CorpusSpec s = small_spec();
  EXPECT_EQ(nearest_prototype_accuracy(s, generate_split(s, Split::kTest)), 1.0);
}

TEST(Generate, VideoClassesAreSharedRoundRobin) {
  CorpusSpec s = small_spec();
  s.video_classes = 4;
  s.jitter = 0.0;
  const Prototypes p = make_prototypes(s);
  EXPECT_EQ(p.video.shape(), (Shape{4, 16}));
  for (const Utterance& u : generate_split(s, Split::kDev)) {
    for (std::size_t i = 0; i < u.symbols.size(); ++i) {
      const std::size_t cls = static_cast<std::size_t>(u.symbols[i] - kFirstSymbol) % 4;
      EXPECT_NEAR(u.video.at(2 * i, 5), p.video_offset[5] + p.video.at(cls, 5), 1e-15);
    }
  }
}

TEST(Generate, OffsetScaleLeavesPrototypesAlone) {
  CorpusSpec a = small_spec(), b = small_spec();
  b.offset_scale = 0.5;
  const Prototypes pa = make_prototypes(a), pb = make_prototypes(b);
  EXPECT_EQ(to_vector(pa.audio), to_vector(pb.audio));
  for (std::size_t j = 0; j < 16; ++j) {
    EXPECT_NEAR(pa.audio_offset[j] * b.offset_scale, pb.audio_offset[j] * a.offset_scale, 1e-12);
  }
}

TEST(Generate, IndexOutsideSplitThrows) {
  const CorpusSpec s = small_spec();
  EXPECT_THROW(generate(s, Split::kDev, 10), std::out_of_range);
}

TEST(Noise, CleanLeavesStreamUnchanged) {
  std::mt19937_64 rng(1);
  const Tensor x = testing::random_tensor({5, 3}, rng);
  std::mt19937_64 copy = rng;
  EXPECT_EQ(to_vector(apply_noise(x, std::nullopt, rng)), to_vector(x));
  EXPECT_EQ(rng, copy);
}

TEST(Noise, ZeroDecibelsAddsNoiseAsStrongAsTheSignal) {
  CorpusSpec clean = small_spec(), noisy = small_spec();
  noisy.audio_snr = 0.0;
  double signal = 0.0, noise = 0.0;
  for (std::size_t i = 0; i < 200; ++i) {
    const Utterance c = generate(clean, Split::kTest, i), n = generate(noisy, Split::kTest, i);
    EXPECT_EQ(to_vector(c.video), to_vector(n.video));
    signal += signal_power(c.audio);
    noise += signal_power(sub(n.audio, c.audio));
  }
  EXPECT_NEAR(noise / signal, 1.0, 0.05);
}

TEST(Noise, EmpiricalPowerOnTenThousandFrames) {
  std::mt19937_64 rng(7);
  const Tensor x = testing::random_tensor({10000, 16}, rng, 2.0);
  const double p = signal_power(x);
  EXPECT_NEAR(signal_power(sub(apply_noise(x, 0.0, rng), x)) / p, 1.0, 0.05);
  const double snr = 10.0 * std::log10(p / signal_power(sub(apply_noise(x, 10.0, rng), x)));
  EXPECT_NEAR(snr, 10.0, 0.5);
}

TEST(Noise, TenDecibelsOverASplit) {
  CorpusSpec clean = small_spec(), noisy = small_spec();
  noisy.audio_snr = 10.0;
  double signal = 0.0, noise = 0.0;
  for (std::size_t i = 0; i < 200; ++i) {
    const Utterance c = generate(clean, Split::kTest, i), n = generate(noisy, Split::kTest, i);
    signal += signal_power(c.audio);
    noise += signal_power(sub(n.audio, c.audio));
  }
  EXPECT_NEAR(10.0 * std::log10(signal / noise), 10.0, 0.5);
}

TEST(Noise, NearestPrototypeAccuracyFallsWithSnr) {
  double previous = 1.1;
  for (const Snr& snr : snr_ladder()) {
    CorpusSpec s = small_spec();
    s.audio_snr = snr;
    const double acc = nearest_prototype_accuracy(s, generate_split(s, Split::kTest));
    EXPECT_LT(acc, previous) << snr_label(snr);
    previous = acc;
  }
  EXPECT_LT(previous, 0.9);
}

TEST(Noise, InvalidSnrIsRejected) {
  std::mt19937_64 rng(2);
  EXPECT_THROW(apply_noise(Tensor::zeros({2, 2}), INFINITY, rng), ContractError);
  EXPECT_THROW(parse_snr("loud"), ConfigError);
  EXPECT_EQ(parse_snr("clean"), std::nullopt);
  EXPECT_EQ(parse_snr(" -5 "), Snr(-5.0));
  EXPECT_EQ(snr_label(std::nullopt), "clean");
  EXPECT_EQ(snr_label(10.0), "10");
}

TEST(Burst, EmptyScheduleIsIdentity) {
  std::mt19937_64 rng(3);
  const Tensor x = testing::random_tensor({8, 2}, rng);
  EXPECT_EQ(to_vector(apply_burst(x, {}, rng)), to_vector(x));
}

TEST(Burst, FullWindowEqualsWholeStreamNoise) {
  std::mt19937_64 rng(4);
  const Tensor x = testing::random_tensor({8, 2}, rng);
  std::mt19937_64 a(5), b(5);
  const BurstWindow full[] = {{0.0, 1.0, 3.0}};
  EXPECT_EQ(to_vector(apply_burst(x, full, a)), to_vector(apply_noise(x, 3.0, b)));
}

TEST(Burst, FramesOutsideTheWindowAreUntouched) {
  CorpusSpec clean = small_spec(), burst = small_spec();
  burst.audio_burst = {{0.25, 0.5, -5.0}};
  for (std::size_t i = 0; i < 20; ++i) {
    const Utterance c = generate(clean, Split::kTest, i), b = generate(burst, Split::kTest, i);
    const auto [first, last] = burst_frames(burst.audio_burst[0], c.audio_frames);
    EXPECT_EQ(b.audio_burst, burst.audio_burst);
    for (std::size_t t = 0; t < c.audio_frames; ++t) {
      const bool inside = t >= first && t < last;
      for (std::size_t j = 0; j < 16; ++j) {
        if (inside) {
          EXPECT_NE(b.audio.at(t, j), c.audio.at(t, j));
        } else {
          EXPECT_EQ(b.audio.at(t, j), c.audio.at(t, j));
        }
      }
    }
  }
}

TEST(Burst, WindowsMustNotOverlap) {
  std::mt19937_64 rng(6);
  const BurstWindow overlap[] = {{0.1, 0.5, 0.0}, {0.4, 0.6, 0.0}};
  EXPECT_THROW(apply_burst(Tensor::zeros({8, 2}), overlap, rng), ContractError);
  const BurstWindow backwards[] = {{0.5, 0.2, 0.0}};
  EXPECT_THROW(apply_burst(Tensor::zeros({8, 2}), backwards, rng), ContractError);
  CorpusSpec s = small_spec();
  s.audio_burst = {{0.1, 0.5, 0.0}, {0.4, 0.6, 0.0}};
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_EQ(parse_burst("0.25:0.5:-5"), (std::vector<BurstWindow>{{0.25, 0.5, -5.0}}));
  EXPECT_THROW(parse_burst("0.25:0.5"), ConfigError);
}

TEST(MultiCondition, DrawsEveryLadderLevel) {
  CorpusSpec s = small_spec();
  s.multi_condition = true;
  std::map<std::string, std::size_t> counts;
  for (const Utterance& u : generate_split(s, Split::kTest)) ++counts[snr_label(u.audio_snr)];
  ASSERT_EQ(counts.size(), 4u);
  for (const auto& [label, n] : counts) {
    EXPECT_GT(n, 25u) << label;
    EXPECT_LT(n, 75u) << label;
  }
}

TEST(Spec, ValidationAndConfig) {
  CorpusSpec s = small_spec();
  s.audio_frames_per_symbol = 6;
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.min_length = 9;
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.video_classes = 21;
  EXPECT_EQ(s.visual_classes(), s.symbols);
  const CorpusSpec r = CorpusSpec::from_config(KeyValues::parse(small_spec().to_text()));
  EXPECT_EQ(r.to_text(), small_spec().to_text());
  EXPECT_EQ(r.digest(), small_spec().digest());
  s = small_spec();
  s.audio_snr = 5.0;
  EXPECT_NE(s.digest(), small_spec().digest());
}

class CacheTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("modatt_corpus_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(CacheTest, RoundTripsBitExactly) {
  CorpusSpec s = small_spec();
  s.audio_snr = 5.0;
  s.audio_burst = {{0.2, 0.4, -5.0}};
  const auto dev = generate_split(s, Split::kDev);
  const auto path = split_cache_path(dir_, Split::kDev);
  save_split(path, s, Split::kDev, dev);
  const auto back = load_split(path, s, Split::kDev);
  ASSERT_TRUE(back.has_value());
  ASSERT_EQ(back->size(), dev.size());
  for (std::size_t i = 0; i < dev.size(); ++i) expect_same((*back)[i], dev[i]);
}

TEST_F(CacheTest, OtherSpecOrSplitMisses) {
  const CorpusSpec s = small_spec();
  const auto path = split_cache_path(dir_, Split::kDev);
  EXPECT_FALSE(load_split(path, s, Split::kDev).has_value());
  save_split(path, s, Split::kDev, generate_split(s, Split::kDev));
  CorpusSpec other = s;
  other.jitter = 0.2;
  EXPECT_FALSE(load_split(path, other, Split::kDev).has_value());
  EXPECT_FALSE(load_split(path, s, Split::kTest).has_value());
}

TEST_F(CacheTest, ForeignFileIsFormatError) {
  const auto path = dir_ / "junk.corpus";
  std::ofstream(path) << "definitely not a cache";
  EXPECT_THROW(load_split(path, small_spec(), Split::kDev), FormatError);
}

TEST_F(CacheTest, LoadOrGenerateFillsTheCache) {
  const CorpusSpec s = small_spec();
  const auto first = load_or_generate_split(dir_, s, Split::kDev);
  EXPECT_TRUE(std::filesystem::exists(split_cache_path(dir_, Split::kDev)));
  const auto second = load_or_generate_split(dir_, s, Split::kDev);
  for (std::size_t i = 0; i < first.size(); ++i) expect_same(first[i], second[i]);
}

}  // namespace
}  // namespace modatt
