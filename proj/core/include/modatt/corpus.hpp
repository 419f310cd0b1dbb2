// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "modatt/kv_config.hpp"
#include "modatt/tensor.hpp"

namespace modatt {

/// Reserved token ids; corpus symbols start at kFirstSymbol.
inline constexpr int kSos = 0;
inline constexpr int kEos = 1;
inline constexpr int kUnk = 2;
inline constexpr int kFirstSymbol = 3;

enum class Split { kTrain, kDev, kTest };
std::string_view split_name(Split split);
Split parse_split(std::string_view name);

/// Empty optional means a clean stream.
using Snr = std::optional<double>;
std::string snr_label(const Snr& snr);
/// "clean" or a finite dB value.
Snr parse_snr(std::string_view text);

/// Noise confined to frames [round(start*T), round(end*T)).
struct BurstWindow {
  double start = 0.0;
  double end = 1.0;
  double snr_db = 0.0;

  bool operator==(const BurstWindow&) const = default;
};

struct CorpusSpec {
  std::size_t symbols = 20;
  std::size_t min_length = 3;
  std::size_t max_length = 8;
  std::size_t audio_frames_per_symbol = 8;
  std::size_t video_frames_per_symbol = 2;
  std::size_t audio_dim = 16;
  std::size_t video_dim = 16;
  std::uint64_t seed = 1;
  double jitter = 0.1;
  /// Scale of a fixed offset vector shared by every frame of a stream, like
  /// the common spectral envelope of real features. It counts towards the
  /// signal power, so at a given SNR the noise is larger relative to the
  /// symbol-specific part.
  double offset_scale = 2.5;
  /// Distinct visual prototypes; symbols share them round-robin when fewer
  /// than `symbols` (several sounds, one mouth shape). 0, or any value of at
  /// least `symbols`, means one per symbol.
  std::size_t video_classes = 10;
  Snr audio_snr;
  Snr video_snr;
  /// Per-utterance audio SNR drawn uniformly from {clean, 10, 5, 0} dB.
  bool multi_condition = false;
  std::vector<BurstWindow> audio_burst;
  std::vector<BurstWindow> video_burst;
  std::size_t train_size = 2000;
  std::size_t dev_size = 200;
  std::size_t test_size = 400;

  /// Reads the keys documented in README (symbols, min_length, audio_snr, ...).
  static CorpusSpec from_config(const KeyValues& kv);

  std::size_t vocab_size() const { return symbols + kFirstSymbol; }
  std::size_t split_size(Split split) const;
  std::size_t visual_classes() const {
    return video_classes == 0 || video_classes >= symbols ? symbols : video_classes;
  }
  void validate() const;
  /// Canonical key-value rendering; the digest is taken over it.
  std::string to_text() const;
  std::uint64_t digest() const;
};

/// Multi-condition SNR ladder.
inline const std::vector<Snr>& snr_ladder() {
  static const std::vector<Snr> ladder{std::nullopt, 10.0, 5.0, 0.0};
  return ladder;
}

struct Utterance {
  std::string id;
  std::vector<int> symbols;  // token ids, no SOS/EOS
  Tensor audio;              // [T_a x D_a]
  Tensor video;              // [T_v x D_v]
  /// Valid prefix lengths; frames beyond them are padding.
  std::size_t audio_frames = 0;
  std::size_t video_frames = 0;
  Snr audio_snr;
  Snr video_snr;
  std::vector<BurstWindow> audio_burst;
};

struct Prototypes {
  Tensor audio;  // [symbols x D_a]
  Tensor video;  // [visual classes x D_v]
  Tensor audio_offset;  // [1 x D_a]
  Tensor video_offset;  // [1 x D_v]
};

Prototypes make_prototypes(const CorpusSpec& spec);

/// Pure function of (spec, split, index).
Utterance generate(const CorpusSpec& spec, Split split, std::size_t index);
std::vector<Utterance> generate_split(const CorpusSpec& spec, Split split);

/// Mean per-coordinate power of a stream.
double signal_power(const Tensor& stream);

/// Adds zero-mean white Gaussian noise with variance P_s / 10^(snr/10).
/// `reference_power` overrides P_s (defaults to the stream's own power).
Tensor apply_noise(const Tensor& stream, const Snr& snr_db, std::mt19937_64& rng,
                   std::optional<double> reference_power = std::nullopt);

/// Noise restricted to the scheduled windows; frames outside are untouched.
Tensor apply_burst(const Tensor& stream, std::span<const BurstWindow> schedule,
                   std::mt19937_64& rng, std::optional<double> reference_power = std::nullopt);

std::string burst_text(const std::vector<BurstWindow>& windows);
/// "start:end:snr" items separated by commas.
std::vector<BurstWindow> parse_burst(std::string_view text);

/// Frame range [first, second) covered by a window on a stream of `frames`.
std::pair<std::size_t, std::size_t> burst_frames(const BurstWindow& w, std::size_t frames);

/// Split cache: "MODATTCP", u32 version, u64 spec digest, u32 split, u32 count,
/// then per utterance id, symbols, SNR metadata and both streams.
void save_split(const std::filesystem::path& path, const CorpusSpec& spec, Split split,
                const std::vector<Utterance>& utterances);
/// Nullopt when the file is missing or was written for a different spec.
std::optional<std::vector<Utterance>> load_split(const std::filesystem::path& path,
                                                 const CorpusSpec& spec, Split split);
std::filesystem::path split_cache_path(const std::filesystem::path& dir, Split split);
std::vector<Utterance> load_or_generate_split(const std::filesystem::path& cache_dir,
                                              const CorpusSpec& spec, Split split);

}  // namespace modatt
