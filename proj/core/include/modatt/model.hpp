// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "modatt/attention.hpp"
#include "modatt/corpus.hpp"
#include "modatt/kv_config.hpp"
#include "modatt/modality_fusion.hpp"
#include "modatt/parameters.hpp"
#include "modatt/recurrent.hpp"

namespace modatt {

enum class FusionStrategy { kAudioOnly, kVideoOnly, kConcat, kModalityAttention };

std::string_view strategy_name(FusionStrategy s);
FusionStrategy parse_strategy(std::string_view name);

/// Parameter-name prefixes of the three trainable components.
inline constexpr std::string_view kListenerPrefix = "listener";
inline constexpr std::string_view kWatcherPrefix = "watcher";
inline constexpr std::string_view kSpellerPrefix = "speller";

struct ModelConfig {
  std::size_t vocab_size = 23;
  std::size_t embed_dim = 16;
  EncoderConfig audio{16, 32, {true, true}};
  EncoderConfig video{16, 32, {false, false}};
  std::size_t decoder_hidden = 64;
  /// 0 selects decoder_hidden.
  std::size_t attention_dim = 0;
  std::size_t scorer_hidden = 16;
  FusionStrategy strategy = FusionStrategy::kModalityAttention;
  double label_smoothing = 0.1;

  bool uses_audio() const { return strategy != FusionStrategy::kVideoOnly; }
  bool uses_video() const { return strategy != FusionStrategy::kAudioOnly; }
  std::size_t effective_attention_dim() const {
    return attention_dim == 0 ? decoder_hidden : attention_dim;
  }
  /// Width of the context vector handed to the decoder and output layer.
  std::size_t context_dim() const;

  void validate() const;
  std::string to_text() const;
  std::uint64_t digest() const;
  static ModelConfig from_config(const KeyValues& kv);
};

/// Per-utterance encoder results reused by every decoding step.
struct EncodedUtterance {
  std::optional<Tensor> audio_memory, audio_keys;
  std::optional<Tensor> video_memory, video_keys;
  Tensor init_state;  // [2 x S]
};

struct StepTelemetry {
  /// Content attention weights per used modality (audio first).
  std::vector<std::vector<double>> attention;
  /// Modality weights (audio, video); empty unless modality attention.
  std::vector<double> modality_weights;
};

struct DecoderState {
  Tensor lstm;     // [2 x S]
  Tensor context;  // [1 x context_dim], c_{i-1}
  std::optional<ModalityScorer> scorer;
};

struct StepOutput {
  Tensor logits;  // [1 x V]
  StepTelemetry telemetry;
};

struct TeacherForcedResult {
  Tensor loss;
  Tensor logits;  // [steps x V]
  std::vector<int> inputs;  // token fed at each step
  std::vector<StepTelemetry> telemetry;
};

/// Attention-based encoder-decoder over audio and/or video streams with a
/// selectable context fusion.
class Seq2SeqModel {
 public:
  Seq2SeqModel(const ModelConfig& cfg, std::uint64_t seed);
  /// Adopts existing parameters (e.g. from a checkpoint); names and shapes
  /// must match what `cfg` creates.
  Seq2SeqModel(const ModelConfig& cfg, ParameterSet params);

  Seq2SeqModel(const Seq2SeqModel&) = delete;
  Seq2SeqModel& operator=(const Seq2SeqModel&) = delete;
  Seq2SeqModel(Seq2SeqModel&&) = default;
  Seq2SeqModel& operator=(Seq2SeqModel&&) = default;

  static Seq2SeqModel from_checkpoint(const Checkpoint& ck);

  const ModelConfig& config() const { return cfg_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }

  EncodedUtterance encode(const Utterance& utt) const;
  DecoderState initial_state(const EncodedUtterance& enc) const;

  /// One decoder LSTM step on [embed(y_prev); c_prev]; returns [2 x S].
  Tensor decoder_step(const Tensor& s_prev, int y_prev, const Tensor& c_prev) const;
  /// Unnormalised scores [1 x V] from [s; c].
  Tensor output_distribution(const Tensor& s, const Tensor& c) const;

  /// attend -> fuse -> output for one step; advances `state`.
  StepOutput step(const EncodedUtterance& enc, DecoderState& state, int prev_token) const;

  /// Label-smoothed training loss. With probability `ss_rate` the token fed
  /// at step i > 0 is sampled from the step i-1 distribution instead of the
  /// reference; `rng` is untouched when ss_rate == 0.
  TeacherForcedResult forward_teacher_forced(const Utterance& utt, double ss_rate,
                                             std::mt19937_64& rng) const;

 private:
  void bind();
  Tensor fuse_contexts(DecoderState& state, const std::optional<Attended>& audio,
                       const std::optional<Attended>& video, StepTelemetry& tel) const;

  ModelConfig cfg_;
  ParameterSet params_;
  std::optional<EncoderParams> listener_, watcher_;
  std::optional<AttenderParams> audio_attender_, video_attender_;
  std::vector<ModalityScorerParams> scorer_;
  Tensor embedding_;
  LstmParams decoder_;
  Tensor out_w_, out_b_;
};

}  // namespace modatt
