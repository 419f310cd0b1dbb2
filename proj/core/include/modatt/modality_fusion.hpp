// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "modatt/parameters.hpp"
#include "modatt/recurrent.hpp"
#include "modatt/tensor.hpp"

namespace modatt {

enum Modality : std::size_t { kAudio = 0, kVideo = 1 };

/// Scoring network of one modality: an LSTM over that modality's feature
/// stream followed by a single sigmoid output unit.
struct ModalityScorerParams {
  LstmParams lstm;
  Tensor w;  // [1 x Z]
  Tensor b;  // [1]

  static ModalityScorerParams create(ParameterSet& params, const std::string& prefix,
                                     std::size_t input_dim, std::size_t hidden,
                                     std::mt19937_64& rng);
  static ModalityScorerParams bind(const ParameterSet& params, const std::string& prefix);
};

struct ModalityInput {
  std::size_t modality;
  Tensor features;  // [1 x E]
};

struct FusionStep {
  Tensor fused;    // [1 x E], sum_m alpha_m * f_m
  Tensor scores;   // [1 x M] sigmoid scores
  Tensor weights;  // [1 x M] softmax over scores
  std::vector<double> alpha;
};

/// Modality attention with recurrent per-modality scoring. Holds the running
/// LSTM state of every modality for the utterance being processed; copies are
/// independent (beam hypotheses each carry their own).
class ModalityScorer {
 public:
  explicit ModalityScorer(std::vector<ModalityScorerParams> per_modality);

  std::size_t modalities() const { return params_->size(); }

  /// Advances the scoring LSTM of `modality` by one step on `features` and
  /// returns sigma(W h + b) as a [1 x 1] tensor.
  Tensor score(std::size_t modality, const Tensor& features);

  /// Scores each input, normalises the scores with a softmax and returns the
  /// weighted sum of the inputs.
  FusionStep fuse(std::span<const ModalityInput> inputs);

  /// Zeroes every scoring state; call at utterance start.
  void reset();

  const std::vector<Tensor>& states() const { return states_; }

 private:
  std::shared_ptr<const std::vector<ModalityScorerParams>> params_;
  std::vector<Tensor> states_;
};

struct FusedSequence {
  Tensor fused;    // [T x D]
  Tensor weights;  // [T x M]
};

/// General frame-synchronous form: fuses M equally long feature streams
/// [T x D] frame by frame, the scorer consuming each stream's history.
FusedSequence fuse_sequences(ModalityScorer& scorer, std::span<const Tensor> streams);

}  // namespace modatt
