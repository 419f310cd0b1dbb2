// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "modatt/model.hpp"
#include "modatt/tensor.hpp"

namespace modatt {

struct GradCheckOptions {
  double step = 1e-4;
  /// A coordinate passes when |analytic - numeric| <= max(tolerance * scale,
  /// abs_floor) with scale = max(|analytic|, |numeric|).
  double tolerance = 1e-4;
  double abs_floor = 1e-8;
  /// Share of coordinates that must pass at `tolerance`; the rest must pass
  /// at `fallback_tolerance`.
  double required_fraction = 0.99;
  double fallback_tolerance = 1e-3;
};

struct GradCheckResult {
  std::string name;
  std::size_t coordinates = 0;
  std::size_t within_tolerance = 0;
  std::size_t within_fallback = 0;
  double max_error = 0.0;  // in tolerance units: error / max(scale, floor / tolerance)
  double tolerance = 0.0;
  bool passed = false;
};

/// Compares reverse-mode gradients of `loss` with central differences for
/// every coordinate of every tensor in `inputs` (trainable leaves).
/// `loss` must rebuild its computation from scratch on each call.
GradCheckResult check_gradients(std::string name, std::span<Tensor> inputs,
                                const std::function<Tensor()>& loss,
                                const GradCheckOptions& options = {});

/// Same, over every parameter of a model.
GradCheckResult check_model_gradients(std::string name, Seq2SeqModel& model,
                                      const std::function<Tensor()>& loss,
                                      const GradCheckOptions& options = {});

/// Tiny model used by the full-model checks: V = 5, hidden 4 per direction,
/// decoder 8, one symbol (T_a = 8, T_v = 2).
ModelConfig tiny_model_config(FusionStrategy strategy);
Utterance tiny_utterance(std::uint64_t seed, std::size_t symbols = 1);

/// Every primitive op (tolerance 1e-6) followed by the four fusion
/// strategies end to end (tolerance 1e-4).
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed);

}  // namespace modatt
