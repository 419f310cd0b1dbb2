// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "modatt/corpus.hpp"

namespace modatt {

struct EditOps {
  std::size_t distance = 0;
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  bool operator==(const EditOps&) const = default;
};

/// Unit-cost Levenshtein distance. Operation counts come from a single
/// backtrace that prefers deletion, then insertion, then the diagonal move.
EditOps edit_distance(std::span<const int> ref, std::span<const int> hyp);

/// Corpus-level CER: total edits over total reference symbols.
struct CerReport {
  std::size_t utterances = 0;
  std::size_t reference_symbols = 0;
  EditOps totals;

  void add(const EditOps& ops, std::size_t ref_len);
  double cer() const;
  bool operator==(const CerReport&) const = default;
};

/// Mean modality weights over every decoding step.
struct AttentionReport {
  struct Mean {
    double audio_sum = 0.0;
    double video_sum = 0.0;
    std::size_t steps = 0;
    double audio() const { return steps ? audio_sum / static_cast<double>(steps) : 0.0; }
    double video() const { return steps ? video_sum / static_cast<double>(steps) : 0.0; }
    bool operator==(const Mean&) const = default;
  };
  Mean overall;
  /// Keyed by the utterance's audio SNR label ("clean", "10", ...).
  std::map<std::string, Mean> by_audio_snr;

  /// `weights` is [step][modality] with audio first.
  void add(const std::vector<std::vector<double>>& weights, const Snr& audio_snr);
  bool operator==(const AttentionReport&) const = default;
};

}  // namespace modatt
