// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "modatt/beam_search.hpp"
#include "modatt/corpus.hpp"
#include "modatt/metrics.hpp"
#include "modatt/model.hpp"

namespace modatt {

struct UtteranceRecord {
  std::string id;
  std::vector<int> reference;
  DecodeResult decode;
  EditOps ops;
  Snr audio_snr;

  /// Mean modality weight over decoding steps; nullopt without modality attention.
  std::optional<double> mean_alpha_audio() const;
  std::optional<double> mean_alpha_video() const;
};

struct EvalReport {
  CerReport cer;
  /// Present only for modality-attention models.
  std::optional<AttentionReport> attention;
  std::vector<UtteranceRecord> records;
};

/// Throws ConfigError when the corpus streams do not fit the model.
void check_compatible(const ModelConfig& model, const CorpusSpec& corpus);

/// Decodes every utterance and aggregates CER and modality-weight means.
/// Records keep corpus order whatever the worker count.
EvalReport evaluate(const Seq2SeqModel& model, std::span<const Utterance> utterances,
                    const DecodeOptions& options, std::size_t workers = 1);

/// Rebuilds the aggregate reports from per-utterance records.
EvalReport summarize(std::vector<UtteranceRecord> records, bool modality_attention);

/// One JSON object per line: id, reference, hypothesis, log_prob, truncated,
/// audio_snr, edits and the mean modality weights.
std::string records_jsonl(std::span<const UtteranceRecord> records);
void write_records(const std::filesystem::path& path, std::span<const UtteranceRecord> records);

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn);

}  // namespace modatt

#include "modatt/detail/parallel_for.hpp"
