// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "modatt/beam_search.hpp"
#include "modatt/corpus.hpp"
#include "modatt/evaluation.hpp"
#include "modatt/kv_config.hpp"
#include "modatt/model.hpp"
#include "modatt/training.hpp"

namespace modatt {

/// Strategies x audio conditions x seeds, sharing one corpus/model/schedule
/// base. A multi-condition grid trains every cell on per-utterance random SNR
/// and tests it on each ladder level.
struct GridSpec {
  std::vector<FusionStrategy> strategies{FusionStrategy::kAudioOnly, FusionStrategy::kConcat,
                                         FusionStrategy::kModalityAttention};
  std::vector<Snr> conditions{0.0, std::nullopt};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  bool multi_condition = false;
  std::size_t workers = 1;
  CorpusSpec corpus;
  /// Strategy, vocabulary and input dims are filled in per cell.
  ModelConfig model;
  TrainSchedule schedule;
  DecodeOptions decode;

  /// Top-level keys plus `corpus.`, `model.`, `train.` and `decode.` sections.
  static GridSpec from_config(const KeyValues& kv);
  void validate() const;
};

/// Model config for one strategy over a corpus: vocabulary and input dims
/// follow the corpus.
ModelConfig cell_model_config(const ModelConfig& base, FusionStrategy strategy,
                              const CorpusSpec& corpus);

/// Corpus a cell trains on.
CorpusSpec cell_training_corpus(const GridSpec& grid, const Snr& condition);
/// Corpus a cell is tested on (test split only).
CorpusSpec cell_test_corpus(const GridSpec& grid, const Snr& condition);

struct CellResult {
  FusionStrategy strategy = FusionStrategy::kAudioOnly;
  /// "multi" for multi-condition training, else the SNR label.
  std::string train_condition;
  std::string test_condition;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  bool cached = false;
  std::size_t best_epoch = 0;
  double dev_cer = 0.0;
  double cer = 0.0;
  std::optional<double> alpha_audio, alpha_video;
  std::uint64_t digest = 0;

  bool operator==(const CellResult&) const = default;
};

struct GridResult {
  std::vector<CellResult> cells;
  bool all_ok() const;

  /// Seed mean of the successful cells for (strategy, test condition).
  struct Summary {
    FusionStrategy strategy = FusionStrategy::kAudioOnly;
    std::string test_condition;
    std::size_t seeds = 0;
    double cer = 0.0;
    std::optional<double> alpha_audio;
    /// (reference - cer) / reference against audio-only and concat.
    std::optional<double> rel_vs_audio_only, rel_vs_concat;
  };
  std::vector<Summary> summary() const;
};

struct GridOptions {
  /// Cells, caches and result tables go here; empty keeps everything in memory.
  std::filesystem::path output_dir;
  std::filesystem::path corpus_cache;
  std::function<void(const CellResult&)> on_cell;
};

/// Trains or reloads every cell and evaluates it. A failing cell is recorded
/// and the grid continues.
GridResult run_experiment_grid(const GridSpec& grid, const GridOptions& options = {});

std::string grid_json(const GridResult& result);
std::string grid_csv(const GridResult& result);
/// Aligned table: one row per strategy, one CER column per test condition
/// with relative improvements, then mean audio weights.
std::string grid_table(const GridResult& result);
void write_grid_outputs(const std::filesystem::path& dir, const GridResult& result);

}  // namespace modatt
