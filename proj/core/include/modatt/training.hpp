// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "modatt/corpus.hpp"
#include "modatt/kv_config.hpp"
#include "modatt/model.hpp"
#include "modatt/parameters.hpp"

namespace modatt {

/// A run of epochs during which only parameters under `trainable` prefixes
/// are updated (empty list = everything).
struct TrainStage {
  std::size_t epochs = 0;
  std::vector<std::string> trainable;
  bool operator==(const TrainStage&) const = default;
};

/// Epoch-indexed optimisation recipe. Epochs are 1-based.
struct TrainSchedule {
  std::size_t epochs = 15;
  /// Scheduled sampling is 0 before `ss_start`, rises linearly to reach
  /// `ss_final` at `ss_end`, then stays there.
  std::size_t ss_start = 5;
  std::size_t ss_end = 8;
  double ss_final = 0.4;
  double learning_rate = 2e-3;
  /// First epoch at half the rate; every later epoch halves again.
  std::size_t halve_from = 11;
  /// First epoch visits utterances shortest first.
  bool curriculum = true;
  std::size_t batch_size = 4;
  double clip_norm = 5.0;
  /// Empty means one joint stage over all epochs.
  std::vector<TrainStage> stages;
  /// Beam width for the per-epoch dev CER (1 = greedy).
  std::size_t dev_beam = 1;

  std::size_t teacher_forced_epochs() const { return ss_start - 1; }

  /// Default recipe with its epoch anchors rescaled to `epochs` total.
  static TrainSchedule scaled(std::size_t epochs);
  /// Reads `epochs` first, rescales the anchors, then applies overrides.
  static TrainSchedule from_config(const KeyValues& kv);
  void validate() const;
  std::string to_text() const;
  /// Stage index (0-based) active at `epoch`.
  std::size_t stage_at(std::size_t epoch) const;
};

double ss_rate_at(const TrainSchedule& sched, std::size_t epoch);
double lr_at(const TrainSchedule& sched, std::size_t epoch);

/// "listener+speller:3,all:12" style stage lists.
std::vector<TrainStage> parse_stages(std::string_view text);
std::string stages_text(const std::vector<TrainStage>& stages);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Calls to adam_step so far.
  std::uint64_t step = 0;
  struct Moments {
    std::vector<double> m, v;
    /// Updates applied to this parameter; drives its bias correction so a
    /// parameter unfrozen late starts like a fresh one.
    std::uint64_t updates = 0;
  };
  std::map<std::string, Moments> moments;
};

/// Adam update of every trainable parameter from its gradient buffer.
/// A trainable parameter without a gradient is a ContractError.
void adam_step(AdamState& state, ParameterSet& params, double lr);

/// Rescales trainable gradients so their global L2 norm is at most
/// `max_norm`; returns the norm before clipping.
double clip_gradients(ParameterSet& params, double max_norm);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t stage = 0;
  double lr = 0.0;
  double ss_rate = 0.0;
  double train_loss = 0.0;
  double dev_cer = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

std::string epoch_json(const EpochRecord& r);

struct TrainOptions {
  /// When set: train_log.jsonl, epoch_NN.ckpt and best.ckpt go here.
  std::filesystem::path output_dir;
  std::size_t eval_workers = 1;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ModelConfig config;
  ParameterSet best;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;

  Seq2SeqModel model() const { return Seq2SeqModel(config, best.clone()); }
};

/// Trains from a seeded initialisation and returns the parameters with the
/// lowest dev CER (earliest epoch on ties). Throws DivergenceError on a
/// non-finite loss or gradient.
TrainResult train(const ModelConfig& cfg, const TrainSchedule& sched,
                  std::span<const Utterance> train_set, std::span<const Utterance> dev_set,
                  std::uint64_t seed, const TrainOptions& options = {});

/// Utterance visiting order for one epoch, already cut into batches.
std::vector<std::vector<std::size_t>> epoch_batches(std::span<const Utterance> data,
                                                    const TrainSchedule& sched,
                                                    std::size_t epoch, std::mt19937_64& rng);

}  // namespace modatt
