// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/modality_fusion.hpp"

#include "modatt/errors.hpp"

namespace modatt {

ModalityScorerParams ModalityScorerParams::create(ParameterSet& params, const std::string& prefix,
                                                  std::size_t input_dim, std::size_t hidden,
                                                  std::mt19937_64& rng) {
  ModalityScorerParams p;
  p.lstm = LstmParams::create(params, prefix + ".lstm", input_dim, hidden, rng);
  p.w = params.add_uniform(prefix + ".w", {1, hidden}, hidden, rng);
  p.b = params.add(prefix + ".b", Tensor::parameter({1}, {0.0}));
  return p;
}

ModalityScorerParams ModalityScorerParams::bind(const ParameterSet& params,
                                                const std::string& prefix) {
  ModalityScorerParams p{LstmParams::bind(params, prefix + ".lstm"), params.at(prefix + ".w"),
                         params.at(prefix + ".b")};
  if (p.w.size() != p.lstm.hidden() || p.b.size() != 1) {
    throw DimensionError(prefix + ": inconsistent scorer parameter shapes");
  }
  return p;
}

ModalityScorer::ModalityScorer(std::vector<ModalityScorerParams> per_modality)
    : params_(std::make_shared<const std::vector<ModalityScorerParams>>(std::move(per_modality))) {
  reset();
}

void ModalityScorer::reset() {
  states_.clear();
  for (const auto& p : *params_) states_.push_back(lstm_zero_state(p.lstm.hidden()));
}

Tensor ModalityScorer::score(std::size_t modality, const Tensor& features) {
  if (modality >= params_->size()) {
    throw ContractError("ModalityScorer: unknown modality id " + std::to_string(modality));
  }
  const ModalityScorerParams& p = (*params_)[modality];
  Tensor& state = states_[modality];
  state = lstm_step(p.lstm, features, state);
  return sigmoid(linear(slice(state, 0, 0, 1), p.w, p.b));
}

FusionStep ModalityScorer::fuse(std::span<const ModalityInput> inputs) {
  if (inputs.size() < 2) throw ContractError("ModalityScorer::fuse needs at least two modalities");
  const Shape& dim = inputs[0].features.shape();
  std::vector<Tensor> scores;
  std::vector<Tensor> features;
  for (const ModalityInput& in : inputs) {
    if (in.features.shape() != dim) {
      throw DimensionError("ModalityScorer::fuse: features " + shape_string(in.features.shape()) +
                           " vs " + shape_string(dim));
    }
    scores.push_back(score(in.modality, in.features));
    features.push_back(in.features);
  }
  FusionStep step;
  step.scores = concat(scores, 1);
  step.weights = softmax_last_dim(step.scores);
  step.fused = matmul(step.weights, concat(features, 0));
  step.alpha.assign(step.weights.values().begin(), step.weights.values().end());
  return step;
}

FusedSequence fuse_sequences(ModalityScorer& scorer, std::span<const Tensor> streams) {
  if (streams.size() != scorer.modalities()) {
    throw ContractError("fuse_sequences: expected one stream per modality");
  }
  const Shape& shape = streams[0].shape();
  for (const Tensor& s : streams) {
    if (s.shape() != shape || s.rank() != 2) {
      throw DimensionError("fuse_sequences: streams must share one [T x D] shape");
    }
  }
  std::vector<Tensor> fused;
  std::vector<Tensor> weights;
  for (std::size_t t = 0; t < shape[0]; ++t) {
    std::vector<ModalityInput> inputs;
    for (std::size_t m = 0; m < streams.size(); ++m) {
      inputs.push_back({m, slice(streams[m], 0, t, t + 1)});
    }
    FusionStep step = scorer.fuse(inputs);
    fused.push_back(step.fused);
    weights.push_back(step.weights);
  }
  return {concat(fused, 0), concat(weights, 0)};
}

}  // namespace modatt
