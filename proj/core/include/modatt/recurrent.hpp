// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "modatt/parameters.hpp"
#include "modatt/tensor.hpp"

namespace modatt {

/// Weights of one LSTM. Gate blocks are ordered (input, forget, cell, output).
struct LstmParams {
  Tensor w_ih;  // [4H x D]
  Tensor w_hh;  // [4H x H]
  Tensor bias;  // [4H], forget block initialised to 1

  std::size_t hidden() const { return w_hh.shape()[1]; }
  std::size_t input_dim() const { return w_ih.shape()[1]; }

  static LstmParams create(ParameterSet& params, const std::string& prefix, std::size_t input_dim,
                           std::size_t hidden, std::mt19937_64& rng);
  static LstmParams bind(const ParameterSet& params, const std::string& prefix);
};

/// [2 x H] zero state (row 0 = h, row 1 = c).
Tensor lstm_zero_state(std::size_t hidden);

/// One recurrence step on x [1 x D]; returns the next [2 x H] state.
Tensor lstm_step(const LstmParams& p, const Tensor& x, const Tensor& state);

struct BlstmOutput {
  Tensor outputs;      // [T x 2H]: forward half, then backward half
  Tensor final_fwd;    // [2 x H] after the last frame
  Tensor final_bwd;    // [2 x H] after the first frame
};

BlstmOutput blstm_forward(const LstmParams& fwd, const LstmParams& bwd, const Tensor& xs);

struct EncoderConfig {
  std::size_t input_dim = 16;
  std::size_t hidden = 32;  // per direction
  /// One entry per layer; `true` concatenates consecutive frame pairs of the
  /// layer's input, halving its time resolution.
  std::vector<bool> subsample;

  std::size_t layers() const { return subsample.size(); }
  std::size_t output_dim() const { return 2 * hidden; }
  std::size_t reduction_steps() const;
  std::size_t output_length(std::size_t frames) const;
};

struct EncoderParams {
  std::vector<LstmParams> fwd;
  std::vector<LstmParams> bwd;

  static EncoderParams create(ParameterSet& params, const std::string& prefix,
                              const EncoderConfig& cfg, std::mt19937_64& rng);
  static EncoderParams bind(const ParameterSet& params, const std::string& prefix,
                            const EncoderConfig& cfg);
};

struct EncoderOutput {
  Tensor memory;       // [U x 2H]
  Tensor final_state;  // [2 x 2H]: top-layer forward and backward summaries
};

EncoderOutput encode(const EncoderConfig& cfg, const EncoderParams& params, const Tensor& xs);

}  // namespace modatt
