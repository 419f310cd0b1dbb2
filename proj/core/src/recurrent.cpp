// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/recurrent.hpp"

#include <algorithm>

#include "modatt/errors.hpp"

namespace modatt {

LstmParams LstmParams::create(ParameterSet& params, const std::string& prefix,
                              std::size_t input_dim, std::size_t hidden, std::mt19937_64& rng) {
  if (input_dim == 0 || hidden == 0) throw ConfigError(prefix + ": LSTM sizes must be positive");
  LstmParams p;
  p.w_ih = params.add_uniform(prefix + ".w_ih", {4 * hidden, input_dim}, input_dim, rng);
  p.w_hh = params.add_uniform(prefix + ".w_hh", {4 * hidden, hidden}, hidden, rng);
  std::vector<double> bias(4 * hidden, 0.0);
  std::fill(bias.begin() + static_cast<std::ptrdiff_t>(hidden),
            bias.begin() + static_cast<std::ptrdiff_t>(2 * hidden), 1.0);
  p.bias = params.add(prefix + ".b", Tensor::parameter({4 * hidden}, std::move(bias)));
  return p;
}

LstmParams LstmParams::bind(const ParameterSet& params, const std::string& prefix) {
  LstmParams p{params.at(prefix + ".w_ih"), params.at(prefix + ".w_hh"), params.at(prefix + ".b")};
  const std::size_t h = p.w_hh.rank() == 2 ? p.w_hh.shape()[1] : 0;
  if (p.w_hh.rank() != 2 || p.w_hh.shape()[0] != 4 * h || p.w_ih.rank() != 2 ||
      p.w_ih.shape()[0] != 4 * h || p.bias.size() != 4 * h) {
    throw DimensionError(prefix + ": inconsistent LSTM parameter shapes");
  }
  return p;
}

Tensor lstm_zero_state(std::size_t hidden) { return Tensor::zeros({2, hidden}); }

Tensor lstm_step(const LstmParams& p, const Tensor& x, const Tensor& state) {
  if (x.rank() != 2 || x.shape()[0] != 1 || x.shape()[1] != p.input_dim()) {
    throw DimensionError("lstm_step: input " + shape_string(x.shape()) + " for LSTM with input " +
                         std::to_string(p.input_dim()));
  }
  return lstm_cell(linear(x, p.w_ih, p.bias), 0, state, p.w_hh);
}

BlstmOutput blstm_forward(const LstmParams& fwd, const LstmParams& bwd, const Tensor& xs) {
  if (xs.rank() != 2) throw DimensionError("blstm_forward: expected [T x D] input");
  const std::size_t frames = xs.shape()[0];
  if (frames == 0) throw ContractError("blstm_forward: empty sequence");
  const Tensor proj_f = linear(xs, fwd.w_ih, fwd.bias);
  const Tensor proj_b = linear(xs, bwd.w_ih, bwd.bias);

  std::vector<Tensor> states_f;
  std::vector<Tensor> states_b(frames);
  states_f.reserve(frames);
  Tensor state = lstm_zero_state(fwd.hidden());
  for (std::size_t t = 0; t < frames; ++t) {
    state = lstm_cell(proj_f, t, state, fwd.w_hh);
    states_f.push_back(state);
  }
  BlstmOutput out;
  out.final_fwd = state;
  state = lstm_zero_state(bwd.hidden());
  for (std::size_t t = frames; t-- > 0;) {
    state = lstm_cell(proj_b, t, state, bwd.w_hh);
    states_b[t] = state;
  }
  out.final_bwd = state;
  out.outputs = concat({gather_rows(states_f, 0), gather_rows(states_b, 0)}, 1);
  return out;
}

std::size_t EncoderConfig::reduction_steps() const {
  return static_cast<std::size_t>(std::count(subsample.begin(), subsample.end(), true));
}

std::size_t EncoderConfig::output_length(std::size_t frames) const {
  for (bool halve : subsample) {
    if (halve) frames = (frames + 1) / 2;
  }
  return frames;
}

EncoderParams EncoderParams::create(ParameterSet& params, const std::string& prefix,
                                    const EncoderConfig& cfg, std::mt19937_64& rng) {
  if (cfg.layers() == 0) throw ConfigError(prefix + ": encoder needs at least one layer");
  EncoderParams p;
  std::size_t in = cfg.input_dim;
  for (std::size_t l = 0; l < cfg.layers(); ++l) {
    if (cfg.subsample[l]) in *= 2;
    const std::string layer = prefix + ".l" + std::to_string(l);
    p.fwd.push_back(LstmParams::create(params, layer + ".fwd", in, cfg.hidden, rng));
    p.bwd.push_back(LstmParams::create(params, layer + ".bwd", in, cfg.hidden, rng));
    in = cfg.output_dim();
  }
  return p;
}

EncoderParams EncoderParams::bind(const ParameterSet& params, const std::string& prefix,
                                  const EncoderConfig& cfg) {
  EncoderParams p;
  std::size_t in = cfg.input_dim;
  for (std::size_t l = 0; l < cfg.layers(); ++l) {
    if (cfg.subsample[l]) in *= 2;
    const std::string layer = prefix + ".l" + std::to_string(l);
    p.fwd.push_back(LstmParams::bind(params, layer + ".fwd"));
    p.bwd.push_back(LstmParams::bind(params, layer + ".bwd"));
    for (const LstmParams* lp : {&p.fwd.back(), &p.bwd.back()}) {
      if (lp->input_dim() != in || lp->hidden() != cfg.hidden) {
        throw ConfigError(layer + ": checkpoint shapes do not match encoder config");
      }
    }
    in = cfg.output_dim();
  }
  return p;
}

EncoderOutput encode(const EncoderConfig& cfg, const EncoderParams& params, const Tensor& xs) {
  if (xs.rank() != 2 || xs.shape()[1] != cfg.input_dim) {
    throw DimensionError("encode: input " + shape_string(xs.shape()) + " for encoder with input " +
                         std::to_string(cfg.input_dim));
  }
  Tensor h = xs;
  BlstmOutput layer;
  for (std::size_t l = 0; l < cfg.layers(); ++l) {
    if (cfg.subsample[l]) h = pyramidal_subsample(h);
    layer = blstm_forward(params.fwd[l], params.bwd[l], h);
    h = layer.outputs;
  }
  return {h, concat({layer.final_fwd, layer.final_bwd}, 1)};
}

}  // namespace modatt
