// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/beam_search.hpp"

#include <algorithm>
#include <cmath>

#include "modatt/tensor.hpp"

namespace modatt {

std::vector<int> DecodeResult::hypothesis() const {
  std::vector<int> out = tokens;
  if (!out.empty() && out.back() == kEos) out.pop_back();
  return out;
}

std::vector<double> scaled_log_softmax(std::span<const double> logits, double temperature) {
  if (logits.empty()) throw DimensionError("log-softmax of an empty vector");
  std::vector<double> out(logits.size());
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < logits.size(); ++v) {
    out[v] = logits[v] / temperature;
    peak = std::max(peak, out[v]);
  }
  double total = 0.0;
  for (double x : out) total += std::exp(x - peak);
  const double log_z = peak + std::log(total);
  for (double& x : out) x -= log_z;
  return out;
}

DecodeResult decode_utterance(const Seq2SeqModel& model, const Utterance& utt,
                              const DecodeOptions& opt) {
  NoGradScope no_grad;
  const UtteranceSearch search(model, utt);
  if (opt.beam_width == 1) return greedy_decode(search, opt);
  return beam_search(search, opt);
}

}  // namespace modatt
