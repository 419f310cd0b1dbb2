// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/attention.hpp"

#include <algorithm>

#include "modatt/errors.hpp"

namespace modatt {

AttenderParams AttenderParams::create(ParameterSet& params, const std::string& prefix,
                                      std::size_t memory_dim, std::size_t state_dim,
                                      std::size_t attention_dim, std::mt19937_64& rng) {
  AttenderParams p;
  p.w_h = params.add_uniform(prefix + ".w_h", {attention_dim, memory_dim}, memory_dim, rng);
  p.w_s = params.add_uniform(prefix + ".w_s", {attention_dim, state_dim}, state_dim, rng);
  p.v = params.add_uniform(prefix + ".v", {1, attention_dim}, attention_dim, rng);
  p.b = params.add(prefix + ".b", Tensor::parameter({attention_dim},
                                                    std::vector<double>(attention_dim, 0.0)));
  return p;
}

AttenderParams AttenderParams::bind(const ParameterSet& params, const std::string& prefix) {
  AttenderParams p{params.at(prefix + ".w_h"), params.at(prefix + ".w_s"),
                   params.at(prefix + ".v"), params.at(prefix + ".b")};
  const std::size_t a = p.w_h.shape()[0];
  if (p.w_s.shape()[0] != a || p.v.size() != a || p.b.size() != a) {
    throw DimensionError(prefix + ": inconsistent attender parameter shapes");
  }
  return p;
}

Tensor attention_keys(const AttenderParams& p, const Tensor& memory) {
  return linear(memory, p.w_h, p.b);
}

Tensor energies_from_keys(const AttenderParams& p, const Tensor& keys, const Tensor& s) {
  return additive_energies(keys, linear(s, p.w_s), p.v);
}

Tensor energies(const AttenderParams& p, const Tensor& s, const Tensor& memory) {
  return energies_from_keys(p, attention_keys(p, memory), s);
}

Attended attend_with_keys(const AttenderParams& p, const Tensor& keys, const Tensor& memory,
                          const Tensor& s, std::span<const std::uint8_t> keep) {
  if (!keep.empty() && keep.size() != memory.shape()[0]) {
    throw DimensionError("attend: mask covers " + std::to_string(keep.size()) + " rows, memory has " +
                         std::to_string(memory.shape()[0]));
  }
  if (!keep.empty() && std::none_of(keep.begin(), keep.end(), [](std::uint8_t k) { return k; })) {
    throw InvalidMaskError("attend: every memory row is masked");
  }
  Tensor weights = softmax_last_dim(energies_from_keys(p, keys, s), keep);
  return {matmul(weights, memory), weights};
}

Attended attend(const AttenderParams& p, const Tensor& s, const Tensor& memory,
                std::span<const std::uint8_t> keep) {
  return attend_with_keys(p, attention_keys(p, memory), memory, s, keep);
}

}  // namespace modatt
