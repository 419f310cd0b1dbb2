// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

#include "modatt/parameters.hpp"
#include "modatt/tensor.hpp"

namespace modatt {

/// Content-based (additive) attention: e_u = v^T tanh(W_h h_u + W_s s + b).
struct AttenderParams {
  Tensor w_h;  // [A x E]
  Tensor w_s;  // [A x S]
  Tensor v;    // [1 x A]
  Tensor b;    // [A]

  std::size_t attention_dim() const { return w_h.shape()[0]; }
  std::size_t memory_dim() const { return w_h.shape()[1]; }
  std::size_t state_dim() const { return w_s.shape()[1]; }

  static AttenderParams create(ParameterSet& params, const std::string& prefix,
                               std::size_t memory_dim, std::size_t state_dim,
                               std::size_t attention_dim, std::mt19937_64& rng);
  static AttenderParams bind(const ParameterSet& params, const std::string& prefix);
};

/// W_h h_u + b for every memory row; depends only on the memory, so callers
/// compute it once per utterance.
Tensor attention_keys(const AttenderParams& p, const Tensor& memory);

/// Energies [1 x U] for decoder state s [1 x S].
Tensor energies(const AttenderParams& p, const Tensor& s, const Tensor& memory);
Tensor energies_from_keys(const AttenderParams& p, const Tensor& keys, const Tensor& s);

struct Attended {
  Tensor context;  // [1 x E]
  Tensor weights;  // [1 x U]
};

/// `keep` masks memory rows (one entry per row, zero = padding).
Attended attend(const AttenderParams& p, const Tensor& s, const Tensor& memory,
                std::span<const std::uint8_t> keep = {});
Attended attend_with_keys(const AttenderParams& p, const Tensor& keys, const Tensor& memory,
                          const Tensor& s, std::span<const std::uint8_t> keep = {});

}  // namespace modatt
