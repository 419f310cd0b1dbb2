// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "modatt/tensor.hpp"

namespace modatt {

/// Named trainable tensors, iterated in lexicographic name order.
class ParameterSet {
 public:
  /// Registers a parameter initialised uniform(-s, s) with s = 1/sqrt(fan_in).
  Tensor& add_uniform(const std::string& name, Shape shape, std::size_t fan_in,
                      std::mt19937_64& rng);
  Tensor& add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  /// Marks parameters whose name starts with any of `prefixes` trainable and
  /// freezes the rest. An empty list makes everything trainable.
  void set_trainable_prefixes(const std::vector<std::string>& prefixes);

  /// Deep copy with fresh leaves (no shared storage, no gradients).
  ParameterSet clone() const;
  /// Copies values from a set with identical names and shapes.
  void assign_values(const ParameterSet& other);

  bool operator==(const ParameterSet& other) const;

 private:
  std::map<std::string, Tensor> params_;
};

/// 64-bit FNV-1a; used for configuration digests.
std::uint64_t fnv1a64(std::string_view bytes);

struct Checkpoint {
  std::string config_text;
  std::uint64_t config_digest = 0;
  ParameterSet params;
};

/// Binary container, little-endian:
///   magic "MODATTCK", u32 version,
///   u64 config digest, u32 config length, config bytes,
///   u32 tensor count, then per tensor:
///     u32 name length, name bytes, u32 rank, u64 extents[rank], f64 values.
void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const std::string& config_text);
std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet& params,
                                               const std::string& config_text);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace modatt
