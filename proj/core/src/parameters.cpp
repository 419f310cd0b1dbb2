// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/parameters.hpp"

#include <algorithm>
#include <cmath>

#include "binary_io.hpp"
#include "modatt/errors.hpp"

namespace modatt {

namespace {
constexpr std::string_view kCheckpointMagic = "MODATTCK";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

Tensor& ParameterSet::add_uniform(const std::string& name, Shape shape, std::size_t fan_in,
                                  std::mt19937_64& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-s, s);
  std::vector<double> values(element_count(shape));
  for (double& v : values) v = dist(rng);
  return add(name, Tensor::parameter(std::move(shape), std::move(values)));
}

Tensor& ParameterSet::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ContractError("duplicate parameter " + name);
  if (!value.is_leaf()) throw ContractError("parameter " + name + " must be a leaf tensor");
  value.set_requires_grad(true);
  return params_.emplace(name, std::move(value)).first->second;
}

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter " + name);
  return it->second;
}

Tensor& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter " + name);
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void ParameterSet::set_trainable_prefixes(const std::vector<std::string>& prefixes) {
  for (auto& [name, t] : params_) {
    const bool on = prefixes.empty() ||
                    std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& p) {
                      return name.compare(0, p.size(), p) == 0;
                    });
    t.set_requires_grad(on);
  }
}

ParameterSet ParameterSet::clone() const {
  ParameterSet copy;
  for (const auto& [name, t] : params_) {
    Tensor leaf = Tensor::parameter(t.shape(), {t.values().begin(), t.values().end()});
    leaf.set_requires_grad(t.requires_grad());
    copy.params_.emplace(name, std::move(leaf));
  }
  return copy;
}

void ParameterSet::assign_values(const ParameterSet& other) {
  if (other.size() != size()) throw ContractError("assign_values: parameter sets differ");
  for (auto& [name, t] : params_) {
    const Tensor& src = other.at(name);
    if (src.shape() != t.shape()) {
      throw DimensionError("assign_values: " + name + " has shape " + shape_string(t.shape()) +
                           " but source has " + shape_string(src.shape()));
    }
    std::copy(src.values().begin(), src.values().end(), t.mutable_values().begin());
  }
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (size() != other.size()) return false;
  for (const auto& [name, t] : params_) {
    if (!other.contains(name)) return false;
    const Tensor& o = other.at(name);
    if (o.shape() != t.shape()) return false;
    if (!std::equal(t.values().begin(), t.values().end(), o.values().begin())) return false;
  }
  return true;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet& params,
                                               const std::string& config_text) {
  io::Writer w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(fnv1a64(config_text));
  w.str(config_text);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t extent : t.shape()) w.u64(extent);
    for (double v : t.values()) w.f64(v);
  }
  return std::move(w.buffer());
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const std::string& config_text) {
  io::write_file(path, serialize_checkpoint(params, config_text));
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw FormatError("not a modatt checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config_digest = r.u64();
  ck.config_text = r.str();
  if (fnv1a64(ck.config_text) != ck.config_digest) {
    throw FormatError("checkpoint config digest mismatch");
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& extent : shape) extent = r.u64();
    std::vector<double> values(element_count(shape));
    for (double& v : values) v = r.f64();
    ck.params.add(name, Tensor::parameter(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_checkpoint(bytes);
}

}  // namespace modatt
