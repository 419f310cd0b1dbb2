// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace modatt {

/// Flat `key = value` text configuration. Blank lines and lines starting with
/// '#' are ignored; later assignments override earlier ones. Lists are
/// comma-separated. Typed getters throw ConfigError on malformed values, and
/// `reject_unused` reports keys nobody asked for (usually typos).
class KeyValues {
 public:
  static KeyValues parse(std::string_view text, const std::string& source = "<text>");
  static KeyValues load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const;

  /// Keys under `prefix.` with the prefix stripped.
  KeyValues section(const std::string& prefix) const;
  void reject_unused() const;

  const std::map<std::string, std::string>& entries() const { return entries_; }
  std::string to_text() const;

 private:
  std::string where(const std::string& key) const;

  std::map<std::string, std::string> entries_;
  std::string source_ = "<text>";
  mutable std::set<std::string> used_;
  // Sections forward usage back to their parent.
  const KeyValues* parent_ = nullptr;
  std::string parent_prefix_;
};

std::vector<std::string> split_list(std::string_view text, char sep = ',');
std::string trim(std::string_view text);

}  // namespace modatt
