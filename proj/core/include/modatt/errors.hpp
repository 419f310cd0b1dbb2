// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <stdexcept>
#include <string>

namespace modatt {

/// Tensor extents that do not agree for the requested operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A softmax row (or attention memory) with every entry masked out.
class InvalidMaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Target symbol id outside the vocabulary.
class VocabularyError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A caller broke an API precondition (non-scalar loss, bad schedule, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Model, corpus or file configuration that cannot be honoured.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or incompatible on-disk container.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace modatt
