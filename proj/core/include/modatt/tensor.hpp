// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace modatt {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

/// Dense row-major array of doubles, optionally taking part in a
/// reverse-mode differentiation graph.
///
/// A Tensor is a cheap handle: copies share the same storage. Values of
/// non-leaf tensors are immutable once produced. Leaf tensors created with
/// `parameter()` carry a gradient buffer that `Graph::backward` accumulates
/// into until `zero_grad()` is called.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  /// A [1 x n] row vector.
  static Tensor row(std::vector<double> values);
  /// Trainable leaf.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  /// Extent of dimension 0 of a rank-2 tensor.
  std::size_t rows() const;
  /// Extent of the last dimension.
  std::size_t cols() const;

  std::span<const double> values() const;
  double item() const;
  double operator[](std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  /// Only valid on leaves.
  void set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  /// Empty when no gradient has reached this tensor.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// In-place value access, leaves only (optimizers, checkpoint loading).
  std::span<double> mutable_values();

  /// Value copy with no graph history.
  Tensor detach() const;

  /// Identity of the underlying storage.
  const void* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;

  friend struct TensorAccess;
};

/// Define-by-run operation record.
///
/// While a Graph is alive it is the active graph of the constructing thread;
/// every operation whose inputs require gradients is appended to it in
/// execution order. Graphs nest: destruction restores the previous one.
/// Operations executed with no active graph compute values only.
class Graph {
 public:
  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Reverse sweep from a scalar loss. Intermediate adjoints are reset at the
  /// start of each call; leaf gradients accumulate across calls.
  void backward(const Tensor& loss);

  std::size_t size() const { return tape_.size(); }

  static Graph* active();

 private:
  friend struct TensorAccess;

  std::vector<std::shared_ptr<detail::Node>> tape_;
  Graph* previous_ = nullptr;
};

/// Suspends recording on this thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Graph* saved_;
};

/// Runs `backward` on the active graph.
void backward(const Tensor& loss);

// Dense algebra ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// x [N x D], weight [O x D], bias [O] (or undefined) -> x * weight^T + bias.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

// Elementwise --------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

enum class ElementwiseOp { kAdd, kSub, kMul, kTanh, kSigmoid };
/// Dispatching form: binary ops take two arguments, unary ops one.
Tensor elementwise(ElementwiseOp op, std::span<const Tensor> args);

/// Sum of all elements as a rank-0 tensor.
Tensor sum(const Tensor& a);

// Normalisation ------------------------------------------------------------

/// Softmax over the last dimension. `keep`, when non-empty, has one entry per
/// element; zero entries are excluded and receive exactly 0.
Tensor softmax_last_dim(const Tensor& x, std::span<const std::uint8_t> keep = {});

// Structural ---------------------------------------------------------------

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& t, std::size_t axis, std::size_t begin, std::size_t end);
/// Row `id` of a [V x D] table as [1 x D].
Tensor embedding(const Tensor& table, std::size_t id);
/// Stacks row `row` of each [R x H] tensor into a [T x H] matrix.
Tensor gather_rows(std::span<const Tensor> parts, std::size_t row);
/// [T x D] -> [ceil(T/2) x 2D]; pairs (2t, 2t+1) concatenated, an odd tail
/// frame paired with itself.
Tensor pyramidal_subsample(const Tensor& xs);

// Losses -------------------------------------------------------------------

/// Mean over kept steps of the cross entropy between softmax(logits) and the
/// smoothed target distribution (1 - eps on the target, eps / (V - 1)
/// elsewhere). logits is [steps x V].
Tensor cross_entropy_label_smoothed(const Tensor& logits, std::span<const int> targets,
                                    double smoothing,
                                    std::span<const std::uint8_t> step_keep = {});

// Fused recurrent / attention kernels ----------------------------------------

/// One LSTM step. `input_proj` row `row` holds W_ih x + b for this step,
/// `state` is [2 x H] (row 0 = h, row 1 = c) and `w_hh` is [4H x H]. Gate
/// order is (input, forget, cell, output). Returns the next [2 x H] state.
Tensor lstm_cell(const Tensor& input_proj, std::size_t row, const Tensor& state,
                 const Tensor& w_hh);

/// Additive attention energies: e_u = sum_a v_a * tanh(keys[u, a] + query[a]).
/// keys [U x A], query [1 x A], v [A] or [1 x A] -> [1 x U].
Tensor additive_energies(const Tensor& keys, const Tensor& query, const Tensor& v);

}  // namespace modatt
