// Copyright 2026 The modatt Authors. Licensed under the Apache License, Version 2.0.

#include "modatt/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "modatt/errors.hpp"

namespace modatt {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

namespace {

thread_local Graph* g_active_graph = nullptr;

std::size_t checked_count(const Shape& shape) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw DimensionError("zero extent in shape " + shape_string(shape));
  }
  return element_count(shape);
}

}  // namespace

struct TensorAccess {
  static const NodePtr& node(const Tensor& t) {
    if (!t.node_) throw ContractError("operation on an undefined tensor");
    return t.node_;
  }

  static Tensor make(Shape shape, std::vector<double> values) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    return Tensor(std::move(node));
  }

  static bool tracking(std::initializer_list<const Tensor*> inputs) {
    if (g_active_graph == nullptr) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) {
      return t != nullptr && t->defined() && t->node_->requires_grad;
    });
  }

  template <typename Fn>
  static void attach(Tensor& out, Fn&& fn) {
    Node& node = *out.node_;
    node.requires_grad = true;
    node.leaf = false;
    node.backward = std::forward<Fn>(fn);
    g_active_graph->tape_.push_back(out.node_);
  }

  static std::vector<std::shared_ptr<Node>>& tape(Graph& g) { return g.tape_; }
};

namespace {

const NodePtr& node_of(const Tensor& t) { return TensorAccess::node(t); }

// Parents that want gradients; null otherwise so closures skip them.
NodePtr grad_target(const Tensor& t) {
  if (!t.defined()) return nullptr;
  const NodePtr& n = node_of(t);
  return n->requires_grad ? n : nullptr;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

// Tensor -------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values) {
  const std::size_t n = checked_count(shape);
  if (values.size() != n) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " needs " + std::to_string(n) +
                         " values, got " + std::to_string(values.size()));
  }
  *this = TensorAccess::make(std::move(shape), std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const std::size_t n = checked_count(shape);
  return TensorAccess::make(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return TensorAccess::make({}, {value}); }

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_of(*this)->shape; }

std::size_t Tensor::size() const { return node_of(*this)->value.size(); }

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return shape()[0];
}

std::size_t Tensor::cols() const {
  const Shape& s = shape();
  return s.empty() ? 1 : s.back();
}

std::span<const double> Tensor::values() const { return node_of(*this)->value; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return values()[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  require_rank2(*this, "at");
  return values()[r * shape()[1] + c];
}

bool Tensor::requires_grad() const { return node_of(*this)->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return node_of(*this)->leaf; }

bool Tensor::has_grad() const { return !node_of(*this)->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_of(*this)->grad; }

std::span<double> Tensor::mutable_grad() { return node_of(*this)->ensure_grad(); }

void Tensor::zero_grad() {
  auto& g = node_of(*this)->grad;
  std::fill(g.begin(), g.end(), 0.0);
}

std::span<double> Tensor::mutable_values() {
  if (!is_leaf()) throw ContractError("mutable_values on a non-leaf tensor");
  return node_->value;
}

Tensor Tensor::detach() const {
  const NodePtr& n = node_of(*this);
  return TensorAccess::make(n->shape, n->value);
}

// Graph --------------------------------------------------------------------

Graph::Graph() : previous_(g_active_graph) { g_active_graph = this; }

Graph::~Graph() { g_active_graph = previous_; }

Graph* Graph::active() { return g_active_graph; }

void Graph::backward(const Tensor& loss) {
  const NodePtr& root = node_of(loss);
  if (root->value.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(root->shape));
  }
  if (!root->requires_grad) {
    throw ContractError("backward: loss is not connected to any trainable tensor");
  }
  for (auto& node : tape_) node->grad.clear();
  if (root->leaf) {
    root->ensure_grad()[0] += 1.0;
    return;
  }
  root->ensure_grad()[0] = 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    Node& node = **it;
    if (!node.grad.empty() && node.backward) node.backward(node);
  }
}

NoGradScope::NoGradScope() : saved_(g_active_graph) { g_active_graph = nullptr; }

NoGradScope::~NoGradScope() { g_active_graph = saved_; }

void backward(const Tensor& loss) {
  if (g_active_graph == nullptr) throw ContractError("backward without an active graph");
  g_active_graph->backward(loss);
}

// Dense algebra ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents disagree for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  MatMap(out.data(), m, n).noalias() =
      ConstMatMap(a.values().data(), m, k) * ConstMatMap(b.values().data(), k, n);
  Tensor result = TensorAccess::make({m, n}, std::move(out));
  if (TensorAccess::tracking({&a, &b})) {
    TensorAccess::attach(result, [an = node_of(a), bn = node_of(b), m, k, n](Node& self) {
      ConstMatMap dc(self.grad.data(), m, n);
      if (an->requires_grad) {
        MatMap(an->ensure_grad().data(), m, k).noalias() +=
            dc * ConstMatMap(bn->value.data(), k, n).transpose();
      }
      if (bn->requires_grad) {
        MatMap(bn->ensure_grad().data(), k, n).noalias() +=
            ConstMatMap(an->value.data(), m, k).transpose() * dc;
      }
    });
  }
  return result;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank2(x, "linear");
  require_rank2(weight, "linear");
  const std::size_t n = x.shape()[0], d = x.shape()[1], o = weight.shape()[0];
  if (weight.shape()[1] != d) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                         shape_string(weight.shape()));
  }
  if (bias.defined() && bias.size() != o) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " does not match weight " +
                         shape_string(weight.shape()));
  }
  std::vector<double> out(n * o);
  MatMap y(out.data(), n, o);
  y.noalias() = ConstMatMap(x.values().data(), n, d) *
                ConstMatMap(weight.values().data(), o, d).transpose();
  if (bias.defined()) {
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), o);
  }
  Tensor result = TensorAccess::make({n, o}, std::move(out));
  if (TensorAccess::tracking({&x, &weight, &bias})) {
    TensorAccess::attach(result, [xn = node_of(x), wn = node_of(weight), bn = grad_target(bias), n,
                                  d, o](Node& self) {
      ConstMatMap dy(self.grad.data(), n, o);
      if (xn->requires_grad) {
        MatMap(xn->ensure_grad().data(), n, d).noalias() +=
            dy * ConstMatMap(wn->value.data(), o, d);
      }
      if (wn->requires_grad) {
        MatMap(wn->ensure_grad().data(), o, d).noalias() +=
            dy.transpose() * ConstMatMap(xn->value.data(), n, d);
      }
      if (bn) {
        Eigen::Map<Eigen::RowVectorXd>(bn->ensure_grad().data(), o) += dy.colwise().sum();
      }
    });
  }
  return result;
}

// Elementwise --------------------------------------------------------------

namespace {

template <typename Forward, typename Backward>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Forward fwd, Backward bwd) {
  require_same_shape(a, b, name);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  Tensor result = TensorAccess::make(a.shape(), std::move(out));
  if (TensorAccess::tracking({&a, &b})) {
    TensorAccess::attach(result, [an = node_of(a), bn = node_of(b), bwd](Node& self) {
      const std::size_t n = self.grad.size();
      double* ga = an->requires_grad ? an->ensure_grad().data() : nullptr;
      double* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        bwd(self.grad[i], an->value[i], bn->value[i], ga ? &ga[i] : nullptr,
            gb ? &gb[i] : nullptr);
      }
    });
  }
  return result;
}

// `bwd(dy, x, y)` returns dx given the output y.
template <typename Forward, typename Backward>
Tensor unary_op(const Tensor& a, Forward fwd, Backward bwd) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  Tensor result = TensorAccess::make(a.shape(), std::move(out));
  if (TensorAccess::tracking({&a})) {
    TensorAccess::attach(result, [an = node_of(a), bwd](Node& self) {
      auto& ga = an->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += bwd(self.grad[i], an->value[i], self.value[i]);
      }
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double, double* ga, double* gb) {
        if (ga) *ga += g;
        if (gb) *gb += g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double, double* ga, double* gb) {
        if (ga) *ga += g;
        if (gb) *gb -= g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double x, double y, double* ga, double* gb) {
        if (ga) *ga += g * y;
        if (gb) *gb += g * x;
      });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_op(
      a, [factor](double x) { return x * factor; },
      [factor](double g, double, double) { return g * factor; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double g, double, double y) { return g * (1.0 - y * y); });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, stable_sigmoid, [](double g, double, double y) { return g * y * (1.0 - y); });
}

Tensor elementwise(ElementwiseOp op, std::span<const Tensor> args) {
  const bool binary = op == ElementwiseOp::kAdd || op == ElementwiseOp::kSub ||
                      op == ElementwiseOp::kMul;
  if (args.size() != (binary ? 2u : 1u)) {
    throw ContractError("elementwise: wrong argument count " + std::to_string(args.size()));
  }
  switch (op) {
    case ElementwiseOp::kAdd: return add(args[0], args[1]);
    case ElementwiseOp::kSub: return sub(args[0], args[1]);
    case ElementwiseOp::kMul: return mul(args[0], args[1]);
    case ElementwiseOp::kTanh: return tanh(args[0]);
    case ElementwiseOp::kSigmoid: return sigmoid(args[0]);
  }
  throw ContractError("elementwise: unknown op");
}

Tensor sum(const Tensor& a) {
  const auto av = a.values();
  Tensor result = Tensor::scalar(std::accumulate(av.begin(), av.end(), 0.0));
  if (TensorAccess::tracking({&a})) {
    TensorAccess::attach(result, [an = node_of(a)](Node& self) {
      for (double& g : an->ensure_grad()) g += self.grad[0];
    });
  }
  return result;
}

// Softmax ------------------------------------------------------------------

Tensor softmax_last_dim(const Tensor& x, std::span<const std::uint8_t> keep) {
  const std::size_t n = x.size();
  if (!keep.empty() && keep.size() != n) {
    throw DimensionError("softmax_last_dim: mask has " + std::to_string(keep.size()) +
                         " entries for shape " + shape_string(x.shape()));
  }
  const std::size_t width = x.cols();
  const std::size_t rows = n / width;
  const auto xv = x.values();
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * width;
    double max = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < width; ++j) {
      if (!keep.empty() && !keep[base + j]) continue;
      max = std::max(max, xv[base + j]);
      any = true;
    }
    if (!any) throw InvalidMaskError("softmax_last_dim: row " + std::to_string(r) + " fully masked");
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      if (!keep.empty() && !keep[base + j]) continue;
      out[base + j] = std::exp(xv[base + j] - max);
      total += out[base + j];
    }
    for (std::size_t j = 0; j < width; ++j) out[base + j] /= total;
  }
  Tensor result = TensorAccess::make(x.shape(), std::move(out));
  if (TensorAccess::tracking({&x})) {
    TensorAccess::attach(result, [xn = node_of(x), width, rows](Node& self) {
      auto& gx = xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * width;
        double dot = 0.0;
        for (std::size_t j = 0; j < width; ++j) dot += self.grad[base + j] * self.value[base + j];
        for (std::size_t j = 0; j < width; ++j) {
          gx[base + j] += self.value[base + j] * (self.grad[base + j] - dot);
        }
      }
    });
  }
  return result;
}

// Structural ---------------------------------------------------------------

namespace {

// Views a tensor as [outer x extent(axis) x inner].
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: extents of " + shape_string(s) + " and " +
                           shape_string(first) + " disagree off axis " + std::to_string(axis));
    }
    offsets.push_back(out_shape[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisView ov = axis_view(out_shape, axis);
  std::vector<double> out(element_count(out_shape));
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const AxisView pv = axis_view(parts[p].shape(), axis);
    const auto src = parts[p].values();
    const std::size_t chunk = pv.extent * pv.inner;
    for (std::size_t o = 0; o < pv.outer; ++o) {
      std::copy_n(src.begin() + o * chunk, chunk,
                  out.begin() + (o * ov.extent + offsets[p]) * ov.inner);
    }
  }
  Tensor result = TensorAccess::make(out_shape, std::move(out));
  bool track = false;
  for (const Tensor& p : parts) track = track || TensorAccess::tracking({&p});
  if (track) {
    std::vector<NodePtr> nodes;
    for (const Tensor& p : parts) nodes.push_back(node_of(p));
    TensorAccess::attach(result, [nodes = std::move(nodes), offsets = std::move(offsets), ov,
                                  axis](Node& self) {
      for (std::size_t p = 0; p < nodes.size(); ++p) {
        if (!nodes[p]->requires_grad) continue;
        const AxisView pv = axis_view(nodes[p]->shape, axis);
        auto& g = nodes[p]->ensure_grad();
        const std::size_t chunk = pv.extent * pv.inner;
        for (std::size_t o = 0; o < pv.outer; ++o) {
          const double* src = self.grad.data() + (o * ov.extent + offsets[p]) * ov.inner;
          double* dst = g.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return result;
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& t, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& shape = t.shape();
  if (axis >= shape.size()) throw DimensionError("slice: axis out of range");
  if (begin >= end || end > shape[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for extent " + std::to_string(shape[axis]));
  }
  const AxisView iv = axis_view(shape, axis);
  Shape out_shape = shape;
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * iv.inner;
  const auto src = t.values();
  std::vector<double> out(iv.outer * chunk);
  for (std::size_t o = 0; o < iv.outer; ++o) {
    std::copy_n(src.begin() + (o * iv.extent + begin) * iv.inner, chunk, out.begin() + o * chunk);
  }
  Tensor result = TensorAccess::make(out_shape, std::move(out));
  if (TensorAccess::tracking({&t})) {
    TensorAccess::attach(result, [tn = node_of(t), iv, begin, chunk](Node& self) {
      auto& g = tn->ensure_grad();
      for (std::size_t o = 0; o < iv.outer; ++o) {
        double* dst = g.data() + (o * iv.extent + begin) * iv.inner;
        const double* src = self.grad.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    });
  }
  return result;
}

Tensor embedding(const Tensor& table, std::size_t id) {
  require_rank2(table, "embedding");
  const std::size_t vocab = table.shape()[0], dim = table.shape()[1];
  if (id >= vocab) {
    throw VocabularyError("embedding: id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(vocab));
  }
  const auto tv = table.values();
  std::vector<double> out(tv.begin() + id * dim, tv.begin() + (id + 1) * dim);
  Tensor result = TensorAccess::make({1, dim}, std::move(out));
  if (TensorAccess::tracking({&table})) {
    TensorAccess::attach(result, [tn = node_of(table), id, dim](Node& self) {
      double* dst = tn->ensure_grad().data() + id * dim;
      for (std::size_t i = 0; i < dim; ++i) dst[i] += self.grad[i];
    });
  }
  return result;
}

Tensor gather_rows(std::span<const Tensor> parts, std::size_t row) {
  if (parts.empty()) throw ContractError("gather_rows: no inputs");
  const Shape& first = parts[0].shape();
  require_rank2(parts[0], "gather_rows");
  if (row >= first[0]) throw DimensionError("gather_rows: row out of range");
  const std::size_t width = first[1];
  std::vector<double> out(parts.size() * width);
  bool track = false;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].shape() != first) {
      throw DimensionError("gather_rows: " + shape_string(parts[i].shape()) + " vs " +
                           shape_string(first));
    }
    const auto src = parts[i].values();
    std::copy_n(src.begin() + row * width, width, out.begin() + i * width);
    track = track || TensorAccess::tracking({&parts[i]});
  }
  Tensor result = TensorAccess::make({parts.size(), width}, std::move(out));
  if (track) {
    std::vector<NodePtr> nodes;
    for (const Tensor& p : parts) nodes.push_back(grad_target(p));
    TensorAccess::attach(result, [nodes = std::move(nodes), row, width](Node& self) {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!nodes[i]) continue;
        double* dst = nodes[i]->ensure_grad().data() + row * width;
        const double* src = self.grad.data() + i * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
      }
    });
  }
  return result;
}

Tensor pyramidal_subsample(const Tensor& xs) {
  require_rank2(xs, "pyramidal_subsample");
  const std::size_t frames = xs.shape()[0], dim = xs.shape()[1];
  const std::size_t out_frames = (frames + 1) / 2;
  const auto src = xs.values();
  std::vector<double> out(out_frames * 2 * dim);
  auto source_frame = [frames](std::size_t t, std::size_t half) {
    return std::min(2 * t + half, frames - 1);
  };
  for (std::size_t t = 0; t < out_frames; ++t) {
    for (std::size_t h = 0; h < 2; ++h) {
      std::copy_n(src.begin() + source_frame(t, h) * dim, dim,
                  out.begin() + (2 * t + h) * dim);
    }
  }
  Tensor result = TensorAccess::make({out_frames, 2 * dim}, std::move(out));
  if (TensorAccess::tracking({&xs})) {
    TensorAccess::attach(result, [xn = node_of(xs), out_frames, dim, source_frame](Node& self) {
      auto& g = xn->ensure_grad();
      for (std::size_t t = 0; t < out_frames; ++t) {
        for (std::size_t h = 0; h < 2; ++h) {
          double* dst = g.data() + source_frame(t, h) * dim;
          const double* s = self.grad.data() + (2 * t + h) * dim;
          for (std::size_t i = 0; i < dim; ++i) dst[i] += s[i];
        }
      }
    });
  }
  return result;
}

// Losses -------------------------------------------------------------------

Tensor cross_entropy_label_smoothed(const Tensor& logits, std::span<const int> targets,
                                    double smoothing, std::span<const std::uint8_t> step_keep) {
  require_rank2(logits, "cross_entropy_label_smoothed");
  const std::size_t steps = logits.shape()[0], vocab = logits.shape()[1];
  if (targets.size() != steps) {
    throw DimensionError("cross_entropy_label_smoothed: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(steps) + " steps");
  }
  if (!step_keep.empty() && step_keep.size() != steps) {
    throw DimensionError("cross_entropy_label_smoothed: step mask length mismatch");
  }
  if (!(smoothing >= 0.0 && smoothing < 1.0)) {
    throw ContractError("cross_entropy_label_smoothed: smoothing must lie in [0, 1)");
  }
  if (smoothing > 0.0 && vocab < 2) {
    throw ContractError("cross_entropy_label_smoothed: smoothing needs at least two classes");
  }
  const double off = vocab > 1 ? smoothing / static_cast<double>(vocab - 1) : 0.0;
  const double on = 1.0 - smoothing;
  const auto lv = logits.values();
  // Softmax probabilities for the backward pass.
  std::vector<double> probs(steps * vocab, 0.0);
  double total = 0.0;
  std::size_t kept = 0;
  for (std::size_t s = 0; s < steps; ++s) {
    const int target = targets[s];
    if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
      throw VocabularyError("cross_entropy_label_smoothed: target " + std::to_string(target) +
                            " outside vocabulary of " + std::to_string(vocab));
    }
    if (!step_keep.empty() && !step_keep[s]) continue;
    ++kept;
    const double* row = lv.data() + s * vocab;
    const double max = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(row[v] - max);
    const double log_z = max + std::log(z);
    for (std::size_t v = 0; v < vocab; ++v) {
      const double log_p = row[v] - log_z;
      const double q = static_cast<int>(v) == target ? on : off;
      if (q != 0.0) total -= q * log_p;
      probs[s * vocab + v] = std::exp(log_p);
    }
  }
  if (kept == 0) throw ContractError("cross_entropy_label_smoothed: every step masked");
  const double inv = 1.0 / static_cast<double>(kept);
  Tensor result = Tensor::scalar(total * inv);
  if (TensorAccess::tracking({&logits})) {
    std::vector<int> tgt(targets.begin(), targets.end());
    std::vector<std::uint8_t> keep(step_keep.begin(), step_keep.end());
    TensorAccess::attach(result, [ln = node_of(logits), probs = std::move(probs),
                                  tgt = std::move(tgt), keep = std::move(keep), steps, vocab, on,
                                  off, inv](Node& self) {
      auto& g = ln->ensure_grad();
      const double scale_factor = self.grad[0] * inv;
      for (std::size_t s = 0; s < steps; ++s) {
        if (!keep.empty() && !keep[s]) continue;
        for (std::size_t v = 0; v < vocab; ++v) {
          const double q = static_cast<int>(v) == tgt[s] ? on : off;
          g[s * vocab + v] += scale_factor * (probs[s * vocab + v] - q);
        }
      }
    });
  }
  return result;
}

// Fused kernels ------------------------------------------------------------

Tensor lstm_cell(const Tensor& input_proj, std::size_t row, const Tensor& state,
                 const Tensor& w_hh) {
  require_rank2(state, "lstm_cell");
  require_rank2(w_hh, "lstm_cell");
  require_rank2(input_proj, "lstm_cell");
  const std::size_t hidden = state.shape()[1];
  const std::size_t gates = 4 * hidden;
  if (state.shape()[0] != 2 || w_hh.shape()[0] != gates || w_hh.shape()[1] != hidden ||
      input_proj.shape()[1] != gates || row >= input_proj.shape()[0]) {
    throw DimensionError("lstm_cell: input " + shape_string(input_proj.shape()) + ", state " +
                         shape_string(state.shape()) + ", recurrent weight " +
                         shape_string(w_hh.shape()) + " are inconsistent");
  }
  const double* h_prev = state.values().data();
  const double* c_prev = h_prev + hidden;
  // act holds (i, f, g, o) post-activation.
  std::vector<double> act(gates);
  Eigen::Map<Eigen::VectorXd> pre(act.data(), gates);
  pre.noalias() = ConstMatMap(w_hh.values().data(), gates, hidden) *
                  Eigen::Map<const Eigen::VectorXd>(h_prev, hidden);
  pre += Eigen::Map<const Eigen::VectorXd>(input_proj.values().data() + row * gates, gates);
  std::vector<double> out(2 * hidden);
  std::vector<double> tanh_c(hidden);
  for (std::size_t j = 0; j < hidden; ++j) {
    const double i = stable_sigmoid(act[j]);
    const double f = stable_sigmoid(act[hidden + j]);
    const double g = std::tanh(act[2 * hidden + j]);
    const double o = stable_sigmoid(act[3 * hidden + j]);
    act[j] = i;
    act[hidden + j] = f;
    act[2 * hidden + j] = g;
    act[3 * hidden + j] = o;
    const double c = f * c_prev[j] + i * g;
    tanh_c[j] = std::tanh(c);
    out[hidden + j] = c;
    out[j] = o * tanh_c[j];
  }
  Tensor result = TensorAccess::make({2, hidden}, std::move(out));
  if (TensorAccess::tracking({&input_proj, &state, &w_hh})) {
    TensorAccess::attach(result, [xn = node_of(input_proj), sn = node_of(state),
                                  wn = node_of(w_hh), act = std::move(act),
                                  tanh_c = std::move(tanh_c), row, hidden, gates](Node& self) {
      const double* dh = self.grad.data();
      const double* dc = dh + hidden;
      const double* h_prev = sn->value.data();
      const double* c_prev = h_prev + hidden;
      std::vector<double> da(gates);
      std::vector<double> dc_prev(hidden);
      for (std::size_t j = 0; j < hidden; ++j) {
        const double i = act[j], f = act[hidden + j], g = act[2 * hidden + j],
                     o = act[3 * hidden + j];
        const double tc = tanh_c[j];
        const double dc_total = dc[j] + dh[j] * o * (1.0 - tc * tc);
        da[j] = dc_total * g * i * (1.0 - i);
        da[hidden + j] = dc_total * c_prev[j] * f * (1.0 - f);
        da[2 * hidden + j] = dc_total * i * (1.0 - g * g);
        da[3 * hidden + j] = dh[j] * tc * o * (1.0 - o);
        dc_prev[j] = dc_total * f;
      }
      Eigen::Map<const Eigen::VectorXd> dav(da.data(), gates);
      if (xn->requires_grad) {
        Eigen::Map<Eigen::VectorXd>(xn->ensure_grad().data() + row * gates, gates) += dav;
      }
      if (wn->requires_grad) {
        MatMap(wn->ensure_grad().data(), gates, hidden).noalias() +=
            dav * Eigen::Map<const Eigen::RowVectorXd>(h_prev, hidden);
      }
      if (sn->requires_grad) {
        auto& gs = sn->ensure_grad();
        Eigen::Map<Eigen::VectorXd>(gs.data(), hidden).noalias() +=
            ConstMatMap(wn->value.data(), gates, hidden).transpose() * dav;
        for (std::size_t j = 0; j < hidden; ++j) gs[hidden + j] += dc_prev[j];
      }
    });
  }
  return result;
}

Tensor additive_energies(const Tensor& keys, const Tensor& query, const Tensor& v) {
  require_rank2(keys, "additive_energies");
  const std::size_t units = keys.shape()[0], width = keys.shape()[1];
  if (query.size() != width || v.size() != width) {
    throw DimensionError("additive_energies: keys " + shape_string(keys.shape()) + ", query " +
                         shape_string(query.shape()) + ", v " + shape_string(v.shape()) +
                         " are inconsistent");
  }
  const auto kv = keys.values();
  const auto qv = query.values();
  const auto vv = v.values();
  std::vector<double> squashed(units * width);
  std::vector<double> out(units);
  for (std::size_t u = 0; u < units; ++u) {
    double e = 0.0;
    for (std::size_t a = 0; a < width; ++a) {
      const double t = std::tanh(kv[u * width + a] + qv[a]);
      squashed[u * width + a] = t;
      e += vv[a] * t;
    }
    out[u] = e;
  }
  Tensor result = TensorAccess::make({1, units}, std::move(out));
  if (TensorAccess::tracking({&keys, &query, &v})) {
    TensorAccess::attach(result, [kn = node_of(keys), qn = node_of(query), vn = node_of(v),
                                  squashed = std::move(squashed), units, width](Node& self) {
      double* gk = kn->requires_grad ? kn->ensure_grad().data() : nullptr;
      double* gq = qn->requires_grad ? qn->ensure_grad().data() : nullptr;
      double* gv = vn->requires_grad ? vn->ensure_grad().data() : nullptr;
      const double* vv = vn->value.data();
      for (std::size_t u = 0; u < units; ++u) {
        const double de = self.grad[u];
        for (std::size_t a = 0; a < width; ++a) {
          const double t = squashed[u * width + a];
          const double dpre = de * vv[a] * (1.0 - t * t);
          if (gk) gk[u * width + a] += dpre;
          if (gq) gq[a] += dpre;
          if (gv) gv[a] += de * t;
        }
      }
    });
  }
  return result;
}

}  // namespace modatt
