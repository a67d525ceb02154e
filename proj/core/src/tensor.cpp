#include "gaf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>

#include "gaf/errors.hpp"

namespace gaf {

using detail::Node;

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, "x"));
}

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

namespace {

std::atomic<std::uint64_t> g_next_seq{1};

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> value) {
  if (numel(shape) != value.size()) {
    throw DimensionError(fmt::format("shape {} holds {} values, got {}", to_string(shape),
                                     numel(shape), value.size()));
  }
  for (auto d : shape) {
    if (d == 0) throw DimensionError("zero-sized dimension in shape " + to_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward_fn) {
  for (double v : value) {
    if (!std::isfinite(v)) throw DomainError(fmt::format("{} produced a non-finite value", op));
  }
  auto node = new_node(std::move(shape), std::move(value));
  node->op = op;
  bool rg = false;
  for (const Tensor* t : inputs) rg = rg || t->requires_grad();
  if (rg) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) node->inputs.push_back(t->node_ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(fmt::format("{}: undefined tensor", op));
}

void require_rank2(const Tensor& t, const char* op) {
  check_defined(t, op);
  if (t.rank() != 2) {
    throw DimensionError(fmt::format("{} expects a 2-D tensor, got {}", op, to_string(t.shape())));
  }
}

// For each flat index of `out`, the flat index into a tensor of shape `in`
// broadcast against it.
std::vector<std::size_t> broadcast_index(const Shape& out, const Shape& in) {
  const std::size_t n = numel(out);
  const std::size_t r = out.size();
  const std::size_t off = r - in.size();
  std::vector<std::size_t> strides(r, 0);
  std::size_t s = 1;
  for (std::size_t d = in.size(); d-- > 0;) {
    strides[d + off] = in[d] == 1 ? 0 : s;
    s *= in[d];
  }
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t cur = 0;
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = cur;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      cur += strides[d];
      if (counter[d] < out[d]) break;
      cur -= strides[d] * out[d];
      counter[d] = 0;
    }
  }
  return idx;
}

template <class Fwd, class GradA, class GradB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, GradA ga, GradB gb) {
  check_defined(a, op);
  check_defined(b, op);
  Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  const std::size_t n = numel(out_shape);
  auto ia = std::make_shared<std::vector<std::size_t>>(broadcast_index(out_shape, a.shape()));
  auto ib = std::make_shared<std::vector<std::size_t>>(broadcast_index(out_shape, b.shape()));
  std::vector<double> out(n);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[(*ia)[i]], bv[(*ib)[i]]);
  return make_result(op, std::move(out_shape), std::move(out), {&a, &b},
                     [ia, ib, ga, gb, n](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nb = *self.inputs[1];
                       if (na.requires_grad) {
                         auto& g = na.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) {
                           const std::size_t j = (*ia)[i];
                           const std::size_t k = (*ib)[i];
                           g[j] += self.grad[i] * ga(na.value[j], nb.value[k], self.value[i]);
                         }
                       }
                       if (nb.requires_grad) {
                         auto& g = nb.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) {
                           const std::size_t j = (*ia)[i];
                           const std::size_t k = (*ib)[i];
                           g[k] += self.grad[i] * gb(na.value[j], nb.value[k], self.value[i]);
                         }
                       }
                     });
}

// dfdx receives (input, output).
template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv dfdx) {
  check_defined(x, op);
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(op, x.shape(), std::move(out), {&x}, [dfdx](Node& self) {
    Node& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(in.value[i], self.value[i]);
  });
}

std::size_t row_count(const Tensor& x) { return x.rank() == 0 ? 1 : x.shape()[0]; }

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  auto node = new_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = gaf::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  check_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError(fmt::format("axis {} out of range for shape {}", axis, to_string(shape())));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return gaf::numel(shape()); }

std::span<const double> Tensor::data() const {
  check_defined(*this, "data");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  check_defined(*this, "mutable_data");
  return node_->value;
}

std::span<const double> Tensor::grad() const {
  check_defined(*this, "grad");
  return node_->ensure_grad();
}

std::span<double> Tensor::mutable_grad() {
  check_defined(*this, "mutable_grad");
  return node_->ensure_grad();
}

bool Tensor::has_grad() const { return defined() && node_->grad.size() == node_->value.size(); }

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  check_defined(*this, "set_requires_grad");
  if (!node_->inputs.empty()) throw ContractError("requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
}

void Tensor::zero_grad() {
  check_defined(*this, "zero_grad");
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + to_string(shape()));
  }
  return node_->value[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  require_rank2(*this, "at");
  if (i >= node_->shape[0] || j >= node_->shape[1]) {
    throw DimensionError(fmt::format("index ({}, {}) out of range for {}", i, j, to_string(shape())));
  }
  return node_->value[i * node_->shape[1] + j];
}

Tensor Tensor::detach() const {
  check_defined(*this, "detach");
  return from(node_->shape, node_->value, false);
}

Tensor Tensor::clone() const {
  check_defined(*this, "clone");
  return from(node_->shape, node_->value, node_->requires_grad);
}

void Tensor::backward() const {
  check_defined(*this, "backward");
  if (numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + to_string(shape()));
  }
  Tape tape = Tape::record(*this);
  tape.backward();
}

// ---------------------------------------------------------------------------
// Tape

Tape Tape::record(const Tensor& loss) {
  check_defined(loss, "Tape::record");
  if (!loss.requires_grad()) {
    throw ContractError("loss does not depend on any tensor that requires grad");
  }
  Tape tape;
  tape.root_ = loss.node_ptr();
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.node()};
  seen.insert(loss.node());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    tape.nodes_.push_back(n);
    for (auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  // Creation order is a topological order: a node is always built after its inputs.
  std::sort(tape.nodes_.begin(), tape.nodes_.end(),
            [](const Node* a, const Node* b) { return a->seq < b->seq; });
  return tape;
}

std::vector<std::uint64_t> Tape::sequence() const {
  std::vector<std::uint64_t> out;
  out.reserve(nodes_.size());
  for (const Node* n : nodes_) out.push_back(n->seq);
  return out;
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> out;
  out.reserve(nodes_.size());
  for (const Node* n : nodes_) out.emplace_back(n->op);
  return out;
}

std::size_t Tape::backward() {
  if (nodes_.empty()) throw ContractError("empty tape");
  root_->ensure_grad()[0] += 1.0;
  std::size_t executed = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* n = *it;
    if (!n->backward_fn) continue;
    n->ensure_grad();
    n->backward_fn(*n);
    ++executed;
  }
  return executed;
}

// ---------------------------------------------------------------------------
// Elementwise

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(fmt::format("shapes {} and {} are not broadcastable", to_string(a),
                                       to_string(b)));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_defined(b, "div");
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor neg(const Tensor& x) {
  return unary(
      "neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  check_defined(x, "log");
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError(fmt::format("log of non-positive value {}", v));
  }
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sigmoid(const Tensor& x) {
  // Clamped so the output stays strictly inside (0, 1) even when exp saturates.
  static const double kHi = std::nextafter(1.0, 0.0);
  static const double kLo = std::numeric_limits<double>::min();
  return unary(
      "sigmoid", x,
      [](double v) {
        const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        return std::clamp(s, kLo, kHi);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      });
}

Tensor smooth_l1(const Tensor& x, double beta) {
  if (!(beta > 0)) throw ContractError("smooth_l1: beta must be positive");
  return unary(
      "smooth_l1", x,
      [beta](double v) {
        const double a = std::abs(v);
        return a < beta ? 0.5 * v * v / beta : a - 0.5 * beta;
      },
      [beta](double v, double) {
        if (std::abs(v) < beta) return v / beta;
        return v > 0 ? 1.0 : -1.0;
      });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      "add_scalar", x, [offset](double v) { return v + offset; },
      [](double, double) { return 1.0; });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  check_defined(x, "broadcast_to");
  if (broadcast_shapes(x.shape(), shape) != shape) {
    throw DimensionError(fmt::format("cannot broadcast {} to {}", to_string(x.shape()),
                                     to_string(shape)));
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(broadcast_index(shape, x.shape()));
  std::vector<double> out(idx->size());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*idx)[i]];
  return make_result("broadcast", shape, std::move(out), {&x}, [idx](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < idx->size(); ++i) g[(*idx)[i]] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  check_defined(x, "sum");
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("sum", {}, {s}, {&x}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  check_defined(x, "mean");
  const double n = static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("mean", {}, {s / n}, {&x}, [n](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (double& v : g) v += self.grad[0] / n;
  });
}

Tensor sum_rows(const Tensor& x) {
  require_rank2(x, "sum_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(cols, 0.0);
  auto xv = x.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j] += xv[i * cols + j];
  return make_result("sum_rows", {1, cols}, std::move(out), {&x}, [rows, cols](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) g[i * cols + j] += self.grad[j];
  });
}

Tensor sum_cols(const Tensor& x) {
  require_rank2(x, "sum_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(rows, 0.0);
  auto xv = x.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i] += xv[i * cols + j];
  return make_result("sum_cols", {rows, 1}, std::move(out), {&x}, [rows, cols](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) g[i * cols + j] += self.grad[i];
  });
}

Tensor element(const Tensor& x, std::size_t flat_index) {
  check_defined(x, "element");
  if (flat_index >= x.numel()) {
    throw DimensionError(fmt::format("element {} out of range for {}", flat_index,
                                     to_string(x.shape())));
  }
  return make_result("element", {}, {x.data()[flat_index]}, {&x}, [flat_index](Node& self) {
    self.inputs[0]->ensure_grad()[flat_index] += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError(fmt::format("matmul: inner dimensions differ, {} x {}",
                                     to_string(a.shape()), to_string(b.shape())));
  }
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  return make_result("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const auto& g = self.grad;
    if (na.requires_grad) {
      auto& ga = na.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * nb.value[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (nb.requires_grad) {
      auto& gb = nb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = na.value[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  auto xv = x.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return make_result("transpose", {c, r}, std::move(out), {&x}, [r, c](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  check_defined(x, "reshape");
  if (gaf::numel(shape) != x.numel()) {
    throw DimensionError(fmt::format("cannot reshape {} to {}", to_string(x.shape()),
                                     to_string(shape)));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", shape, std::move(out), {&x}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_cols");
  require_rank2(b, "concat_cols");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError(fmt::format("concat_cols: row counts differ, {} vs {}",
                                     to_string(a.shape()), to_string(b.shape())));
  }
  const std::size_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1), c = ca + cb;
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(rows * c);
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(av.begin() + i * ca, ca, out.begin() + i * c);
    std::copy_n(bv.begin() + i * cb, cb, out.begin() + i * c + ca);
  }
  return make_result("concat_cols", {rows, c}, std::move(out), {&a, &b},
                     [rows, ca, cb, c](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nb = *self.inputs[1];
                       if (na.requires_grad) {
                         auto& g = na.ensure_grad();
                         for (std::size_t i = 0; i < rows; ++i)
                           for (std::size_t j = 0; j < ca; ++j) g[i * ca + j] += self.grad[i * c + j];
                       }
                       if (nb.requires_grad) {
                         auto& g = nb.ensure_grad();
                         for (std::size_t i = 0; i < rows; ++i)
                           for (std::size_t j = 0; j < cb; ++j)
                             g[i * cb + j] += self.grad[i * c + ca + j];
                       }
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  check_defined(x, "slice_rows");
  if (x.rank() == 0) throw DimensionError("slice_rows on a scalar");
  const std::size_t rows = row_count(x);
  if (begin >= end || end > rows) {
    throw DimensionError(fmt::format("slice_rows [{}, {}) out of range for {}", begin, end,
                                     to_string(x.shape())));
  }
  const std::size_t stride = x.numel() / rows;
  Shape shape = x.shape();
  shape[0] = end - begin;
  auto xv = x.data();
  std::vector<double> out(xv.begin() + begin * stride, xv.begin() + end * stride);
  return make_result("slice_rows", std::move(shape), std::move(out), {&x},
                     [begin, stride](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         g[begin * stride + i] += self.grad[i];
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  check_defined(x, "gather_rows");
  if (x.rank() == 0) throw DimensionError("gather_rows on a scalar");
  if (rows.empty()) throw DimensionError("gather_rows with no indices");
  const std::size_t n_rows = row_count(x);
  const std::size_t stride = x.numel() / n_rows;
  for (auto r : rows) {
    if (r >= n_rows) throw DimensionError(fmt::format("gather_rows index {} >= {}", r, n_rows));
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  auto xv = x.data();
  std::vector<double> out(rows.size() * stride);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xv.begin() + rows[i] * stride, stride, out.begin() + i * stride);
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  return make_result("gather_rows", std::move(shape), std::move(out), {&x},
                     [idx, stride](Node& self) {
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < idx->size(); ++i)
                         for (std::size_t j = 0; j < stride; ++j)
                           g[(*idx)[i] * stride + j] += self.grad[i * stride + j];
                     });
}

Tensor log_softmax_rows(const Tensor& x) {
  require_rank2(x, "log_softmax_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  auto xv = x.data();
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = xv.data() + i * cols;
    const double mx = *std::max_element(row, row + cols);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = row[j] - lse;
  }
  return make_result("log_softmax", {rows, cols}, std::move(out), {&x}, [rows, cols](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < rows; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < cols; ++j) gs += self.grad[i * cols + j];
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t k = i * cols + j;
        g[k] += self.grad[k] - std::exp(self.value[k]) * gs;
      }
    }
  });
}

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 Padding padding) {
  if (stride == 0) throw ContractError("conv1d: stride must be positive");
  if (padding == Padding::kSame) {
    if (kernel % 2 == 0) throw ContractError("conv1d: same padding needs an odd kernel size");
    const std::size_t pad = (kernel - 1) / 2;
    return (length + 2 * pad - kernel) / stride + 1;
  }
  if (kernel > length) {
    throw DimensionError(fmt::format("conv1d: kernel {} longer than input {} gives an empty output",
                                     kernel, length));
  }
  return (length - kernel) / stride + 1;
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              Padding padding) {
  require_rank2(x, "conv1d");
  check_defined(kernel, "conv1d");
  if (kernel.rank() != 3) {
    throw DimensionError("conv1d kernel must be k x D_in x D_out, got " + to_string(kernel.shape()));
  }
  const std::size_t len = x.dim(0), din = x.dim(1);
  const std::size_t k = kernel.dim(0), dout = kernel.dim(2);
  if (kernel.dim(1) != din) {
    throw DimensionError(fmt::format("conv1d: input {} does not match kernel {}",
                                     to_string(x.shape()), to_string(kernel.shape())));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != dout) {
    throw DimensionError(fmt::format("conv1d: bias {} does not match {} output channels",
                                     to_string(bias.shape()), dout));
  }
  const std::size_t out_len = conv1d_output_length(len, k, stride, padding);
  const std::ptrdiff_t pad = padding == Padding::kSame ? static_cast<std::ptrdiff_t>((k - 1) / 2) : 0;

  auto xv = x.data();
  auto kv = kernel.data();
  std::vector<double> out(out_len * dout, 0.0);
  for (std::size_t o = 0; o < out_len; ++o) {
    double* orow = out.data() + o * dout;
    if (has_bias) {
      auto bv = bias.data();
      std::copy(bv.begin(), bv.end(), orow);
    }
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(o * stride + j) - pad;
      if (t < 0 || t >= static_cast<std::ptrdiff_t>(len)) continue;
      const double* xrow = xv.data() + static_cast<std::size_t>(t) * din;
      const double* kj = kv.data() + j * din * dout;
      for (std::size_t i = 0; i < din; ++i) {
        const double xi = xrow[i];
        const double* kji = kj + i * dout;
        for (std::size_t c = 0; c < dout; ++c) orow[c] += xi * kji[c];
      }
    }
  }

  auto fn = [=](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nk = *self.inputs[1];
    Node* nb = has_bias ? self.inputs[2].get() : nullptr;
    for (std::size_t o = 0; o < out_len; ++o) {
      const double* grow = self.grad.data() + o * dout;
      if (nb != nullptr && nb->requires_grad) {
        auto& gb = nb->ensure_grad();
        for (std::size_t c = 0; c < dout; ++c) gb[c] += grow[c];
      }
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(o * stride + j) - pad;
        if (t < 0 || t >= static_cast<std::ptrdiff_t>(len)) continue;
        const std::size_t tt = static_cast<std::size_t>(t);
        for (std::size_t i = 0; i < din; ++i) {
          const std::size_t kbase = (j * din + i) * dout;
          if (nk.requires_grad) {
            auto& gk = nk.ensure_grad();
            const double xi = nx.value[tt * din + i];
            for (std::size_t c = 0; c < dout; ++c) gk[kbase + c] += xi * grow[c];
          }
          if (nx.requires_grad) {
            double s = 0.0;
            for (std::size_t c = 0; c < dout; ++c) s += nk.value[kbase + c] * grow[c];
            nx.ensure_grad()[tt * din + i] += s;
          }
        }
      }
    }
  };
  if (has_bias) {
    return make_result("conv1d", {out_len, dout}, std::move(out), {&x, &kernel, &bias}, fn);
  }
  return make_result("conv1d", {out_len, dout}, std::move(out), {&x, &kernel}, fn);
}

}  // namespace gaf
