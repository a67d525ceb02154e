#pragma once

// Dense row-major float64 tensors with tape-based reverse-mode differentiation.
//
// Every operation returns a fresh tensor whose node remembers its inputs and a
// local gradient rule. Calling backward() on a scalar result records the tape
// (all reachable nodes that require gradients, inputs before outputs) and
// replays it in reverse, accumulating into each node's grad buffer.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gaf {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first touched by backward
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs that require grad.
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access; only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_data();
  // Gradient buffer; all zeros when backward never reached this tensor.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  bool has_grad() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  void zero_grad();

  double item() const;
  double at(std::size_t i, std::size_t j) const;

  // Same values, cut from the graph.
  Tensor detach() const;
  // Deep copy of the values into a new leaf with the same requires_grad flag.
  Tensor clone() const;

  // Reverse-mode sweep from this scalar.
  void backward() const;

  detail::Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const noexcept { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of the operations reachable from a scalar loss.
class Tape {
 public:
  static Tape record(const Tensor& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  // Node creation sequence numbers in tape order (inputs first).
  std::vector<std::uint64_t> sequence() const;
  std::vector<std::string> op_names() const;

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Each node's
  // rule runs exactly once; returns the number of rules executed.
  std::size_t backward();

 private:
  std::vector<detail::Node*> nodes_;  // topological: inputs precede outputs
  std::shared_ptr<detail::Node> root_;
};

// ---- elementwise with trailing-dimension broadcasting ----------------------

Shape broadcast_shapes(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);
Tensor softplus(const Tensor& x);
// Huber-style loss: 0.5 x^2 / beta for |x| < beta, |x| - 0.5 beta otherwise.
Tensor smooth_l1(const Tensor& x, double beta = 1.0);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

Tensor broadcast_to(const Tensor& x, const Shape& shape);

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// T x D -> 1 x D
Tensor sum_rows(const Tensor& x);
// T x D -> T x 1
Tensor sum_cols(const Tensor& x);
// Flat element as a scalar.
Tensor element(const Tensor& x, std::size_t flat_index);

// ---- linear algebra and layout ---------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
// Row-wise log-softmax of a 2-D tensor.
Tensor log_softmax_rows(const Tensor& x);

enum class Padding { kSame, kValid };

// x: T x D_in, kernel: k x D_in x D_out, bias: D_out (optional).
Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              Padding padding);
std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 Padding padding);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }

}  // namespace gaf
