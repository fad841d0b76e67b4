#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dscene::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t size() const;
  std::span<const double> values() const;
  /// Gradient of the last backward() root with respect to this tensor.
  std::span<const double> grad() const;
  double item() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of primitive applications. Nodes are appended in
/// evaluation order, so the record is topologically sorted by construction.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Shape shape, std::vector<double> values);
  Tensor constant(Shape shape, std::vector<double> values);
  Tensor zeros(Shape shape);
  Tensor filled(Shape shape, double value);

  /// Reverse-mode sweep from a scalar root. Throws ShapeError otherwise.
  void backward(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }

  // Primitive implementation hooks.
  Tensor record(Shape shape, std::vector<double> value, std::vector<std::size_t> parents, BackwardFn fn);
  const std::vector<double>& value(std::size_t id) const { return nodes_[id].value; }
  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  const std::vector<double>& grad(std::size_t id) const { return nodes_[id].grad; }
  std::vector<double>& grad_mut(std::size_t id) { return nodes_[id].grad; }
  std::size_t parent(std::size_t id, std::size_t k) const { return nodes_[id].parents[k]; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;  // deque: references stay valid while recording
};

// Dense primitives. No implicit broadcasting: shapes must match exactly except
// where a primitive documents a vector operand applied along the last axis.

/// a [..., m, k] x b [k, n] -> [..., m, n]   (shared right operand), or
/// a [B..., m, k] x b [B..., k, n] -> [B..., m, n] with identical batch dims.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor mul_scalar(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// Adds a vector of length shape.back() to every row.
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor square(const Tensor& a);
Tensor softmax_lastdim(const Tensor& a);
/// Normalizes each row to zero mean, unit variance, then applies per-column
/// gain and bias (vectors of length shape.back()).
Tensor layer_norm_lastdim(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-12);
Tensor concat_lastdim(const Tensor& a, const Tensor& b);
Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Mean binary cross-entropy of probabilities against targets in {0, 1};
/// probabilities are clamped to [eps, 1 - eps].
Tensor binary_cross_entropy(const Tensor& prob, const Tensor& target, double eps = 1e-7);

}  // namespace dscene::ad
