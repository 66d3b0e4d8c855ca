#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace workmem {

using Shape = std::vector<std::size_t>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller violates an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Every shape is stored as a row-major matrix: the last axis is the column
// axis and all leading axes are folded into rows. Rank 0 and rank 1 are 1xN.
inline std::pair<Eigen::Index, Eigen::Index> matrix_dims(const Shape& shape) {
  if (shape.empty()) return {1, 1};
  const auto cols = static_cast<Eigen::Index>(shape.back());
  const auto rows = static_cast<Eigen::Index>(element_count(shape) / (shape.back() ? shape.back() : 1));
  return {rows, cols};
}

/// Thread-local switch that stops operations from recording backward rules.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set_enabled(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
struct Node {
  Shape shape;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `grad` of this node and accumulates into the parents.
  std::function<void(Node&)> backward;

  void accumulate(const Matrix<Scalar>& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }

  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

/// Dense tensor handle. Copies share the same underlying node, so a
/// parameter tensor held by a layer and by the parameter store is one object.
template <typename Scalar>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false) : node_(std::make_shared<Node<Scalar>>()) {
    for (auto dim : shape) {
      if (dim == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
    }
    const auto [rows, cols] = matrix_dims(shape);
    node_->shape = std::move(shape);
    node_->value = Matrix<Scalar>::Zero(rows, cols);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->grad = Matrix<Scalar>::Zero(rows, cols);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) { return Tensor(std::move(shape), requires_grad); }

  static Tensor from_values(Shape shape, const std::vector<Scalar>& values, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    if (values.size() != t.size()) {
      throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                           to_string(t.shape()));
    }
    std::copy(values.begin(), values.end(), t.node_->value.data());
    return t;
  }

  static Tensor from_matrix(const Matrix<Scalar>& m, bool requires_grad = false) {
    Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, requires_grad);
    t.node_->value = m;
    return t;
  }

  static Tensor scalar(Scalar v, bool requires_grad = false) {
    Tensor t(Shape{}, requires_grad);
    t.node_->value(0, 0) = v;
    return t;
  }

  /// Wraps an already-populated node; used by operations.
  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return static_cast<std::size_t>(node_->value.size()); }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }

  const Matrix<Scalar>& value() const { return node_->value; }
  /// Direct write access for leaves (initializers, optimizers, tests).
  Matrix<Scalar>& mutable_value() { return node_->value; }

  bool has_grad() const { return node_->grad.size() != 0; }
  const Matrix<Scalar>& grad() const { return node_->grad; }
  Matrix<Scalar>& mutable_grad() { return node_->grad; }

  void zero_grad() {
    if (node_->requires_grad) {
      node_->grad = Matrix<Scalar>::Zero(node_->value.rows(), node_->value.cols());
    } else {
      node_->grad.resize(0, 0);
    }
  }

  Scalar item() const {
    if (size() != 1) throw ContractError("item() requires a single-element tensor, got " + to_string(shape()));
    return node_->value(0, 0);
  }

  Scalar operator[](std::size_t flat) const { return node_->value.data()[flat]; }

  std::vector<Scalar> values() const {
    return std::vector<Scalar>(node_->value.data(), node_->value.data() + node_->value.size());
  }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Records an operation result. When grad mode is on and any input needs a
/// gradient, the result keeps its inputs and backward rule for the tape.
template <typename Scalar, typename Backward>
Tensor<Scalar> make_op(Shape shape, Matrix<Scalar> value, std::initializer_list<Tensor<Scalar>> inputs,
                       Backward&& backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (GradMode::enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
    if (node->requires_grad) {
      node->parents.reserve(inputs.size());
      for (const auto& in : inputs) node->parents.push_back(in.node());
      node->backward = std::forward<Backward>(backward);
    }
  }
  return Tensor<Scalar>::from_node(std::move(node));
}

template <typename Scalar, typename Backward>
Tensor<Scalar> make_op(Shape shape, Matrix<Scalar> value, const std::vector<Tensor<Scalar>>& inputs,
                       Backward&& backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (GradMode::enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
    if (node->requires_grad) {
      node->parents.reserve(inputs.size());
      for (const auto& in : inputs) node->parents.push_back(in.node());
      node->backward = std::forward<Backward>(backward);
    }
  }
  return Tensor<Scalar>::from_node(std::move(node));
}

}  // namespace workmem
