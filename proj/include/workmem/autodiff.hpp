#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_set>
#include <vector>

#include "workmem/parameter.hpp"
#include "workmem/tensor.hpp"

namespace workmem {

/// Topologically ordered record of the operations reachable from a root.
/// Built from the define-by-run graph each time a backward pass is needed.
template <typename Scalar>
class Tape {
 public:
  explicit Tape(const Tensor<Scalar>& root) : root_(root.node()) {
    if (!root_) throw ContractError("tape root is undefined");
    if (!root_->requires_grad) return;
    std::unordered_set<const Node<Scalar>*> seen;
    // iterative post-order DFS: operands are emitted before their consumers
    std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
    stack.emplace_back(root_.get(), 0);
    seen.insert(root_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node<Scalar>* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  const std::vector<Node<Scalar>*>& nodes() const { return order_; }
  std::size_t size() const { return order_.size(); }

  /// Seeds d(root)/d(root) = 1 and runs every backward rule once, newest first.
  void backward() {
    if (root_->value.size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " + to_string(root_->shape));
    }
    if (order_.empty()) return;
    root_->grad = Matrix<Scalar>::Ones(1, 1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node<Scalar>& node = **it;
      if (node.backward && node.grad.size() != 0) node.backward(node);
    }
  }

 private:
  std::shared_ptr<Node<Scalar>> root_;
  std::vector<Node<Scalar>*> order_;
};

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.size() != 1) throw ContractError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  Tape<Scalar>(loss).backward();
}

/// Largest relative disagreement between analytic gradients and central
/// differences, |a - n| / max(|a|, |n|, 1e-8), over every parameter entry.
template <typename Scalar>
double grad_check(const std::function<Tensor<Scalar>()>& loss_fn, std::vector<Tensor<Scalar>> params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-3)) throw ContractError("grad_check: eps must lie in (0, 1e-3]");
  for (auto& p : params) p.zero_grad();
  const Tensor<Scalar> loss = loss_fn();
  backward(loss);

  auto evaluate = [&]() {
    NoGradGuard guard;
    return static_cast<double>(loss_fn().item());
  };
  const double first = evaluate();
  const double second = evaluate();
  if (first != second || first != static_cast<double>(loss.item())) {
    throw ContractError("grad_check: loss function is not deterministic");
  }

  double worst = 0.0;
  for (auto& p : params) {
    const Matrix<Scalar> analytic = p.has_grad() ? p.grad() : Matrix<Scalar>::Zero(p.rows(), p.cols());
    auto& value = p.mutable_value();
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const Scalar original = value.data()[i];
      value.data()[i] = original + static_cast<Scalar>(eps);
      const double plus = evaluate();
      value.data()[i] = original - static_cast<Scalar>(eps);
      const double minus = evaluate();
      value.data()[i] = original;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = static_cast<double>(analytic.data()[i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

template <typename Scalar>
double grad_check(const std::function<Tensor<Scalar>()>& loss_fn, const std::vector<Parameter<Scalar>>& params,
                  double eps) {
  std::vector<Tensor<Scalar>> tensors;
  tensors.reserve(params.size());
  for (const auto& p : params) tensors.push_back(p.tensor);
  return grad_check<Scalar>(loss_fn, std::move(tensors), eps);
}

}  // namespace workmem
