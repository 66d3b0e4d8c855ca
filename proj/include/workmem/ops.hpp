#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "workmem/tensor.hpp"

// Differentiable operations. Every function builds the forward value eagerly
// and, when gradients are being recorded, attaches its backward rule.

namespace workmem {

namespace detail {

template <typename Scalar>
void require_rank2(const Tensor<Scalar>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " + to_string(t.shape()));
  }
}

template <typename Scalar>
void ensure_grad(Node<Scalar>& n) {
  if (n.grad.size() == 0) n.grad = Matrix<Scalar>::Zero(n.value.rows(), n.value.cols());
}

inline Shape shape2(Eigen::Index rows, Eigen::Index cols) {
  return Shape{static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)};
}

template <typename Scalar>
Shape matrix_shape(const Matrix<Scalar>& m) {
  return shape2(m.rows(), m.cols());
}

enum class Broadcast { same, rhs_scalar, lhs_scalar };

template <typename Scalar>
Broadcast broadcast_kind(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.size() == 1) return Broadcast::rhs_scalar;
  if (a.size() == 1) return Broadcast::lhs_scalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                       to_string(b.shape()));
}

// Maps a logical axis onto the row (0) or column (1) axis of the matrix view.
template <typename Scalar>
int matrix_axis(const Tensor<Scalar>& t, int axis, const char* op) {
  const int rank = static_cast<int>(t.rank());
  if (rank <= 1 && axis == 0) return 1;
  if (rank == 2 && (axis == 0 || axis == 1)) return axis;
  if (rank > 2 && axis == rank - 1) return 1;
  throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " unsupported for shape " +
                       to_string(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ for " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  Matrix<Scalar> out = a.value() * b.value();
  auto shape = detail::matrix_shape(out);
  return make_op<Scalar>(std::move(shape), std::move(out), {a, b}, [](Node<Scalar>& self) {
    auto& lhs = *self.parents[0];
    auto& rhs = *self.parents[1];
    if (lhs.requires_grad) lhs.accumulate_expr(self.grad * rhs.value.transpose());
    if (rhs.requires_grad) rhs.accumulate_expr(lhs.value.transpose() * self.grad);
  });
}

/// a * b^T
template <typename Scalar>
Tensor<Scalar> matmul_nt(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_rank2(a, "matmul_nt");
  detail::require_rank2(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ for " + to_string(a.shape()) + " x " +
                         to_string(b.shape()) + "^T");
  }
  Matrix<Scalar> out = a.value() * b.value().transpose();
  auto shape = detail::matrix_shape(out);
  return make_op<Scalar>(std::move(shape), std::move(out), {a, b}, [](Node<Scalar>& self) {
    auto& lhs = *self.parents[0];
    auto& rhs = *self.parents[1];
    if (lhs.requires_grad) lhs.accumulate_expr(self.grad * rhs.value);
    if (rhs.requires_grad) rhs.accumulate_expr(self.grad.transpose() * lhs.value);
  });
}

/// a^T * b
template <typename Scalar>
Tensor<Scalar> matmul_tn(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_rank2(a, "matmul_tn");
  detail::require_rank2(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: inner dimensions differ for " + to_string(a.shape()) + "^T x " +
                         to_string(b.shape()));
  }
  Matrix<Scalar> out = a.value().transpose() * b.value();
  auto shape = detail::matrix_shape(out);
  return make_op<Scalar>(std::move(shape), std::move(out), {a, b}, [](Node<Scalar>& self) {
    auto& lhs = *self.parents[0];
    auto& rhs = *self.parents[1];
    if (lhs.requires_grad) lhs.accumulate_expr(rhs.value * self.grad.transpose());
    if (rhs.requires_grad) rhs.accumulate_expr(lhs.value * self.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  detail::require_rank2(a, "transpose");
  Matrix<Scalar> out = a.value().transpose();
  auto shape = detail::matrix_shape(out);
  return make_op<Scalar>(std::move(shape), std::move(out), {a}, [](Node<Scalar>& self) {
    self.parents[0]->accumulate_expr(self.grad.transpose());
  });
}

/// x * W + b, with the bias row added to every row of x*W.
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
  detail::require_rank2(x, "affine");
  detail::require_rank2(w, "affine");
  if (x.cols() != w.rows()) {
    throw DimensionError("affine: inner dimensions differ for " + to_string(x.shape()) + " x " +
                         to_string(w.shape()));
  }
  if (b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("affine: bias " + to_string(b.shape()) + " does not match output width " +
                         std::to_string(w.cols()));
  }
  Matrix<Scalar> out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  auto shape = detail::matrix_shape(out);
  return make_op<Scalar>(std::move(shape), std::move(out), {x, w, b},
                         [](Node<Scalar>& self) {
                           auto& in = *self.parents[0];
                           auto& weight = *self.parents[1];
                           auto& bias = *self.parents[2];
                           if (in.requires_grad) in.accumulate_expr(self.grad * weight.value.transpose());
                           if (weight.requires_grad) weight.accumulate_expr(in.value.transpose() * self.grad);
                           if (bias.requires_grad) bias.accumulate_expr(self.grad.colwise().sum());
                         });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using detail::Broadcast;
  const auto kind = detail::broadcast_kind(a, b, "add");
  Matrix<Scalar> out;
  Shape shape;
  switch (kind) {
    case Broadcast::same:
      out = a.value() + b.value();
      shape = a.shape();
      break;
    case Broadcast::rhs_scalar:
      out = a.value().array() + b.value()(0, 0);
      shape = a.shape();
      break;
    case Broadcast::lhs_scalar:
      out = b.value().array() + a.value()(0, 0);
      shape = b.shape();
      break;
  }
  return make_op<Scalar>(std::move(shape), std::move(out), {a, b}, [kind](Node<Scalar>& self) {
    auto& lhs = *self.parents[0];
    auto& rhs = *self.parents[1];
    if (lhs.requires_grad) {
      if (kind == Broadcast::lhs_scalar) {
        lhs.accumulate(Matrix<Scalar>::Constant(1, 1, self.grad.sum()));
      } else {
        lhs.accumulate(self.grad);
      }
    }
    if (rhs.requires_grad) {
      if (kind == Broadcast::rhs_scalar) {
        rhs.accumulate(Matrix<Scalar>::Constant(1, 1, self.grad.sum()));
      } else {
        rhs.accumulate(self.grad);
      }
    }
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using detail::Broadcast;
  const auto kind = detail::broadcast_kind(a, b, "sub");
  Matrix<Scalar> out;
  Shape shape;
  switch (kind) {
    case Broadcast::same:
      out = a.value() - b.value();
      shape = a.shape();
      break;
    case Broadcast::rhs_scalar:
      out = a.value().array() - b.value()(0, 0);
      shape = a.shape();
      break;
    case Broadcast::lhs_scalar:
      out = a.value()(0, 0) - b.value().array();
      shape = b.shape();
      break;
  }
  return make_op<Scalar>(std::move(shape), std::move(out), {a, b}, [kind](Node<Scalar>& self) {
    auto& lhs = *self.parents[0];
    auto& rhs = *self.parents[1];
    if (lhs.requires_grad) {
      if (kind == Broadcast::lhs_scalar) {
        lhs.accumulate(Matrix<Scalar>::Constant(1, 1, self.grad.sum()));
      } else {
        lhs.accumulate(self.grad);
      }
    }
    if (rhs.requires_grad) {
      if (kind == Broadcast::rhs_scalar) {
        rhs.accumulate(Matrix<Scalar>::Constant(1, 1, -self.grad.sum()));
      } else {
        rhs.accumulate_expr(-self.grad);
      }
    }
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using detail::Broadcast;
  const auto kind = detail::broadcast_kind(a, b, "mul");
  Matrix<Scalar> out;
  Shape shape;
  switch (kind) {
    case Broadcast::same:
      out = a.value().cwiseProduct(b.value());
      shape = a.shape();
      break;
    case Broadcast::rhs_scalar:
      out = a.value() * b.value()(0, 0);
      shape = a.shape();
      break;
    case Broadcast::lhs_scalar:
      out = b.value() * a.value()(0, 0);
      shape = b.shape();
      break;
  }
  return make_op<Scalar>(std::move(shape), std::move(out), {a, b}, [kind](Node<Scalar>& self) {
    auto& lhs = *self.parents[0];
    auto& rhs = *self.parents[1];
    switch (kind) {
      case Broadcast::same:
        if (lhs.requires_grad) lhs.accumulate_expr(self.grad.cwiseProduct(rhs.value));
        if (rhs.requires_grad) rhs.accumulate_expr(self.grad.cwiseProduct(lhs.value));
        break;
      case Broadcast::rhs_scalar:
        if (lhs.requires_grad) lhs.accumulate_expr(self.grad * rhs.value(0, 0));
        if (rhs.requires_grad) rhs.accumulate(Matrix<Scalar>::Constant(1, 1, self.grad.cwiseProduct(lhs.value).sum()));
        break;
      case Broadcast::lhs_scalar:
        if (lhs.requires_grad) lhs.accumulate(Matrix<Scalar>::Constant(1, 1, self.grad.cwiseProduct(rhs.value).sum()));
        if (rhs.requires_grad) rhs.accumulate_expr(self.grad * lhs.value(0, 0));
        break;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  Matrix<Scalar> out = a.value() * factor;
  return make_op<Scalar>(a.shape(), std::move(out), {a}, [factor](Node<Scalar>& self) {
    self.parents[0]->accumulate_expr(self.grad * factor);
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar v) {
    // split by sign so exp never overflows
    if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
  return make_op<Scalar>(a.shape(), std::move(out), {a}, [](Node<Scalar>& self) {
    self.parents[0]->accumulate_expr(
        self.grad.cwiseProduct(self.value.cwiseProduct((Scalar(1) - self.value.array()).matrix())));
  });
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().array().tanh().matrix();
  return make_op<Scalar>(a.shape(), std::move(out), {a}, [](Node<Scalar>& self) {
    self.parents[0]->accumulate_expr(
        self.grad.cwiseProduct((Scalar(1) - self.value.array().square()).matrix()));
  });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().cwiseMax(Scalar(0));
  return make_op<Scalar>(a.shape(), std::move(out), {a}, [](Node<Scalar>& self) {
    auto& in = *self.parents[0];
    in.accumulate_expr(self.grad.cwiseProduct((in.value.array() > Scalar(0)).template cast<Scalar>().matrix()));
  });
}

// ---------------------------------------------------------------------------
// Reductions and normalization

/// Softmax along `axis` with the per-slice maximum subtracted first.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, int axis) {
  const int along = detail::matrix_axis(x, axis, "softmax");
  Matrix<Scalar> out(x.rows(), x.cols());
  const auto& in = x.value();
  if (along == 1) {
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
      const Scalar peak = in.row(r).maxCoeff();
      out.row(r) = (in.row(r).array() - peak).exp().matrix();
      out.row(r) /= out.row(r).sum();
    }
  } else {
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
      const Scalar peak = in.col(c).maxCoeff();
      out.col(c) = (in.col(c).array() - peak).exp().matrix();
      out.col(c) /= out.col(c).sum();
    }
  }
  return make_op<Scalar>(x.shape(), std::move(out), {x}, [along](Node<Scalar>& self) {
    const Matrix<Scalar> gy = self.grad.cwiseProduct(self.value);
    Matrix<Scalar> gx;
    if (along == 1) {
      const auto dots = gy.rowwise().sum();
      gx = gy - (self.value.array().colwise() * dots.array()).matrix();
    } else {
      const auto dots = gy.colwise().sum();
      gx = gy - (self.value.array().rowwise() * dots.array()).matrix();
    }
    self.parents[0]->accumulate(gx);
  });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Matrix<Scalar> out = Matrix<Scalar>::Constant(1, 1, x.value().sum());
  return make_op<Scalar>(Shape{}, std::move(out), {x}, [](Node<Scalar>& self) {
    auto& in = *self.parents[0];
    in.accumulate(Matrix<Scalar>::Constant(in.value.rows(), in.value.cols(), self.grad(0, 0)));
  });
}

template <typename Scalar>
Tensor<Scalar> sum_squares(const Tensor<Scalar>& x) {
  Matrix<Scalar> out = Matrix<Scalar>::Constant(1, 1, x.value().squaredNorm());
  return make_op<Scalar>(Shape{}, std::move(out), {x}, [](Node<Scalar>& self) {
    auto& in = *self.parents[0];
    in.accumulate_expr(in.value * (Scalar(2) * self.grad(0, 0)));
  });
}

/// Sums consecutive blocks of `group` rows: [n*group x c] -> [n x c].
template <typename Scalar>
Tensor<Scalar> segment_sum(const Tensor<Scalar>& x, Eigen::Index group) {
  detail::require_rank2(x, "segment_sum");
  if (group <= 0 || x.rows() % group != 0) {
    throw DimensionError("segment_sum: " + std::to_string(x.rows()) + " rows not divisible into groups of " +
                         std::to_string(group));
  }
  const Eigen::Index segments = x.rows() / group;
  Matrix<Scalar> out = Matrix<Scalar>::Zero(segments, x.cols());
  for (Eigen::Index s = 0; s < segments; ++s) {
    // fixed left-to-right reduction order
    for (Eigen::Index r = 0; r < group; ++r) out.row(s) += x.value().row(s * group + r);
  }
  return make_op<Scalar>(detail::shape2(segments, x.cols()), std::move(out), {x}, [group](Node<Scalar>& self) {
    auto& in = *self.parents[0];
    Matrix<Scalar> g(in.value.rows(), in.value.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) g.row(r) = self.grad.row(r / group);
    in.accumulate(g);
  });
}

/// Sum of -log(max(p[b, label_b], 1e-12)) over the rows of a probability matrix.
template <typename Scalar>
Tensor<Scalar> cross_entropy_sum(const Tensor<Scalar>& probs, std::span<const int> labels) {
  detail::require_rank2(probs, "cross_entropy_sum");
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows()) {
    throw DimensionError("cross_entropy_sum: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(probs.rows()) + " rows");
  }
  constexpr Scalar kFloor = Scalar(1e-12);
  std::vector<int> label_copy(labels.begin(), labels.end());
  Scalar total = 0;
  for (Eigen::Index b = 0; b < probs.rows(); ++b) {
    const int y = label_copy[static_cast<std::size_t>(b)];
    if (y < 0 || y >= probs.cols()) throw std::out_of_range("cross_entropy_sum: label out of range");
    total -= std::log(std::max(probs.value()(b, y), kFloor));
  }
  Matrix<Scalar> out = Matrix<Scalar>::Constant(1, 1, total);
  return make_op<Scalar>(Shape{}, std::move(out), {probs}, [label_copy = std::move(label_copy)](Node<Scalar>& self) {
    auto& in = *self.parents[0];
    Matrix<Scalar> g = Matrix<Scalar>::Zero(in.value.rows(), in.value.cols());
    for (Eigen::Index b = 0; b < g.rows(); ++b) {
      const int y = label_copy[static_cast<std::size_t>(b)];
      const Scalar p = in.value(b, y);
      if (p > kFloor) g(b, y) = -self.grad(0, 0) / p;
    }
    in.accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Structural

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (element_count(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  const auto [rows, cols] = matrix_dims(shape);
  Matrix<Scalar> out = Eigen::Map<const Matrix<Scalar>>(x.value().data(), rows, cols);
  return make_op<Scalar>(std::move(shape), std::move(out), {x}, [](Node<Scalar>& self) {
    auto& in = *self.parents[0];
    in.accumulate(Eigen::Map<const Matrix<Scalar>>(self.grad.data(), in.value.rows(), in.value.cols()));
  });
}

/// Concatenates along `axis`; the backward rule routes each slice of the
/// incoming gradient back to the operand it came from.
template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no operands");
  const auto& first = parts.front();
  const int along = detail::matrix_axis(first, axis, "concat");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.rank()) throw DimensionError("concat: rank mismatch " + to_string(p.shape()));
    const int this_axis = detail::matrix_axis(p, axis, "concat");
    (void)this_axis;
    if (along == 0 ? p.cols() != first.cols() : p.rows() != first.rows()) {
      throw DimensionError("concat: shapes " + to_string(first.shape()) + " and " + to_string(p.shape()) +
                           " differ off the concatenation axis");
    }
    total += along == 0 ? p.rows() : p.cols();
  }
  Matrix<Scalar> out(along == 0 ? total : first.rows(), along == 0 ? first.cols() : total);
  std::vector<Eigen::Index> offsets;
  offsets.reserve(parts.size());
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    if (along == 0) {
      out.middleRows(offset, p.rows()) = p.value();
      offset += p.rows();
    } else {
      out.middleCols(offset, p.cols()) = p.value();
      offset += p.cols();
    }
  }
  Shape shape = first.shape();
  if (shape.empty()) shape = Shape{1};
  const std::size_t logical = first.rank() <= 1 ? 0 : static_cast<std::size_t>(along == 0 ? 0 : first.rank() - 1);
  shape[logical] = static_cast<std::size_t>(total);
  return make_op<Scalar>(std::move(shape), std::move(out), parts,
                         [along, offsets = std::move(offsets)](Node<Scalar>& self) {
                           for (std::size_t i = 0; i < self.parents.size(); ++i) {
                             auto& p = *self.parents[i];
                             if (!p.requires_grad) continue;
                             if (along == 0) {
                               p.accumulate_expr(self.grad.middleRows(offsets[i], p.value.rows()));
                             } else {
                               p.accumulate_expr(self.grad.middleCols(offsets[i], p.value.cols()));
                             }
                           }
                         });
}

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, int axis, Eigen::Index begin, Eigen::Index length) {
  const int along = detail::matrix_axis(x, axis, "slice");
  const Eigen::Index extent = along == 0 ? x.rows() : x.cols();
  if (begin < 0 || length <= 0 || begin + length > extent) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                         ") outside axis of length " + std::to_string(extent));
  }
  Matrix<Scalar> out = along == 0 ? Matrix<Scalar>(x.value().middleRows(begin, length))
                                  : Matrix<Scalar>(x.value().middleCols(begin, length));
  Shape shape = x.shape();
  if (shape.empty()) shape = Shape{1};
  const std::size_t logical = x.rank() <= 1 ? 0 : static_cast<std::size_t>(along == 0 ? 0 : x.rank() - 1);
  shape[logical] = static_cast<std::size_t>(length);
  return make_op<Scalar>(std::move(shape), std::move(out), {x}, [along, begin](Node<Scalar>& self) {
    auto& in = *self.parents[0];
    detail::ensure_grad(in);
    if (along == 0) {
      in.grad.middleRows(begin, self.grad.rows()) += self.grad;
    } else {
      in.grad.middleCols(begin, self.grad.cols()) += self.grad;
    }
  });
}

template <typename Scalar>
std::vector<Tensor<Scalar>> split(const Tensor<Scalar>& x, const std::vector<Eigen::Index>& sizes, int axis) {
  std::vector<Tensor<Scalar>> out;
  out.reserve(sizes.size());
  Eigen::Index begin = 0;
  for (auto len : sizes) {
    out.push_back(slice(x, axis, begin, len));
    begin += len;
  }
  const int along = detail::matrix_axis(x, axis, "split");
  if (begin != (along == 0 ? x.rows() : x.cols())) {
    throw DimensionError("split: sizes do not cover " + to_string(x.shape()));
  }
  return out;
}

/// Row gather from a table. Rows equal to `frozen_row` receive no gradient.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& table, std::span<const int> indices, int frozen_row = -1) {
  detail::require_rank2(table, "gather_rows");
  if (indices.empty()) throw ContractError("gather_rows: empty index list");
  std::vector<int> idx(indices.begin(), indices.end());
  Matrix<Scalar> out(static_cast<Eigen::Index>(idx.size()), table.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= table.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx[i]) + " outside table of " +
                              std::to_string(table.rows()) + " rows");
    }
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(idx[i]);
  }
  auto shape = detail::matrix_shape(out);
  return make_op<Scalar>(std::move(shape), std::move(out), {table},
                         [idx = std::move(idx), frozen_row](Node<Scalar>& self) {
                           auto& tab = *self.parents[0];
                           detail::ensure_grad(tab);
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                             if (idx[i] == frozen_row) continue;
                             tab.grad.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
                           }
                         });
}

/// Row-wise select: row r is taken from `when_true` if mask[r] is set,
/// otherwise from `when_false`.
template <typename Scalar>
Tensor<Scalar> blend_rows(std::span<const std::uint8_t> mask, const Tensor<Scalar>& when_true,
                          const Tensor<Scalar>& when_false) {
  if (when_true.shape() != when_false.shape()) {
    throw DimensionError("blend_rows: shapes " + to_string(when_true.shape()) + " and " +
                         to_string(when_false.shape()) + " differ");
  }
  if (static_cast<Eigen::Index>(mask.size()) != when_true.rows()) {
    throw DimensionError("blend_rows: mask length does not match row count");
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  Matrix<Scalar> out(when_true.rows(), when_true.cols());
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r) = m[static_cast<std::size_t>(r)] ? when_true.value().row(r) : when_false.value().row(r);
  }
  return make_op<Scalar>(when_true.shape(), std::move(out), {when_true, when_false},
                         [m = std::move(m)](Node<Scalar>& self) {
                           auto& a = *self.parents[0];
                           auto& b = *self.parents[1];
                           if (a.requires_grad) detail::ensure_grad(a);
                           if (b.requires_grad) detail::ensure_grad(b);
                           for (Eigen::Index r = 0; r < self.grad.rows(); ++r) {
                             auto& target = m[static_cast<std::size_t>(r)] ? a : b;
                             if (target.requires_grad) target.grad.row(r) += self.grad.row(r);
                           }
                         });
}

/// Builds the relation-network input rows [o_i ; o_j ; c] for object pairs.
/// Ordered mode emits all n^2 pairs (i-major); unordered emits i <= j.
template <typename Scalar>
Tensor<Scalar> pair_rows(const Tensor<Scalar>& objects, const Tensor<Scalar>& condition, bool ordered = true) {
  detail::require_rank2(objects, "pair_rows");
  if (condition.rows() != 1) {
    throw DimensionError("pair_rows: condition must be a single row, got " + to_string(condition.shape()));
  }
  const Eigen::Index n = objects.rows();
  const Eigen::Index d = objects.cols();
  const Eigen::Index c = condition.cols();
  const Eigen::Index pairs = ordered ? n * n : n * (n + 1) / 2;
  Matrix<Scalar> out(pairs, 2 * d + c);
  Eigen::Index p = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = ordered ? 0 : i; j < n; ++j, ++p) {
      out.row(p).segment(0, d) = objects.value().row(i);
      out.row(p).segment(d, d) = objects.value().row(j);
      out.row(p).segment(2 * d, c) = condition.value().row(0);
    }
  }
  return make_op<Scalar>(detail::shape2(pairs, 2 * d + c), std::move(out), {objects, condition},
                         [n, d, c, ordered](Node<Scalar>& self) {
                           auto& obj = *self.parents[0];
                           auto& cond = *self.parents[1];
                           if (obj.requires_grad) detail::ensure_grad(obj);
                           if (cond.requires_grad) detail::ensure_grad(cond);
                           Eigen::Index q = 0;
                           for (Eigen::Index i = 0; i < n; ++i) {
                             for (Eigen::Index j = ordered ? 0 : i; j < n; ++j, ++q) {
                               if (obj.requires_grad) {
                                 obj.grad.row(i) += self.grad.row(q).segment(0, d);
                                 obj.grad.row(j) += self.grad.row(q).segment(d, d);
                               }
                               if (cond.requires_grad) cond.grad.row(0) += self.grad.row(q).segment(2 * d, c);
                             }
                           }
                         });
}

}  // namespace workmem
