#pragma once

#include <random>
#include <string>

#include "workmem/ops.hpp"
#include "workmem/parameter.hpp"

namespace workmem {

/// Fully connected layer y = x W + b with Glorot-normal W and zero b.
template <typename Scalar>
struct Dense {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;

  Dense() = default;
  Dense(ParameterStore<Scalar>& store, const std::string& prefix, std::size_t in, std::size_t out,
        std::mt19937_64& rng, bool regularized = true)
      : weight(store.add_glorot(prefix + ".W", in, out, rng, regularized)),
        bias(store.add_zeros(prefix + ".b", Shape{1, out})) {}

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return affine(x, weight, bias); }
  std::size_t in_width() const { return static_cast<std::size_t>(weight.rows()); }
  std::size_t out_width() const { return static_cast<std::size_t>(weight.cols()); }
};

}  // namespace workmem
