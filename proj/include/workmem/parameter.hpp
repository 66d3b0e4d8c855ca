#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "workmem/binary_io.hpp"
#include "workmem/tensor.hpp"

namespace workmem {

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> tensor;
  /// Included in the l2 penalty (dense-layer weight matrices only).
  bool regularized = false;
};

/// I.i.d. normal samples with mean 0 and variance 2 / (fan_in + fan_out).
template <typename Scalar>
Tensor<Scalar> glorot_normal(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng,
                             bool requires_grad = false) {
  if (fan_in == 0 || fan_out == 0) throw ContractError("glorot_normal: fans must be positive");
  Tensor<Scalar> t(std::move(shape), requires_grad);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
  auto& v = t.mutable_value();
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<Scalar>(dist(rng));
  return t;
}

/// Owns the named trainable tensors of a model, in registration order.
template <typename Scalar>
class ParameterStore {
 public:
  Tensor<Scalar> add(std::string name, Tensor<Scalar> tensor, bool regularized = false) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    if (!tensor.requires_grad()) {
      Tensor<Scalar> leaf(tensor.shape(), true);
      leaf.mutable_value() = tensor.value();
      tensor = leaf;
    }
    index_.emplace(name, params_.size());
    params_.push_back(Parameter<Scalar>{std::move(name), tensor, regularized});
    return tensor;
  }

  Tensor<Scalar> add_glorot(std::string name, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng,
                            bool regularized = true) {
    return add(std::move(name), glorot_normal<Scalar>(Shape{fan_in, fan_out}, fan_in, fan_out, rng, true),
               regularized);
  }

  Tensor<Scalar> add_zeros(std::string name, Shape shape) {
    return add(std::move(name), Tensor<Scalar>(std::move(shape), true), false);
  }

  const std::vector<Parameter<Scalar>>& all() const { return params_; }
  std::vector<Parameter<Scalar>>& all() { return params_; }
  std::size_t size() const { return params_.size(); }

  const Parameter<Scalar>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

 private:
  std::vector<Parameter<Scalar>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Tensor table: "WMTENSOR", u32 version, u32 count, then per entry
// name, rank, dims (u64 each), scalar width in bytes (4 or 8), raw LE values.

inline constexpr char kTensorTableMagic[8] = {'W', 'M', 'T', 'E', 'N', 'S', 'O', 'R'};
inline constexpr std::uint32_t kTensorTableVersion = 1;

template <typename Scalar>
struct NamedArray {
  std::string name;
  Shape shape;
  Matrix<Scalar> values;
};

template <typename Scalar>
void write_array(std::ostream& out, const std::string& name, const Shape& shape, const Matrix<Scalar>& values) {
  io::write_string(out, name);
  io::write_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto dim : shape) io::write_u64(out, dim);
  io::write_u8(out, static_cast<std::uint8_t>(sizeof(Scalar)));
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if constexpr (sizeof(Scalar) == 4) {
      io::write_f32(out, static_cast<float>(values.data()[i]));
    } else {
      io::write_f64(out, static_cast<double>(values.data()[i]));
    }
  }
}

template <typename Scalar>
NamedArray<Scalar> read_array(std::istream& in) {
  NamedArray<Scalar> a;
  a.name = io::read_string(in, 4096);
  const auto rank = io::read_u32(in);
  if (rank > 8) throw io::FormatError("tensor '" + a.name + "' has implausible rank " + std::to_string(rank));
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto dim = io::read_u64(in);
    if (dim == 0 || dim > (1ull << 32)) throw io::FormatError("tensor '" + a.name + "' has invalid dimension");
    a.shape.push_back(static_cast<std::size_t>(dim));
  }
  const auto width = io::read_u8(in);
  if (width != 4 && width != 8) throw io::FormatError("tensor '" + a.name + "' has scalar width " + std::to_string(width));
  const auto [rows, cols] = matrix_dims(a.shape);
  a.values.resize(rows, cols);
  for (Eigen::Index i = 0; i < a.values.size(); ++i) {
    a.values.data()[i] = width == 4 ? static_cast<Scalar>(io::read_f32(in)) : static_cast<Scalar>(io::read_f64(in));
  }
  return a;
}

template <typename Scalar>
void write_parameter_table(std::ostream& out, const std::vector<Parameter<Scalar>>& params) {
  out.write(kTensorTableMagic, sizeof kTensorTableMagic);
  io::write_u32(out, kTensorTableVersion);
  io::write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) write_array(out, p.name, p.tensor.shape(), p.tensor.value());
}

template <typename Scalar>
void write_array_table(std::ostream& out, const std::vector<NamedArray<Scalar>>& arrays) {
  out.write(kTensorTableMagic, sizeof kTensorTableMagic);
  io::write_u32(out, kTensorTableVersion);
  io::write_u32(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) write_array(out, a.name, a.shape, a.values);
}

template <typename Scalar>
std::vector<NamedArray<Scalar>> read_parameter_table(std::istream& in) {
  char magic[8];
  io::read_exact(in, magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kTensorTableMagic)) throw io::FormatError("not a tensor table (bad magic)");
  const auto version = io::read_u32(in);
  if (version != kTensorTableVersion) {
    throw io::FormatError("tensor table version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kTensorTableVersion) + ")");
  }
  const auto count = io::read_u32(in);
  std::vector<NamedArray<Scalar>> arrays;
  arrays.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) arrays.push_back(read_array<Scalar>(in));
  return arrays;
}

/// Copies stored values into matching parameters; every parameter must be present.
template <typename Scalar>
void load_parameter_table(ParameterStore<Scalar>& store, const std::vector<NamedArray<Scalar>>& arrays) {
  std::unordered_map<std::string, const NamedArray<Scalar>*> by_name;
  for (const auto& a : arrays) by_name.emplace(a.name, &a);
  for (auto& p : store.all()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw io::FormatError("parameter '" + p.name + "' missing from table");
    if (it->second->shape != p.tensor.shape()) {
      throw io::FormatError("parameter '" + p.name + "' has shape " + to_string(it->second->shape) +
                            ", model expects " + to_string(p.tensor.shape()));
    }
    p.tensor.mutable_value() = it->second->values;
  }
  if (by_name.size() != store.size()) throw io::FormatError("tensor table holds parameters unknown to the model");
}

}  // namespace workmem
