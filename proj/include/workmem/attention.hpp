#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "workmem/encoder.hpp"
#include "workmem/layers.hpp"
#include "workmem/ops.hpp"

namespace workmem {

template <typename Scalar>
struct AttentionRead {
  Tensor<Scalar> output;   // h [1 x d]
  Tensor<Scalar> weights;  // alpha [L x 1]
};

/// Single-head read. Memories are projected m_i' = W_m m_i for the logits
/// u^T m_i' / sqrt(d); the output is the alpha-weighted sum of the
/// unprojected memories.
template <typename Scalar>
AttentionRead<Scalar> scaled_dot_attention(const Tensor<Scalar>& query, const Tensor<Scalar>& memories,
                                           const Tensor<Scalar>& projection) {
  if (memories.rank() != 2 || memories.rows() == 0) throw ContractError("attention over an empty memory bank");
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(query.cols()));
  const auto projected = matmul_nt(memories, projection);
  const auto logits = scale(matmul_nt(projected, query), inv_sqrt_d);
  auto weights = softmax(logits, 0);
  return {matmul_tn(weights, memories), weights};
}

/// Per-hop, per-head attention weights over the memories of one story.
struct AttentionTrace {
  std::size_t heads = 0;
  std::size_t memories = 0;
  std::vector<double> weights;  // [hop][head][memory]

  std::size_t hops() const { return heads && memories ? weights.size() / (heads * memories) : 0; }
  double weight(std::size_t hop, std::size_t head, std::size_t memory) const {
    return weights[(hop * heads + head) * memories + memory];
  }
  /// Sum over heads for one (hop, memory) cell.
  double head_sum(std::size_t hop, std::size_t memory) const {
    double s = 0.0;
    for (std::size_t h = 0; h < heads; ++h) s += weight(hop, h, memory);
    return s;
  }
};

/// S full-width projections W^s_m in R^{d x d} and the output map W_o in R^{Sd x d}.
template <typename Scalar>
class HeadBank {
 public:
  HeadBank() = default;
  HeadBank(ParameterStore<Scalar>& store, std::size_t width, std::size_t heads, std::mt19937_64& rng) : width_(width) {
    for (std::size_t s = 0; s < heads; ++s) {
      projections_.push_back(store.add_glorot("attention.head" + std::to_string(s) + ".W_m", width, width, rng));
    }
    output_ = store.add_glorot("attention.W_o", heads * width, width, rng);
  }

  /// Builds a bank from existing tensors (tests, benchmarks).
  HeadBank(std::vector<Tensor<Scalar>> projections, Tensor<Scalar> output)
      : projections_(std::move(projections)), output_(std::move(output)) {
    if (projections_.empty()) throw ContractError("head bank needs at least one head");
    width_ = static_cast<std::size_t>(projections_.front().rows());
    if (output_.rows() != static_cast<Eigen::Index>(width_ * projections_.size())) {
      throw DimensionError("output projection must have S*d rows");
    }
  }

  std::size_t heads() const { return projections_.size(); }
  std::size_t width() const { return width_; }
  const std::vector<Tensor<Scalar>>& projections() const { return projections_; }
  const Tensor<Scalar>& output() const { return output_; }

  /// [W^1_m; ...; W^S_m] as one Sd x d tensor.
  Tensor<Scalar> stacked() const { return projections_.size() == 1 ? projections_.front() : concat(projections_, 0); }

 private:
  std::size_t width_ = 0;
  std::vector<Tensor<Scalar>> projections_;
  Tensor<Scalar> output_;
};

namespace detail {

// All heads at once: the memories are projected by every W^s_m in one
// [L x d] x [d x Sd] product, giving S logits per memory.
template <typename Scalar>
Tensor<Scalar> fused_multi_head(const Tensor<Scalar>& query, const Tensor<Scalar>& memories,
                                const Tensor<Scalar>& stacked, const Tensor<Scalar>& output, std::size_t heads,
                                std::vector<double>* weights_out) {
  if (memories.rank() != 2 || memories.rows() == 0) throw ContractError("attention over an empty memory bank");
  const auto count = static_cast<std::size_t>(memories.rows());
  const auto width = static_cast<std::size_t>(memories.cols());
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(width));
  const auto projected = reshape(matmul_nt(memories, stacked), Shape{count * heads, width});
  const auto logits = scale(reshape(matmul_nt(projected, query), Shape{count, heads}), inv_sqrt_d);
  const auto alpha = softmax(logits, 0);  // [L x S], columns sum to one
  if (weights_out) {
    for (Eigen::Index s = 0; s < alpha.cols(); ++s) {
      for (Eigen::Index i = 0; i < alpha.rows(); ++i) weights_out->push_back(static_cast<double>(alpha.value()(i, s)));
    }
  }
  const auto per_head = reshape(matmul_tn(alpha, memories), Shape{1, heads * width});
  return matmul(per_head, output);
}

}  // namespace detail

/// o = [h_1; ...; h_S] W_o. When `weights_out` is given, the S x L weights
/// are appended head-major.
template <typename Scalar>
Tensor<Scalar> multi_head_read(const Tensor<Scalar>& query, const Tensor<Scalar>& memories, const HeadBank<Scalar>& bank,
                               std::vector<double>* weights_out = nullptr) {
  return detail::fused_multi_head(query, memories, bank.stacked(), bank.output(), bank.heads(), weights_out);
}

/// f_t: d -> hidden (tanh) -> d (linear).
template <typename Scalar>
class TransitionNet {
 public:
  TransitionNet() = default;
  TransitionNet(ParameterStore<Scalar>& store, std::size_t width, std::size_t hidden, std::mt19937_64& rng)
      : hidden_(store, "attention.transition.hidden", width, hidden, rng),
        out_(store, "attention.transition.out", hidden, width, rng) {}

  Tensor<Scalar> operator()(const Tensor<Scalar>& o) const { return out_(tanh(hidden_(o))); }

 private:
  Dense<Scalar> hidden_;
  Dense<Scalar> out_;
};

/// Fixed-capacity, append-only store of hop outputs.
template <typename Scalar>
class WorkingMemoryBuffer {
 public:
  explicit WorkingMemoryBuffer(std::size_t capacity) : capacity_(capacity) {}

  void push(Tensor<Scalar> slot) {
    if (slots_.size() == capacity_) throw ContractError("working memory buffer is full");
    slots_.push_back(std::move(slot));
  }

  std::size_t size() const { return slots_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Tensor<Scalar>& operator[](std::size_t k) const { return slots_.at(k); }
  const std::vector<Tensor<Scalar>>& slots() const { return slots_; }

  /// Slots stacked as rows: [H x d].
  Tensor<Scalar> stacked() const { return slots_.size() == 1 ? slots_.front() : concat(slots_, 0); }

 private:
  std::size_t capacity_;
  std::vector<Tensor<Scalar>> slots_;
};

/// Hop 1 is conditioned on the question; hop k+1 on f_t(o_k). Every hop
/// reads the same memory bank.
template <typename Scalar>
WorkingMemoryBuffer<Scalar> run_hops(const MemoryBank<Scalar>& bank, const HeadBank<Scalar>& heads,
                                     const TransitionNet<Scalar>& transition, std::size_t hops,
                                     AttentionTrace* trace = nullptr) {
  if (hops == 0) throw ContractError("run_hops: at least one hop is required");
  WorkingMemoryBuffer<Scalar> buffer(hops);
  const auto stacked = heads.stacked();
  if (trace) {
    trace->heads = heads.heads();
    trace->memories = bank.size();
    trace->weights.clear();
  }
  Tensor<Scalar> conditioner = bank.question;
  for (std::size_t k = 0; k < hops; ++k) {
    auto o = detail::fused_multi_head(conditioner, bank.memories, stacked, heads.output(), heads.heads(),
                                      trace ? &trace->weights : nullptr);
    if (k + 1 < hops) conditioner = transition(o);
    buffer.push(std::move(o));
  }
  return buffer;
}

}  // namespace workmem
