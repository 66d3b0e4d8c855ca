#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "workmem/attention.hpp"
#include "workmem/layers.hpp"
#include "workmem/ops.hpp"

namespace workmem {

enum class PairMode { ordered, unordered };
enum class ReasoningMode { wmemnn, full_rn };

inline ReasoningMode parse_reasoning_mode(const std::string& name) {
  if (name == "wmemnn") return ReasoningMode::wmemnn;
  if (name == "full_rn") return ReasoningMode::full_rn;
  throw ContractError("unknown reasoning mode '" + name + "' (expected wmemnn or full_rn)");
}

inline std::string to_string(ReasoningMode mode) { return mode == ReasoningMode::wmemnn ? "wmemnn" : "full_rn"; }

inline std::uint64_t pair_count(std::uint64_t objects, PairMode mode) {
  return mode == PairMode::ordered ? objects * objects : objects * (objects + 1) / 2;
}

/// g_theta evaluations of one forward pass: over the H buffer slots for the
/// working-memory path, over all L memories for the plain relation network.
inline std::uint64_t count_pair_evals(ReasoningMode mode, std::uint64_t memories, std::uint64_t hops,
                                      PairMode pairs = PairMode::ordered) {
  return pair_count(mode == ReasoningMode::wmemnn ? hops : memories, pairs);
}

inline std::uint64_t count_pair_evals(const std::string& mode, std::uint64_t memories, std::uint64_t hops,
                                      PairMode pairs = PairMode::ordered) {
  return count_pair_evals(parse_reasoning_mode(mode), memories, hops, pairs);
}

struct RelationConfig {
  std::size_t object_width = 30;
  std::size_t condition_width = 30;
  std::size_t units = 128;
  std::size_t layers = 3;
  bool use_f_phi = false;
  PairMode pairs = PairMode::ordered;
};

/// r = f_phi( sum_{i,j} g_theta([o_i; o_j; u]) ), f_phi optional.
template <typename Scalar>
class RelationNetwork {
 public:
  RelationNetwork() = default;
  RelationNetwork(ParameterStore<Scalar>& store, const std::string& prefix, const RelationConfig& config,
                  std::mt19937_64& rng)
      : config_(config) {
    std::size_t in = 2 * config.object_width + config.condition_width;
    for (std::size_t l = 0; l < config.layers; ++l) {
      g_.emplace_back(store, prefix + ".g" + std::to_string(l), in, config.units, rng);
      in = config.units;
    }
    if (config.use_f_phi) {
      for (std::size_t l = 0; l < 2; ++l) f_.emplace_back(store, prefix + ".f" + std::to_string(l), in, config.units, rng);
    }
  }

  const RelationConfig& config() const { return config_; }
  std::size_t output_width() const { return config_.units; }

  /// One object set: objects [n x d], condition [1 x c] -> r [1 x d_phi].
  Tensor<Scalar> pool(const Tensor<Scalar>& objects, const Tensor<Scalar>& condition) const {
    if (objects.rows() == 0) throw ContractError("relation pool over an empty object set");
    const auto pairs = pair_rows(objects, condition, config_.pairs == PairMode::ordered);
    evaluations_ += static_cast<std::uint64_t>(pairs.rows());
    return finish(segment_sum(apply_g(pairs), pairs.rows()));
  }

  /// Several object sets of equal size, one g_theta pass over all their pairs.
  Tensor<Scalar> pool_batch(const std::vector<Tensor<Scalar>>& objects,
                            const std::vector<Tensor<Scalar>>& conditions) const {
    if (objects.empty() || objects.size() != conditions.size()) {
      throw ContractError("pool_batch: need one condition per object set");
    }
    std::vector<Tensor<Scalar>> blocks;
    blocks.reserve(objects.size());
    for (std::size_t b = 0; b < objects.size(); ++b) {
      if (objects[b].rows() != objects.front().rows()) throw DimensionError("pool_batch: object sets differ in size");
      blocks.push_back(pair_rows(objects[b], conditions[b], config_.pairs == PairMode::ordered));
    }
    const Eigen::Index per_set = blocks.front().rows();
    const auto all_pairs = blocks.size() == 1 ? blocks.front() : concat(blocks, 0);
    evaluations_ += static_cast<std::uint64_t>(all_pairs.rows());
    return finish(segment_sum(apply_g(all_pairs), per_set));
  }

  /// Logical g_theta evaluations since construction or the last reset.
  std::uint64_t pair_evaluations() const { return evaluations_; }
  void reset_counter() { evaluations_ = 0; }

 private:
  Tensor<Scalar> apply_g(Tensor<Scalar> x) const {
    for (const auto& layer : g_) x = relu(layer(x));
    return x;
  }

  Tensor<Scalar> finish(Tensor<Scalar> summed) const {
    for (const auto& layer : f_) summed = relu(layer(summed));
    return summed;
  }

  RelationConfig config_;
  std::vector<Dense<Scalar>> g_;
  std::vector<Dense<Scalar>> f_;
  mutable std::uint64_t evaluations_ = 0;
};

/// Relation network over the working-memory buffer, conditioned on u.
template <typename Scalar>
Tensor<Scalar> relation_pool(const WorkingMemoryBuffer<Scalar>& buffer, const Tensor<Scalar>& question,
                             const RelationNetwork<Scalar>& net) {
  if (buffer.size() == 0) throw ContractError("relation_pool: empty working memory buffer");
  return net.pool(buffer.stacked(), question);
}

/// Plain relation network over every memory pair (the quadratic baseline).
template <typename Scalar>
Tensor<Scalar> baseline_rn_full(const Tensor<Scalar>& memories, const Tensor<Scalar>& question,
                                const RelationNetwork<Scalar>& net) {
  if (memories.rows() == 0) throw ContractError("baseline_rn_full: empty memory bank");
  return net.pool(memories, question);
}

/// Answer readout a = softmax(V r), V in R^{|A| x d_phi}.
template <typename Scalar>
class Readout {
 public:
  Readout() = default;
  Readout(ParameterStore<Scalar>& store, std::size_t answers, std::size_t width, std::mt19937_64& rng)
      : weight_(store.add("readout.V", glorot_normal<Scalar>(Shape{answers, width}, width, answers, rng, true), true)) {}
  explicit Readout(Tensor<Scalar> weight) : weight_(std::move(weight)) {}

  Tensor<Scalar> logits(const Tensor<Scalar>& r) const {
    if (r.cols() != weight_.cols()) {
      throw DimensionError("readout: input width " + std::to_string(r.cols()) + " does not match V " +
                           to_string(weight_.shape()));
    }
    return matmul_nt(r, weight_);
  }
  Tensor<Scalar> predict(const Tensor<Scalar>& r) const { return softmax(logits(r), 1); }
  const Tensor<Scalar>& weight() const { return weight_; }

 private:
  Tensor<Scalar> weight_;
};

}  // namespace workmem
