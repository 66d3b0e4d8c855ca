#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "workmem/attention.hpp"
#include "workmem/autodiff.hpp"
#include "workmem/babi.hpp"
#include "workmem/encoder.hpp"
#include "workmem/reasoning.hpp"

namespace workmem {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t answer_count = 0;
  std::size_t width = 30;            // d
  std::size_t heads = 8;             // S
  std::size_t hops = 4;              // H
  std::size_t window = babi::kDefaultWindow;
  std::size_t transition_hidden = 15;
  std::size_t relation_units = 128;
  std::size_t relation_layers = 3;
  bool use_f_phi = false;
  PairMode pairs = PairMode::ordered;
  bool temporal_encoding = false;
};

/// Encoder -> multi-hop attention into the working-memory buffer ->
/// relation network over the buffer -> softmax readout.
template <typename Scalar>
class WorkingMemoryNetwork {
 public:
  struct Output {
    Tensor<Scalar> probabilities;         // [B x |A|]
    std::vector<AttentionTrace> traces;   // filled on request, one per story
  };

  WorkingMemoryNetwork(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    if (config.vocab_size < 2 || config.answer_count == 0) throw ContractError("model needs a vocabulary and answers");
    std::mt19937_64 rng(seed);
    encoder_ = Encoder<Scalar>(store_, EncoderConfig{config.vocab_size, config.width, config.window,
                                                     config.temporal_encoding},
                               rng);
    heads_ = HeadBank<Scalar>(store_, config.width, config.heads, rng);
    transition_ = TransitionNet<Scalar>(store_, config.width, config.transition_hidden, rng);
    relation_ = RelationNetwork<Scalar>(store_, "reasoning",
                                        RelationConfig{config.width, config.width, config.relation_units,
                                                       config.relation_layers, config.use_f_phi, config.pairs},
                                        rng);
    readout_ = Readout<Scalar>(store_, config.answer_count, relation_.output_width(), rng);
  }

  const ModelConfig& config() const { return config_; }
  ParameterStore<Scalar>& parameters() { return store_; }
  const ParameterStore<Scalar>& parameters() const { return store_; }
  const Encoder<Scalar>& encoder() const { return encoder_; }
  const HeadBank<Scalar>& heads() const { return heads_; }
  const TransitionNet<Scalar>& transition() const { return transition_; }
  const RelationNetwork<Scalar>& relation() const { return relation_; }
  const Readout<Scalar>& readout() const { return readout_; }

  Output forward(const babi::Batch& batch, bool record_traces = false) const {
    Output out;
    const auto banks = encoder_.encode_story(batch);
    std::vector<Tensor<Scalar>> buffers;
    std::vector<Tensor<Scalar>> questions;
    buffers.reserve(banks.size());
    questions.reserve(banks.size());
    if (record_traces) out.traces.resize(banks.size());
    for (std::size_t b = 0; b < banks.size(); ++b) {
      auto buffer = run_hops(banks[b], heads_, transition_, config_.hops, record_traces ? &out.traces[b] : nullptr);
      buffers.push_back(buffer.stacked());
      questions.push_back(banks[b].question);
    }
    out.probabilities = readout_.predict(relation_.pool_batch(buffers, questions));
    return out;
  }

  /// Summed (not averaged) cross-entropy over the batch.
  Tensor<Scalar> data_loss(const Tensor<Scalar>& probabilities, const babi::Batch& batch) const {
    return cross_entropy_sum(probabilities, std::span<const int>(batch.answers));
  }

  /// Sum of squared entries of every regularized weight matrix.
  Tensor<Scalar> l2_penalty() const {
    std::vector<Tensor<Scalar>> terms;
    for (const auto& p : store_.all()) {
      if (p.regularized) terms.push_back(sum_squares(p.tensor));
    }
    Tensor<Scalar> total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
    return total;
  }

  Tensor<Scalar> loss(const babi::Batch& batch, Scalar l2) const {
    const auto data = data_loss(forward(batch).probabilities, batch);
    if (l2 == Scalar(0)) return data;
    return add(data, scale(l2_penalty(), l2));
  }

  std::vector<int> predict(const babi::Batch& batch) const {
    NoGradGuard guard;
    const auto probs = forward(batch).probabilities.value();
    std::vector<int> out(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index b = 0; b < probs.rows(); ++b) {
      Eigen::Index best;
      probs.row(b).maxCoeff(&best);
      out[static_cast<std::size_t>(b)] = static_cast<int>(best);
    }
    return out;
  }

 private:
  ModelConfig config_;
  ParameterStore<Scalar> store_;
  Encoder<Scalar> encoder_;
  HeadBank<Scalar> heads_;
  TransitionNet<Scalar> transition_;
  RelationNetwork<Scalar> relation_;
  Readout<Scalar> readout_;
};

}  // namespace workmem
