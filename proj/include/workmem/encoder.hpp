#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "workmem/babi.hpp"
#include "workmem/layers.hpp"
#include "workmem/ops.hpp"
#include "workmem/parameter.hpp"

namespace workmem {

/// Word embedding table W in R^{|V| x d}; row 0 is padding, held at zero.
template <typename Scalar>
class Embedding {
 public:
  Embedding() = default;
  Embedding(ParameterStore<Scalar>& store, const std::string& name, std::size_t vocab_size, std::size_t width,
            std::mt19937_64& rng)
      : table_(store.add(name, glorot_normal<Scalar>(Shape{vocab_size, width}, vocab_size, width, rng, true))) {
    table_.mutable_value().row(babi::kPaddingIndex).setZero();
  }

  Tensor<Scalar> operator()(std::span<const int> tokens) const {
    return gather_rows(table_, tokens, babi::kPaddingIndex);
  }

  const Tensor<Scalar>& table() const { return table_; }
  std::size_t width() const { return static_cast<std::size_t>(table_.cols()); }

 private:
  Tensor<Scalar> table_;
};

/// Gated recurrent unit, reset gate applied inside the candidate's recurrent term:
///   z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br)
///   c = tanh(x Wh + (r*h) Uh + bh), h' = (1 - z) * h + z * c
template <typename Scalar>
class GruCell {
 public:
  GruCell() = default;
  GruCell(ParameterStore<Scalar>& store, const std::string& prefix, std::size_t in, std::size_t hidden,
          std::mt19937_64& rng)
      : hidden_(hidden) {
    Wz = store.add_glorot(prefix + ".W_z", in, hidden, rng, false);
    Uz = store.add_glorot(prefix + ".U_z", hidden, hidden, rng, false);
    bz = store.add_zeros(prefix + ".b_z", Shape{1, hidden});
    Wr = store.add_glorot(prefix + ".W_r", in, hidden, rng, false);
    Ur = store.add_glorot(prefix + ".U_r", hidden, hidden, rng, false);
    br = store.add_zeros(prefix + ".b_r", Shape{1, hidden});
    Wh = store.add_glorot(prefix + ".W_h", in, hidden, rng, false);
    Uh = store.add_glorot(prefix + ".U_h", hidden, hidden, rng, false);
    bh = store.add_zeros(prefix + ".b_h", Shape{1, hidden});
  }

  std::size_t hidden() const { return hidden_; }

  /// One update for a block of rows: x [N x in], h [N x hidden].
  Tensor<Scalar> step(const Tensor<Scalar>& x, const Tensor<Scalar>& h) const {
    const auto z = sigmoid(add(affine(x, Wz, bz), matmul(h, Uz)));
    const auto r = sigmoid(add(affine(x, Wr, br), matmul(h, Ur)));
    const auto candidate = tanh(add(affine(x, Wh, bh), matmul(mul(r, h), Uh)));
    return add(h, mul(z, sub(candidate, h)));
  }

  /// Final hidden state of one sequence; rows past `length` are ignored.
  Tensor<Scalar> encode(const Tensor<Scalar>& vectors, std::size_t length) const {
    if (length == 0) throw ContractError("gru encode: sequence length must be at least 1");
    if (static_cast<Eigen::Index>(length) > vectors.rows()) {
      throw ContractError("gru encode: length " + std::to_string(length) + " exceeds " +
                          std::to_string(vectors.rows()) + " input rows");
    }
    Tensor<Scalar> h(Shape{1, hidden_});
    for (std::size_t t = 0; t < length; ++t) h = step(slice(vectors, 0, static_cast<Eigen::Index>(t), 1), h);
    return h;
  }

  /// Encodes N sequences at once. `inputs[t]` holds step t for every row;
  /// rows whose length is <= t keep their previous state.
  Tensor<Scalar> encode_rows(const std::vector<Tensor<Scalar>>& inputs, std::span<const int> lengths) const {
    const std::size_t rows = lengths.size();
    for (int len : lengths) {
      if (len <= 0) throw ContractError("gru encode: sequence length must be at least 1");
    }
    Tensor<Scalar> h(Shape{rows, hidden_});
    std::vector<std::uint8_t> active(rows);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      bool all_active = true;
      bool any_active = false;
      for (std::size_t r = 0; r < rows; ++r) {
        active[r] = static_cast<std::size_t>(lengths[r]) > t;
        all_active = all_active && active[r];
        any_active = any_active || active[r];
      }
      if (!any_active) break;
      auto next = step(inputs[t], h);
      h = all_active ? next : blend_rows(std::span<const std::uint8_t>(active), next, h);
    }
    return h;
  }

  Tensor<Scalar> Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh;

 private:
  std::size_t hidden_ = 0;
};

/// Short-term storage of one story: memories [L x d] and question u [1 x d].
template <typename Scalar>
struct MemoryBank {
  Tensor<Scalar> memories;
  Tensor<Scalar> question;

  std::size_t size() const { return static_cast<std::size_t>(memories.rows()); }
};

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t width = 30;
  std::size_t window = babi::kDefaultWindow;
  /// Adds a learned vector per fact age (0 = newest) to each memory.
  bool temporal_encoding = false;
};

/// Input module: shared embedding, one GRU for facts, a separate GRU for the question.
template <typename Scalar>
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParameterStore<Scalar>& store, const EncoderConfig& config, std::mt19937_64& rng) : config_(config) {
    embedding_ = Embedding<Scalar>(store, "encoder.embedding.W", config.vocab_size, config.width, rng);
    fact_gru_ = GruCell<Scalar>(store, "encoder.fact_gru", config.width, config.width, rng);
    question_gru_ = GruCell<Scalar>(store, "encoder.question_gru", config.width, config.width, rng);
    if (config.temporal_encoding) {
      temporal_ = store.add("encoder.temporal.T",
                            glorot_normal<Scalar>(Shape{config.window, config.width}, config.window, config.width, rng,
                                                  true));
    }
  }

  const EncoderConfig& config() const { return config_; }
  const Embedding<Scalar>& embedding() const { return embedding_; }
  const GruCell<Scalar>& fact_gru() const { return fact_gru_; }
  const GruCell<Scalar>& question_gru() const { return question_gru_; }

  Tensor<Scalar> embed(std::span<const int> tokens) const { return embedding_(tokens); }

  /// Encodes every story of the batch; memories hold only the unpadded facts.
  std::vector<MemoryBank<Scalar>> encode_story(const babi::Batch& batch) const {
    std::vector<int> lengths;
    std::vector<std::pair<std::size_t, std::size_t>> slots;  // (story, fact)
    for (std::size_t b = 0; b < batch.size; ++b) {
      if (batch.story_lengths[b] <= 0) throw ContractError("encode_story: story without facts");
      for (std::size_t l = 0; l < static_cast<std::size_t>(batch.story_lengths[b]); ++l) {
        slots.emplace_back(b, l);
        lengths.push_back(batch.fact_length(b, l));
      }
    }
    std::vector<Tensor<Scalar>> steps;
    std::vector<int> tokens(slots.size());
    for (std::size_t t = 0; t < batch.max_fact_len; ++t) {
      for (std::size_t n = 0; n < slots.size(); ++n) tokens[n] = batch.fact_token(slots[n].first, slots[n].second, t);
      steps.push_back(embedding_(tokens));
    }
    auto memories = fact_gru_.encode_rows(steps, lengths);

    if (temporal_.defined()) {
      std::vector<int> ages(slots.size());
      for (std::size_t n = 0; n < slots.size(); ++n) {
        const auto story_len = static_cast<std::size_t>(batch.story_lengths[slots[n].first]);
        const std::size_t age = story_len - 1 - slots[n].second;
        if (age >= config_.window) {
          throw ContractError("encode_story: story longer than the configured window");
        }
        ages[n] = static_cast<int>(age);
      }
      memories = add(memories, gather_rows(temporal_, std::span<const int>(ages)));
    }

    std::vector<Tensor<Scalar>> q_steps;
    std::vector<int> q_tokens(batch.size);
    for (std::size_t t = 0; t < batch.max_question_len; ++t) {
      for (std::size_t b = 0; b < batch.size; ++b) q_tokens[b] = batch.question_token(b, t);
      q_steps.push_back(embedding_(q_tokens));
    }
    const auto questions = question_gru_.encode_rows(q_steps, batch.question_lengths);

    std::vector<MemoryBank<Scalar>> banks;
    banks.reserve(batch.size);
    Eigen::Index offset = 0;
    for (std::size_t b = 0; b < batch.size; ++b) {
      const auto count = static_cast<Eigen::Index>(batch.story_lengths[b]);
      banks.push_back(MemoryBank<Scalar>{slice(memories, 0, offset, count),
                                         slice(questions, 0, static_cast<Eigen::Index>(b), 1)});
      offset += count;
    }
    return banks;
  }

 private:
  EncoderConfig config_;
  Embedding<Scalar> embedding_;
  GruCell<Scalar> fact_gru_;
  GruCell<Scalar> question_gru_;
  Tensor<Scalar> temporal_;
};

}  // namespace workmem
