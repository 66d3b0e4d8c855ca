#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "workmem/babi.hpp"
#include "workmem/model.hpp"
#include "workmem/parameter.hpp"

namespace workmem {

struct RestartSchedule {
  bool enabled = false;
  double lr = 1e-5;
  std::size_t anneal_every = 5;
  double anneal_factor = 0.5;
  std::size_t epochs = 20;

  bool operator==(const RestartSchedule&) const = default;
};

struct TrainConfig {
  std::size_t width = 30;   // d
  std::size_t heads = 8;    // S
  std::size_t hops = 4;     // H
  std::size_t window = 30;  // L
  std::size_t transition_hidden = 15;
  std::size_t relation_units = 128;
  std::size_t relation_layers = 3;
  bool use_f_phi = false;
  PairMode pairs = PairMode::ordered;
  bool temporal_encoding = false;

  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 400;
  double clip_norm = 40.0;
  double l2 = 1e-3;
  double valid_fraction = 0.10;
  std::uint64_t seed = 1;
  RestartSchedule restart;
  /// Real elapsed seconds in the metrics log; off keeps logs reproducible.
  bool log_wallclock = false;

  bool operator==(const TrainConfig&) const = default;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every TrainConfig field as (key, value) text, in a fixed order.
std::vector<std::pair<std::string, std::string>> to_key_values(const TrainConfig& config);
/// Returns false when `key` is not a TrainConfig field; throws ConfigError on a bad value.
bool apply_key_value(TrainConfig& config, const std::string& key, const std::string& value);

ModelConfig model_config(const TrainConfig& config, const babi::Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Optimization

template <typename Scalar>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Matrix<Scalar>> first;
  std::vector<Matrix<Scalar>> second;

  static AdamState zeros_like(const std::vector<Parameter<Scalar>>& params) {
    AdamState s;
    for (const auto& p : params) {
      s.first.push_back(Matrix<Scalar>::Zero(p.tensor.rows(), p.tensor.cols()));
      s.second.push_back(Matrix<Scalar>::Zero(p.tensor.rows(), p.tensor.cols()));
    }
    return s;
  }
};

template <typename Scalar>
double global_grad_norm(const std::vector<Parameter<Scalar>>& params) {
  double total = 0.0;
  for (const auto& p : params) {
    if (p.tensor.has_grad()) total += p.tensor.grad().template cast<double>().squaredNorm();
  }
  return std::sqrt(total);
}

/// Rescales all gradients by max_norm / g when their global l2 norm g
/// exceeds max_norm. Returns g.
template <typename Scalar>
double clip_global_norm(std::vector<Parameter<Scalar>>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const auto factor = static_cast<Scalar>(max_norm / norm);
    for (auto& p : params) {
      if (p.tensor.has_grad()) p.tensor.mutable_grad() *= factor;
    }
  }
  return norm;
}

/// Bias-corrected Adam update.
template <typename Scalar>
void adam_step(std::vector<Parameter<Scalar>>& params, AdamState<Scalar>& state, double lr) {
  if (state.first.size() != params.size()) throw ContractError("adam state does not match parameter list");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const auto b1 = static_cast<Scalar>(state.beta1);
  const auto b2 = static_cast<Scalar>(state.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].tensor;
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    auto& m = state.first[i];
    auto& v = state.second[i];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    const auto step_size = static_cast<Scalar>(lr / correction1);
    const auto denom = ((v.array() / static_cast<Scalar>(correction2)).sqrt() + static_cast<Scalar>(state.epsilon));
    p.mutable_value().array() -= step_size * m.array() / denom;
  }
}

// ---------------------------------------------------------------------------
// Metrics, evaluation, checkpoints

struct MetricRow {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  double wallclock_s = 0.0;

  bool operator==(const MetricRow&) const = default;
};

std::string metrics_csv_header();
std::string format_metric_row(const MetricRow& row);
std::vector<MetricRow> parse_metrics_csv(std::istream& in);

inline constexpr double kSolvedErrorPercent = 5.0;

struct EvalReport {
  std::array<std::optional<double>, 20> task_error{};  // percent, tasks 1..20
  std::array<std::size_t, 20> task_samples{};
  double mean_error = 0.0;
  std::size_t failed = 0;
  std::size_t present = 0;

  /// Builds the report from per-task (correct, total) counts.
  static EvalReport from_counts(const std::map<int, std::pair<std::size_t, std::size_t>>& counts);
};

const std::array<std::string, 20>& task_names();
std::string format_eval_table(const EvalReport& report);
std::string format_eval_csv(const EvalReport& report);
EvalReport parse_eval_csv(std::istream& in);

using Model = WorkingMemoryNetwork<float>;

/// Mean data loss and accuracy over a sample set, without recording gradients.
std::pair<double, double> score(const Model& model, std::span<const babi::Sample> samples, std::size_t batch_size);

EvalReport evaluate(const Model& model, const std::map<int, std::vector<babi::Sample>>& by_task,
                    std::size_t batch_size = 32);

inline constexpr char kCheckpointMagic[8] = {'W', 'M', 'E', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointVersionError : public std::runtime_error {
 public:
  CheckpointVersionError(std::uint32_t found, std::uint32_t expected)
      : std::runtime_error("checkpoint format version " + std::to_string(found) + " is not supported (this build reads version " +
                           std::to_string(expected) + ")"),
        found_(found),
        expected_(expected) {}
  std::uint32_t found() const { return found_; }
  std::uint32_t expected() const { return expected_; }

 private:
  std::uint32_t found_;
  std::uint32_t expected_;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  TrainConfig config;
  babi::Vocabulary vocab;
  std::vector<NamedArray<float>> parameters;
  std::uint64_t adam_step = 0;
  std::vector<NamedArray<float>> adam_first;
  std::vector<NamedArray<float>> adam_second;
  std::uint64_t epoch = 0;
  std::string rng_state;
  double best_valid_accuracy = 0.0;
};

Checkpoint make_checkpoint(const TrainConfig& config, const babi::Vocabulary& vocab, const Model& model,
                           const AdamState<float>& adam, std::uint64_t epoch, const std::mt19937_64& rng,
                           double best_valid_accuracy);
void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the model described by a checkpoint with its stored parameters.
Model restore_model(const Checkpoint& checkpoint);

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  std::vector<MetricRow> metrics;
  Checkpoint best;
  Checkpoint last;
};

struct TrainHooks {
  std::function<void(const MetricRow&)> on_metric;
  std::function<void(const Checkpoint&)> on_best;
};

/// Per epoch: shuffle, batch, forward, summed loss + l2, backward, clip,
/// Adam. Logs train loss/accuracy and validation metrics; keeps the
/// best-validation checkpoint. The optional restart phase reloads the best
/// parameters and continues at the restart learning rate, halving it on
/// the configured period.
TrainResult train_loop(const TrainConfig& config, const babi::Vocabulary& vocab, std::span<const babi::Sample> train,
                       std::span<const babi::Sample> valid, const TrainHooks& hooks = {});

}  // namespace workmem
