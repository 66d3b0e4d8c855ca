#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "workmem/reasoning.hpp"

namespace workmem {

struct BenchRow {
  std::string model;  // "wmemnn" or "full_rn"
  std::size_t n_memories = 0;
  std::size_t batch = 0;
  double wallclock_forward_backward_s = 0.0;  // median over repetitions
  std::uint64_t pair_evals = 0;               // per sample, from the instrumented counter
  std::size_t repetitions = 0;
  std::size_t threads = 1;

  bool operator==(const BenchRow&) const = default;
};

struct BenchConfig {
  std::vector<std::size_t> sizes = {8, 16, 32, 64, 128};
  std::size_t batch = 32;
  std::size_t repetitions = 5;
  std::size_t threads = 1;
  std::size_t width = 30;
  std::size_t heads = 8;
  std::size_t hops = 4;
  std::size_t relation_units = 128;
  std::size_t relation_layers = 3;
  std::size_t answers = 10;
  std::uint64_t seed = 1;
};

std::string bench_csv_header();
std::string format_bench_row(const BenchRow& row);
std::vector<BenchRow> parse_bench_csv(std::istream& in);

double median(std::vector<double> values);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Times one forward+backward pass over a batch of random memories, for
/// the working-memory path (attention hops + relation network over the
/// buffer) and for the relation network over all memory pairs.
/// One warm-up pass per configuration is discarded.
std::vector<BenchRow> run_bench(const BenchConfig& config,
                                const std::function<void(const BenchRow&)>& on_row = {});

struct BenchSummary {
  double slope_wmemnn = 0.0;
  double slope_full_rn = 0.0;
  std::vector<std::pair<std::size_t, double>> speedup;  // n -> full_rn / wmemnn
};

inline constexpr double kPaperReferenceSpeedup = 930.0 / 50.0;

BenchSummary summarize(const std::vector<BenchRow>& rows);
std::optional<double> speedup_at(const BenchSummary& summary, std::size_t n);
std::string format_summary(const BenchSummary& summary);

}  // namespace workmem
