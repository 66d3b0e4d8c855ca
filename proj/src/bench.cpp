#include "workmem/bench.hpp"

#include <algorithm>
#include <chrono>
#include <istream>
#include <numeric>
#include <random>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "workmem/autodiff.hpp"
#include "workmem/numbers.hpp"

namespace workmem {

std::string bench_csv_header() {
  return "model,n_memories,batch,wallclock_forward_backward_s,pair_evals,repetitions,threads";
}

std::string format_bench_row(const BenchRow& r) {
  return r.model + "," + std::to_string(r.n_memories) + "," + std::to_string(r.batch) + "," +
         format_double(r.wallclock_forward_backward_s) + "," + std::to_string(r.pair_evals) + "," +
         std::to_string(r.repetitions) + "," + std::to_string(r.threads);
}

std::vector<BenchRow> parse_bench_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != bench_csv_header()) {
    throw std::runtime_error("bench CSV has an unexpected header");
  }
  auto count = [](const std::string& cell) {
    const auto v = parse_unsigned(cell);
    if (!v) throw std::runtime_error("bench CSV: '" + cell + "' is not a count");
    return *v;
  };
  std::vector<BenchRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw std::runtime_error("bench CSV row has " + std::to_string(cells.size()) + " fields");
    BenchRow r;
    r.model = cells[0];
    parse_reasoning_mode(r.model);
    r.n_memories = count(cells[1]);
    r.batch = count(cells[2]);
    const auto seconds = parse_double(cells[3]);
    if (!seconds) throw std::runtime_error("bench CSV: '" + cells[3] + "' is not a number");
    r.wallclock_forward_backward_s = *seconds;
    r.pair_evals = count(cells[4]);
    r.repetitions = count(cells[5]);
    r.threads = count(cells[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty set");
  std::sort(values.begin(), values.end());
  const auto mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("loglog_slope needs at least two matched points");
  std::vector<double> lx(x.size()), ly(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] <= 0.0 || y[i] <= 0.0) throw ContractError("loglog_slope needs positive values");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(lx.size());
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  if (sxx == 0.0) throw ContractError("loglog_slope needs at least two distinct x values");
  return sxy / sxx;
}

namespace {

using Clock = std::chrono::steady_clock;

struct Harness {
  ParameterStore<float> store;
  HeadBank<float> heads;
  TransitionNet<float> transition;
  RelationNetwork<float> relation;
  Readout<float> readout;

  Harness(const BenchConfig& c, std::mt19937_64& rng) {
    heads = HeadBank<float>(store, c.width, c.heads, rng);
    transition = TransitionNet<float>(store, c.width, c.width / 2, rng);
    relation = RelationNetwork<float>(store, "reasoning",
                                      RelationConfig{c.width, c.width, c.relation_units, c.relation_layers, false,
                                                     PairMode::ordered},
                                      rng);
    readout = Readout<float>(store, c.answers, relation.output_width(), rng);
  }
};

struct Inputs {
  std::vector<MemoryBank<float>> banks;
  std::vector<int> answers;
};

Inputs random_inputs(const BenchConfig& c, std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> value(-1.0f, 1.0f);
  std::uniform_int_distribution<int> answer(0, static_cast<int>(c.answers) - 1);
  auto fill = [&](std::size_t rows) {
    Tensor<float> t(Shape{rows, c.width});
    auto& v = t.mutable_value();
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = value(rng);
    return t;
  };
  Inputs in;
  for (std::size_t b = 0; b < c.batch; ++b) {
    in.banks.push_back(MemoryBank<float>{fill(n), fill(1)});
    in.answers.push_back(answer(rng));
  }
  return in;
}

void wmemnn_pass(const BenchConfig& c, Harness& h, const Inputs& in) {
  h.store.zero_grad();
  std::vector<Tensor<float>> buffers, questions;
  for (const auto& bank : in.banks) {
    buffers.push_back(run_hops(bank, h.heads, h.transition, c.hops).stacked());
    questions.push_back(bank.question);
  }
  const auto probs = h.readout.predict(h.relation.pool_batch(buffers, questions));
  backward(cross_entropy_sum(probs, std::span<const int>(in.answers)));
}

// Sample by sample so the n^2 pair activations of only one story are alive;
// gradients accumulate across the batch as for the summed batch loss.
void full_rn_pass(Harness& h, const Inputs& in) {
  h.store.zero_grad();
  for (std::size_t b = 0; b < in.banks.size(); ++b) {
    const auto& bank = in.banks[b];
    const auto probs = h.readout.predict(baseline_rn_full(bank.memories, bank.question, h.relation));
    backward(cross_entropy_sum(probs, std::span<const int>(&in.answers[b], 1)));
  }
}

}  // namespace

std::vector<BenchRow> run_bench(const BenchConfig& config, const std::function<void(const BenchRow&)>& on_row) {
  if (config.batch == 0 || config.repetitions == 0) throw ContractError("bench needs a positive batch and repetitions");
  for (auto n : config.sizes) {
    if (n == 0) throw ContractError("bench sizes must be at least 1");
  }
  Eigen::setNbThreads(static_cast<int>(std::max<std::size_t>(config.threads, 1)));
#if defined(__GLIBC__)
  // Keep large freed blocks on the heap so repeated passes do not pay for
  // fresh zeroed pages on every allocation.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  std::mt19937_64 rng(config.seed);
  Harness harness(config, rng);
  {
    // first touch of the weights and allocator pools, kept out of every row
    const auto warm = random_inputs(config, config.sizes.empty() ? 1 : config.sizes.front(), rng);
    wmemnn_pass(config, harness, warm);
    full_rn_pass(harness, warm);
  }

  std::vector<BenchRow> rows;
  for (auto n : config.sizes) {
    const auto inputs = random_inputs(config, n, rng);
    for (auto mode : {ReasoningMode::wmemnn, ReasoningMode::full_rn}) {
      auto pass = [&] {
        if (mode == ReasoningMode::wmemnn) {
          wmemnn_pass(config, harness, inputs);
        } else {
          full_rn_pass(harness, inputs);
        }
      };
      harness.relation.reset_counter();
      pass();  // warm-up, also the counted pass
      const auto counted = harness.relation.pair_evaluations();
      std::vector<double> seconds;
      for (std::size_t r = 0; r < config.repetitions; ++r) {
        const auto t0 = Clock::now();
        pass();
        seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
      }
      BenchRow row;
      row.model = to_string(mode);
      row.n_memories = n;
      row.batch = config.batch;
      row.wallclock_forward_backward_s = median(seconds);
      row.pair_evals = counted / config.batch;
      row.repetitions = config.repetitions;
      row.threads = config.threads;
      if (on_row) on_row(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

BenchSummary summarize(const std::vector<BenchRow>& rows) {
  BenchSummary s;
  std::vector<double> n_w, t_w, n_f, t_f;
  for (const auto& r : rows) {
    if (r.model == "wmemnn") {
      n_w.push_back(static_cast<double>(r.n_memories));
      t_w.push_back(r.wallclock_forward_backward_s);
    } else {
      n_f.push_back(static_cast<double>(r.n_memories));
      t_f.push_back(r.wallclock_forward_backward_s);
    }
  }
  if (n_w.size() >= 2) s.slope_wmemnn = loglog_slope(n_w, t_w);
  if (n_f.size() >= 2) s.slope_full_rn = loglog_slope(n_f, t_f);
  for (const auto& w : rows) {
    if (w.model != "wmemnn") continue;
    for (const auto& f : rows) {
      if (f.model == "full_rn" && f.n_memories == w.n_memories) {
        s.speedup.emplace_back(w.n_memories, f.wallclock_forward_backward_s / w.wallclock_forward_backward_s);
      }
    }
  }
  return s;
}

std::optional<double> speedup_at(const BenchSummary& summary, std::size_t n) {
  for (const auto& [size, ratio] : summary.speedup) {
    if (size == n) return ratio;
  }
  return std::nullopt;
}

std::string format_summary(const BenchSummary& s) {
  std::ostringstream out;
  out << "n\tspeedup (full_rn / wmemnn)\n";
  for (const auto& [n, ratio] : s.speedup) out << n << '\t' << format_double(ratio) << '\n';
  out << "log-log slope wmemnn: " << format_double(s.slope_wmemnn) << '\n';
  out << "log-log slope full_rn: " << format_double(s.slope_full_rn) << '\n';
  out << "reference speedup at n=30 (930 s / 50 s): " << format_double(kPaperReferenceSpeedup) << '\n';
  return out.str();
}

}  // namespace workmem
