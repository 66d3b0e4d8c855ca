// Acceptance report: one PASS/FAIL line per criterion.
//
//   acceptance [--strict] [--only 1,3,8]
//
// Exits 0 once every selected check has run, whatever the verdicts; with
// --strict any FAIL gives exit code 1.

#include <chrono>
#include <cstring>
#include <iostream>
#include <set>
#include <sstream>

#include "properties.hpp"
#include "workmem/bench.hpp"
#include "workmem/cli.hpp"
#include "workmem/trace.hpp"

using namespace workmem;
namespace wt = workmem::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass;
  std::string detail;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// -- 1 ----------------------------------------------------------------------

Verdict gradient_check() {
  const auto t0 = Clock::now();
  const double err = wt::toy_gradient_error(7);
  const double took = seconds_since(t0);
  return {err <= 1e-4 && took < 60.0, "max relative error " + fmt(err) + " in " + fmt(took) + " s"};
}

// -- 2 ----------------------------------------------------------------------

Verdict pair_counts() {
  bool ok = true;
  std::string detail;
  std::mt19937_64 rng(2);
  ParameterStore<double> store;
  RelationNetwork<double> net(store, "rn", RelationConfig{3, 3, 4, 1, false, PairMode::ordered}, rng);
  const auto q = wt::random_tensor(Shape{1, 3}, rng);
  for (std::uint64_t n : {1, 5, 30, 100}) {
    const auto full = count_pair_evals(ReasoningMode::full_rn, n, 4);
    const auto wm = count_pair_evals(ReasoningMode::wmemnn, n, 4);
    net.reset_counter();
    baseline_rn_full(wt::random_tensor(Shape{n, 3}, rng), q, net);
    const auto measured_full = net.pair_evaluations();
    net.reset_counter();
    net.pool(wt::random_tensor(Shape{4, 3}, rng), q);
    const auto measured_wm = net.pair_evaluations();
    ok = ok && full == n * n && wm == 16 && measured_full == full && measured_wm == wm;
    detail += "n=" + std::to_string(n) + ": " + std::to_string(full) + "/" + std::to_string(wm) + "; ";
  }
  const double ratio = static_cast<double>(count_pair_evals(ReasoningMode::full_rn, 30, 4)) /
                       static_cast<double>(count_pair_evals(ReasoningMode::wmemnn, 30, 4));
  ok = ok && ratio == 56.25;
  return {ok, detail + "ratio at n=30 " + fmt(ratio, 6)};
}

// -- 3 ----------------------------------------------------------------------

Verdict scaling_bench() {
  const auto t0 = Clock::now();
  BenchConfig config;
  config.sizes = {8, 16, 30, 32, 64, 128};
  std::vector<BenchRow> slope_rows;
  const auto rows = run_bench(config, [&](const BenchRow& row) {
    std::cout << "  bench " << row.model << " n=" << row.n_memories << " " << fmt(row.wallclock_forward_backward_s, 4)
              << " s\n"
              << std::flush;
  });
  for (const auto& r : rows) {
    if (r.n_memories != 30) slope_rows.push_back(r);
  }
  const auto slopes = summarize(slope_rows);
  const auto ratio = speedup_at(summarize(rows), 30).value_or(0.0);
  const double took = seconds_since(t0);
  const bool ok = slopes.slope_full_rn >= 1.6 && slopes.slope_full_rn <= 2.4 && slopes.slope_wmemnn >= 0.6 &&
                  slopes.slope_wmemnn <= 1.4 && ratio >= 5.0 && took < 15 * 60;
  return {ok, "slope full_rn " + fmt(slopes.slope_full_rn) + ", slope wmemnn " + fmt(slopes.slope_wmemnn) +
                  ", speedup at n=30 " + fmt(ratio) + "x, " + fmt(took) + " s"};
}

// -- 4 ----------------------------------------------------------------------

double best_valid_accuracy(const fs::path& metrics_csv) {
  std::ifstream in(metrics_csv);
  double best = 0.0;
  for (const auto& row : parse_metrics_csv(in)) {
    if (row.split == "valid" && row.epoch <= 100) best = std::max(best, row.accuracy);
  }
  return best;
}

Verdict task_one_training(const fs::path& root) {
  const auto t0 = Clock::now();
  CommandOptions gen;
  gen.out = root / "data";
  gen.questions = 1000;
  std::ostringstream sink;
  if (cmd_generate(gen, sink, std::cerr) != kExitOk) return {false, "could not write task files"};
  wt::write_text(root / "task1.cfg", "width = 30\nheads = 8\nhops = 4\nepochs = 100\n");

  std::size_t reached = 0;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto s0 = Clock::now();
    CommandOptions o;
    o.config = root / "task1.cfg";
    o.data = root / "data";
    o.out = root / ("seed" + std::to_string(seed));
    o.seed = seed;
    if (cmd_train(o, sink, std::cerr) != kExitOk) return {false, "training failed for seed " + std::to_string(seed)};
    const double acc = best_valid_accuracy(*o.out / "metrics.csv");
    reached += acc >= 0.95;
    detail += "seed " + std::to_string(seed) + ": " + fmt(100.0 * acc, 4) + "% (" + fmt(seconds_since(s0)) + " s); ";
    std::cout << "  task 1 " << detail.substr(detail.rfind("seed ")) << '\n' << std::flush;
  }
  const double took = seconds_since(t0);
  return {reached >= 2 && took < 30 * 60,
          detail + std::to_string(reached) + "/3 seeds at >=95%, " + fmt(took) + " s total"};
}

// -- 5, 6 -------------------------------------------------------------------

Verdict property_suite(const std::vector<std::pair<std::string, wt::PropertyResult>>& results) {
  bool ok = true;
  std::string detail;
  for (const auto& [name, r] : results) {
    const bool pass = r.ok && r.instances >= 100;
    ok = ok && pass;
    detail += name + " " + (pass ? "ok" : "FAILED") + " (" + std::to_string(r.instances) + ", worst " + fmt(r.worst) + "); ";
  }
  return {ok, detail};
}

Verdict invariants() {
  return property_suite({
      {"attention normalization", wt::attention_normalization(200, 501)},
      {"buffer size", wt::buffer_size(200, 502)},
      {"relation permutations", wt::relation_permutation_invariance(120, 503)},
      {"softmax shift", wt::softmax_shift_invariance(200, 504)},
      {"convex bound", wt::convex_combination_bound(200, 505)},
      {"zero-weight GRU", wt::gru_zero_weights(200, 506)},
      {"loss additivity", wt::loss_additivity(120, 507)},
      {"clip-norm law", wt::clip_norm_law(200, 508)},
  });
}

Verdict parser_fidelity() {
  return property_suite({
      {"round trip", wt::babi_round_trip(200, 601)},
      {"windowing", wt::windowing_keeps_last(200, 602)},
      {"story isolation", wt::story_boundary_isolation(200, 603)},
  });
}

// -- 7, 8 -------------------------------------------------------------------

const char* kShortRun =
    "width = 30\n"
    "heads = 8\n"
    "hops = 4\n"
    "epochs = 3\n";

struct ShortRuns {
  wt::ScratchDir dir{"workmem_acceptance_runs"};
  bool ready = false;

  void prepare() {
    if (ready) return;
    CommandOptions gen;
    gen.out = dir / "data";
    gen.questions = 200;
    std::ostringstream sink;
    cmd_generate(gen, sink, std::cerr);
    wt::write_text(dir / "short.cfg", kShortRun);
    ready = true;
  }

  int train(const std::string& name) {
    prepare();
    CommandOptions o;
    o.config = dir / "short.cfg";
    o.data = dir / "data";
    o.out = dir / name;
    o.seed = 11;
    std::ostringstream sink;
    return cmd_train(o, sink, std::cerr);
  }
};

Verdict reproducibility(ShortRuns& runs) {
  if (runs.train("a") != kExitOk || runs.train("b") != kExitOk) return {false, "training failed"};
  std::string detail;
  bool ok = true;
  for (const char* f : {"metrics.csv", "best.ckpt", "last.ckpt"}) {
    const auto a = wt::read_bytes(runs.dir / "a" / f);
    const auto b = wt::read_bytes(runs.dir / "b" / f);
    const bool same = !a.empty() && a == b;
    ok = ok && same;
    detail += std::string(f) + (same ? " identical (" : " DIFFERS (") + std::to_string(a.size()) + " bytes); ";
  }
  return {ok, detail};
}

Verdict inspect_trace(ShortRuns& runs) {
  if (!fs::exists(runs.dir / "a" / "best.ckpt") && runs.train("a") != kExitOk) return {false, "training failed"};
  wt::write_text(runs.dir / "story.txt", wt::kInspectStory);
  CommandOptions o;
  o.checkpoint = runs.dir / "a" / "best.ckpt";
  o.story = runs.dir / "story.txt";
  o.out = runs.dir / "trace";
  std::ostringstream table;
  if (cmd_inspect(o, table, std::cerr) != kExitOk) return {false, "inspect failed"};
  std::ifstream in(runs.dir / "trace" / "trace.json");
  const auto trace = parse_trace_json(in);
  double worst = 0.0;
  for (std::size_t k = 1; k <= trace.hops; ++k) {
    double total = 0.0;
    for (std::size_t i = 1; i <= trace.sentences.size(); ++i) total += trace.head_sum(k, i);
    worst = std::max(worst, std::abs(total - 8.0));
  }
  const bool ok = trace.heads == 8 && trace.sentences.size() == 5 && trace.hops == 4 && worst <= 1e-5;
  return {ok, std::to_string(trace.hops) + " hops x " + std::to_string(trace.heads) + " heads over " +
                  std::to_string(trace.sentences.size()) + " sentences, worst |sum - 8| " + fmt(worst)};
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0) {
      strict = true;
    } else if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::atoi(item.c_str()));
    } else {
      std::cerr << "usage: acceptance [--strict] [--only 1,2,...]\n";
      return 2;
    }
  }

  wt::ScratchDir training_root("workmem_acceptance_task1");
  ShortRuns runs;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient check on the toy model", gradient_check},
      {"pair-evaluation counts", pair_counts},
      {"runtime scaling benchmark", scaling_bench},
      {"task 1 training, 3 seeds", [&] { return task_one_training(training_root.path()); }},
      {"invariant suite", invariants},
      {"parser fidelity", parser_fidelity},
      {"reproducible training runs", [&] { return reproducibility(runs); }},
      {"inspect trace head sums", [&] { return inspect_trace(runs); }},
  };

  std::size_t failed = 0;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    const int id = static_cast<int>(c + 1);
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[c].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << " " << criteria[c].first << " - "
              << v.detail << '\n'
              << std::flush;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << '\n';
  return strict && failed ? 1 : 0;
}
