#include <iostream>

#include "CLI11.hpp"
#include "workmem/cli.hpp"

int main(int argc, char** argv) {
  using namespace workmem;
  CLI::App app{"Working memory network: train, evaluate, inspect and benchmark"};
  app.require_subcommand(1);

  CommandOptions opts;
  std::string sizes;

  auto* train = app.add_subcommand("train", "train on bAbI task files");
  train->add_option("--config", opts.config, "key = value run configuration");
  train->add_option("--data", opts.data, "directory with qa<N>_*_train.txt files (default: $WORKMEM_DATA)");
  train->add_option("--out", opts.out, "output directory for metrics and checkpoints");
  train->add_option("--seed", opts.seed, "overrides the configured seed");
  train->add_option("--threads", opts.threads, "Eigen worker threads");

  auto* eval = app.add_subcommand("eval", "score a checkpoint on every qa<N>_*_test.txt file");
  eval->add_option("--checkpoint", opts.checkpoint, "checkpoint file")->required();
  eval->add_option("--data", opts.data, "directory with test files (default: $WORKMEM_DATA)");
  eval->add_option("--out", opts.out, "directory for eval_report.csv");
  eval->add_option("--config", opts.config, "run configuration supplying data_dir/out_dir");

  auto* inspect = app.add_subcommand("inspect", "attention trace of a one-question story");
  inspect->add_option("story", opts.story, "story file in bAbI format")->required();
  inspect->add_option("--checkpoint", opts.checkpoint, "checkpoint file")->required();
  inspect->add_option("--out", opts.out, "directory for trace.json (default: current directory)");

  auto* bench = app.add_subcommand("bench", "forward+backward timing of both reasoning paths");
  bench->add_option("--n", sizes, "comma-separated memory counts (default 8,16,32,64,128)");
  bench->add_option("--reps", opts.reps, "timed repetitions per point (default 5)");
  bench->add_option("--threads", opts.threads, "Eigen worker threads (default 1)");
  bench->add_option("--seed", opts.seed, "seed for weights and synthetic memories");
  bench->add_option("--out", opts.out, "directory for bench.csv (default: print)");

  auto* generate = app.add_subcommand("generate", "write synthetic single-supporting-fact task files");
  generate->add_option("--out", opts.out, "output directory")->required();
  generate->add_option("--seed", opts.seed, "generator seed (default 1)");
  generate->add_option("--questions", opts.questions, "questions per split (default 1000)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (train->parsed()) return cmd_train(opts, std::cout, std::cerr);
  if (eval->parsed()) return cmd_eval(opts, std::cout, std::cerr);
  if (inspect->parsed()) return cmd_inspect(opts, std::cout, std::cerr);
  if (bench->parsed()) {
    if (!sizes.empty()) {
      try {
        opts.n = parse_size_list(sizes);
      } catch (const UsageError& e) {
        std::cerr << "error: --n: " << e.what() << '\n';
        return kExitUsage;
      }
    }
    return cmd_bench(opts, std::cout, std::cerr);
  }
  return cmd_generate(opts, std::cout, std::cerr);
}
