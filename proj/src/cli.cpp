#include "workmem/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include "workmem/bench.hpp"
#include "workmem/numbers.hpp"
#include "workmem/run_config.hpp"
#include "workmem/trace.hpp"
#include "workmem/training.hpp"

namespace workmem {

namespace fs = std::filesystem;

namespace {

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const babi::ParseError& e) {
    err << "parse error: " << e.what() << '\n';
  } catch (const babi::UnknownTokenError& e) {
    err << "error: " << e.what() << '\n';
  } catch (const CheckpointVersionError& e) {
    err << "error: " << e.what() << '\n';
  } catch (const io::FormatError& e) {
    err << "error: unreadable file: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

RunConfig run_config_for(const CommandOptions& options) {
  return options.config ? load_run_config(*options.config) : RunConfig{};
}

fs::path data_dir_for(const CommandOptions& options, const RunConfig& rc) {
  fs::path dir;
  if (options.data) {
    dir = *options.data;
  } else if (rc.data_dir) {
    dir = *rc.data_dir;
  } else if (const char* env = std::getenv(kDataEnv); env && *env) {
    dir = env;
  } else {
    throw UsageError(std::string("no data directory: pass --data, set data_dir, or set ") + kDataEnv);
  }
  if (!fs::is_directory(dir)) throw UsageError("data directory " + dir.string() + " does not exist");
  return dir;
}

fs::path out_dir_for(const CommandOptions& options, const RunConfig& rc) {
  fs::path dir = options.out ? *options.out : rc.out_dir ? *rc.out_dir : fs::path(".");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory " + dir.string());
  return dir;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  return out;
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " " + path.string() + " does not exist");
}

std::string join(const std::vector<std::string>& tokens) {
  std::string s;
  for (const auto& t : tokens) s += (s.empty() ? "" : " ") + t;
  return s;
}

std::map<int, std::vector<babi::Sample>> group_by_task(const std::vector<babi::Sample>& samples) {
  std::map<int, std::vector<babi::Sample>> by_task;
  for (const auto& s : samples) by_task[s.task_id].push_back(s);
  return by_task;
}

}  // namespace

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> sizes;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto v = parse_unsigned(item);
    if (!v || *v == 0) throw UsageError("'" + item + "' is not a positive integer");
    sizes.push_back(static_cast<std::size_t>(*v));
  }
  if (sizes.empty()) throw UsageError("empty size list");
  return sizes;
}

int cmd_train(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    auto rc = run_config_for(options);
    if (options.seed) rc.train.seed = *options.seed;
    if (options.threads) rc.threads = *options.threads;
    Eigen::setNbThreads(static_cast<int>(rc.threads));
    const auto data_dir = data_dir_for(options, rc);
    const auto out_dir = out_dir_for(options, rc);

    std::vector<std::pair<int, std::vector<babi::RawSample>>> raw;
    std::vector<babi::RawSample> all_raw;
    for (int task : rc.tasks) {
      const auto path = babi::find_task_file(data_dir, task, "train");
      if (!path) {
        throw UsageError("no training file qa" + std::to_string(task) + "_*_train.txt in " + data_dir.string());
      }
      raw.emplace_back(task, babi::parse_babi_file(*path));
      all_raw.insert(all_raw.end(), raw.back().second.begin(), raw.back().second.end());
    }
    const auto vocab = babi::build_vocabulary(all_raw);
    std::vector<babi::Sample> samples;
    for (const auto& [task, task_raw] : raw) {
      auto set = babi::prepare_samples(task_raw, vocab, task, rc.train.window);
      if (set.rejected) err << "warning: task " << task << ": dropped " << set.rejected << " questions without facts\n";
      samples.insert(samples.end(), set.samples.begin(), set.samples.end());
    }
    std::mt19937_64 split_rng(rc.train.seed);
    const auto [train, valid] = babi::split_validation(samples, rc.train.valid_fraction, split_rng);
    out << "training on " << train.size() << " questions, validating on " << valid.size() << '\n';

    {
      auto config_out = open_output(out_dir / "config.txt");
      config_out << format_run_config(rc);
    }
    auto metrics = open_output(out_dir / "metrics.csv");
    metrics << metrics_csv_header() << '\n';
    TrainHooks hooks;
    hooks.on_metric = [&](const MetricRow& row) {
      metrics << format_metric_row(row) << '\n' << std::flush;
      if (row.split == "valid") out << "epoch " << row.epoch << " valid accuracy " << row.accuracy << '\n';
    };
    hooks.on_best = [&](const Checkpoint& best) { save_checkpoint(out_dir / "best.ckpt", best); };
    const auto result = train_loop(rc.train, vocab, train, valid, hooks);
    save_checkpoint(out_dir / "last.ckpt", result.last);

    const auto model = restore_model(result.best);
    const auto report = evaluate(model, group_by_task(valid.empty() ? train : valid), rc.train.batch_size);
    out << "validation report (best epoch " << result.best.epoch << "):\n" << format_eval_table(report);
    open_output(out_dir / "valid_report.csv") << format_eval_csv(report);
    return kExitOk;
  });
}

int cmd_eval(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!options.checkpoint) throw UsageError("eval needs --checkpoint");
    const auto rc = run_config_for(options);
    require_file(*options.checkpoint, "checkpoint");
    const auto checkpoint = load_checkpoint(*options.checkpoint);
    const auto model = restore_model(checkpoint);
    const auto data_dir = data_dir_for(options, rc);

    std::map<int, std::vector<babi::Sample>> by_task;
    for (int task = 1; task <= 20; ++task) {
      const auto path = babi::find_task_file(data_dir, task, "test");
      if (!path) {
        err << "warning: no test file for task " << task << " in " << data_dir.string() << '\n';
        continue;
      }
      auto set = babi::prepare_samples(babi::parse_babi_file(*path), checkpoint.vocab, task, checkpoint.config.window,
                                       true);
      by_task[task] = std::move(set.samples);
    }
    if (by_task.empty()) throw UsageError("no qa*_test.txt files in " + data_dir.string());
    const auto report = evaluate(model, by_task, checkpoint.config.batch_size);
    out << format_eval_table(report);
    if (options.out || rc.out_dir) {
      const auto path = out_dir_for(options, rc) / "eval_report.csv";
      open_output(path) << format_eval_csv(report);
      out << "wrote " << path.string() << '\n';
    } else {
      out << '\n' << format_eval_csv(report);
    }
    return kExitOk;
  });
}

int cmd_inspect(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!options.checkpoint) throw UsageError("inspect needs --checkpoint");
    if (!options.story) throw UsageError("inspect needs a story file");
    const auto rc = run_config_for(options);
    require_file(*options.checkpoint, "checkpoint");
    require_file(*options.story, "story file");
    const auto checkpoint = load_checkpoint(*options.checkpoint);
    const auto model = restore_model(checkpoint);

    const auto raw = babi::parse_babi_file(*options.story);
    if (raw.size() != 1) {
      throw UsageError("story file must hold exactly one question, found " + std::to_string(raw.size()));
    }
    const auto windowed = babi::window_facts(raw.front(), checkpoint.config.window);
    if (!windowed) throw UsageError("story has no facts before its question");
    const auto sample = babi::index_sample(*windowed, checkpoint.vocab, 1, true);
    const auto batch = babi::make_batch(std::span<const babi::Sample>(&sample, 1));

    NoGradGuard guard;
    const auto output = model.forward(batch, true);
    Eigen::Index best = 0;
    output.probabilities.value().row(0).maxCoeff(&best);

    std::vector<std::string> sentences;
    for (const auto& fact : windowed->facts) sentences.push_back(join(fact));
    const auto trace = make_inspect_trace(output.traces.front(), sentences, join(windowed->question), windowed->answer,
                                          checkpoint.vocab.answer_token(static_cast<int>(best)));
    out << format_trace_table(trace);
    const auto path = out_dir_for(options, rc) / "trace.json";
    auto file = open_output(path);
    write_trace_json(file, trace);
    out << "wrote " << path.string() << '\n';
    return kExitOk;
  });
}

int cmd_bench(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    BenchConfig config;
    if (!options.n.empty()) config.sizes = options.n;
    if (options.reps) config.repetitions = *options.reps;
    if (options.threads) config.threads = *options.threads;
    if (options.seed) config.seed = *options.seed;
    if (config.repetitions == 0) throw UsageError("--reps must be at least 1");
    for (auto n : config.sizes) {
      if (n == 0) throw UsageError("--n values must be at least 1");
    }

    std::ostringstream csv;
    csv << bench_csv_header() << '\n';
    const auto rows = run_bench(config, [&](const BenchRow& row) {
      csv << format_bench_row(row) << '\n';
      out << row.model << " n=" << row.n_memories << " median " << row.wallclock_forward_backward_s << " s, "
          << row.pair_evals << " pair evaluations per sample\n"
          << std::flush;
    });
    if (options.out) {
      const auto path = out_dir_for(options, RunConfig{}) / "bench.csv";
      open_output(path) << csv.str();
      out << "wrote " << path.string() << '\n';
    } else {
      out << csv.str();
    }
    out << format_summary(summarize(rows));
    return kExitOk;
  });
}

int cmd_generate(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!options.out) throw UsageError("generate needs --out");
    const auto dir = out_dir_for(options, RunConfig{});
    const std::size_t questions = options.questions.value_or(1000);
    std::mt19937_64 rng(options.seed.value_or(1));
    for (const char* split : {"train", "test"}) {
      const auto path = dir / (std::string("qa1_single-supporting-fact_") + split + ".txt");
      open_output(path) << babi::generate_single_supporting_fact(questions, rng);
      out << "wrote " << path.string() << '\n';
    }
    return kExitOk;
  });
}

}  // namespace workmem
