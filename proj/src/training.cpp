#include "workmem/training.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "workmem/numbers.hpp"

namespace workmem {

namespace {

double parse_double(const std::string& key, const std::string& text) {
  const auto v = workmem::parse_double(text);
  if (!v) throw ConfigError("value '" + text + "' for '" + key + "' is not a number");
  return *v;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  const auto v = workmem::parse_unsigned(text);
  if (!v) throw ConfigError("value '" + text + "' for '" + key + "' is not a non-negative integer");
  return *v;
}

std::size_t parse_positive(const std::string& key, const std::string& text) {
  const auto v = parse_unsigned(key, text);
  if (v == 0) throw ConfigError("value for '" + key + "' must be positive");
  return static_cast<std::size_t>(v);
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("value '" + text + "' for '" + key + "' is not a boolean");
}

const char* bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

std::vector<std::pair<std::string, std::string>> to_key_values(const TrainConfig& c) {
  return {
      {"width", std::to_string(c.width)},
      {"heads", std::to_string(c.heads)},
      {"hops", std::to_string(c.hops)},
      {"window", std::to_string(c.window)},
      {"transition_hidden", std::to_string(c.transition_hidden)},
      {"relation_units", std::to_string(c.relation_units)},
      {"relation_layers", std::to_string(c.relation_layers)},
      {"use_f_phi", bool_text(c.use_f_phi)},
      {"pair_mode", c.pairs == PairMode::ordered ? "ordered" : "unordered"},
      {"temporal_encoding", bool_text(c.temporal_encoding)},
      {"lr", format_double(c.lr)},
      {"batch_size", std::to_string(c.batch_size)},
      {"epochs", std::to_string(c.epochs)},
      {"clip_norm", format_double(c.clip_norm)},
      {"l2", format_double(c.l2)},
      {"valid_fraction", format_double(c.valid_fraction)},
      {"seed", std::to_string(c.seed)},
      {"restart", bool_text(c.restart.enabled)},
      {"restart_lr", format_double(c.restart.lr)},
      {"anneal_every", std::to_string(c.restart.anneal_every)},
      {"anneal_factor", format_double(c.restart.anneal_factor)},
      {"restart_epochs", std::to_string(c.restart.epochs)},
      {"log_wallclock", bool_text(c.log_wallclock)},
  };
}

bool apply_key_value(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "width") c.width = parse_positive(key, value);
  else if (key == "heads") c.heads = parse_positive(key, value);
  else if (key == "hops") c.hops = parse_positive(key, value);
  else if (key == "window") c.window = parse_positive(key, value);
  else if (key == "transition_hidden") c.transition_hidden = parse_positive(key, value);
  else if (key == "relation_units") c.relation_units = parse_positive(key, value);
  else if (key == "relation_layers") c.relation_layers = parse_positive(key, value);
  else if (key == "use_f_phi") c.use_f_phi = parse_bool(key, value);
  else if (key == "pair_mode") {
    if (value == "ordered") c.pairs = PairMode::ordered;
    else if (value == "unordered") c.pairs = PairMode::unordered;
    else throw ConfigError("pair_mode must be 'ordered' or 'unordered', got '" + value + "'");
  } else if (key == "temporal_encoding") c.temporal_encoding = parse_bool(key, value);
  else if (key == "lr") {
    c.lr = parse_double(key, value);
    if (c.lr < 0) throw ConfigError("lr must be non-negative");
  } else if (key == "batch_size") c.batch_size = parse_positive(key, value);
  else if (key == "epochs") c.epochs = static_cast<std::size_t>(parse_unsigned(key, value));
  else if (key == "clip_norm") {
    c.clip_norm = parse_double(key, value);
    if (c.clip_norm <= 0) throw ConfigError("clip_norm must be positive");
  } else if (key == "l2") {
    c.l2 = parse_double(key, value);
    if (c.l2 < 0) throw ConfigError("l2 must be non-negative");
  } else if (key == "valid_fraction") {
    c.valid_fraction = parse_double(key, value);
    if (!(c.valid_fraction > 0 && c.valid_fraction < 1)) throw ConfigError("valid_fraction must lie in (0, 1)");
  } else if (key == "seed") c.seed = parse_unsigned(key, value);
  else if (key == "restart") c.restart.enabled = parse_bool(key, value);
  else if (key == "restart_lr") c.restart.lr = parse_double(key, value);
  else if (key == "anneal_every") c.restart.anneal_every = parse_positive(key, value);
  else if (key == "anneal_factor") c.restart.anneal_factor = parse_double(key, value);
  else if (key == "restart_epochs") c.restart.epochs = static_cast<std::size_t>(parse_unsigned(key, value));
  else if (key == "log_wallclock") c.log_wallclock = parse_bool(key, value);
  else return false;
  return true;
}

ModelConfig model_config(const TrainConfig& c, const babi::Vocabulary& vocab) {
  ModelConfig m;
  m.vocab_size = vocab.size();
  m.answer_count = vocab.answer_count();
  m.width = c.width;
  m.heads = c.heads;
  m.hops = c.hops;
  m.window = c.window;
  m.transition_hidden = c.transition_hidden;
  m.relation_units = c.relation_units;
  m.relation_layers = c.relation_layers;
  m.use_f_phi = c.use_f_phi;
  m.pairs = c.pairs;
  m.temporal_encoding = c.temporal_encoding;
  return m;
}

// ---------------------------------------------------------------------------
// Metrics

std::string metrics_csv_header() { return "epoch,split,loss,accuracy,lr,wallclock_s"; }

std::string format_metric_row(const MetricRow& r) {
  return std::to_string(r.epoch) + "," + r.split + "," + format_double(r.loss) + "," + format_double(r.accuracy) + "," +
         format_double(r.lr) + "," + format_double(r.wallclock_s);
}

std::vector<MetricRow> parse_metrics_csv(std::istream& in) {
  std::vector<MetricRow> rows;
  std::string line;
  if (!std::getline(in, line) || line != metrics_csv_header()) throw ConfigError("metrics CSV has an unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw ConfigError("metrics CSV row has " + std::to_string(cells.size()) + " fields");
    MetricRow r;
    r.epoch = static_cast<std::size_t>(parse_unsigned("epoch", cells[0]));
    r.split = cells[1];
    r.loss = parse_double("loss", cells[2]);
    r.accuracy = parse_double("accuracy", cells[3]);
    r.lr = parse_double("lr", cells[4]);
    r.wallclock_s = parse_double("wallclock_s", cells[5]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Evaluation

const std::array<std::string, 20>& task_names() {
  static const std::array<std::string, 20> names = {
      "1 supporting fact",    "2 supporting facts",   "3 supporting facts",  "2 argument relations",
      "3 argument relations", "yes/no questions",     "counting",            "lists/sets",
      "simple negation",      "indefinite knowledge", "basic coreference",   "conjunction",
      "compound coreference", "time reasoning",       "basic deduction",     "basic induction",
      "positional reasoning", "size reasoning",       "path finding",        "agent's motivations"};
  return names;
}

EvalReport EvalReport::from_counts(const std::map<int, std::pair<std::size_t, std::size_t>>& counts) {
  EvalReport r;
  double total = 0.0;
  for (const auto& [task, ct] : counts) {
    if (task < 1 || task > 20 || ct.second == 0) continue;
    const auto i = static_cast<std::size_t>(task - 1);
    const double err = 100.0 * static_cast<double>(ct.second - ct.first) / static_cast<double>(ct.second);
    r.task_error[i] = err;
    r.task_samples[i] = ct.second;
    total += err;
    ++r.present;
    if (err > kSolvedErrorPercent) ++r.failed;
  }
  r.mean_error = r.present ? total / static_cast<double>(r.present) : 0.0;
  return r;
}

std::string format_eval_table(const EvalReport& r) {
  std::ostringstream out;
  out << std::left << std::setw(30) << "Task" << std::right << std::setw(12) << "Error (%)" << '\n';
  out << std::string(42, '-') << '\n';
  for (std::size_t i = 0; i < 20; ++i) {
    std::ostringstream label;
    label << std::setw(2) << i + 1 << ": " << task_names()[i];
    out << std::left << std::setw(30) << label.str() << std::right << std::setw(12);
    if (r.task_error[i]) {
      std::ostringstream v;
      v << std::fixed << std::setprecision(1) << *r.task_error[i];
      out << v.str();
    } else {
      out << "-";
    }
    out << '\n';
  }
  out << std::string(42, '-') << '\n';
  std::ostringstream mean;
  mean << std::fixed << std::setprecision(1) << r.mean_error;
  out << std::left << std::setw(30) << "Mean Error (%)" << std::right << std::setw(12) << mean.str() << '\n';
  out << std::left << std::setw(30) << "Failed tasks (err. > 5%)" << std::right << std::setw(12) << r.failed << '\n';
  return out.str();
}

std::string format_eval_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "row,name,error_percent,samples\n";
  for (std::size_t i = 0; i < 20; ++i) {
    out << i + 1 << ',' << task_names()[i] << ',';
    if (r.task_error[i]) out << format_double(*r.task_error[i]);
    out << ',' << r.task_samples[i] << '\n';
  }
  out << "mean,Mean Error (%)," << format_double(r.mean_error) << ',' << r.present << '\n';
  out << "failed,Failed tasks," << r.failed << ",\n";
  return out.str();
}

EvalReport parse_eval_csv(std::istream& in) {
  EvalReport r;
  std::string line;
  if (!std::getline(in, line) || line != "row,name,error_percent,samples") {
    throw ConfigError("evaluation CSV has an unexpected header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() != 4) throw ConfigError("evaluation CSV row has " + std::to_string(cells.size()) + " fields");
    if (cells[0] == "mean") {
      r.mean_error = parse_double("mean", cells[2]);
      r.present = static_cast<std::size_t>(parse_unsigned("present", cells[3]));
    } else if (cells[0] == "failed") {
      r.failed = static_cast<std::size_t>(parse_unsigned("failed", cells[2]));
    } else {
      const auto task = parse_unsigned("row", cells[0]);
      if (task < 1 || task > 20) throw ConfigError("evaluation CSV names task " + cells[0]);
      if (!cells[2].empty()) r.task_error[task - 1] = parse_double("error_percent", cells[2]);
      r.task_samples[task - 1] = static_cast<std::size_t>(parse_unsigned("samples", cells[3]));
    }
  }
  return r;
}

std::pair<double, double> score(const Model& model, std::span<const babi::Sample> samples, std::size_t batch_size) {
  if (samples.empty()) return {0.0, 0.0};
  NoGradGuard guard;
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& batch : babi::make_sequential_batches(samples, batch_size)) {
    const auto probs = model.forward(batch).probabilities;
    loss += static_cast<double>(model.data_loss(probs, batch).item());
    for (Eigen::Index b = 0; b < probs.rows(); ++b) {
      Eigen::Index best;
      probs.value().row(b).maxCoeff(&best);
      if (best == batch.answers[static_cast<std::size_t>(b)]) ++correct;
    }
  }
  const auto n = static_cast<double>(samples.size());
  return {loss / n, static_cast<double>(correct) / n};
}

EvalReport evaluate(const Model& model, const std::map<int, std::vector<babi::Sample>>& by_task,
                    std::size_t batch_size) {
  std::map<int, std::pair<std::size_t, std::size_t>> counts;
  for (const auto& [task, samples] : by_task) {
    std::size_t correct = 0;
    for (const auto& batch : babi::make_sequential_batches(samples, batch_size)) {
      const auto predicted = model.predict(batch);
      for (std::size_t b = 0; b < predicted.size(); ++b) correct += predicted[b] == batch.answers[b];
    }
    counts[task] = {correct, samples.size()};
  }
  return EvalReport::from_counts(counts);
}

// ---------------------------------------------------------------------------
// Checkpoints

Checkpoint make_checkpoint(const TrainConfig& config, const babi::Vocabulary& vocab, const Model& model,
                           const AdamState<float>& adam, std::uint64_t epoch, const std::mt19937_64& rng,
                           double best_valid_accuracy) {
  Checkpoint c;
  c.config = config;
  c.vocab = vocab;
  const auto& params = model.parameters().all();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    c.parameters.push_back({p.name, p.tensor.shape(), p.tensor.value()});
    c.adam_first.push_back({p.name, p.tensor.shape(), adam.first.at(i)});
    c.adam_second.push_back({p.name, p.tensor.shape(), adam.second.at(i)});
  }
  c.adam_step = adam.step;
  c.epoch = epoch;
  std::ostringstream rs;
  rs << rng;
  c.rng_state = rs.str();
  c.best_valid_accuracy = best_valid_accuracy;
  return c;
}

void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  io::write_u32(out, c.version);
  std::string block;
  for (const auto& [k, v] : to_key_values(c.config)) block += k + "=" + v + "\n";
  io::write_string(out, block);
  const auto& tokens = c.vocab.tokens();
  io::write_u32(out, static_cast<std::uint32_t>(tokens.size() - 1));
  for (std::size_t i = 1; i < tokens.size(); ++i) io::write_string(out, tokens[i]);
  io::write_u32(out, static_cast<std::uint32_t>(c.vocab.answer_count()));
  for (std::size_t a = 0; a < c.vocab.answer_count(); ++a) io::write_string(out, c.vocab.answer_token(static_cast<int>(a)));
  write_array_table(out, c.parameters);
  io::write_u64(out, c.adam_step);
  write_array_table(out, c.adam_first);
  write_array_table(out, c.adam_second);
  io::write_u64(out, c.epoch);
  io::write_string(out, c.rng_state);
  io::write_f64(out, c.best_valid_accuracy);
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  io::read_exact(in, magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kCheckpointMagic)) throw io::FormatError("not a checkpoint file (bad magic)");
  Checkpoint c;
  c.version = io::read_u32(in);
  if (c.version != kCheckpointVersion) throw CheckpointVersionError(c.version, kCheckpointVersion);
  std::istringstream block(io::read_string(in));
  std::string line;
  while (std::getline(block, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw io::FormatError("malformed config line in checkpoint: " + line);
    try {
      if (!apply_key_value(c.config, line.substr(0, eq), line.substr(eq + 1))) {
        throw io::FormatError("unknown config key in checkpoint: " + line.substr(0, eq));
      }
    } catch (const ConfigError& e) {
      throw io::FormatError(std::string("checkpoint config: ") + e.what());
    }
  }
  std::vector<std::string> tokens(io::read_u32(in));
  for (auto& t : tokens) t = io::read_string(in, 1u << 16);
  std::vector<std::string> answers(io::read_u32(in));
  for (auto& a : answers) a = io::read_string(in, 1u << 16);
  c.vocab = babi::Vocabulary::from_lists(tokens, answers);
  c.parameters = read_parameter_table<float>(in);
  c.adam_step = io::read_u64(in);
  c.adam_first = read_parameter_table<float>(in);
  c.adam_second = read_parameter_table<float>(in);
  c.epoch = io::read_u64(in);
  c.rng_state = io::read_string(in);
  c.best_valid_accuracy = io::read_f64(in);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_checkpoint(out, checkpoint);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_checkpoint(in);
}

Model restore_model(const Checkpoint& checkpoint) {
  Model model(model_config(checkpoint.config, checkpoint.vocab), checkpoint.config.seed);
  load_parameter_table(model.parameters(), checkpoint.parameters);
  return model;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

EpochStats run_epoch(Model& model, AdamState<float>& adam, const TrainConfig& config,
                     std::span<const babi::Sample> train, std::mt19937_64& rng, double lr, std::size_t epoch) {
  auto& params = model.parameters().all();
  double loss_total = 0.0;
  std::size_t correct = 0;
  const auto batches = babi::make_batches(train, config.batch_size, rng);
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const auto& batch = batches[bi];
    model.parameters().zero_grad();
    const auto probs = model.forward(batch).probabilities;
    const auto data = model.data_loss(probs, batch);
    auto total = data;
    if (config.l2 > 0) total = add(data, scale(model.l2_penalty(), static_cast<float>(config.l2)));
    const double value = static_cast<double>(total.item());
    if (!std::isfinite(value)) {
      throw NonFiniteLossError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi) +
                               " (gradient norm before this batch: " + format_double(global_grad_norm(params)) + ")");
    }
    backward(total);
    const double norm = clip_global_norm(params, config.clip_norm);
    if (!std::isfinite(norm)) {
      throw NonFiniteLossError("non-finite gradient norm at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(bi));
    }
    adam_step(params, adam, lr);
    loss_total += static_cast<double>(data.item());
    for (Eigen::Index b = 0; b < probs.rows(); ++b) {
      Eigen::Index best;
      probs.value().row(b).maxCoeff(&best);
      if (best == batch.answers[static_cast<std::size_t>(b)]) ++correct;
    }
  }
  const auto n = static_cast<double>(train.size());
  return {n ? loss_total / n : 0.0, n ? static_cast<double>(correct) / n : 0.0};
}

}  // namespace

TrainResult train_loop(const TrainConfig& config, const babi::Vocabulary& vocab, std::span<const babi::Sample> train,
                       std::span<const babi::Sample> valid, const TrainHooks& hooks) {
  using Clock = std::chrono::steady_clock;
  const auto started = Clock::now();
  auto elapsed = [&]() {
    return config.log_wallclock ? std::chrono::duration<double>(Clock::now() - started).count() : 0.0;
  };

  Model model(model_config(config, vocab), config.seed);
  auto adam = AdamState<float>::zeros_like(model.parameters().all());
  std::mt19937_64 rng(config.seed + 0x5eedu);
  TrainResult result;

  auto emit = [&](MetricRow row) {
    if (hooks.on_metric) hooks.on_metric(row);
    result.metrics.push_back(std::move(row));
  };
  auto selection_accuracy = [&](std::size_t epoch, double lr) {
    const auto [loss, acc] = score(model, valid.empty() ? train : valid, config.batch_size);
    emit(MetricRow{epoch, "valid", loss, acc, lr, elapsed()});
    return acc;
  };

  double best = selection_accuracy(0, config.lr);
  result.best = make_checkpoint(config, vocab, model, adam, 0, rng, best);
  if (hooks.on_best) hooks.on_best(result.best);

  auto train_epoch = [&](std::size_t epoch, double lr) {
    const auto stats = run_epoch(model, adam, config, train, rng, lr, epoch);
    emit(MetricRow{epoch, "train", stats.loss, stats.accuracy, lr, elapsed()});
    const double acc = selection_accuracy(epoch, lr);
    if (acc > best) {
      best = acc;
      result.best = make_checkpoint(config, vocab, model, adam, epoch, rng, best);
      if (hooks.on_best) hooks.on_best(result.best);
    }
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) train_epoch(epoch, config.lr);

  if (config.restart.enabled && config.restart.epochs > 0) {
    load_parameter_table(model.parameters(), result.best.parameters);
    adam = AdamState<float>::zeros_like(model.parameters().all());
    double lr = config.restart.lr;
    for (std::size_t r = 0; r < config.restart.epochs; ++r) {
      if (r > 0 && r % config.restart.anneal_every == 0) lr *= config.restart.anneal_factor;
      train_epoch(config.epochs + r + 1, lr);
    }
  }

  const auto final_epoch = config.epochs + (config.restart.enabled ? config.restart.epochs : 0);
  result.last = make_checkpoint(config, vocab, model, adam, final_epoch, rng, best);
  return result;
}

}  // namespace workmem
