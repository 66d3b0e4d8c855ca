#pragma once

// Randomized invariant checks shared by the unit tests and the acceptance
// report. Each returns the number of instances and the worst deviation.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "workmem/model.hpp"
#include "workmem/training.hpp"

namespace workmem::testing {

struct PropertyResult {
  std::size_t instances = 0;
  double worst = 0.0;
  bool ok = true;

  void observe(double deviation, double tolerance) {
    ++instances;
    worst = std::max(worst, deviation);
    ok = ok && deviation <= tolerance;
  }
};

inline std::size_t uniform_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = false) {
  Tensor<double> t(std::move(shape), requires_grad);
  std::normal_distribution<double> dist(0.0, scale);
  auto& v = t.mutable_value();
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = dist(rng);
  return t;
}

inline HeadBank<double> random_heads(std::size_t width, std::size_t heads, std::mt19937_64& rng) {
  std::vector<Tensor<double>> projections;
  for (std::size_t s = 0; s < heads; ++s) projections.push_back(random_tensor(Shape{width, width}, rng));
  return HeadBank<double>(std::move(projections), random_tensor(Shape{heads * width, width}, rng));
}

/// Every (hop, head) attention column is nonnegative and sums to one.
inline PropertyResult attention_normalization(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PropertyResult result;
  for (std::size_t n = 0; n < count; ++n) {
    const auto width = uniform_size(rng, 2, 8);
    const auto memories = uniform_size(rng, 1, 12);
    const auto heads = uniform_size(rng, 1, 4);
    const auto hops = uniform_size(rng, 1, 4);
    ParameterStore<double> store;
    const auto bank = random_heads(width, heads, rng);
    TransitionNet<double> transition(store, width, 5, rng);
    MemoryBank<double> input{random_tensor(Shape{memories, width}, rng, 3.0), random_tensor(Shape{1, width}, rng, 3.0)};
    AttentionTrace trace;
    run_hops(input, bank, transition, hops, &trace);
    double worst = 0.0;
    for (std::size_t k = 0; k < hops; ++k) {
      for (std::size_t s = 0; s < heads; ++s) {
        double total = 0.0;
        for (std::size_t i = 0; i < memories; ++i) {
          const double w = trace.weight(k, s, i);
          if (w < 0.0) worst = std::max(worst, -w);
          total += w;
        }
        worst = std::max(worst, std::abs(total - 1.0));
      }
    }
    result.observe(worst, 1e-6);
  }
  return result;
}

/// The buffer holds exactly H slots whatever the story length.
inline PropertyResult buffer_size(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PropertyResult result;
  for (std::size_t n = 0; n < count; ++n) {
    const auto width = uniform_size(rng, 2, 6);
    const auto memories = uniform_size(rng, 1, 40);
    const auto hops = uniform_size(rng, 1, 6);
    ParameterStore<double> store;
    const auto bank = random_heads(width, 2, rng);
    TransitionNet<double> transition(store, width, 4, rng);
    MemoryBank<double> input{random_tensor(Shape{memories, width}, rng), random_tensor(Shape{1, width}, rng)};
    const auto buffer = run_hops(input, bank, transition, hops);
    const bool exact = buffer.size() == hops && buffer.stacked().rows() == static_cast<Eigen::Index>(hops);
    result.observe(exact ? 0.0 : 1.0, 0.0);
  }
  return result;
}

/// The relation pool over an H=4 buffer is unchanged by all 24 reorderings.
inline PropertyResult relation_permutation_invariance(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PropertyResult result;
  for (std::size_t n = 0; n < count; ++n) {
    const auto width = uniform_size(rng, 2, 6);
    ParameterStore<double> store;
    RelationNetwork<double> net(store, "rn", RelationConfig{width, width, 16, 3, n % 2 == 1, PairMode::ordered}, rng);
    for (auto& p : store.all()) p.tensor.mutable_value() = random_tensor(p.tensor.shape(), rng, 0.5).value();
    std::vector<Tensor<double>> slots;
    for (int k = 0; k < 4; ++k) slots.push_back(random_tensor(Shape{1, width}, rng));
    const auto question = random_tensor(Shape{1, width}, rng);
    std::array<int, 4> order = {0, 1, 2, 3};
    const Matrix<double> reference = net.pool(concat(slots, 0), question).value();
    double worst = 0.0;
    do {
      std::vector<Tensor<double>> permuted;
      for (int k : order) permuted.push_back(slots[static_cast<std::size_t>(k)]);
      const Matrix<double> r = net.pool(concat(permuted, 0), question).value();
      worst = std::max(worst, (r - reference).cwiseAbs().maxCoeff());
    } while (std::next_permutation(order.begin(), order.end()));
    result.observe(worst, 1e-9);
  }
  return result;
}

/// softmax(x + c) = softmax(x) and every row/column sums to one, for
/// entries up to magnitude 1e4.
inline PropertyResult softmax_shift_invariance(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> magnitude(-1e4, 1e4);
  PropertyResult result;
  for (std::size_t n = 0; n < count; ++n) {
    const auto rows = uniform_size(rng, 1, 6);
    const auto cols = uniform_size(rng, 1, 6);
    const int axis = static_cast<int>(n % 2);
    Tensor<double> x(Shape{rows, cols});
    for (Eigen::Index i = 0; i < x.value().size(); ++i) x.mutable_value().data()[i] = magnitude(rng) * (n % 3 == 0 ? 1.0 : 1e-3);
    const Tensor<double> shift = Tensor<double>::scalar(magnitude(rng));
    const auto a = softmax(x, axis).value();
    const auto b = softmax(add(x, shift), axis).value();
    double worst = (a - b).cwiseAbs().maxCoeff();
    const Matrix<double> sums = axis == 0 ? Matrix<double>(a.colwise().sum()) : Matrix<double>(a.rowwise().sum());
    worst = std::max(worst, (sums.array() - 1.0).abs().maxCoeff());
    result.observe(worst, 1e-6);
  }
  return result;
}

/// Each coordinate of an attention read lies within the range of that
/// coordinate over the memories, however the query is scaled.
inline PropertyResult convex_combination_bound(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> log_scale(-3.0, 3.0);
  PropertyResult result;
  for (std::size_t n = 0; n < count; ++n) {
    const auto width = uniform_size(rng, 2, 8);
    const auto memories = uniform_size(rng, 1, 15);
    const auto m = random_tensor(Shape{memories, width}, rng);
    const auto query = scale(random_tensor(Shape{1, width}, rng), std::pow(10.0, log_scale(rng)));
    const auto read = scaled_dot_attention(query, m, random_tensor(Shape{width, width}, rng));
    const auto lo = m.value().colwise().minCoeff();
    const auto hi = m.value().colwise().maxCoeff();
    double worst = 0.0;
    for (Eigen::Index j = 0; j < read.output.cols(); ++j) {
      const double h = read.output.value()(0, j);
      worst = std::max({worst, lo(j) - h, h - hi(j)});
    }
    result.observe(std::max(worst, 0.0), 1e-12);
  }
  return result;
}

/// A GRU whose weights and biases are all zero keeps h = 0 for any input.
inline PropertyResult gru_zero_weights(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PropertyResult result;
  for (std::size_t n = 0; n < count; ++n) {
    const auto in = uniform_size(rng, 1, 8);
    const auto hidden = uniform_size(rng, 1, 8);
    const auto steps = uniform_size(rng, 1, 10);
    ParameterStore<double> store;
    GruCell<double> gru(store, "gru", in, hidden, rng);
    for (auto& p : store.all()) p.tensor.mutable_value().setZero();
    const auto h = gru.encode(random_tensor(Shape{steps, in}, rng, 10.0), uniform_size(rng, 1, steps));
    result.observe(h.value().cwiseAbs().maxCoeff(), 0.0);
  }
  return result;
}

/// A small task-1 corpus with its vocabulary and indexed samples.
struct Corpus {
  babi::Vocabulary vocab;
  std::vector<babi::Sample> samples;
};

inline Corpus synthetic_corpus(std::size_t questions, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::istringstream in(babi::generate_single_supporting_fact(questions, rng));
  const auto raw = babi::parse_babi(in);
  Corpus c;
  c.vocab = babi::build_vocabulary(raw);
  c.samples = babi::prepare_samples(raw, c.vocab, 1).samples;
  return c;
}

/// The data loss of a batch equals the sum of the losses of any split of it.
inline PropertyResult loss_additivity(std::size_t count, std::uint64_t seed) {
  const auto corpus = synthetic_corpus(200, seed);
  ModelConfig mc;
  mc.vocab_size = corpus.vocab.size();
  mc.answer_count = corpus.vocab.answer_count();
  mc.width = 6;
  mc.heads = 2;
  mc.hops = 2;
  mc.transition_hidden = 4;
  mc.relation_units = 12;
  const WorkingMemoryNetwork<double> model(mc, seed);
  std::mt19937_64 rng(seed + 1);
  NoGradGuard guard;
  auto loss_of = [&](const std::vector<const babi::Sample*>& part) {
    const auto batch = babi::make_batch(std::span<const babi::Sample* const>(part));
    return model.data_loss(model.forward(batch).probabilities, batch).item();
  };
  PropertyResult result;
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<const babi::Sample*> a, b;
    const auto na = uniform_size(rng, 1, 4);
    const auto nb = uniform_size(rng, 1, 4);
    for (std::size_t i = 0; i < na; ++i) a.push_back(&corpus.samples[uniform_size(rng, 0, corpus.samples.size() - 1)]);
    for (std::size_t i = 0; i < nb; ++i) b.push_back(&corpus.samples[uniform_size(rng, 0, corpus.samples.size() - 1)]);
    auto both = a;
    both.insert(both.end(), b.begin(), b.end());
    const double joint = loss_of(both);
    const double parts = loss_of(a) + loss_of(b);
    result.observe(std::abs(joint - parts) / std::max(1.0, std::abs(joint)), 1e-9);
  }
  return result;
}

/// After clipping, the global norm is min(g, max_norm), the direction is
/// unchanged, and the norm never grows.
inline PropertyResult clip_norm_law(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> log_norm(-2.0, 3.0);
  PropertyResult result;
  for (std::size_t n = 0; n < count; ++n) {
    ParameterStore<double> store;
    const auto tensors = uniform_size(rng, 1, 5);
    for (std::size_t t = 0; t < tensors; ++t) {
      auto p = store.add("p" + std::to_string(t), Tensor<double>(Shape{uniform_size(rng, 1, 5), uniform_size(rng, 1, 5)}));
      p.mutable_grad() = random_tensor(p.shape(), rng, std::pow(10.0, log_norm(rng))).value();
    }
    auto& params = store.all();
    std::vector<Matrix<double>> before;
    for (const auto& p : params) before.push_back(p.tensor.grad());
    const double max_norm = std::pow(10.0, log_norm(rng));
    const double g = clip_global_norm(params, max_norm);
    const double after = global_grad_norm(params);
    double worst = std::abs(after - std::min(g, max_norm)) / std::max(1e-12, std::min(g, max_norm));
    if (after > g * (1.0 + 1e-12)) worst = std::max(worst, 1.0);
    // direction: cosine between the old and new concatenated gradients
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      dot += before[i].cwiseProduct(params[i].tensor.grad()).sum();
      na += before[i].squaredNorm();
      nb += params[i].tensor.grad().squaredNorm();
    }
    worst = std::max(worst, std::abs(1.0 - dot / std::sqrt(na * nb)));
    result.observe(worst, 1e-6);
  }
  return result;
}

inline std::string random_word(std::mt19937_64& rng) {
  static const std::array<const char*, 12> words = {"mary", "john",  "sandra", "went",  "moved", "to",
                                                    "the",  "hallway", "garden", "office", "picked", "up"};
  return words[uniform_size(rng, 0, words.size() - 1)];
}

inline babi::RawSample random_raw_sample(std::mt19937_64& rng, std::size_t facts) {
  babi::RawSample s;
  for (std::size_t f = 0; f < facts; ++f) {
    std::vector<std::string> sentence(uniform_size(rng, 1, 6));
    for (auto& w : sentence) w = random_word(rng);
    s.facts.push_back(std::move(sentence));
  }
  s.question = {"where", "is", random_word(rng)};
  s.answer = random_word(rng);
  if (facts > 0) {
    for (std::size_t k = uniform_size(rng, 0, 2); k > 0; --k) s.support.push_back(uniform_size(rng, 0, facts - 1));
  }
  return s;
}

/// parse(serialize(samples)) reproduces every sample exactly.
inline PropertyResult babi_round_trip(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PropertyResult result;
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<babi::RawSample> samples;
    for (std::size_t k = uniform_size(rng, 1, 5); k > 0; --k) samples.push_back(random_raw_sample(rng, uniform_size(rng, 0, 40)));
    std::istringstream in(babi::serialize_babi(samples));
    result.observe(babi::parse_babi(in) == samples ? 0.0 : 1.0, 0.0);
  }
  return result;
}

/// The window keeps the newest min(n, 30) facts in order, with supporting
/// positions shifted and those that fell out dropped. Runs the fixed
/// counts 5, 30 and 45 first, then random counts.
inline PropertyResult windowing_keeps_last(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PropertyResult result;
  const std::array<std::size_t, 3> fixed = {5, 30, 45};
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t facts = n < fixed.size() ? fixed[n] : uniform_size(rng, 0, 80);
    const auto s = random_raw_sample(rng, facts);
    const auto w = babi::window_facts(s, 30);
    if (facts == 0) {
      result.observe(w ? 1.0 : 0.0, 0.0);
      continue;
    }
    const std::size_t keep = facts < 30 ? facts : 30;
    bool same = w && w->facts.size() == keep && w->question == s.question && w->answer == s.answer;
    for (std::size_t i = 0; same && i < keep; ++i) same = w->facts[i] == s.facts[facts - keep + i];
    std::vector<std::size_t> support;
    for (auto pos : s.support) {
      if (pos + keep >= facts) support.push_back(pos + keep - facts);
    }
    same = same && w->support == support;
    result.observe(same ? 0.0 : 1.0, 0.0);
  }
  return result;
}

/// Several stories with questions between their facts. Every question sees
/// exactly the facts of its own story that precede it; questions never
/// become facts and nothing leaks across a story boundary.
inline PropertyResult story_boundary_isolation(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PropertyResult result;
  for (std::size_t n = 0; n < count; ++n) {
    std::ostringstream text;
    std::vector<babi::RawSample> expected;
    for (std::size_t story = uniform_size(rng, 2, 5); story > 0; --story) {
      const std::string tag = "story" + std::to_string(story);
      std::vector<std::vector<std::string>> seen;
      std::vector<std::size_t> fact_lines;
      std::size_t line = 1;
      for (std::size_t step = uniform_size(rng, 1, 12); step > 0; --step) {
        if (!seen.empty() && uniform_size(rng, 0, 2) == 0) {
          const std::size_t pick = uniform_size(rng, 0, seen.size() - 1);
          babi::RawSample q;
          q.facts = seen;
          q.question = {"where", "is", tag};
          q.answer = random_word(rng);
          q.support = {pick};
          text << line++ << " Where is " << tag << "?\t" << q.answer << '\t' << fact_lines[pick] << '\n';
          expected.push_back(std::move(q));
        } else {
          std::vector<std::string> fact = {tag, "went", "to", "the", random_word(rng)};
          fact_lines.push_back(line);
          text << line++ << ' ' << tag << " went to the " << fact.back() << ".\n";
          seen.push_back(std::move(fact));
        }
      }
    }
    std::istringstream in(text.str());
    result.observe(babi::parse_babi(in) == expected ? 0.0 : 1.0, 0.0);
  }
  return result;
}

/// The 12-token, 3-answer corpus behind the end-to-end gradient check.
inline constexpr const char* kToyStories =
    "1 Mary went to the kitchen.\n"
    "2 John moved to the garden.\n"
    "3 Mary moved to the office.\n"
    "4 Where is Mary?\toffice\t3\n"
    "1 John went to the office.\n"
    "2 Mary went to the garden.\n"
    "3 John moved to the kitchen.\n"
    "4 Where is John?\tkitchen\t3\n"
    "5 Where is Mary?\tgarden\t2\n";

struct ToyModel {
  babi::Vocabulary vocab;
  babi::Batch batch;
  WorkingMemoryNetwork<double> model;
};

/// d=4, S=2, H=2, L=3 at 64-bit with a 16-unit relation MLP, so few
/// gradient entries are small enough to drown in round-off.
inline ToyModel toy_model(std::uint64_t seed) {
  std::istringstream in(kToyStories);
  const auto raw = babi::parse_babi(in);
  auto vocab = babi::build_vocabulary(raw);
  const auto samples = babi::prepare_samples(raw, vocab, 1, 3).samples;
  ModelConfig mc;
  mc.vocab_size = vocab.size();
  mc.answer_count = vocab.answer_count();
  mc.width = 4;
  mc.heads = 2;
  mc.hops = 2;
  mc.window = 3;
  mc.relation_units = 16;
  ToyModel toy{vocab, babi::make_batch(std::span<const babi::Sample>(samples)), WorkingMemoryNetwork<double>(mc, seed)};
  std::mt19937_64 rng(seed);
  // Biases well away from zero keep every ReLU clearly on or off, and a floor
  // on weight magnitudes keeps the l2 part of each gradient above round-off.
  std::uniform_real_distribution<double> magnitude(0.5, 1.0);
  std::bernoulli_distribution positive(0.5);
  for (auto& p : toy.model.parameters().all()) {
    auto& v = p.tensor.mutable_value();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      double& x = v.data()[i];
      if (p.tensor.rows() == 1) {
        x = positive(rng) ? magnitude(rng) : -magnitude(rng);
      } else if (std::abs(x) < 0.05) {
        x = x < 0.0 ? -0.05 : 0.05;
      }
    }
  }
  return toy;
}

inline double toy_gradient_error(std::uint64_t seed) {
  auto toy = toy_model(seed);
  return grad_check<double>([&] { return toy.model.loss(toy.batch, 1e-3); }, toy.model.parameters().all(), 1e-4);
}

/// Five facts and one question, for attention traces.
inline constexpr const char* kInspectStory =
    "1 Mary moved to the bathroom.\n"
    "2 John went to the hallway.\n"
    "3 Daniel went back to the garden.\n"
    "4 Sandra journeyed to the office.\n"
    "5 Mary travelled to the kitchen.\n"
    "6 Where is Mary?\tkitchen\t5\n";

/// A fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& name) : path_(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace workmem::testing
