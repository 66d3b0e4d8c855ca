#include "workmem/babi.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace workmem::babi {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view sentence) {
  std::vector<std::string> tokens;
  std::istringstream in{std::string(sentence)};
  std::string word;
  while (in >> word) {
    while (!word.empty() && (word.back() == '.' || word.back() == '?' || word.back() == '!')) word.pop_back();
    if (!word.empty()) tokens.push_back(lowercase(word));
  }
  return tokens;
}

std::vector<RawSample> parse_babi(std::istream& in, const std::string& source) {
  struct StoryFact {
    long number;
    std::vector<std::string> tokens;
  };
  std::vector<RawSample> samples;
  std::vector<StoryFact> story;
  long last_number = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view text = trim(line);
    if (text.empty()) continue;

    long number = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), number);
    if (ec != std::errc() || number <= 0) throw ParseError(source, line_no, "line does not start with a line number");
    if (ptr != text.data() + text.size() && !std::isspace(static_cast<unsigned char>(*ptr))) {
      throw ParseError(source, line_no, "line number is not followed by whitespace");
    }
    text.remove_prefix(static_cast<std::size_t>(ptr - text.data()));
    text = trim(text);

    if (number == 1 || number <= last_number) story.clear();
    last_number = number;

    const auto tab = text.find('\t');
    if (tab == std::string_view::npos) {
      if (text.find('?') != std::string_view::npos) {
        throw ParseError(source, line_no, "question without tab-separated answer");
      }
      auto tokens = tokenize(text);
      if (tokens.empty()) throw ParseError(source, line_no, "empty fact sentence");
      story.push_back(StoryFact{number, std::move(tokens)});
      continue;
    }

    RawSample sample;
    sample.question = tokenize(text.substr(0, tab));
    if (sample.question.empty()) throw ParseError(source, line_no, "empty question");
    std::string_view rest = text.substr(tab + 1);
    const auto tab2 = rest.find('\t');
    const std::string_view answer = trim(rest.substr(0, tab2));
    if (answer.empty()) throw ParseError(source, line_no, "question without answer");
    sample.answer = lowercase(answer);

    for (const auto& f : story) sample.facts.push_back(f.tokens);
    if (tab2 != std::string_view::npos) {
      std::istringstream ids{std::string(rest.substr(tab2 + 1))};
      std::string id;
      while (ids >> id) {
        long ref = 0;
        const auto [p, e] = std::from_chars(id.data(), id.data() + id.size(), ref);
        if (e != std::errc() || p != id.data() + id.size()) {
          throw ParseError(source, line_no, "supporting id '" + id + "' is not an integer");
        }
        auto it = std::find_if(story.begin(), story.end(), [ref](const StoryFact& f) { return f.number == ref; });
        if (it == story.end()) {
          throw ParseError(source, line_no, "supporting id " + id + " does not name a fact of this story");
        }
        sample.support.push_back(static_cast<std::size_t>(it - story.begin()));
      }
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

std::vector<RawSample> parse_babi_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_babi(in, path.string());
}

std::string serialize_babi(const std::vector<RawSample>& samples) {
  std::ostringstream out;
  for (const auto& s : samples) {
    std::size_t n = 1;
    for (const auto& fact : s.facts) out << n++ << ' ' << join(fact) << ".\n";
    out << n << ' ' << join(s.question) << "?\t" << s.answer << '\t';
    for (std::size_t i = 0; i < s.support.size(); ++i) {
      if (i) out << ' ';
      out << s.support[i] + 1;
    }
    out << '\n';
  }
  return out.str();
}

std::optional<RawSample> window_facts(const RawSample& sample, std::size_t window) {
  if (sample.facts.empty()) return std::nullopt;
  const std::size_t keep = std::min(window, sample.facts.size());
  const std::size_t first = sample.facts.size() - keep;
  RawSample out;
  out.facts.assign(sample.facts.begin() + static_cast<std::ptrdiff_t>(first), sample.facts.end());
  out.question = sample.question;
  out.answer = sample.answer;
  for (auto pos : sample.support) {
    if (pos >= first) out.support.push_back(pos - first);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

std::optional<int> Vocabulary::index_of(const std::string& token) const {
  auto it = lookup_.find(token);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> Vocabulary::answer_index(const std::string& answer) const {
  auto it = answer_lookup_.find(answer);
  if (it == answer_lookup_.end()) return std::nullopt;
  return it->second;
}

Vocabulary Vocabulary::from_lists(const std::vector<std::string>& tokens, const std::vector<std::string>& answers) {
  Vocabulary v;
  for (const auto& t : tokens) {
    if (v.lookup_.count(t)) throw std::invalid_argument("duplicate vocabulary token '" + t + "'");
    v.lookup_.emplace(t, static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(t);
  }
  for (const auto& a : answers) {
    auto idx = v.index_of(a);
    if (!idx) throw std::invalid_argument("answer '" + a + "' is not in the token list");
    v.answer_lookup_.emplace(a, static_cast<int>(v.answers_.size()));
    v.answers_.push_back(*idx);
  }
  return v;
}

Vocabulary build_vocabulary(std::span<const RawSample> samples) {
  std::set<std::string> tokens;
  std::set<std::string> answers;
  for (const auto& s : samples) {
    for (const auto& fact : s.facts) tokens.insert(fact.begin(), fact.end());
    tokens.insert(s.question.begin(), s.question.end());
    tokens.insert(s.answer);
    answers.insert(s.answer);
  }
  return Vocabulary::from_lists(std::vector<std::string>(tokens.begin(), tokens.end()),
                                std::vector<std::string>(answers.begin(), answers.end()));
}

void write_vocabulary_file(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 1; i < vocab.size(); ++i) out << vocab.tokens()[i] << '\n';
}

std::vector<std::string> read_vocabulary_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) tokens.push_back(line);
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Samples and batches

Sample index_sample(const RawSample& sample, const Vocabulary& vocab, int task_id, bool lenient) {
  auto lookup = [&](const std::string& token) {
    if (auto idx = vocab.index_of(token)) return *idx;
    if (lenient) return kPaddingIndex;
    throw UnknownTokenError("token '" + token + "' is not in the vocabulary");
  };
  Sample out;
  out.task_id = task_id;
  for (const auto& fact : sample.facts) {
    std::vector<int> ids;
    ids.reserve(fact.size());
    for (const auto& t : fact) ids.push_back(lookup(t));
    out.facts.push_back(std::move(ids));
  }
  for (const auto& t : sample.question) out.question.push_back(lookup(t));
  auto answer = vocab.answer_index(sample.answer);
  if (!answer) throw UnknownTokenError("answer '" + sample.answer + "' is not a known answer");
  out.answer = *answer;
  out.support_flags.assign(sample.facts.size(), 0);
  for (auto pos : sample.support) {
    if (pos < out.support_flags.size()) out.support_flags[pos] = 1;
  }
  return out;
}

IndexedSet prepare_samples(std::span<const RawSample> raw, const Vocabulary& vocab, int task_id, std::size_t window,
                           bool lenient) {
  IndexedSet set;
  set.samples.reserve(raw.size());
  for (const auto& r : raw) {
    auto windowed = window_facts(r, window);
    if (!windowed) {
      ++set.rejected;
      continue;
    }
    set.samples.push_back(index_sample(*windowed, vocab, task_id, lenient));
  }
  return set;
}

Batch make_batch(std::span<const Sample* const> samples) {
  Batch b;
  b.size = samples.size();
  for (const Sample* s : samples) {
    b.max_facts = std::max(b.max_facts, s->facts.size());
    b.max_question_len = std::max(b.max_question_len, s->question.size());
    for (const auto& f : s->facts) b.max_fact_len = std::max(b.max_fact_len, f.size());
  }
  b.facts.assign(b.size * b.max_facts * b.max_fact_len, kPaddingIndex);
  b.fact_lengths.assign(b.size * b.max_facts, 0);
  b.questions.assign(b.size * b.max_question_len, kPaddingIndex);
  for (std::size_t i = 0; i < b.size; ++i) {
    const Sample& s = *samples[i];
    b.story_lengths.push_back(static_cast<int>(s.facts.size()));
    for (std::size_t l = 0; l < s.facts.size(); ++l) {
      b.fact_lengths[i * b.max_facts + l] = static_cast<int>(s.facts[l].size());
      std::copy(s.facts[l].begin(), s.facts[l].end(), b.facts.begin() + static_cast<std::ptrdiff_t>((i * b.max_facts + l) * b.max_fact_len));
    }
    std::copy(s.question.begin(), s.question.end(), b.questions.begin() + static_cast<std::ptrdiff_t>(i * b.max_question_len));
    b.question_lengths.push_back(static_cast<int>(s.question.size()));
    b.answers.push_back(s.answer);
    b.task_ids.push_back(s.task_id);
  }
  return b;
}

Batch make_batch(std::span<const Sample> samples) {
  std::vector<const Sample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return make_batch(std::span<const Sample* const>(ptrs));
}

std::vector<Batch> make_batches(std::span<const Sample> samples, std::size_t batch_size, std::mt19937_64& rng) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    std::vector<const Sample*> chunk;
    for (std::size_t i = begin; i < end; ++i) chunk.push_back(&samples[order[i]]);
    batches.push_back(make_batch(std::span<const Sample* const>(chunk)));
  }
  return batches;
}

std::vector<Batch> make_sequential_batches(std::span<const Sample> samples, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<Batch> batches;
  for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
    const std::size_t end = std::min(samples.size(), begin + batch_size);
    batches.push_back(make_batch(samples.subspan(begin, end - begin)));
  }
  return batches;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_validation(std::span<const Sample> samples, double fraction,
                                                                     std::mt19937_64& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("validation fraction must lie in (0, 1)");
  std::map<int, std::vector<std::size_t>> by_task;
  for (std::size_t i = 0; i < samples.size(); ++i) by_task[samples[i].task_id].push_back(i);
  std::vector<std::uint8_t> held(samples.size(), 0);
  for (auto& [task, idx] : by_task) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_valid = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < n_valid; ++i) held[idx[i]] = 1;
  }
  std::pair<std::vector<Sample>, std::vector<Sample>> out;
  for (std::size_t i = 0; i < samples.size(); ++i) (held[i] ? out.second : out.first).push_back(samples[i]);
  return out;
}

std::optional<std::filesystem::path> find_task_file(const std::filesystem::path& dir, int task,
                                                    const std::string& split) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) return std::nullopt;
  const std::string prefix = "qa" + std::to_string(task) + "_";
  const std::string suffix = "_" + split + ".txt";
  std::vector<std::filesystem::path> hits;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > prefix.size() + suffix.size() && name.rfind(prefix, 0) == 0 &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      hits.push_back(entry.path());
    }
  }
  if (hits.empty()) return std::nullopt;
  std::sort(hits.begin(), hits.end());
  return hits.front();
}

std::string generate_single_supporting_fact(std::size_t questions, std::mt19937_64& rng) {
  static const std::vector<std::string> kActors = {"Mary", "John", "Daniel", "Sandra"};
  static const std::vector<std::string> kPlaces = {"bathroom", "bedroom", "garden", "hallway", "kitchen", "office"};
  static const std::vector<std::string> kVerbs = {"moved to", "went to", "went back to", "journeyed to",
                                                  "travelled to"};
  auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

  std::ostringstream out;
  std::size_t emitted = 0;
  while (emitted < questions) {
    std::vector<long> last_line(kActors.size(), 0);
    std::vector<std::size_t> location(kActors.size(), 0);
    long line = 1;
    // five rounds of two moves followed by one question
    for (int round = 0; round < 5 && emitted < questions; ++round) {
      for (int m = 0; m < 2; ++m) {
        const auto who = pick(kActors.size());
        const auto where = pick(kPlaces.size());
        out << line << ' ' << kActors[who] << ' ' << kVerbs[pick(kVerbs.size())] << " the " << kPlaces[where] << ".\n";
        last_line[who] = line;
        location[who] = where;
        ++line;
      }
      std::vector<std::size_t> known;
      for (std::size_t a = 0; a < kActors.size(); ++a) {
        if (last_line[a]) known.push_back(a);
      }
      const auto who = known[pick(known.size())];
      out << line << " Where is " << kActors[who] << "? \t" << kPlaces[location[who]] << '\t' << last_line[who] << '\n';
      ++line;
      ++emitted;
    }
  }
  return out.str();
}

}  // namespace workmem::babi
