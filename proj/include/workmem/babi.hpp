#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace workmem::babi {

inline constexpr std::size_t kDefaultWindow = 30;
inline constexpr int kPaddingIndex = 0;

class ParseError : public std::runtime_error {
 public:
  ParseError(std::string source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Lowercases, strips terminal punctuation and splits on whitespace.
std::vector<std::string> tokenize(std::string_view sentence);

/// One question with the story facts that precede it, as tokens.
struct RawSample {
  std::vector<std::vector<std::string>> facts;  // oldest first
  std::vector<std::string> question;
  std::string answer;                           // comma-joined answers stay one token
  std::vector<std::size_t> support;             // positions into `facts`

  bool operator==(const RawSample&) const = default;
};

std::vector<RawSample> parse_babi(std::istream& in, const std::string& source = "<stream>");
std::vector<RawSample> parse_babi_file(const std::filesystem::path& path);

/// Writes each sample as a self-contained story in bAbI line format.
std::string serialize_babi(const std::vector<RawSample>& samples);

/// Keeps the last min(count, window) facts. Returns nullopt for a sample with no facts.
std::optional<RawSample> window_facts(const RawSample& sample, std::size_t window = kDefaultWindow);

class Vocabulary {
 public:
  Vocabulary() : tokens_{"<pad>"} {}

  /// Number of indices including the padding slot.
  std::size_t size() const { return tokens_.size(); }
  std::size_t answer_count() const { return answers_.size(); }

  std::optional<int> index_of(const std::string& token) const;
  const std::string& token(int index) const { return tokens_.at(static_cast<std::size_t>(index)); }
  std::optional<int> answer_index(const std::string& answer) const;
  const std::string& answer_token(int answer) const { return token(answers_.at(static_cast<std::size_t>(answer))); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<int>& answer_tokens() const { return answers_; }

  /// Rebuilds from a sorted token list (without padding) and answer strings.
  static Vocabulary from_lists(const std::vector<std::string>& tokens, const std::vector<std::string>& answers);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_ && answers_ == other.answers_; }

 private:
  friend Vocabulary build_vocabulary(std::span<const RawSample> samples);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> lookup_;
  std::vector<int> answers_;  // token indices, sorted by token
  std::unordered_map<std::string, int> answer_lookup_;
};

Vocabulary build_vocabulary(std::span<const RawSample> samples);

/// Sorted token list, one per line, padding excluded.
void write_vocabulary_file(const Vocabulary& vocab, const std::filesystem::path& path);
std::vector<std::string> read_vocabulary_file(const std::filesystem::path& path);

struct Sample {
  std::vector<std::vector<int>> facts;  // oldest first
  std::vector<int> question;
  int answer = 0;                       // index into the answer subset
  int task_id = 1;
  std::vector<std::uint8_t> support_flags;

  bool operator==(const Sample&) const = default;
};

class UnknownTokenError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Converts tokens to indices. Unknown tokens throw unless `lenient`, in
/// which case they map to padding; an unknown answer always throws.
Sample index_sample(const RawSample& sample, const Vocabulary& vocab, int task_id, bool lenient = false);

/// Windowed + indexed samples; facts-free samples are dropped and counted.
struct IndexedSet {
  std::vector<Sample> samples;
  std::size_t rejected = 0;
};
IndexedSet prepare_samples(std::span<const RawSample> raw, const Vocabulary& vocab, int task_id,
                           std::size_t window = kDefaultWindow, bool lenient = false);

struct Batch {
  std::size_t size = 0;
  std::size_t max_facts = 0;     // L of this batch
  std::size_t max_fact_len = 0;  // M of this batch
  std::size_t max_question_len = 0;
  std::vector<int> facts;            // size x max_facts x max_fact_len, 0-padded
  std::vector<int> fact_lengths;     // size x max_facts, 0 for padded slots
  std::vector<int> story_lengths;    // size
  std::vector<int> questions;        // size x max_question_len
  std::vector<int> question_lengths; // size
  std::vector<int> answers;          // size
  std::vector<int> task_ids;         // size

  int fact_token(std::size_t b, std::size_t l, std::size_t m) const {
    return facts[(b * max_facts + l) * max_fact_len + m];
  }
  int fact_length(std::size_t b, std::size_t l) const { return fact_lengths[b * max_facts + l]; }
  int question_token(std::size_t b, std::size_t q) const { return questions[b * max_question_len + q]; }
};

Batch make_batch(std::span<const Sample* const> samples);
Batch make_batch(std::span<const Sample> samples);

/// Shuffles with `rng`, then cuts consecutive batches; the last may be short.
std::vector<Batch> make_batches(std::span<const Sample> samples, std::size_t batch_size, std::mt19937_64& rng);

/// In-order batches without shuffling (evaluation).
std::vector<Batch> make_sequential_batches(std::span<const Sample> samples, std::size_t batch_size);

/// Per-task stratified hold-out: each task contributes round(fraction * n_task).
std::pair<std::vector<Sample>, std::vector<Sample>> split_validation(std::span<const Sample> samples, double fraction,
                                                                     std::mt19937_64& rng);

/// Locates "qa<task>_<name>_<split>.txt" inside `dir`.
std::optional<std::filesystem::path> find_task_file(const std::filesystem::path& dir, int task,
                                                    const std::string& split);

/// Writes a single-supporting-fact corpus (actors moving between rooms,
/// "where is X?" questions) in bAbI line format. Used when the real task
/// files are not available.
std::string generate_single_supporting_fact(std::size_t questions, std::mt19937_64& rng);

}  // namespace workmem::babi
