#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace workmem {

/// Exit codes shared by every command.
enum ExitCode : int { kExitOk = 0, kExitInternal = 1, kExitUsage = 2 };

/// A problem with the user's input (flags, config, files); exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> story;  // inspect
  std::optional<std::uint64_t> seed;
  std::vector<std::size_t> n;
  std::optional<std::size_t> reps;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> questions;  // generate
};

inline constexpr const char* kDataEnv = "WORKMEM_DATA";

/// Trains on the configured tasks; writes metrics.csv, best.ckpt, last.ckpt
/// and valid_report.csv to the output directory.
int cmd_train(const CommandOptions& options, std::ostream& out, std::ostream& err);

/// Scores a checkpoint on every qa*_test.txt file in the data directory.
int cmd_eval(const CommandOptions& options, std::ostream& out, std::ostream& err);

/// Prints the attention of every hop over the sentences of a one-question
/// story and writes the per-head trace as trace.json.
int cmd_inspect(const CommandOptions& options, std::ostream& out, std::ostream& err);

/// Forward+backward timings of the two reasoning paths; writes bench.csv.
int cmd_bench(const CommandOptions& options, std::ostream& out, std::ostream& err);

/// Writes synthetic task-1 train/test files in bAbI format.
int cmd_generate(const CommandOptions& options, std::ostream& out, std::ostream& err);

/// "8,16,32" -> {8, 16, 32}; every entry at least 1.
std::vector<std::size_t> parse_size_list(const std::string& text);

}  // namespace workmem
