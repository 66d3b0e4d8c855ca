#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "workmem/training.hpp"

namespace workmem {

/// A training run: every TrainConfig field plus where to read and write.
struct RunConfig {
  TrainConfig train;
  std::optional<std::filesystem::path> data_dir;
  std::optional<std::filesystem::path> out_dir;
  std::vector<int> tasks = {1};
  std::size_t threads = 1;

  bool operator==(const RunConfig&) const = default;
};

/// Reads `key = value` lines. '#' starts a comment; blank lines are
/// skipped. Unknown or repeated keys and bad values raise ConfigError
/// naming `source` and the line number.
RunConfig parse_run_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Every key with its current value; parses back to an equal RunConfig.
std::string format_run_config(const RunConfig& config);

/// "1,2,20" -> {1, 2, 20}; every id in 1..20, no repeats.
std::vector<int> parse_task_list(const std::string& text);

}  // namespace workmem
