#include "workmem/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "workmem/numbers.hpp"

namespace workmem {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::vector<int> parse_task_list(const std::string& text) {
  std::vector<int> tasks;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto id = parse_unsigned(trim(item));
    if (!id || *id < 1 || *id > 20) throw ConfigError("task id '" + trim(item) + "' is not in 1..20");
    if (std::find(tasks.begin(), tasks.end(), static_cast<int>(*id)) != tasks.end()) {
      throw ConfigError("task " + std::to_string(*id) + " listed twice");
    }
    tasks.push_back(static_cast<int>(*id));
  }
  if (tasks.empty()) throw ConfigError("task list is empty");
  return tasks;
}

RunConfig parse_run_config(std::istream& in, const std::string& source) {
  RunConfig config;
  std::set<std::string> seen;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto where = source + ":" + std::to_string(number) + ": ";
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "missing key");
    if (!seen.insert(key).second) throw ConfigError(where + "key '" + key + "' given twice");
    try {
      if (key == "data_dir") {
        config.data_dir = value;
      } else if (key == "out_dir") {
        config.out_dir = value;
      } else if (key == "tasks") {
        config.tasks = parse_task_list(value);
      } else if (key == "threads") {
        const auto n = parse_unsigned(value);
        if (!n || *n == 0) throw ConfigError("value for 'threads' must be a positive integer");
        config.threads = static_cast<std::size_t>(*n);
      } else if (!apply_key_value(config.train, key, value)) {
        throw ConfigError("unknown key '" + key + "'");
      }
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_run_config(in, path.string());
}

std::string format_run_config(const RunConfig& config) {
  std::ostringstream out;
  for (const auto& [key, value] : to_key_values(config.train)) out << key << " = " << value << '\n';
  if (config.data_dir) out << "data_dir = " << config.data_dir->string() << '\n';
  if (config.out_dir) out << "out_dir = " << config.out_dir->string() << '\n';
  out << "tasks = ";
  for (std::size_t i = 0; i < config.tasks.size(); ++i) out << (i ? "," : "") << config.tasks[i];
  out << "\nthreads = " << config.threads << '\n';
  return out.str();
}

}  // namespace workmem
