#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "workmem/attention.hpp"

namespace workmem {

struct TraceEntry {
  std::size_t hop = 0;           // 1-based
  std::size_t head = 0;          // 1-based
  std::size_t memory_index = 0;  // 1-based, oldest fact first
  double weight = 0.0;
  std::string sentence_text;

  bool operator==(const TraceEntry&) const = default;
};

/// Per-head attention of one inspected story, with its question and answers.
struct InspectTrace {
  std::size_t hops = 0;
  std::size_t heads = 0;
  std::vector<std::string> sentences;
  std::string question;
  std::string answer;
  std::string predicted;
  std::vector<TraceEntry> entries;  // hop-major, then head, then memory

  bool operator==(const InspectTrace&) const = default;

  double weight(std::size_t hop, std::size_t head, std::size_t memory) const;
  /// Attention on one sentence summed over the heads of one hop (all 1-based).
  double head_sum(std::size_t hop, std::size_t memory) const;
};

InspectTrace make_inspect_trace(const AttentionTrace& raw, std::vector<std::string> sentences, std::string question,
                                std::string answer, std::string predicted);

void write_trace_json(std::ostream& out, const InspectTrace& trace);
InspectTrace parse_trace_json(std::istream& in);

/// One row per sentence with the head-summed attention of every hop.
std::string format_trace_table(const InspectTrace& trace);

}  // namespace workmem
