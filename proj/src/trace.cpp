#include "workmem/trace.hpp"

#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace workmem {

double InspectTrace::weight(std::size_t hop, std::size_t head, std::size_t memory) const {
  if (hop == 0 || hop > hops || head == 0 || head > heads || memory == 0 || memory > sentences.size()) {
    throw ContractError("trace index out of range");
  }
  return entries[((hop - 1) * heads + (head - 1)) * sentences.size() + (memory - 1)].weight;
}

double InspectTrace::head_sum(std::size_t hop, std::size_t memory) const {
  double s = 0.0;
  for (std::size_t h = 1; h <= heads; ++h) s += weight(hop, h, memory);
  return s;
}

InspectTrace make_inspect_trace(const AttentionTrace& raw, std::vector<std::string> sentences, std::string question,
                                std::string answer, std::string predicted) {
  if (raw.memories != sentences.size()) throw ContractError("trace covers a different number of sentences");
  InspectTrace t;
  t.hops = raw.hops();
  t.heads = raw.heads;
  t.sentences = std::move(sentences);
  t.question = std::move(question);
  t.answer = std::move(answer);
  t.predicted = std::move(predicted);
  for (std::size_t k = 0; k < t.hops; ++k) {
    for (std::size_t s = 0; s < t.heads; ++s) {
      for (std::size_t i = 0; i < raw.memories; ++i) {
        t.entries.push_back(TraceEntry{k + 1, s + 1, i + 1, raw.weight(k, s, i), t.sentences[i]});
      }
    }
  }
  return t;
}

void write_trace_json(std::ostream& out, const InspectTrace& t) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : t.entries) {
    entries.push_back({{"hop", e.hop},
                       {"head", e.head},
                       {"memory_index", e.memory_index},
                       {"weight", e.weight},
                       {"sentence_text", e.sentence_text}});
  }
  const nlohmann::json doc = {{"hops", t.hops},         {"heads", t.heads},         {"sentences", t.sentences},
                              {"question", t.question}, {"answer", t.answer},       {"predicted", t.predicted},
                              {"entries", entries}};
  out << doc.dump(2) << '\n';
}

InspectTrace parse_trace_json(std::istream& in) {
  InspectTrace t;
  try {
    const auto doc = nlohmann::json::parse(in);
    t.hops = doc.at("hops").get<std::size_t>();
    t.heads = doc.at("heads").get<std::size_t>();
    t.sentences = doc.at("sentences").get<std::vector<std::string>>();
    t.question = doc.at("question").get<std::string>();
    t.answer = doc.at("answer").get<std::string>();
    t.predicted = doc.at("predicted").get<std::string>();
    for (const auto& e : doc.at("entries")) {
      t.entries.push_back(TraceEntry{e.at("hop").get<std::size_t>(), e.at("head").get<std::size_t>(),
                                     e.at("memory_index").get<std::size_t>(), e.at("weight").get<double>(),
                                     e.at("sentence_text").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed trace: ") + e.what());
  }
  if (t.entries.size() != t.hops * t.heads * t.sentences.size()) {
    throw std::runtime_error("malformed trace: expected hops x heads x sentences entries");
  }
  for (std::size_t n = 0; n < t.entries.size(); ++n) {
    const auto& e = t.entries[n];
    const auto memory = n % t.sentences.size();
    const auto head = (n / t.sentences.size()) % t.heads;
    const auto hop = n / (t.sentences.size() * t.heads);
    if (e.hop != hop + 1 || e.head != head + 1 || e.memory_index != memory + 1) {
      throw std::runtime_error("malformed trace: entries out of order at position " + std::to_string(n));
    }
  }
  return t;
}

std::string format_trace_table(const InspectTrace& t) {
  std::ostringstream out;
  out << "sentence";
  for (std::size_t k = 1; k <= t.hops; ++k) out << "\thop " << k;
  out << '\n';
  out << std::fixed << std::setprecision(2);
  for (std::size_t i = 1; i <= t.sentences.size(); ++i) {
    out << t.sentences[i - 1];
    for (std::size_t k = 1; k <= t.hops; ++k) out << '\t' << t.head_sum(k, i);
    out << '\n';
  }
  out << "question: " << t.question << "\nanswer: " << t.answer << "\nprediction: " << t.predicted << '\n';
  return out.str();
}

}  // namespace workmem
