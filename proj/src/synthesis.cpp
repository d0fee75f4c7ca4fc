#include "couple/synthesis.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace couple::synthesis {

const char* to_string(TrainingKind kind) {
  return kind == TrainingKind::naive ? "naive" : "reasoning";
}

TrainingKind kind_from_string(std::string_view name) {
  if (name == "naive") return TrainingKind::naive;
  if (name == "reasoning") return TrainingKind::reasoning;
  throw Error(ErrorKind::Config, "unknown training kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Question synthesis

namespace {

std::string question_prompt(const std::vector<std::string>& seeds, int batch, int batch_index) {
  std::ostringstream out;
  out << "You are helping build an evaluation corpus. Generate " << batch
      << " diverse opinion-seeking questions that probe human values, similar in form to "
         "\"Should we subsidize Wikipedia?\".\n";
  if (!seeds.empty()) {
    out << "Topics to draw from:";
    for (const std::string& seed : seeds) out << ' ' << seed << ';';
    out << '\n';
  }
  if (batch_index > 1) out << "Batch " << batch_index << ": avoid repeating earlier questions.\n";
  out << "\nOutput Format:\nOne question per line, each ending with a question mark.\n";
  return out.str();
}

std::vector<std::string> parse_questions(const std::string& text) {
  std::vector<std::string> questions;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || std::isspace(static_cast<unsigned char>(line.back())))) {
      line.pop_back();
    }
    std::size_t begin = 0;
    while (begin < line.size() && (std::isspace(static_cast<unsigned char>(line[begin])) ||
                                   line[begin] == '-' || line[begin] == '*')) {
      ++begin;
    }
    // strip "12." / "12)" enumeration
    std::size_t digits = begin;
    while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) ++digits;
    if (digits > begin && digits < line.size() && (line[digits] == '.' || line[digits] == ')')) {
      begin = digits + 1;
      while (begin < line.size() && std::isspace(static_cast<unsigned char>(line[begin]))) ++begin;
    }
    const std::string candidate = line.substr(begin);
    if (!candidate.empty() && candidate.back() == '?') questions.push_back(candidate);
  }
  if (questions.empty()) throw Error(ErrorKind::Parse, "no questions in reply");
  return questions;
}

}  // namespace

std::vector<std::string> synthesize_questions(const std::vector<std::string>& topic_seeds, int n,
                                              llm::ChatBackend& backend, SynthesisStats* stats) {
  if (n < 1) throw Error(ErrorKind::Precondition, "n must be >= 1");

  const int batch = std::min(n, 20);
  const int max_calls = 2 * ((n + batch - 1) / batch) + 2;

  std::vector<std::string> unique;
  std::set<std::string> seen;
  int calls = 0;
  int duplicates = 0;
  while (static_cast<int>(unique.size()) < n && calls < max_calls) {
    ++calls;
    std::vector<llm::ChatExchange> sink;
    const std::vector<std::string> questions = llm::complete_parsed_text(
        backend, "", question_prompt(topic_seeds, batch, calls),
        [](const std::string& text) { return parse_questions(text); }, "synthesize", sink);
    bool any_new = false;
    for (const std::string& question : questions) {
      if (seen.insert(question).second) {
        unique.push_back(question);
        any_new = true;
      } else {
        ++duplicates;
      }
    }
    if (!any_new) break;  // the backend has nothing new to offer
  }
  if (unique.empty()) throw Error(ErrorKind::Parse, "no unique questions generated");
  if (static_cast<int>(unique.size()) > n) unique.resize(static_cast<std::size_t>(n));
  if (stats) {
    stats->calls = calls;
    stats->duplicates_removed = duplicates;
    stats->shortfall = static_cast<int>(unique.size()) < n;
  }
  return unique;
}

// ---------------------------------------------------------------------------
// Dataset export

namespace {

constexpr const char* kAttributionHeader = "Value Attribution:";
constexpr const char* kRelationHeader = "Value-Concept Relation:";
constexpr const char* kConceptsHeader = "Counterfactual Concepts:";
constexpr const char* kFinalHeader = "Final Response:";

std::string system_message(const causal::CounterfactualRecord& record) {
  return "Your response should reflect the following value priorities (1 = not important at all, "
         "5 = very important):\n" +
         causal::render_value_scores(record.target_profile, record.relevant_dims);
}

std::string reasoning_content(const causal::CounterfactualRecord& record) {
  std::ostringstream out;
  out << kAttributionHeader << '\n'
      << causal::render_value_scores(record.attributed_profile, record.relevant_dims) << "\n\n"
      << kRelationHeader << '\n'
      << record.value_concept_relation << "\n\n"
      << kConceptsHeader << '\n'
      << prompts::to_text(record.counterfactual_concepts) << "\n\n"
      << kFinalHeader << '\n';
  if (record.final_answer) {
    out << prompts::to_text(*record.final_answer);
  } else {
    out << record.final_response;
  }
  return out.str();
}

}  // namespace

void export_dataset(const std::vector<causal::CounterfactualRecord>& records, TrainingKind kind,
                    std::ostream& out, ExportStats* stats) {
  if (records.empty()) throw Error(ErrorKind::Precondition, "no records to export");
  ExportStats local;
  for (const causal::CounterfactualRecord& record : records) {
    if (!record.ok()) {
      throw Error(ErrorKind::Precondition,
                  "record " + record.question_id + " failed at stage " + record.failed_at_stage);
    }
    if (kind == TrainingKind::reasoning) {
      if (record.mode != causal::PipelineMode::full) {
        throw Error(ErrorKind::Precondition,
                    "reasoning export needs full-mode records, got mode " +
                        std::string(causal::to_string(record.mode)) + " for " +
                        record.question_id);
      }
      if (!record.intervened) {
        // No counterfactual trace exists for a pass-through record.
        ++local.skipped_without_trace;
        continue;
      }
    }
    nlohmann::json messages = nlohmann::json::array();
    messages.push_back({{"role", "system"}, {"content", system_message(record)}});
    messages.push_back({{"role", "user"}, {"content", record.question}});
    messages.push_back(
        {{"role", "assistant"},
         {"content", kind == TrainingKind::naive ? record.final_response
                                                 : reasoning_content(record)}});
    out << nlohmann::json{{"schema_version", 1},
                          {"kind", to_string(kind)},
                          {"messages", std::move(messages)}}
               .dump()
        << '\n';
    ++local.exported;
  }
  if (local.exported == 0) {
    throw Error(ErrorKind::Precondition, "no record was exportable for kind " +
                                             std::string(to_string(kind)));
  }
  if (stats) *stats = local;
}

NaiveRecord recover_naive(const std::string& line,
                          std::shared_ptr<const values::ValueSystem> system) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("invalid dataset line: ") + e.what());
  }
  NaiveRecord record;
  std::string system_text;
  for (const auto& message : doc.at("messages")) {
    const std::string role = message.at("role").get<std::string>();
    const std::string content = message.at("content").get<std::string>();
    if (role == "system") system_text = content;
    if (role == "user") record.question = content;
    if (role == "assistant") record.response = content;
  }
  std::map<std::string, int> scores;
  std::istringstream in(system_text);
  std::string text_line;
  while (std::getline(in, text_line)) {
    const std::size_t colon = text_line.find(':');
    if (colon == std::string::npos) continue;
    const std::string name = text_line.substr(0, colon);
    const std::string* dim = system->find(name);
    if (!dim) continue;
    try {
      scores[*dim] = std::stoi(text_line.substr(colon + 1));
    } catch (const std::exception&) {
      continue;
    }
  }
  record.target = values::ValueProfile(std::move(system), scores);
  return record;
}

ReasoningSections split_reasoning_content(const std::string& content) {
  auto section = [&](const char* header, const char* next_header) {
    const std::size_t begin = content.find(header);
    if (begin == std::string::npos) {
      throw Error(ErrorKind::Parse, std::string("missing section ") + header);
    }
    const std::size_t body = begin + std::string(header).size();
    std::size_t end = next_header ? content.find(next_header, body) : std::string::npos;
    if (next_header && end == std::string::npos) {
      throw Error(ErrorKind::Parse, std::string("missing section ") + next_header);
    }
    return content.substr(body, end == std::string::npos ? end : end - body);
  };
  ReasoningSections sections;
  sections.attribution = section(kAttributionHeader, kRelationHeader);
  sections.relation_trace = section(kRelationHeader, kConceptsHeader);
  sections.concepts = section(kConceptsHeader, kFinalHeader);
  sections.final_answer = section(kFinalHeader, nullptr);
  return sections;
}

}  // namespace couple::synthesis
