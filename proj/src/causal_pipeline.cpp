#include "couple/causal_pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace couple::causal {

namespace {

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

constexpr const char* kNotProvided = "(not provided)";
constexpr const char* kNone = "(none)";

std::string concepts_inline(const prompts::ConceptList& list) {
  std::string out = "[";
  for (std::size_t i = 0; i < list.concepts.size(); ++i) {
    if (i) out += ", ";
    out += list.concepts[i].skip ? prompts::kSkipSentinel : list.concepts[i].text;
  }
  out += "]";
  return out;
}

std::optional<prompts::FinalAnswer> try_parse_final(const std::string& text) {
  try {
    return prompts::parse_final_answer(text);
  } catch (const Error&) {
    return std::nullopt;
  }
}

/// complete() with the exchange (also a failed one) appended to the sink.
llm::ChatExchange complete_raw(llm::ChatBackend& backend, const std::string& user_text,
                               const std::string& stage, std::vector<llm::ChatExchange>& sink) {
  try {
    llm::ChatExchange exchange = backend.complete("", user_text, stage);
    sink.push_back(exchange);
    return exchange;
  } catch (const llm::CallFailed& failed) {
    llm::ChatExchange logged = failed.exchange();
    logged.stage = stage;
    sink.push_back(std::move(logged));
    throw;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Mode names

const char* to_string(PipelineMode mode) {
  switch (mode) {
    case PipelineMode::full: return "full";
    case PipelineMode::no_scm: return "no_scm";
    case PipelineMode::no_concepts: return "no_concepts";
    case PipelineMode::no_counterfactual: return "no_counterfactual";
    case PipelineMode::value_prompt: return "value_prompt";
  }
  return "full";
}

PipelineMode mode_from_string(std::string_view name) {
  for (PipelineMode mode : {PipelineMode::full, PipelineMode::no_scm, PipelineMode::no_concepts,
                            PipelineMode::no_counterfactual, PipelineMode::value_prompt}) {
    if (name == to_string(mode)) return mode;
  }
  throw Error(ErrorKind::Config, "unknown pipeline mode '" + std::string(name) + "'");
}

void PipelineConfig::validate() const {
  if (theta < 0) throw Error(ErrorKind::Config, "theta must be >= 0");
  if (relevant_k < 1 || relevant_k > 5) throw Error(ErrorKind::Config, "relevant_k must be in [1, 5]");
  if (!attribution_backend || !generation_backend) {
    throw Error(ErrorKind::Config, "pipeline needs attribution and generation backends");
  }
  if (concept_words.first < 1 || concept_words.second < concept_words.first) {
    throw Error(ErrorKind::Config, "invalid concept word bounds");
  }
}

// ---------------------------------------------------------------------------
// Corpus files

std::vector<CorpusEntry> load_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open corpus file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, "invalid JSON in '" + path + "': " + e.what());
  }
  const nlohmann::json* items = &doc;
  if (doc.is_object() && doc.contains("questions")) items = &doc.at("questions");
  if (!items->is_array()) throw Error(ErrorKind::Config, "corpus must be a JSON array");

  std::vector<CorpusEntry> entries;
  int counter = 0;
  for (const auto& item : *items) {
    CorpusEntry entry;
    ++counter;
    if (item.is_string()) {
      entry.question = item.get<std::string>();
    } else {
      entry.question = item.at("question").get<std::string>();
      entry.id = item.value("id", "");
      if (item.contains("relevant_dims")) {
        entry.relevant_dims = item.at("relevant_dims").get<std::vector<std::string>>();
      }
    }
    if (entry.id.empty()) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "q%04d", counter);
      entry.id = buf;
    }
    if (entry.question.empty()) throw Error(ErrorKind::Config, "corpus entry with empty question");
    entries.push_back(std::move(entry));
  }
  if (entries.empty()) throw Error(ErrorKind::Config, "corpus is empty");
  return entries;
}

// ---------------------------------------------------------------------------
// Record JSON

nlohmann::json record_to_json(const CounterfactualRecord& r) {
  auto concepts_json = [](const prompts::ConceptList& list) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : list.concepts) arr.push_back({{"text", c.text}, {"skip", c.skip}});
    return arr;
  };
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["question_id"] = r.question_id;
  doc["question"] = r.question;
  doc["mode"] = to_string(r.mode);
  doc["theta"] = r.theta;
  doc["system"] = r.target_profile.system() ? r.target_profile.system()->name() : "";
  doc["relevant_dims"] = r.relevant_dims;
  doc["original_response"] = r.original_response;
  doc["extracted_concepts"] = concepts_json(r.extracted_concepts);
  doc["residual"] = r.residual;
  doc["attributed_profile"] = r.attributed_profile.system()
                                  ? values::profile_to_json(r.attributed_profile)
                                  : nlohmann::json();
  doc["value_concept_relation"] = r.value_concept_relation;
  doc["target_profile"] =
      r.target_profile.system() ? values::profile_to_json(r.target_profile) : nlohmann::json();
  doc["intervened"] = r.intervened;
  doc["counterfactual_concepts"] = concepts_json(r.counterfactual_concepts);
  if (r.final_answer) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : r.final_answer->key_points) {
      points.push_back({{"point", p.point}, {"justification", p.justification}});
    }
    doc["final_answer"] = {{"stance", prompts::to_string(r.final_answer->stance)},
                           {"key_points", std::move(points)}};
  } else {
    doc["final_answer"] = nlohmann::json();
  }
  doc["final_response"] = r.final_response;
  doc["failed_at_stage"] = r.failed_at_stage;
  doc["error"] = r.error;
  nlohmann::json exchanges = nlohmann::json::array();
  for (const auto& e : r.exchanges) exchanges.push_back(llm::exchange_to_json(e));
  doc["exchanges"] = std::move(exchanges);
  return doc;
}

CounterfactualRecord record_from_json(const nlohmann::json& doc,
                                      std::shared_ptr<const values::ValueSystem> system) {
  auto concepts_from = [](const nlohmann::json& arr) {
    prompts::ConceptList list;
    for (const auto& c : arr) {
      list.concepts.push_back({c.at("text").get<std::string>(), c.value("skip", false)});
    }
    return list;
  };
  CounterfactualRecord r;
  r.question_id = doc.at("question_id").get<std::string>();
  r.question = doc.at("question").get<std::string>();
  r.mode = mode_from_string(doc.at("mode").get<std::string>());
  r.theta = doc.value("theta", 0);
  const std::string declared = doc.value("system", "");
  if (!declared.empty() && declared != system->name()) {
    throw Error(ErrorKind::Config, "record uses system '" + declared + "' but '" +
                                       system->name() + "' is configured");
  }
  r.relevant_dims = doc.value("relevant_dims", std::vector<std::string>{});
  r.original_response = doc.value("original_response", "");
  r.extracted_concepts = concepts_from(doc.value("extracted_concepts", nlohmann::json::array()));
  r.residual = doc.value("residual", "");
  if (doc.contains("attributed_profile") && !doc.at("attributed_profile").is_null()) {
    r.attributed_profile = values::profile_from_json(doc.at("attributed_profile"), system);
  }
  r.value_concept_relation = doc.value("value_concept_relation", "");
  if (doc.contains("target_profile") && !doc.at("target_profile").is_null()) {
    r.target_profile = values::profile_from_json(doc.at("target_profile"), system);
  }
  r.intervened = doc.value("intervened", false);
  r.counterfactual_concepts =
      concepts_from(doc.value("counterfactual_concepts", nlohmann::json::array()));
  if (doc.contains("final_answer") && !doc.at("final_answer").is_null()) {
    prompts::FinalAnswer answer;
    const auto& fa = doc.at("final_answer");
    const std::string stance = fa.at("stance").get<std::string>();
    if (stance == "yes") answer.stance = prompts::Stance::yes;
    else if (stance == "no") answer.stance = prompts::Stance::no;
    else answer.stance = prompts::Stance::neutral;
    for (const auto& p : fa.at("key_points")) {
      answer.key_points.push_back(
          {p.at("point").get<std::string>(), p.value("justification", "")});
    }
    r.final_answer = std::move(answer);
  }
  r.final_response = doc.value("final_response", "");
  r.failed_at_stage = doc.value("failed_at_stage", "");
  r.error = doc.value("error", "");
  for (const auto& e : doc.value("exchanges", nlohmann::json::array())) {
    r.exchanges.push_back(llm::exchange_from_json(e));
  }
  return r;
}

void write_records(std::ostream& out, const std::vector<CounterfactualRecord>& records) {
  for (const auto& record : records) out << record_to_json(record).dump() << '\n';
}

std::vector<CounterfactualRecord> read_records_file(
    const std::string& path, std::shared_ptr<const values::ValueSystem> system) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open record file '" + path + "'");
  std::vector<CounterfactualRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line), system));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Config, path + ":" + std::to_string(line_no) +
                                         ": invalid record: " + e.what());
    }
  }
  if (records.empty()) throw Error(ErrorKind::Config, "record file '" + path + "' is empty");
  return records;
}

// ---------------------------------------------------------------------------
// Residual computation

namespace {

struct Span {
  std::size_t begin;
  std::size_t end;
};

/// Longest common substring; returns (position in haystack, length).
std::pair<std::size_t, std::size_t> longest_common_span(const std::string& haystack,
                                                        const std::string& needle) {
  const std::size_t n = haystack.size();
  const std::size_t m = needle.size();
  if (n == 0 || m == 0) return {0, 0};
  std::vector<std::size_t> prev(m + 1, 0), curr(m + 1, 0);
  std::size_t best_len = 0, best_pos = 0;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      if (haystack[i - 1] == needle[j - 1]) {
        curr[j] = prev[j - 1] + 1;
        if (curr[j] > best_len) {
          best_len = curr[j];
          best_pos = i - curr[j];
        }
      } else {
        curr[j] = 0;
      }
    }
    std::swap(prev, curr);
  }
  return {best_pos, best_len};
}

}  // namespace

std::string elide_concept_spans(const std::string& response,
                                const prompts::ConceptList& concepts) {
  const std::string response_lower = lower(response);
  std::vector<Span> spans;
  for (const auto& item : concepts.concepts) {
    if (item.skip || item.text.empty()) continue;
    const std::string needle = lower(item.text);
    std::size_t pos = response_lower.find(needle);
    std::size_t len = needle.size();
    if (pos == std::string::npos) {
      // Best-effort fuzzy match: longest shared span, if it is substantial.
      const auto [fuzzy_pos, fuzzy_len] = longest_common_span(response_lower, needle);
      const std::size_t minimum = std::max<std::size_t>(4, needle.size() / 2);
      if (fuzzy_len < minimum) continue;
      pos = fuzzy_pos;
      len = fuzzy_len;
    }
    spans.push_back({pos, pos + len});
  }
  if (spans.empty()) return response;

  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
  std::string residual;
  std::size_t cursor = 0;
  for (const Span& span : spans) {
    if (span.begin > cursor) residual += response.substr(cursor, span.begin - cursor);
    cursor = std::max(cursor, span.end);
  }
  if (cursor < response.size()) residual += response.substr(cursor);
  return residual;
}

// ---------------------------------------------------------------------------
// Rendering helpers

std::string render_value_scores(const values::ValueProfile& profile,
                                const std::vector<std::string>& order) {
  std::ostringstream out;
  bool first = true;
  for (const std::string& dim : order) {
    if (!profile.has(dim)) continue;
    if (!first) out << '\n';
    out << dim << ": " << profile.score(dim);
    first = false;
  }
  return out.str();
}

std::string render_score_format(const std::vector<std::string>& dims) {
  std::ostringstream out;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out << '\n';
    out << dims[i] << ": [score]";
  }
  return out.str();
}

std::string render_value_descriptions(const values::ValueProfile& target,
                                      const std::vector<std::string>& order,
                                      const values::ValueSystem& system) {
  std::ostringstream out;
  for (const std::string& dim : order) {
    const int score = target.score(dim);
    out << "- " << dim << " (score " << score << ")";
    const std::string& description = system.description(dim);
    if (!description.empty()) out << ": " << description;
    out << '\n';
    std::string relations;
    std::string priorities;
    for (const std::string& other : order) {
      if (other == dim) continue;
      if (!relations.empty()) relations += "; ";
      relations += other + ": " + values::to_string(system.relation(dim, other));
      const int other_score = target.score(other);
      const char* cmp = score > other_score ? " > " : (score < other_score ? " < " : " = ");
      if (!priorities.empty()) priorities += "; ";
      priorities += dim + ": " + std::to_string(score) + cmp + other + ": " +
                    std::to_string(other_score);
    }
    if (!relations.empty()) {
      out << "  Relations: " << relations << '\n';
      out << "  Relative priority: " << priorities << '\n';
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(std::shared_ptr<const values::ValueSystem> system, PipelineConfig config)
    : system_(std::move(system)), config_(std::move(config)) {
  if (!system_) throw Error(ErrorKind::Config, "pipeline needs a value system");
  config_.validate();
  if (config_.criteria.empty()) config_.criteria = prompts::kCalibratedCriteria;
  if (!config_.templates) config_.templates = &prompts::TemplateSet::embedded_defaults();
}

const prompts::PromptTemplate& Pipeline::tmpl(prompts::TemplateId id) const {
  return config_.templates->get(id);
}

std::string Pipeline::background() const { return system_->background_text(); }

bool should_intervene(const values::ValueProfile& attributed, const values::ValueProfile& target,
                      int theta) {
  return values::deviation(attributed, target) > theta;
}

std::vector<std::string> Pipeline::relevant_dimensions(const std::string& question,
                                                       std::vector<llm::ChatExchange>& sink) {
  if (question.empty()) throw Error(ErrorKind::Precondition, "empty question");
  std::ostringstream prompt;
  prompt << "Background:\n"
         << background() << '\n'
         << "Select at most " << config_.relevant_k
         << " value dimensions from the list above that are most relevant to the question "
            "below, ordered from most to least relevant.\n\n"
         << "Question: " << question << "\n\n"
         << "Output Format:\n[dimension1, dimension2, ...]\n";

  auto parser = [&](const std::string& text) {
    const prompts::ConceptList list = prompts::parse_concept_list(text, 1, 8);
    std::vector<std::string> dims;
    for (const auto& item : list.concepts) {
      if (item.skip) continue;
      const std::string* canonical = system_->find(item.text);
      if (!canonical) {
        throw Error(ErrorKind::Parse, "returned dimension outside system: '" + item.text + "'");
      }
      if (std::find(dims.begin(), dims.end(), *canonical) == dims.end()) {
        dims.push_back(*canonical);
      }
    }
    if (dims.empty()) throw Error(ErrorKind::Parse, "no dimensions returned");
    if (dims.size() > static_cast<std::size_t>(config_.relevant_k)) {
      dims.resize(static_cast<std::size_t>(config_.relevant_k));
    }
    return dims;
  };
  return llm::complete_parsed_text(*config_.attribution_backend, "", prompt.str(), parser,
                                   stage::relevance, sink, config_.parse_policy);
}

std::string Pipeline::generate_original(const std::string& question,
                                        const values::ValueProfile& target,
                                        std::vector<llm::ChatExchange>& sink) {
  if (question.empty()) throw Error(ErrorKind::Precondition, "empty question");
  std::string prompt;
  if (config_.mode == PipelineMode::value_prompt) {
    std::vector<std::string> order(target.scores().size());
    std::transform(target.scores().begin(), target.scores().end(), order.begin(),
                   [](const auto& entry) { return entry.first; });
    prompt = tmpl(prompts::TemplateId::value_prompt)
                 .render({{"question", question},
                          {"value_scores", render_value_scores(target, order)}});
  } else {
    prompt = tmpl(prompts::TemplateId::raw_question).render({{"question", question}});
  }
  return complete_raw(*config_.generation_backend, prompt, stage::original, sink).response;
}

AttributionResult Pipeline::attribute(const std::string& question, const std::string& response,
                                      const std::vector<std::string>& relevant_dims,
                                      std::vector<llm::ChatExchange>& sink) {
  if (response.empty()) throw Error(ErrorKind::Precondition, "empty response");

  std::string stance = "unspecified";
  if (auto parsed = try_parse_final(response)) stance = prompts::to_string(parsed->stance);

  AttributionResult result;
  if (config_.mode != PipelineMode::no_concepts) {
    auto concept_parser = [&](const std::string& text) {
      return prompts::parse_concept_list(text, config_.concept_words.first,
                                         config_.concept_words.second);
    };
    result.concepts = llm::complete_parsed(
        *config_.attribution_backend, tmpl(prompts::TemplateId::concept_extraction),
        {{"background", background()},
         {"criteria", config_.criteria},
         {"question", question},
         {"stance", stance},
         {"answer", response}},
        concept_parser, stage::concepts, sink, config_.parse_policy);
    result.residual = elide_concept_spans(response, result.concepts);
  } else {
    // Direct scoring on the raw response: no concept layer.
    result.residual = response;
  }

  const std::string concepts_text =
      result.concepts.empty() ? response : concepts_inline(result.concepts);
  auto score_parser = [&](const std::string& text) {
    return prompts::parse_score_block(text, relevant_dims, system_->scale_min(),
                                      system_->scale_max());
  };
  const prompts::ScoreBlock block = llm::complete_parsed(
      *config_.attribution_backend, tmpl(prompts::TemplateId::value_extraction),
      {{"background", background()},
       {"criteria", config_.criteria},
       {"concepts", concepts_text},
       {"question", question},
       {"dimensions", render_score_format(relevant_dims)}},
      score_parser, stage::scores, sink, config_.parse_policy);

  std::map<std::string, int> scores;
  for (const auto& [dim, score] : block.entries) scores[dim] = score;
  result.profile = values::ValueProfile(system_, scores);

  std::ostringstream trace;
  const std::size_t rows = std::max(relevant_dims.size(), result.concepts.size());
  for (std::size_t i = 0; i < rows; ++i) {
    if (i) trace << '\n';
    if (i < relevant_dims.size()) {
      trace << relevant_dims[i] << ": " << result.profile.score(relevant_dims[i]);
    } else {
      trace << "-";
    }
    trace << " => ";
    if (i < result.concepts.size()) {
      const auto& item = result.concepts.concepts[i];
      trace << (item.skip ? prompts::kSkipSentinel : item.text);
    } else {
      trace << "-";
    }
  }
  result.relation_trace = trace.str();
  return result;
}

PredictionResult Pipeline::predict(const std::string& question,
                                   const values::ValueProfile& target,
                                   const CounterfactualRecord& so_far,
                                   std::vector<llm::ChatExchange>& sink) {
  const std::vector<std::string>& dims = so_far.relevant_dims;
  const bool from_scratch = config_.mode == PipelineMode::no_counterfactual;

  std::string original_concept = kNone;
  if (from_scratch) {
    original_concept = kNotProvided;
  } else if (!so_far.extracted_concepts.empty()) {
    original_concept = concepts_inline(so_far.extracted_concepts);
  }
  std::string original_scores = kNone;
  if (from_scratch) {
    original_scores = kNotProvided;
  } else if (so_far.attributed_profile.system()) {
    original_scores = render_value_scores(so_far.attributed_profile, dims);
  }

  PredictionResult result;
  if (config_.mode != PipelineMode::no_scm) {
    const std::size_t d = dims.size();
    auto cf_parser = [&](const std::string& text) {
      prompts::ConceptList list = prompts::parse_concept_list(text, config_.concept_words.first,
                                                              config_.concept_words.second);
      // One slot per target dimension, with one slot of slack either way.
      const std::size_t lo = d > 1 ? d - 1 : 1;
      const std::size_t hi = d + 1;
      if (list.size() < lo || list.size() > hi) {
        throw Error(ErrorKind::Parse, "expected about " + std::to_string(d) +
                                          " concept slots, got " + std::to_string(list.size()));
      }
      return list;
    };
    result.concepts = llm::complete_parsed(
        *config_.generation_backend, tmpl(prompts::TemplateId::counterfactual_concepts),
        {{"background", background()},
         {"criteria", config_.criteria},
         {"original_concept", original_concept},
         {"original_value_scores", original_scores},
         {"question", question},
         {"values", render_value_descriptions(target, dims, *system_)}},
        cf_parser, stage::cf_concepts, sink, config_.parse_policy);
  }

  std::string concepts_binding;
  if (config_.mode == PipelineMode::no_scm) {
    // Directly from the target profile: no concept layer was built.
    concepts_binding = render_value_scores(target, dims);
  } else {
    std::ostringstream lines;
    for (const auto& item : result.concepts.concepts) {
      lines << '(' << (item.skip ? prompts::kSkipSentinel : item.text) << ")\n";
    }
    concepts_binding = lines.str();
  }
  const std::string original_answer = from_scratch ? kNotProvided : so_far.original_response;

  auto final_parser = [&](const std::string& text) { return prompts::parse_final_answer(text); };
  result.answer = llm::complete_parsed(
      *config_.generation_backend, tmpl(prompts::TemplateId::final_response),
      {{"background", background()},
       {"criteria", config_.criteria},
       {"concepts", concepts_binding},
       {"question", question},
       {"original_concept", original_concept},
       {"original_answer", original_answer}},
      final_parser, stage::final, sink, config_.parse_policy);
  result.raw_response = sink.back().response;
  return result;
}

CounterfactualRecord Pipeline::align(const CorpusEntry& entry,
                                     const values::ValueProfile& target) {
  CounterfactualRecord record;
  record.question_id = entry.id;
  record.question = entry.question;
  record.mode = config_.mode;
  record.theta = config_.theta;

  std::string current_stage = stage::relevance;
  try {
    std::vector<std::string> dims;
    if (entry.relevant_dims && !entry.relevant_dims->empty()) {
      for (const std::string& dim : *entry.relevant_dims) {
        const std::string& canonical = system_->canonical(dim);
        if (std::find(dims.begin(), dims.end(), canonical) == dims.end()) {
          dims.push_back(canonical);
        }
      }
      if (dims.size() > static_cast<std::size_t>(config_.relevant_k)) {
        dims.resize(static_cast<std::size_t>(config_.relevant_k));
      }
    } else {
      dims = relevant_dimensions(entry.question, record.exchanges);
    }
    // Only dimensions the target actually scores can be aligned.
    std::vector<std::string> usable;
    for (const std::string& dim : dims) {
      if (target.has(dim)) usable.push_back(dim);
    }
    if (usable.empty()) {
      throw Error(ErrorKind::Precondition,
                  "no relevant dimension is scored by the target profile");
    }
    record.relevant_dims = usable;
    record.target_profile = target.restricted_to(usable);

    current_stage = stage::original;
    record.original_response = generate_original(entry.question, record.target_profile,
                                                 record.exchanges);

    if (config_.mode == PipelineMode::value_prompt) {
      record.final_response = record.original_response;
      record.final_answer = try_parse_final(record.final_response);
      return record;
    }

    if (config_.mode == PipelineMode::no_scm) {
      // No structural abduction: the counterfactual always runs.
      record.residual = record.original_response;
      record.intervened = true;
    } else {
      current_stage = stage::concepts;
      AttributionResult attribution =
          attribute(entry.question, record.original_response, record.relevant_dims,
                    record.exchanges);
      record.extracted_concepts = attribution.concepts;
      record.residual = attribution.residual;
      record.attributed_profile = attribution.profile;
      record.value_concept_relation = attribution.relation_trace;
      record.intervened =
          should_intervene(record.attributed_profile, record.target_profile, config_.theta);
    }

    if (!record.intervened) {
      record.final_response = record.original_response;
      record.final_answer = try_parse_final(record.final_response);
      return record;
    }

    current_stage = stage::cf_concepts;
    PredictionResult prediction =
        predict(entry.question, record.target_profile, record, record.exchanges);
    record.counterfactual_concepts = prediction.concepts;
    record.final_answer = prediction.answer;
    record.final_response = prediction.raw_response;
    return record;
  } catch (const Error& e) {
    // Prefer the stage of the last failed or appended exchange.
    if (!record.exchanges.empty() && !record.exchanges.back().stage.empty()) {
      record.failed_at_stage = record.exchanges.back().stage;
    } else {
      record.failed_at_stage = current_stage;
    }
    record.error = e.what();
    return record;
  }
}

std::vector<CounterfactualRecord> align_batch(Pipeline& pipeline,
                                              const std::vector<CorpusEntry>& entries,
                                              const values::ValueProfile& target, int parallel) {
  if (entries.empty()) return {};
  const int workers =
      std::max(1, std::min<int>(parallel, static_cast<int>(entries.size())));
  std::vector<CounterfactualRecord> records(entries.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= entries.size()) return;
      records[i] = pipeline.align(entries[i], target);
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& thread : pool) thread.join();
  }
  return records;
}

}  // namespace couple::causal
