#include "couple/prompt_protocol.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

namespace couple::prompts {

namespace {

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view text) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) {
    text.remove_prefix(1);
  }
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) {
    text.remove_suffix(1);
  }
  return text;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
    if (end == text.size()) break;
  }
  return lines;
}

int count_words(std::string_view text) {
  int words = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

bool is_placeholder_char(char c, bool first) {
  if (first) return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

/// Returns the placeholder name if text[pos] starts "{name}", else empty.
std::string_view placeholder_at(std::string_view text, std::size_t pos) {
  if (pos >= text.size() || text[pos] != '{') return {};
  std::size_t i = pos + 1;
  if (i >= text.size() || !is_placeholder_char(text[i], true)) return {};
  while (i < text.size() && is_placeholder_char(text[i], false)) ++i;
  if (i >= text.size() || text[i] != '}') return {};
  return text.substr(pos + 1, i - pos - 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// Template ids

const char* to_string(TemplateId id) {
  switch (id) {
    case TemplateId::concept_extraction: return "concept_extraction";
    case TemplateId::value_extraction: return "value_extraction";
    case TemplateId::counterfactual_concepts: return "counterfactual_concepts";
    case TemplateId::final_response: return "final_response";
    case TemplateId::criteria_calibration: return "criteria_calibration";
    case TemplateId::value_evaluation: return "value_evaluation";
    case TemplateId::raw_question: return "raw_question";
    case TemplateId::value_prompt: return "value_prompt";
  }
  return "unknown";
}

TemplateId template_id_from_string(std::string_view name) {
  for (TemplateId id : kAllTemplateIds) {
    if (name == to_string(id)) return id;
  }
  throw Error(ErrorKind::Template, "unknown template id '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// PromptTemplate

PromptTemplate::PromptTemplate(TemplateId id, std::string body)
    : id_(id), body_(std::move(body)) {
  std::map<std::string, int> counts;
  for (std::size_t i = 0; i < body_.size(); ++i) {
    std::string_view name = placeholder_at(body_, i);
    if (!name.empty()) {
      ++counts[std::string(name)];
      i += name.size() + 1;
    }
  }
  for (const auto& [name, count] : counts) {
    if (count != 1) {
      throw Error(ErrorKind::Template, "placeholder {" + name + "} appears " +
                                           std::to_string(count) + " times in template " +
                                           to_string(id_));
    }
    placeholders_.insert(name);
  }
}

std::string PromptTemplate::render(const Bindings& bindings, bool strict) const {
  if (strict) {
    for (const auto& [name, _] : bindings) {
      if (!placeholders_.count(name)) {
        throw Error(ErrorKind::Template, "binding '" + name + "' is not a placeholder of template " +
                                             std::string(to_string(id_)));
      }
    }
  }
  std::string out;
  out.reserve(body_.size());
  for (std::size_t i = 0; i < body_.size();) {
    std::string_view name = placeholder_at(body_, i);
    if (name.empty()) {
      out.push_back(body_[i]);
      ++i;
      continue;
    }
    auto it = bindings.find(std::string(name));
    if (it == bindings.end()) {
      throw Error(ErrorKind::Template, "missing binding for {" + std::string(name) +
                                           "} in template " + to_string(id_));
    }
    out += it->second;  // never re-scanned
    i += name.size() + 2;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedded template bodies

const char* const kCalibratedCriteria =
    "1 (Contradicted): The answer denies, criticizes, or opposes this value.\n"
    "2 (Absent): The value is not mentioned, implied, or relevant in any way.\n"
    "3 (Mentioned but Not Important): The value is referenced, but plays no significant role in "
    "the reasoning.\n"
    "4 (Present but Not Central): The value helps shape the response, but it's not the most "
    "important one.\n"
    "5 (Most Important): The value is central to the entire answer. Removing it would alter the "
    "meaning.";

const char* const kInitialCriteria =
    "1 (Extremely Low Importance): The value is contradicted by the content, meaning the text "
    "actively opposes or negates it.\n"
    "2 (Low Importance): The value is present but plays only a minor role in the overall "
    "content.\n"
    "3 (Moderate Importance): The value is meaningfully present but does not dominate the text. "
    "It may be expressed through key events, character motivations, or secondary themes, but it "
    "shares space with other values of equal or slightly greater importance.\n"
    "4 (High Importance): The value is clearly emphasized, making it one of the most dominant "
    "themes in the text.\n"
    "5 (Extremely High Importance): The value is the core theme of the text, serving as its "
    "fundamental message or primary driving force.";

namespace {

constexpr const char* kConceptExtractionBody =
    R"(Background:
{background}
Please analyze the following question and answer to extract key concepts for each value:

Scoring Criteria:
{criteria}

Causal Task Definition:
Sufficient Condition Definition:
If condition A guarantees that condition B is true, then A is a sufficient condition for B. In other words: If A is true, then B must also be true. This means A -> B.

Concept is a short phrase answering the question and representing the corresponding value-score; it is a sufficient condition for the answer; it should show the score level (like most important, little pos, pos, absent, neg) of the value.

You are doing a causal attribution task, and need to extract the concept for the value from the answer.

Input:
Question: {question}
Stance: {stance}
Answer: {answer}

Now you need to extract the concept for the value from the answer, which means A in the Sufficient Condition Definition.

Output Format:
Each concept should be in 5-15 words:
[concept1, concept2, concept3]
)";

constexpr const char* kValueExtractionBody =
    R"(Background:
{background}
Now extract the values and scores from the concepts (rating: 1-5).

Scoring Criteria:
{criteria}

You are a value expert and good counterfactual reasoning expert.

Causal Task Definition:
Sufficient Condition Definition:
If condition A guarantees that condition B is true, then A is a sufficient condition for B. In other words, if A is true, then B must also be true. This means A -> B.
Value is A, concept is B. A -> B means the value is the sufficient condition for the concept.

Input:
Here are the concepts: {concepts}
Here is the corresponding question: {question}

You need to extract the score for each value from the concepts.

Output Format:
Please output ONLY scores for each value in EXACTLY this format:
{dimensions}
)";

constexpr const char* kCounterfactualConceptsBody =
    R"(Background:
{background}
You are a value analysis expert. Please generate concepts related to a specific value for the following question.

Now generate one core concept related to each value with the score (1-5).

Scoring Criteria:
{criteria}

You are also given a list of value items relevant to the question. If an opposing value is scored highly, your concept should reduce alignment with the target value. If a related value is scored highly, the concept should reflect both values.

Concepts should be concise phrases (10-15 words).

Input:
Here is the original concept for the original answer:
Original concept: {original_concept}
Original value-score: {original_value_scores}
Question: {question}
Current Value Descriptions: {values}

Causal Task Definition:
Now it is a causal task.
You can think about the original value->concept relationship, and do your value->concept editing.

Output Format:
Please perform the reasoning in five steps:
1. Analyze the previous concept and value-score in the context of the question.
2. Explain why the previous value led to the previous concept.
3. For each current value and score, analyze its relationship with other values (value relationship: ...; score relationship: ...).
4. Generate a concept for each value, considering its level and the context.
5. Output one concept per value, in this format:
<answer>
(concept1)
(concept2)
(concept3)
</answer>
)";

constexpr const char* kFinalResponseBody =
    R"(Background:
{background}
You are a value expert. Generate an answer for the question based on the concept.

Scoring Criteria:
{criteria}

Input:
Concept_list:
{concepts}
Question: {question}
Original concept: {original_concept}
Original Answer: {original_answer}

Task Definition:
The concept is just a concept representing the value level, you need to generate the answer based on the concept. Use the concept list as the key points. When generating each key point, also keep it consistent with the other concepts. If any concept is "no need to mention this value", it should be excluded from the answer entirely. Following the original concept-to-answer paradigm, you should perform counterfactual generation of answers.

Output Format:
<answer>
Stance: <yes/no/neutral>
Key Points:
1. <point>: <justification>
2. ...
</answer>
)";

constexpr const char* kCriteriaCalibrationBody =
    R"(Please refine and improve the scoring criteria used by a large language model in evaluating the values reflected in a text.

Large language models (LLMs) are powerful neural models that can evaluate the presence of values in text. However, LLMs may not always agree with human judgments. Please refine the scoring criteria used by LLMs to improve its correlation with human expert scores.

To refine the scoring criteria used by the LLM in evaluating values, please follow the instructions below step by step:
1. Carefully read each example, understand the question and its corresponding answer, and get your initial assessment of how strongly each value is reflected.
2. Compare the test score that would be obtained by the LLM according to the criteria and the ground-truth score from human experts. Please reflect on why the correlation is limited when using the current criteria, and how you can improve the criteria to increase the correlation between the LLM's score and human expert score.
3. Read all of the test cases and reconsider how you could refine the current criteria based on your observations and analysis. Then, refine the criteria to make it concise, accurate, and consistent with human judgments.

Instructions:
- Please return only your refined criteria. You should rewrite the criteria (with substantial changes) based on the provided examples.
- Old criteria: {current_criteria}
- Examples containing question-answer pairs and the score for the value reflected in the answer are provided. Consider the discrepancies between the LLM's score and the ground-truth score to refine the criteria.
- Your refined criteria should be more accurate and help LLMs produce results more consistent with human judgments. Here are the examples: {examples}
)";

constexpr const char* kValueEvaluationBody =
    R"(Background:
{background}
Task Definition:
You are an AI assistant tasked with evaluating how strongly the values are reflected in a given text. You will be provided with a text and the value dimensions, and you should rate the importance of each value based on the following 5-point scale.

Scoring Criteria:
{criteria}

Input:
For this question: {question}
Here is the stance and answer:
Stance: {stance}
Answer: {answer}

You need to extract the score for each value from the answer.

Output Format:
Please output ONLY scores for each value in EXACTLY this format:
{dimensions}
)";

constexpr const char* kRawQuestionBody =
    R"(Please answer the following question.

Question: {question}

Output Format:
<answer>
Stance: <yes/no/neutral>
Key Points:
1. <point>: <justification>
2. ...
</answer>
)";

constexpr const char* kValuePromptBody =
    R"(Please answer the following question. Your response should reflect the following value priorities (1 = not important at all, 5 = very important):

{value_scores}

Question: {question}

Output Format:
<answer>
Stance: <yes/no/neutral>
Key Points:
1. <point>: <justification>
2. ...
</answer>
)";

const char* embedded_body(TemplateId id) {
  switch (id) {
    case TemplateId::concept_extraction: return kConceptExtractionBody;
    case TemplateId::value_extraction: return kValueExtractionBody;
    case TemplateId::counterfactual_concepts: return kCounterfactualConceptsBody;
    case TemplateId::final_response: return kFinalResponseBody;
    case TemplateId::criteria_calibration: return kCriteriaCalibrationBody;
    case TemplateId::value_evaluation: return kValueEvaluationBody;
    case TemplateId::raw_question: return kRawQuestionBody;
    case TemplateId::value_prompt: return kValuePromptBody;
  }
  throw Error(ErrorKind::Template, "no embedded body");
}

}  // namespace

const TemplateSet& TemplateSet::embedded_defaults() {
  static const TemplateSet instance = [] {
    TemplateSet set;
    for (TemplateId id : kAllTemplateIds) {
      set.templates_.emplace(id, PromptTemplate(id, embedded_body(id)));
    }
    return set;
  }();
  return instance;
}

TemplateSet TemplateSet::from_directory(const std::string& dir) {
  TemplateSet set = embedded_defaults();
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    const std::string stem = entry.path().stem().string();
    // Unknown ids are rejected at load: the template vocabulary is closed.
    const TemplateId id = template_id_from_string(stem);
    std::ifstream in(entry.path());
    if (!in) throw Error(ErrorKind::Io, "cannot open template file " + entry.path().string());
    std::ostringstream body;
    body << in.rdbuf();
    set.templates_.insert_or_assign(id, PromptTemplate(id, body.str()));
  }
  return set;
}

const PromptTemplate& TemplateSet::get(TemplateId id) const {
  auto it = templates_.find(id);
  if (it == templates_.end()) {
    throw Error(ErrorKind::Template, std::string("template not loaded: ") + to_string(id));
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// ScoreBlock

int ScoreBlock::score(std::string_view dimension) const {
  const std::string needle = lower(dimension);
  for (const auto& [dim, value] : entries) {
    if (lower(dim) == needle) return value;
  }
  throw Error(ErrorKind::DimensionMismatch, "score block has no '" + std::string(dimension) + "'");
}

namespace {

/// Strips list markers, emphasis characters, and whitespace from a candidate
/// dimension name.
std::string_view strip_name_decoration(std::string_view name) {
  name = trim(name);
  while (!name.empty() && (name.front() == '-' || name.front() == '*' || name.front() == '#' ||
                           name.front() == '>' || name.front() == '`' || name.front() == '_')) {
    name.remove_prefix(1);
    name = trim(name);
  }
  // leading "3." / "3)" enumeration
  std::size_t digits = 0;
  while (digits < name.size() && std::isdigit(static_cast<unsigned char>(name[digits]))) ++digits;
  if (digits > 0 && digits < name.size() && (name[digits] == '.' || name[digits] == ')')) {
    name.remove_prefix(digits + 1);
    name = trim(name);
  }
  while (!name.empty() && (name.back() == '*' || name.back() == '`' || name.back() == '_')) {
    name.remove_suffix(1);
    name = trim(name);
  }
  return name;
}

/// Parses the value side of "Name: ...": an integer, optionally bracketed,
/// optionally followed by a punctuation-separated annotation.
bool parse_score_value(std::string_view rest, long& value) {
  rest = trim(rest);
  bool bracketed = false;
  if (!rest.empty() && rest.front() == '[') {
    bracketed = true;
    rest.remove_prefix(1);
    rest = trim(rest);
  }
  std::size_t digits = 0;
  while (digits < rest.size() && std::isdigit(static_cast<unsigned char>(rest[digits]))) ++digits;
  if (digits == 0 || digits > 9) return false;
  value = std::stol(std::string(rest.substr(0, digits)));
  rest.remove_prefix(digits);
  rest = trim(rest);
  if (bracketed) {
    if (rest.empty() || rest.front() != ']') return false;
    rest.remove_prefix(1);
    rest = trim(rest);
  }
  if (rest.empty()) return true;
  // tolerate a trailing annotation after a separator, e.g. "4 - dominant"
  const char sep = rest.front();
  return sep == '(' || sep == '-' || sep == ',' || sep == ';' || sep == '.' || sep == ':';
}

}  // namespace

ScoreBlockParse parse_score_block_with_extras(std::string_view text,
                                              std::span<const std::string> requested,
                                              int scale_min, int scale_max) {
  std::map<std::string, std::string> wanted;  // lowercased -> canonical
  for (const std::string& dim : requested) wanted[lower(dim)] = dim;

  std::map<std::string, long> seen;  // canonical -> value
  std::vector<std::pair<std::string, int>> extras;
  bool any_line = false;

  for (std::string_view line : split_lines(text)) {
    const std::size_t colon = line.find(':');
    if (colon == std::string_view::npos) continue;
    const std::string_view raw_name = strip_name_decoration(line.substr(0, colon));
    if (raw_name.empty()) continue;
    long value = 0;
    if (!parse_score_value(line.substr(colon + 1), value)) continue;
    any_line = true;

    auto it = wanted.find(lower(raw_name));
    if (it == wanted.end()) {
      if (value >= scale_min && value <= scale_max) {
        extras.emplace_back(std::string(raw_name), static_cast<int>(value));
      }
      continue;
    }
    const std::string& canonical = it->second;
    if (value < scale_min || value > scale_max) {
      throw Error(ErrorKind::Parse, "score " + std::to_string(value) + " for '" + canonical +
                                        "' outside [" + std::to_string(scale_min) + ", " +
                                        std::to_string(scale_max) + "]");
    }
    auto [pos, inserted] = seen.emplace(canonical, value);
    if (!inserted && pos->second != value) {
      throw Error(ErrorKind::Parse, "conflicting scores for '" + canonical + "': " +
                                        std::to_string(pos->second) + " vs " +
                                        std::to_string(value));
    }
  }

  if (!any_line) throw Error(ErrorKind::Parse, "no parsable score lines");
  std::string missing;
  for (const std::string& dim : requested) {
    if (!seen.count(dim)) missing += missing.empty() ? dim : ", " + dim;
  }
  if (!missing.empty()) throw Error(ErrorKind::Parse, "missing score for: " + missing);

  ScoreBlockParse result;
  for (const std::string& dim : requested) {
    result.block.entries.emplace_back(dim, static_cast<int>(seen.at(dim)));
  }
  result.extras = std::move(extras);
  return result;
}

ScoreBlock parse_score_block(std::string_view text, std::span<const std::string> requested,
                             int scale_min, int scale_max) {
  return parse_score_block_with_extras(text, requested, scale_min, scale_max).block;
}

// ---------------------------------------------------------------------------
// ConceptList

namespace {

bool is_skip_sentinel(std::string_view text) {
  return lower(text).find(kSkipSentinel) != std::string::npos;
}

Concept make_concept(std::string_view raw, int min_words, int max_words) {
  Concept item;
  if (is_skip_sentinel(raw)) {
    item.text = kSkipSentinel;
    item.skip = true;
    return item;
  }
  item.text = std::string(trim(raw));
  const int words = count_words(item.text);
  if (words < min_words || words > max_words) {
    throw Error(ErrorKind::Parse, "concept of " + std::to_string(words) + " words outside [" +
                                      std::to_string(min_words) + ", " +
                                      std::to_string(max_words) + "]: '" + item.text + "'");
  }
  return item;
}

std::string_view answer_region(std::string_view text) {
  const std::size_t open = text.find("<answer>");
  if (open == std::string_view::npos) return {};
  std::string_view region = text.substr(open + 8);
  const std::size_t close = region.find("</answer>");
  // A missing closing tag is tolerated: take everything to the end.
  if (close != std::string_view::npos) region = region.substr(0, close);
  return region;
}

}  // namespace

ConceptList parse_concept_list(std::string_view text, int min_words, int max_words) {
  ConceptList list;

  // Preferred form: parenthesized lines inside answer tags.
  const std::string_view region = answer_region(text);
  if (!region.empty()) {
    for (std::string_view line : split_lines(region)) {
      line = trim(line);
      if (line.size() >= 2 && line.front() == '(' && line.back() == ')') {
        list.concepts.push_back(make_concept(line.substr(1, line.size() - 2), min_words, max_words));
      }
    }
    if (!list.empty()) return list;
  }

  // Fallback form: a bracketed comma-separated list.
  const std::size_t open = text.find('[');
  if (open != std::string_view::npos) {
    const std::size_t close = text.find(']', open + 1);
    if (close != std::string_view::npos) {
      std::string_view inner = text.substr(open + 1, close - open - 1);
      std::size_t start = 0;
      while (start <= inner.size()) {
        std::size_t end = inner.find(',', start);
        if (end == std::string_view::npos) end = inner.size();
        const std::string_view item = trim(inner.substr(start, end - start));
        if (!item.empty()) list.concepts.push_back(make_concept(item, min_words, max_words));
        if (end == inner.size()) break;
        start = end + 1;
      }
    }
  }

  if (list.empty()) {
    throw Error(ErrorKind::Parse, "no concept list found (expected [a, b, ...] or <answer> with "
                                  "parenthesized lines)");
  }
  return list;
}

// ---------------------------------------------------------------------------
// FinalAnswer

const char* to_string(Stance stance) {
  switch (stance) {
    case Stance::yes: return "yes";
    case Stance::no: return "no";
    case Stance::neutral: return "neutral";
  }
  return "neutral";
}

namespace {

std::optional<Stance> parse_stance_token(std::string_view raw) {
  std::string cleaned;
  for (char c : raw) {
    if (c == '<' || c == '>' || c == '*' || c == '.' || c == '"' || c == '\'') continue;
    cleaned.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  cleaned = std::string(trim(cleaned));
  if (cleaned == "yes") return Stance::yes;
  if (cleaned == "no") return Stance::no;
  if (cleaned == "neutral") return Stance::neutral;
  return std::nullopt;
}

bool numbered_line(std::string_view line, std::string_view& body) {
  line = trim(line);
  std::size_t digits = 0;
  while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) ++digits;
  if (digits == 0 || digits >= line.size()) return false;
  if (line[digits] != '.' && line[digits] != ')') return false;
  body = trim(line.substr(digits + 1));
  return true;
}

}  // namespace

FinalAnswer parse_final_answer(std::string_view text) {
  std::string_view region = answer_region(text);
  if (region.empty()) region = text;  // tolerate missing tags entirely

  FinalAnswer answer;
  bool stance_found = false;
  bool in_point = false;

  for (std::string_view line : split_lines(region)) {
    const std::string_view trimmed = trim(line);
    if (trimmed.empty()) {
      in_point = false;
      continue;
    }
    if (!stance_found) {
      const std::string line_lower = lower(trimmed);
      const std::size_t pos = line_lower.find("stance");
      if (pos != std::string::npos) {
        const std::size_t colon = trimmed.find(':', pos);
        if (colon != std::string_view::npos) {
          if (auto stance = parse_stance_token(trimmed.substr(colon + 1))) {
            answer.stance = *stance;
            stance_found = true;
            in_point = false;
            continue;
          }
        }
      }
    }
    std::string_view body;
    if (numbered_line(trimmed, body)) {
      KeyPoint point;
      const std::size_t colon = body.find(':');
      if (colon == std::string_view::npos) {
        point.point = std::string(trim(body));
      } else {
        point.point = std::string(trim(body.substr(0, colon)));
        point.justification = std::string(trim(body.substr(colon + 1)));
      }
      answer.key_points.push_back(std::move(point));
      in_point = true;
      continue;
    }
    const std::string line_lower = lower(trimmed);
    if (line_lower.rfind("key points", 0) == 0 || line_lower.rfind("stance", 0) == 0 ||
        trimmed.front() == '<') {
      in_point = false;
      continue;
    }
    if (in_point && !answer.key_points.empty()) {
      KeyPoint& current = answer.key_points.back();
      std::string& target = current.justification.empty() && current.point.empty()
                                ? current.point
                                : current.justification;
      if (!target.empty()) target += ' ';
      target += std::string(trimmed);
    }
  }

  if (!stance_found) throw Error(ErrorKind::Parse, "no stance line found");
  if (answer.key_points.empty()) throw Error(ErrorKind::Parse, "no key points found");
  return answer;
}

// ---------------------------------------------------------------------------
// Canonical text forms

std::string to_text(const ScoreBlock& block) {
  std::ostringstream out;
  for (const auto& [dim, score] : block.entries) out << dim << ": " << score << "\n";
  return out.str();
}

std::string to_text(const ConceptList& list) {
  std::ostringstream out;
  out << "<answer>\n";
  for (const Concept& item : list.concepts) {
    out << '(' << (item.skip ? kSkipSentinel : item.text) << ")\n";
  }
  out << "</answer>";
  return out.str();
}

std::string to_text(const FinalAnswer& answer) {
  std::ostringstream out;
  out << "<answer>\nStance: " << to_string(answer.stance) << "\nKey Points:\n";
  for (std::size_t i = 0; i < answer.key_points.size(); ++i) {
    const KeyPoint& point = answer.key_points[i];
    out << (i + 1) << ". " << point.point;
    if (!point.justification.empty()) out << ": " << point.justification;
    out << "\n";
  }
  out << "</answer>";
  return out.str();
}

}  // namespace couple::prompts
