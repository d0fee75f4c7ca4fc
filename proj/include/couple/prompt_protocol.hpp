#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "couple/errors.hpp"

namespace couple::prompts {

// ---------------------------------------------------------------------------
// Templates

enum class TemplateId {
  concept_extraction,
  value_extraction,
  counterfactual_concepts,
  final_response,
  criteria_calibration,
  value_evaluation,
  raw_question,
  value_prompt,
};

inline constexpr TemplateId kAllTemplateIds[] = {
    TemplateId::concept_extraction,  TemplateId::value_extraction,
    TemplateId::counterfactual_concepts, TemplateId::final_response,
    TemplateId::criteria_calibration, TemplateId::value_evaluation,
    TemplateId::raw_question,        TemplateId::value_prompt,
};

const char* to_string(TemplateId id);
TemplateId template_id_from_string(std::string_view name);  // closed world, throws

using Bindings = std::map<std::string, std::string>;

/// Prompt text with {name} placeholders, each required to appear exactly once.
class PromptTemplate {
 public:
  PromptTemplate(TemplateId id, std::string body);

  TemplateId id() const { return id_; }
  const std::string& body() const { return body_; }
  const std::set<std::string>& required_placeholders() const { return placeholders_; }

  /// Single-pass substitution; substituted values are never re-expanded.
  /// Strict mode rejects bindings for names the template does not use.
  std::string render(const Bindings& bindings, bool strict = true) const;

 private:
  TemplateId id_;
  std::string body_;
  std::set<std::string> placeholders_;
};

/// The eight protocol templates, embedded by default and overridable from a
/// directory holding <id>.txt files.
class TemplateSet {
 public:
  static const TemplateSet& embedded_defaults();
  static TemplateSet from_directory(const std::string& dir);

  const PromptTemplate& get(TemplateId id) const;

 private:
  TemplateSet() = default;
  std::map<TemplateId, PromptTemplate> templates_;
};

/// Five-level scoring criteria used by default in every scoring prompt;
/// calibration can produce a replacement.
extern const char* const kCalibratedCriteria;
/// The pre-calibration wording, useful as a calibration starting point.
extern const char* const kInitialCriteria;

// ---------------------------------------------------------------------------
// Output formats

struct ScoreBlock {
  /// Scores in the order they were requested.
  std::vector<std::pair<std::string, int>> entries;

  int score(std::string_view dimension) const;
  bool operator==(const ScoreBlock&) const = default;
};

inline constexpr const char* kSkipSentinel = "no need to mention this value";
inline constexpr int kConceptMinWords = 1;
inline constexpr int kConceptMaxWords = 30;

struct Concept {
  std::string text;
  bool skip = false;  // slot marked "no need to mention this value"
  bool operator==(const Concept&) const = default;
};

struct ConceptList {
  std::vector<Concept> concepts;

  std::size_t size() const { return concepts.size(); }
  bool empty() const { return concepts.empty(); }
  bool operator==(const ConceptList&) const = default;
};

enum class Stance { yes, no, neutral };
const char* to_string(Stance stance);

struct KeyPoint {
  std::string point;
  std::string justification;
  bool operator==(const KeyPoint&) const = default;
};

struct FinalAnswer {
  Stance stance = Stance::neutral;
  std::vector<KeyPoint> key_points;
  bool operator==(const FinalAnswer&) const = default;
};

// ---------------------------------------------------------------------------
// Parsers. All of them absorb whitespace/case/bracket noise but are strict on
// completeness and score range; failures are couple::Error with kind Parse.

struct ScoreBlockParse {
  ScoreBlock block;
  /// "name: score" lines that matched the grammar but not a requested
  /// dimension; callers decide whether these warrant a warning.
  std::vector<std::pair<std::string, int>> extras;
};

ScoreBlockParse parse_score_block_with_extras(std::string_view text,
                                              std::span<const std::string> requested,
                                              int scale_min = 1, int scale_max = 5);
ScoreBlock parse_score_block(std::string_view text, std::span<const std::string> requested,
                             int scale_min = 1, int scale_max = 5);

/// Accepts "[a, b, c]" and "<answer>\n(a)\n(b)\n</answer>"; detects the skip
/// sentinel per slot; enforces the word-count bound on non-skip concepts.
ConceptList parse_concept_list(std::string_view text, int min_words = kConceptMinWords,
                               int max_words = kConceptMaxWords);

/// Extracts the stance line and numbered "N. point: justification" items,
/// tolerating a missing closing tag.
FinalAnswer parse_final_answer(std::string_view text);

// Canonical textual forms; parsing them back yields an equal value.
std::string to_text(const ScoreBlock& block);
std::string to_text(const ConceptList& list);
std::string to_text(const FinalAnswer& answer);

}  // namespace couple::prompts
