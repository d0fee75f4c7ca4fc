#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "couple/causal_pipeline.hpp"
#include "couple/llm_backend.hpp"
#include "couple/value_model.hpp"

namespace couple::evaluation {

struct JudgeConfig {
  std::shared_ptr<llm::ChatBackend> judge;
  std::string aligned_model_id;
  /// The judge model must differ from the aligned model unless overridden.
  bool allow_same_model = false;
  std::string criteria;  // defaults to the calibrated five-level criteria
  const prompts::TemplateSet* templates = nullptr;
  llm::ParsePolicy parse_policy;

  void validate() const;
};

/// Scores the values expressed by a response, restricted to the relevant
/// dimensions; extra dimensions returned by the judge are dropped and
/// reported through `warnings`.
values::ValueProfile judge_response(const std::string& question, const std::string& response,
                                    const std::vector<std::string>& relevant_dims,
                                    std::shared_ptr<const values::ValueSystem> system,
                                    const JudgeConfig& config,
                                    std::vector<llm::ChatExchange>& sink,
                                    std::vector<std::string>* warnings = nullptr);

struct EvaluationRow {
  std::string question_id;
  values::ValueProfile judged_profile;
  double mae = 0.0;
  std::optional<double> spearman;  // absent when undefined (constant profile or d < 2)
  bool priority_preserved = false;
  double preserved_fraction = 0.0;
  int deviation = -1;  // attribution deviation from the target, -1 when unknown
  bool excluded = false;
  std::string exclusion_reason;
};

struct EvaluationReport {
  static constexpr int kSchemaVersion = 1;
  std::string target_profile_id;
  std::string judge_model_id;
  std::string aligned_model_id;
  std::vector<EvaluationRow> per_question;  // ordered by question id
  double mean_mae = 0.0;
  double mean_spearman = 0.0;
  int spearman_defined = 0;
  double preservation_rate = 0.0;
  int n = 0;  // rows included in the aggregates
  int excluded_count = 0;
};

EvaluationReport evaluate_batch(const std::vector<causal::CounterfactualRecord>& records,
                                const std::string& target_profile_id, const JudgeConfig& config);

nlohmann::json report_to_json(const EvaluationReport& report);
void write_report_csv(std::ostream& out, const EvaluationReport& report);
/// Aligned plain-text aggregate table, one row per profile.
void write_report_table(std::ostream& out, const EvaluationReport& report);
/// Per-question (deviation, mae) pairs for deviation-sweep plots.
void write_deviation_csv(std::ostream& out, const EvaluationReport& report);

// ---------------------------------------------------------------------------
// Portrait-questionnaire scoring: 40 items on a 1-6 scale mapped onto the
// ten-dimension system, normalized to [0, 1].

struct PvqAnswers {
  std::vector<int> item_scores;       // exactly 40, each in [1, 6]
  std::vector<std::string> item_map;  // dimension per item, covers all 10 dimensions
};

PvqAnswers load_pvq(const std::string& answers_path, const std::string& mapping_path,
                    const values::ValueSystem& system);

std::map<std::string, double> pvq_score(const PvqAnswers& answers,
                                        const values::ValueSystem& system);

double pvq_mae(const std::map<std::string, double>& model_profile,
               const std::map<std::string, double>& target_profile);

// ---------------------------------------------------------------------------
// Interpretability: word frequencies of the counterfactual concepts
// generated for one (dimension, priority) cell.

struct WordCount {
  std::string word;
  int count = 0;
  bool operator==(const WordCount&) const = default;
};

std::vector<WordCount> concept_frequency(const std::vector<causal::CounterfactualRecord>& records,
                                         const std::string& dimension, int priority, int top_k);

/// Lowercases and splits on non-alphanumeric runs; no stop-word removal.
std::vector<std::string> tokenize(std::string_view text);

// ---------------------------------------------------------------------------
// Corpus preparation: rewrites argument statements into opinion-seeking
// questions ("We should X." -> "Should we X?"); idempotent.

std::vector<std::string> corpus_prepare(const std::vector<std::string>& statements);

}  // namespace couple::evaluation
