#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "couple/llm_backend.hpp"
#include "couple/prompt_protocol.hpp"
#include "couple/value_model.hpp"

namespace couple::calibration {

struct AnnotatedExample {
  std::string question;
  std::string response;
  values::ValueProfile human_scores;
};

/// JSON lines of {"question": ..., "response": ..., "scores": {dim: int}}.
std::vector<AnnotatedExample> load_annotated_file(const std::string& path,
                                                  std::shared_ptr<const values::ValueSystem> system);

struct CriteriaEvaluation {
  double mean_disagreement = 0.0;
  /// Per example: mean |human - inferred| over its scored dimensions;
  /// excluded (unparsable) examples hold no value.
  std::vector<std::optional<double>> per_example;
  std::vector<std::optional<prompts::ScoreBlock>> inferred;
  int excluded_count = 0;
};

/// Scores every example with the given criteria text injected into the
/// judging prompt. Aborts when more than 20% of examples are unparsable.
CriteriaEvaluation evaluate_criteria(const std::string& criteria,
                                     const std::vector<AnnotatedExample>& dataset,
                                     llm::ChatBackend& judge,
                                     const prompts::TemplateSet& templates =
                                         prompts::TemplateSet::embedded_defaults());

/// One refinement call binding the current criteria and the highest-
/// disagreement examples; returns the candidate criteria text.
std::string refine_criteria(const std::string& current,
                            const std::vector<AnnotatedExample>& dataset,
                            const CriteriaEvaluation& evaluation, llm::ChatBackend& refiner,
                            const prompts::TemplateSet& templates =
                                prompts::TemplateSet::embedded_defaults());

struct CriteriaVersion {
  std::string text;
  double mean_disagreement = 0.0;
  std::vector<std::optional<double>> per_example;
  std::vector<std::optional<prompts::ScoreBlock>> inferred;
  int excluded_count = 0;
  bool no_change = false;  // candidate identical to its predecessor
};

struct CalibrationResult {
  std::vector<CriteriaVersion> versions;  // index 0 is the initial criteria
  int best_index = 0;
  int iterations_run = 0;  // refine+evaluate cycles completed
  std::optional<std::string> aborted_error;

  const CriteriaVersion& best() const { return versions.at(static_cast<std::size_t>(best_index)); }
};

/// Iterates evaluate -> refine -> evaluate, keeping the best version; stops
/// at max_iters, at zero disagreement, or after `patience` consecutive
/// non-improving iterations. Backend failures abort with the partial result.
CalibrationResult calibrate(const std::string& initial_criteria,
                            const std::vector<AnnotatedExample>& dataset,
                            llm::ChatBackend& judge, llm::ChatBackend& refiner, int max_iters = 5,
                            int patience = 2,
                            const prompts::TemplateSet& templates =
                                prompts::TemplateSet::embedded_defaults());

}  // namespace couple::calibration
