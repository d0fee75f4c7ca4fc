#pragma once

// Shared scripted-backend scenarios for pipeline-level tests.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "couple/causal_pipeline.hpp"
#include "couple/llm_backend.hpp"
#include "couple/value_model.hpp"

namespace test_support {

using namespace couple;

// Distinctive phrases of each embedded template, for scripted matching.
inline constexpr const char* kMarkOriginal = "Please answer the following question";
inline constexpr const char* kMarkValuePrompt = "value priorities";
inline constexpr const char* kMarkConcepts = "extract key concepts for each value";
inline constexpr const char* kMarkScores = "extract the values and scores from the concepts";
inline constexpr const char* kMarkCfConcepts = "generate concepts related to a specific value";
inline constexpr const char* kMarkFinal = "Generate an answer for the question based on the concept";
inline constexpr const char* kMarkJudge = "evaluating how strongly the values are reflected";
inline constexpr const char* kMarkRelevance = "Select at most";

inline constexpr const char* kOriginalResponse =
    "<answer>\nStance: no\nKey Points:\n1. Freedom: families decide freely.\n</answer>";

inline constexpr const char* kFinalResponse =
    "<answer>\nStance: yes\nKey Points:\n1. Safety: protects children.\n2. Conformity: shared "
    "norms.\n</answer>";

inline llm::BackendConfig scripted_config(const std::string& model_id = "scripted-aligned",
                                          int max_parallel = 4) {
  llm::BackendConfig config;
  config.model_id = model_id;
  config.max_parallel = max_parallel;
  config.backoff_base = std::chrono::milliseconds(0);
  return config;
}

/// Rules for one question flowing through every stage; `scores_reply`
/// controls the attributed profile and thereby the intervention decision.
inline std::vector<llm::ScriptedRule> standard_rules(
    const std::string& question,
    const std::string& scores_reply = "Security: 2\nSelf-direction: 5") {
  return {
      {{kMarkValuePrompt, question}, kOriginalResponse},
      {{kMarkOriginal, question}, kOriginalResponse},
      {{kMarkConcepts, question}, "[families decide freely, safety is secondary]"},
      {{kMarkScores, question}, scores_reply},
      {{kMarkCfConcepts, question},
       "<answer>\n(state schooling keeps children safe)\n(freedom must be limited for "
       "children)\n</answer>"},
      {{kMarkFinal, question}, kFinalResponse},
      {{kMarkRelevance, question}, "[Security, Self-direction]"},
  };
}

inline std::shared_ptr<llm::ScriptedBackend> scripted(std::vector<llm::ScriptedRule> rules,
                                                      const std::string& model_id = "scripted-aligned") {
  return std::make_shared<llm::ScriptedBackend>(scripted_config(model_id), std::move(rules));
}

inline values::ValueProfile target_profile() {
  return values::ValueProfile(values::ValueSystem::schwartz10(),
                              {{"Security", 5}, {"Self-direction", 1}});
}

inline causal::CorpusEntry entry(const std::string& id, const std::string& question,
                                 bool precomputed_dims = true) {
  causal::CorpusEntry e;
  e.id = id;
  e.question = question;
  if (precomputed_dims) e.relevant_dims = std::vector<std::string>{"Security", "Self-direction"};
  return e;
}

inline causal::PipelineConfig pipeline_config(std::shared_ptr<llm::ChatBackend> backend,
                                              causal::PipelineMode mode = causal::PipelineMode::full,
                                              int theta = 0) {
  causal::PipelineConfig config;
  config.mode = mode;
  config.theta = theta;
  config.attribution_backend = backend;
  config.generation_backend = backend;
  return config;
}

inline std::vector<std::string> stages_of(const causal::CounterfactualRecord& record) {
  std::vector<std::string> stages;
  for (const auto& exchange : record.exchanges) stages.push_back(exchange.stage);
  return stages;
}

}  // namespace test_support
