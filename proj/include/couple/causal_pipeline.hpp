#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "couple/llm_backend.hpp"
#include "couple/prompt_protocol.hpp"
#include "couple/value_model.hpp"

namespace couple::causal {

enum class PipelineMode { full, no_scm, no_concepts, no_counterfactual, value_prompt };

const char* to_string(PipelineMode mode);
PipelineMode mode_from_string(std::string_view name);

// Stage labels as they appear in exchange logs.
namespace stage {
inline constexpr const char* relevance = "relevance";
inline constexpr const char* original = "original";
inline constexpr const char* concepts = "concepts";
inline constexpr const char* scores = "scores";
inline constexpr const char* cf_concepts = "cf_concepts";
inline constexpr const char* final = "final";
}  // namespace stage

struct PipelineConfig {
  int theta = 0;  // intervene when the attribution deviates by more than this
  std::pair<int, int> concept_words{prompts::kConceptMinWords, prompts::kConceptMaxWords};
  std::shared_ptr<llm::ChatBackend> attribution_backend;
  std::shared_ptr<llm::ChatBackend> generation_backend;
  PipelineMode mode = PipelineMode::full;
  int relevant_k = 5;
  std::string criteria;  // defaults to the calibrated five-level criteria
  const prompts::TemplateSet* templates = nullptr;  // defaults to embedded
  llm::ParsePolicy parse_policy;

  void validate() const;
};

struct CorpusEntry {
  std::string id;
  std::string question;
  std::optional<std::vector<std::string>> relevant_dims;  // precomputed, skips the backend call
};

std::vector<CorpusEntry> load_corpus_file(const std::string& path);

/// Full trace of one alignment run.
struct CounterfactualRecord {
  std::string question_id;
  std::string question;
  PipelineMode mode = PipelineMode::full;
  int theta = 0;
  std::vector<std::string> relevant_dims;
  std::string original_response;
  prompts::ConceptList extracted_concepts;        // from the original response
  std::string residual;                           // original response minus concept spans
  values::ValueProfile attributed_profile;        // inferred from the original response
  std::string value_concept_relation;             // dimension:score => concept trace
  values::ValueProfile target_profile;            // restricted to relevant dims
  bool intervened = false;
  prompts::ConceptList counterfactual_concepts;
  std::optional<prompts::FinalAnswer> final_answer;
  std::string final_response;
  std::vector<llm::ChatExchange> exchanges;
  std::string failed_at_stage;  // empty on success
  std::string error;

  bool ok() const { return failed_at_stage.empty(); }
};

nlohmann::json record_to_json(const CounterfactualRecord& record);
CounterfactualRecord record_from_json(const nlohmann::json& doc,
                                      std::shared_ptr<const values::ValueSystem> system);
void write_records(std::ostream& out, const std::vector<CounterfactualRecord>& records);
std::vector<CounterfactualRecord> read_records_file(
    const std::string& path, std::shared_ptr<const values::ValueSystem> system);

struct AttributionResult {
  values::ValueProfile profile;        // v' on the relevant dimensions
  prompts::ConceptList concepts;       // extracted from the response
  std::string residual;                // response text outside concept spans
  std::string relation_trace;          // dimension:score => concept lines
};

struct PredictionResult {
  prompts::ConceptList concepts;       // one slot per target dimension
  prompts::FinalAnswer answer;
  std::string raw_response;
};

/// True when the attributed profile deviates from the target by strictly
/// more than theta (L1).
bool should_intervene(const values::ValueProfile& attributed, const values::ValueProfile& target,
                      int theta);

/// Case-insensitive removal of each concept's matched span from the
/// response; falls back to the whole response when nothing matches.
std::string elide_concept_spans(const std::string& response, const prompts::ConceptList& concepts);

class Pipeline {
 public:
  Pipeline(std::shared_ptr<const values::ValueSystem> system, PipelineConfig config);

  const PipelineConfig& config() const { return config_; }
  const std::shared_ptr<const values::ValueSystem>& system() const { return system_; }

  /// At most k system dimensions judged most relevant to the question.
  std::vector<std::string> relevant_dimensions(const std::string& question,
                                               std::vector<llm::ChatExchange>& sink);

  std::string generate_original(const std::string& question, const values::ValueProfile& target,
                                std::vector<llm::ChatExchange>& sink);

  AttributionResult attribute(const std::string& question, const std::string& response,
                              const std::vector<std::string>& relevant_dims,
                              std::vector<llm::ChatExchange>& sink);

  PredictionResult predict(const std::string& question, const values::ValueProfile& target,
                           const CounterfactualRecord& so_far,
                           std::vector<llm::ChatExchange>& sink);

  /// Runs the whole mode-dependent flow; stage errors yield a partial record
  /// tagged failed_at_stage instead of throwing.
  CounterfactualRecord align(const CorpusEntry& entry, const values::ValueProfile& target);

 private:
  const prompts::PromptTemplate& tmpl(prompts::TemplateId id) const;
  std::string background() const;

  std::shared_ptr<const values::ValueSystem> system_;
  PipelineConfig config_;
};

/// Aligns every entry, up to `parallel` at a time; output order follows
/// input order regardless of completion order.
std::vector<CounterfactualRecord> align_batch(Pipeline& pipeline,
                                              const std::vector<CorpusEntry>& entries,
                                              const values::ValueProfile& target, int parallel);

// Rendering helpers shared with evaluation and synthesis.
std::string render_value_scores(const values::ValueProfile& profile,
                                const std::vector<std::string>& order);
std::string render_score_format(const std::vector<std::string>& dims);
std::string render_value_descriptions(const values::ValueProfile& target,
                                      const std::vector<std::string>& order,
                                      const values::ValueSystem& system);

}  // namespace couple::causal
