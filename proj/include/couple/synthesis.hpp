#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "couple/causal_pipeline.hpp"
#include "couple/llm_backend.hpp"
#include "couple/value_model.hpp"

namespace couple::synthesis {

enum class TrainingKind { naive, reasoning };

const char* to_string(TrainingKind kind);
TrainingKind kind_from_string(std::string_view name);

struct SynthesisStats {
  int calls = 0;
  int duplicates_removed = 0;
  bool shortfall = false;  // fewer unique questions than requested
};

/// Generates up to n unique opinion-seeking questions via batched backend
/// calls; exact duplicates are removed.
std::vector<std::string> synthesize_questions(const std::vector<std::string>& topic_seeds, int n,
                                              llm::ChatBackend& backend,
                                              SynthesisStats* stats = nullptr);

struct ExportStats {
  int exported = 0;
  int skipped_without_trace = 0;  // reasoning export of non-intervened records
};

/// Writes JSON-lines chat records. Naive: system message embeds the target
/// value:score pairs, user is the question, assistant is the final response.
/// Reasoning: the assistant message carries the staged trace sections
/// followed by the final answer block; requires full-mode records.
void export_dataset(const std::vector<causal::CounterfactualRecord>& records, TrainingKind kind,
                    std::ostream& out, ExportStats* stats = nullptr);

/// Recovers (target profile, question, response) from a naive dataset line.
struct NaiveRecord {
  values::ValueProfile target;
  std::string question;
  std::string response;
};
NaiveRecord recover_naive(const std::string& line,
                          std::shared_ptr<const values::ValueSystem> system);

/// Raw text sections of one reasoning-dataset assistant message.
struct ReasoningSections {
  std::string attribution;      // parses as a score block
  std::string relation_trace;
  std::string concepts;         // parses as a concept list
  std::string final_answer;     // parses as a final answer
};
ReasoningSections split_reasoning_content(const std::string& content);

/// Deterministic order-preserving split: the first floor(fraction * n)
/// items form the training set.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_by_order(const std::vector<T>& items,
                                                         double train_fraction = 0.7) {
  const auto cut = static_cast<std::size_t>(static_cast<double>(items.size()) * train_fraction);
  std::vector<T> train(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<T> test(items.begin() + static_cast<std::ptrdiff_t>(cut), items.end());
  return {std::move(train), std::move(test)};
}

}  // namespace couple::synthesis
