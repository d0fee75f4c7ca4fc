#include "couple/calibration.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace couple::calibration {

std::vector<AnnotatedExample> load_annotated_file(
    const std::string& path, std::shared_ptr<const values::ValueSystem> system) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open annotated dataset '" + path + "'");
  std::vector<AnnotatedExample> dataset;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const nlohmann::json doc = nlohmann::json::parse(line);
      AnnotatedExample example;
      example.question = doc.at("question").get<std::string>();
      example.response = doc.at("response").get<std::string>();
      example.human_scores = values::profile_from_json(doc.at("scores"), system);
      dataset.push_back(std::move(example));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Config,
                  path + ":" + std::to_string(line_no) + ": invalid example: " + e.what());
    }
  }
  if (dataset.empty()) throw Error(ErrorKind::Config, "annotated dataset '" + path + "' is empty");
  return dataset;
}

namespace {

std::string stance_of(const std::string& response) {
  try {
    return prompts::to_string(prompts::parse_final_answer(response).stance);
  } catch (const Error&) {
    return "unspecified";
  }
}

std::string render_score_format(const std::vector<std::string>& dims) {
  std::string out;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out += '\n';
    out += dims[i] + ": [score]";
  }
  return out;
}

}  // namespace

CriteriaEvaluation evaluate_criteria(const std::string& criteria,
                                     const std::vector<AnnotatedExample>& dataset,
                                     llm::ChatBackend& judge,
                                     const prompts::TemplateSet& templates) {
  if (dataset.empty()) throw Error(ErrorKind::Precondition, "empty annotated dataset");

  CriteriaEvaluation result;
  result.per_example.resize(dataset.size());
  result.inferred.resize(dataset.size());
  std::vector<std::optional<std::pair<ErrorKind, std::string>>> backend_errors(dataset.size());

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= dataset.size()) return;
      const AnnotatedExample& example = dataset[i];
      std::vector<std::string> dims;
      for (const auto& [dim, _] : example.human_scores.scores()) dims.push_back(dim);
      const auto& system = *example.human_scores.system();
      std::vector<llm::ChatExchange> sink;
      try {
        auto parser = [&](const std::string& text) {
          return prompts::parse_score_block(text, dims, system.scale_min(), system.scale_max());
        };
        const prompts::ScoreBlock block = llm::complete_parsed(
            judge, templates.get(prompts::TemplateId::value_evaluation),
            {{"background", system.background_text()},
             {"criteria", criteria},
             {"question", example.question},
             {"stance", stance_of(example.response)},
             {"answer", example.response},
             {"dimensions", render_score_format(dims)}},
            parser, "judge", sink);
        double sum = 0.0;
        for (const auto& [dim, score] : block.entries) {
          sum += std::abs(score - example.human_scores.score(dim));
        }
        result.per_example[i] = sum / static_cast<double>(block.entries.size());
        result.inferred[i] = block;
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::ParseExhausted) {
          // Unscorable example: excluded, reported via excluded_count.
        } else {
          backend_errors[i] = std::make_pair(e.kind(), std::string(e.what()));
        }
      }
    }
  };

  const int workers = std::max(
      1, std::min<int>(judge.config().max_parallel, static_cast<int>(dataset.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& thread : pool) thread.join();
  }

  for (const auto& error : backend_errors) {
    if (error) throw Error(error->first, error->second);
  }

  double sum = 0.0;
  int scored = 0;
  for (const auto& delta : result.per_example) {
    if (delta) {
      sum += *delta;
      ++scored;
    } else {
      ++result.excluded_count;
    }
  }
  if (scored == 0 ||
      result.excluded_count * 5 > static_cast<int>(dataset.size())) {  // > 20% excluded
    throw Error(ErrorKind::ParseExhausted,
                std::to_string(result.excluded_count) + " of " + std::to_string(dataset.size()) +
                    " examples were unscorable; calibration aborted");
  }
  result.mean_disagreement = sum / static_cast<double>(scored);
  return result;
}

std::string refine_criteria(const std::string& current,
                            const std::vector<AnnotatedExample>& dataset,
                            const CriteriaEvaluation& evaluation, llm::ChatBackend& refiner,
                            const prompts::TemplateSet& templates) {
  bool any_disagreement = false;
  for (const auto& delta : evaluation.per_example) {
    if (delta && *delta > 0.0) any_disagreement = true;
  }
  if (!any_disagreement) {
    throw Error(ErrorKind::Precondition, "nothing to refine: all disagreements are zero");
  }

  // The 10 highest-disagreement examples bound the prompt size.
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (evaluation.per_example[i]) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return *evaluation.per_example[a] > *evaluation.per_example[b];
  });
  if (order.size() > 10) order.resize(10);

  std::ostringstream examples;
  for (const std::size_t i : order) {
    const AnnotatedExample& example = dataset[i];
    examples << "\nExample " << (i + 1) << ":\n"
             << "Question: " << example.question << '\n'
             << "Answer: " << example.response << '\n';
    for (const auto& [dim, human] : example.human_scores.scores()) {
      examples << dim << ": human expert score " << human;
      if (evaluation.inferred[i]) {
        examples << ", LLM score " << evaluation.inferred[i]->score(dim);
      }
      examples << '\n';
    }
  }

  std::vector<llm::ChatExchange> sink;
  auto parser = [](const std::string& text) {
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw Error(ErrorKind::Parse, "empty criteria candidate");
    }
    return text;
  };
  return llm::complete_parsed(refiner, templates.get(prompts::TemplateId::criteria_calibration),
                              {{"current_criteria", current}, {"examples", examples.str()}},
                              parser, "refine", sink);
}

CalibrationResult calibrate(const std::string& initial_criteria,
                            const std::vector<AnnotatedExample>& dataset, llm::ChatBackend& judge,
                            llm::ChatBackend& refiner, int max_iters, int patience,
                            const prompts::TemplateSet& templates) {
  if (max_iters < 1) throw Error(ErrorKind::Precondition, "max_iters must be >= 1");
  if (patience < 1) throw Error(ErrorKind::Precondition, "patience must be >= 1");

  CalibrationResult result;
  auto push_version = [&](const std::string& text, const CriteriaEvaluation& evaluation,
                          bool no_change) {
    CriteriaVersion version;
    version.text = text;
    version.mean_disagreement = evaluation.mean_disagreement;
    version.per_example = evaluation.per_example;
    version.inferred = evaluation.inferred;
    version.excluded_count = evaluation.excluded_count;
    version.no_change = no_change;
    result.versions.push_back(std::move(version));
  };

  try {
    CriteriaEvaluation current = evaluate_criteria(initial_criteria, dataset, judge, templates);
    push_version(initial_criteria, current, false);
    std::string current_text = initial_criteria;

    if (current.mean_disagreement == 0.0) return result;

    int non_improving = 0;
    for (int iteration = 1; iteration <= max_iters; ++iteration) {
      const std::string candidate =
          refine_criteria(current_text, dataset, current, refiner, templates);
      const CriteriaEvaluation evaluated =
          evaluate_criteria(candidate, dataset, judge, templates);
      push_version(candidate, evaluated, candidate == current_text);
      result.iterations_run = iteration;

      const double best_mean = result.best().mean_disagreement;
      if (evaluated.mean_disagreement < best_mean) {
        result.best_index = static_cast<int>(result.versions.size()) - 1;
        non_improving = 0;
      } else {
        ++non_improving;
        if (non_improving >= patience) break;
      }
      if (evaluated.mean_disagreement == 0.0) break;
      current = evaluated;
      current_text = candidate;
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Precondition || e.kind() == ErrorKind::Config) throw;
    result.aborted_error = e.what();
  }
  return result;
}

}  // namespace couple::calibration
