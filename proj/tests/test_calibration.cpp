#include <doctest.h>

#include <cmath>

#include "couple/calibration.hpp"
#include "support.hpp"

using namespace couple;
using namespace couple::calibration;
using test_support::kMarkJudge;
using test_support::scripted;
using test_support::scripted_config;

namespace {

auto sys() { return values::ValueSystem::schwartz10(); }

AnnotatedExample example(const std::string& question, int human_score) {
  AnnotatedExample e;
  e.question = question;
  e.response = "<answer>\nStance: yes\nKey Points:\n1. Point: text.\n</answer>";
  e.human_scores = values::ValueProfile(sys(), {{"Benevolence", human_score},
                                                {"Conformity", human_score},
                                                {"Power", human_score},
                                                {"Security", human_score},
                                                {"Tradition", human_score}});
  return e;
}

std::string scores(int b, int c, int p, int s, int t) {
  return "Benevolence: " + std::to_string(b) + "\nConformity: " + std::to_string(c) +
         "\nPower: " + std::to_string(p) + "\nSecurity: " + std::to_string(s) +
         "\nTradition: " + std::to_string(t);
}

/// Judge whose replies depend on the criteria version visible in the prompt
/// plus a refiner chaining CRIT-A -> CRIT-B -> CRIT-C.
std::vector<llm::ScriptedRule> calibration_rules() {
  return {
      // deltas vs human (3,3,3,3,3): A -> 0.8 / 0.8; B -> 0.4 / 0.6; C -> 0.6 / 0.6
      {{kMarkJudge, "CRIT-A", "EXQ1"}, scores(4, 4, 4, 4, 3)},
      {{kMarkJudge, "CRIT-A", "EXQ2"}, scores(2, 2, 2, 2, 3)},
      {{kMarkJudge, "CRIT-B", "EXQ1"}, scores(4, 4, 3, 3, 3)},
      {{kMarkJudge, "CRIT-B", "EXQ2"}, scores(2, 2, 2, 3, 3)},
      {{kMarkJudge, "CRIT-C", "EXQ1"}, scores(4, 4, 4, 3, 3)},
      {{kMarkJudge, "CRIT-C", "EXQ2"}, scores(2, 2, 2, 3, 3)},
      {{"refine and improve the scoring criteria", "Old criteria: CRIT-A"}, "CRIT-B"},
      {{"refine and improve the scoring criteria", "Old criteria: CRIT-B"}, "CRIT-C"},
      {{"refine and improve the scoring criteria", "Old criteria: CRIT-C"}, "CRIT-D"},
  };
}

std::vector<AnnotatedExample> dataset2() { return {example("EXQ1", 3), example("EXQ2", 3)}; }

}  // namespace

TEST_CASE("evaluate_criteria: perfect judge yields zero disagreement") {
  auto judge = scripted({{{kMarkJudge}, scores(3, 3, 3, 3, 3)}}, "scripted-judge");
  const CriteriaEvaluation evaluation = evaluate_criteria("CRIT", dataset2(), *judge);
  CHECK(evaluation.mean_disagreement == 0.0);
  CHECK(evaluation.excluded_count == 0);
  REQUIRE(evaluation.per_example.size() == 2);
  CHECK(*evaluation.per_example[0] == 0.0);
}

TEST_CASE("evaluate_criteria: off-by-one everywhere means delta 1.0") {
  auto judge = scripted({{{kMarkJudge}, scores(4, 4, 4, 4, 4)}}, "scripted-judge");
  const CriteriaEvaluation evaluation = evaluate_criteria("CRIT", dataset2(), *judge);
  CHECK(evaluation.mean_disagreement == 1.0);
}

TEST_CASE("evaluate_criteria: empty dataset is an error") {
  auto judge = scripted({}, "scripted-judge");
  CHECK_THROWS_AS(evaluate_criteria("CRIT", {}, *judge), Error);
}

TEST_CASE("evaluate_criteria: unscorable examples are excluded and counted") {
  std::vector<AnnotatedExample> dataset;
  for (int i = 0; i < 6; ++i) dataset.push_back(example("EXQ" + std::to_string(i), 3));
  auto judge = scripted({{{kMarkJudge, "EXQ5"}, "garbage"},
                         {{kMarkJudge}, scores(3, 3, 3, 3, 3)}},
                        "scripted-judge");
  const CriteriaEvaluation evaluation = evaluate_criteria("CRIT", dataset, *judge);
  CHECK(evaluation.excluded_count == 1);
  CHECK_FALSE(evaluation.per_example[5].has_value());
  CHECK(evaluation.mean_disagreement == 0.0);
}

TEST_CASE("evaluate_criteria: more than 20% excluded aborts") {
  auto judge = scripted({{{kMarkJudge, "EXQ1"}, "garbage"},
                         {{kMarkJudge}, scores(3, 3, 3, 3, 3)}},
                        "scripted-judge");
  CHECK_THROWS_AS(evaluate_criteria("CRIT", dataset2(), *judge), Error);
}

TEST_CASE("evaluate_criteria: delta matches brute-force recomputation") {
  auto judge = scripted(calibration_rules(), "scripted-judge");
  const std::vector<AnnotatedExample> dataset = dataset2();
  const CriteriaEvaluation evaluation = evaluate_criteria("CRIT-A", dataset, *judge);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    REQUIRE(evaluation.inferred[i].has_value());
    double sum = 0;
    int count = 0;
    for (const auto& [dim, human] : dataset[i].human_scores.scores()) {
      sum += std::abs(evaluation.inferred[i]->score(dim) - human);
      ++count;
    }
    CHECK(std::abs(*evaluation.per_example[i] - sum / count) < 1e-12);
  }
  CHECK(evaluation.mean_disagreement == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("refine_criteria: passthrough and preconditions") {
  auto backend = scripted(calibration_rules(), "scripted-judge");
  const std::vector<AnnotatedExample> dataset = dataset2();
  const CriteriaEvaluation evaluation = evaluate_criteria("CRIT-A", dataset, *backend);
  CHECK(refine_criteria("CRIT-A", dataset, evaluation, *backend) == "CRIT-B");

  CriteriaEvaluation zero = evaluation;
  zero.per_example = {0.0, 0.0};
  CHECK_THROWS_AS(refine_criteria("CRIT-A", dataset, zero, *backend), Error);
}

TEST_CASE("calibrate: best version is kept under patience") {
  auto backend = scripted(calibration_rules(), "scripted-judge");
  const CalibrationResult result =
      calibrate("CRIT-A", dataset2(), *backend, *backend, /*max_iters=*/5, /*patience=*/1);
  REQUIRE(result.versions.size() == 3);
  CHECK(result.versions[0].mean_disagreement == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(result.versions[1].mean_disagreement == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(result.versions[2].mean_disagreement == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(result.best_index == 1);
  CHECK(result.best().text == "CRIT-B");
  CHECK(result.iterations_run == 2);
  CHECK_FALSE(result.aborted_error.has_value());
  // the returned best minimizes the disagreement over every evaluated version
  for (const auto& version : result.versions) {
    CHECK(result.best().mean_disagreement <= version.mean_disagreement);
  }
}

TEST_CASE("calibrate: zero initial disagreement returns immediately") {
  // the refiner has no rules, so any refinement call would throw
  auto judge = scripted({{{kMarkJudge}, scores(3, 3, 3, 3, 3)}}, "scripted-judge");
  auto refiner = scripted({}, "scripted-refiner");
  const CalibrationResult result = calibrate("CRIT-A", dataset2(), *judge, *refiner);
  CHECK(result.versions.size() == 1);
  CHECK(result.best_index == 0);
  CHECK(result.iterations_run == 0);
  CHECK(refiner->call_log().empty());
}

TEST_CASE("calibrate: max_iters 1 attempts exactly one refinement") {
  auto backend = scripted(calibration_rules(), "scripted-judge");
  const CalibrationResult result =
      calibrate("CRIT-A", dataset2(), *backend, *backend, /*max_iters=*/1, /*patience=*/2);
  CHECK(result.iterations_run == 1);
  CHECK(result.versions.size() == 2);
  int refine_calls = 0;
  for (const auto& exchange : backend->call_log()) {
    if (exchange.stage == "refine") ++refine_calls;
  }
  CHECK(refine_calls == 1);
}

TEST_CASE("calibrate: backend failure aborts with the partial result preserved") {
  // CRIT-B judging rules are missing, so iteration 1's evaluation fails
  std::vector<llm::ScriptedRule> rules{
      {{kMarkJudge, "CRIT-A", "EXQ1"}, scores(4, 4, 4, 4, 3)},
      {{kMarkJudge, "CRIT-A", "EXQ2"}, scores(2, 2, 2, 2, 3)},
      {{"refine and improve the scoring criteria"}, "CRIT-B"},
  };
  auto backend = scripted(rules, "scripted-judge");
  const CalibrationResult result = calibrate("CRIT-A", dataset2(), *backend, *backend);
  CHECK(result.aborted_error.has_value());
  CHECK(result.versions.size() == 1);
  CHECK(result.best_index == 0);
}

TEST_CASE("no-change candidates are accepted but flagged") {
  std::vector<llm::ScriptedRule> rules{
      {{kMarkJudge, "EXQ1"}, scores(4, 3, 3, 3, 3)},
      {{kMarkJudge, "EXQ2"}, scores(3, 3, 3, 3, 3)},
      {{"refine and improve the scoring criteria"}, "CRIT-A"},  // echoes the current text
  };
  auto backend = scripted(rules, "scripted-judge");
  const CalibrationResult result =
      calibrate("CRIT-A", dataset2(), *backend, *backend, /*max_iters=*/1, /*patience=*/1);
  REQUIRE(result.versions.size() == 2);
  CHECK(result.versions[1].no_change);
}
