#include <doctest.h>

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

#include "couple/evaluation.hpp"
#include "support.hpp"

using namespace couple;
using namespace couple::evaluation;
using test_support::kMarkJudge;
using test_support::scripted;

namespace {

auto sys() { return values::ValueSystem::schwartz10(); }

causal::CounterfactualRecord record(const std::string& id, const std::string& question) {
  causal::CounterfactualRecord r;
  r.question_id = id;
  r.question = question;
  r.mode = causal::PipelineMode::full;
  r.relevant_dims = {"Security", "Self-direction"};
  r.target_profile = values::ValueProfile(sys(), {{"Security", 5}, {"Self-direction", 1}});
  r.attributed_profile = values::ValueProfile(sys(), {{"Security", 3}, {"Self-direction", 2}});
  r.intervened = true;
  r.final_response = "<answer>\nStance: yes\nKey Points:\n1. Safety: protects.\n</answer>";
  return r;
}

JudgeConfig judge_config(std::shared_ptr<llm::ChatBackend> backend,
                         const std::string& aligned = "aligned-model") {
  JudgeConfig config;
  config.judge = std::move(backend);
  config.aligned_model_id = aligned;
  return config;
}

}  // namespace

TEST_CASE("judge_response scores exactly the relevant dimensions") {
  auto backend = scripted({{{kMarkJudge}, "Security: 5\nSelf-direction: 1\nPower: 3"}},
                          "scripted-judge");
  std::vector<llm::ChatExchange> sink;
  std::vector<std::string> warnings;
  const values::ValueProfile profile =
      judge_response("Q?", "some response", {"Security", "Self-direction"}, sys(),
                     judge_config(backend), sink, &warnings);
  CHECK(profile.size() == 2);
  CHECK(profile.score("Security") == 5);
  REQUIRE(warnings.size() == 1);  // Power was extra and got dropped
  CHECK(warnings[0].find("Power") != std::string::npos);
}

TEST_CASE("judge and aligned model must differ unless overridden") {
  auto backend = scripted({{{kMarkJudge}, "Security: 5"}}, "same-model");
  JudgeConfig config = judge_config(backend, "same-model");
  CHECK_THROWS_AS(config.validate(), Error);
  config.allow_same_model = true;
  CHECK_NOTHROW(config.validate());
}

TEST_CASE("evaluate_batch: judge echoing the target is perfect alignment") {
  auto backend = scripted({{{kMarkJudge}, "Security: 5\nSelf-direction: 1"}}, "scripted-judge");
  const std::vector<causal::CounterfactualRecord> records{record("q1", "First?"),
                                                          record("q2", "Second?")};
  const EvaluationReport report = evaluate_batch(records, "profile-x", judge_config(backend));
  CHECK(report.n == 2);
  CHECK(report.mean_mae == 0.0);
  CHECK(report.mean_spearman == 1.0);
  CHECK(report.preservation_rate == 1.0);
  CHECK(report.excluded_count == 0);
  CHECK(report.target_profile_id == "profile-x");
}

TEST_CASE("evaluate_batch: aggregates are plain means over included rows") {
  auto backend = scripted({{{kMarkJudge, "First?"}, "Security: 4\nSelf-direction: 1"},
                           {{kMarkJudge, "Second?"}, "Security: 4\nSelf-direction: 3"}},
                          "scripted-judge");
  const std::vector<causal::CounterfactualRecord> records{record("q1", "First?"),
                                                          record("q2", "Second?")};
  const EvaluationReport report = evaluate_batch(records, "p", judge_config(backend));
  CHECK(report.mean_mae == doctest::Approx(1.0).epsilon(1e-12));  // (0.5 + 1.5) / 2
  CHECK(report.per_question[0].mae == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(report.per_question[1].mae == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(report.per_question[0].deviation == 3);  // from the attributed profile

  // brute-force recomputation from rows
  double sum = 0;
  for (const auto& row : report.per_question) sum += row.mae;
  CHECK(std::abs(report.mean_mae - sum / 2.0) < 1e-12);
}

TEST_CASE("evaluate_batch: unjudgeable rows are excluded, all-excluded is an error") {
  auto garbage = scripted({{{kMarkJudge}, "not scores"}}, "scripted-judge");
  const std::vector<causal::CounterfactualRecord> records{record("q1", "First?")};
  CHECK_THROWS_AS(evaluate_batch(records, "p", judge_config(garbage)), Error);

  auto mixed = scripted({{{kMarkJudge, "First?"}, "Security: 5\nSelf-direction: 1"},
                         {{kMarkJudge, "Second?"}, "garbage"}},
                        "scripted-judge");
  const std::vector<causal::CounterfactualRecord> two{record("q1", "First?"),
                                                      record("q2", "Second?")};
  const EvaluationReport report = evaluate_batch(two, "p", judge_config(mixed));
  CHECK(report.n == 1);
  CHECK(report.excluded_count == 1);
  CHECK(report.per_question[1].excluded);
}

TEST_CASE("evaluate_batch: failed pipeline records count as excluded coverage") {
  auto backend = scripted({{{kMarkJudge}, "Security: 5\nSelf-direction: 1"}}, "scripted-judge");
  causal::CounterfactualRecord broken = record("q0", "Broken?");
  broken.failed_at_stage = "scores";
  const std::vector<causal::CounterfactualRecord> records{broken, record("q1", "First?")};
  const EvaluationReport report = evaluate_batch(records, "p", judge_config(backend));
  CHECK(report.n == 1);
  CHECK(report.excluded_count == 1);
  CHECK(report.per_question[0].question_id == "q0");  // rows sorted by id
  CHECK(report.per_question[0].excluded);
}

TEST_CASE("report row order is deterministic by question id") {
  auto backend = scripted({{{kMarkJudge}, "Security: 5\nSelf-direction: 1"}}, "scripted-judge");
  const std::vector<causal::CounterfactualRecord> records{record("q2", "Second?"),
                                                          record("q1", "First?")};
  const EvaluationReport report = evaluate_batch(records, "p", judge_config(backend));
  CHECK(report.per_question[0].question_id == "q1");
  CHECK(report.per_question[1].question_id == "q2");

  const nlohmann::json doc = report_to_json(report);
  CHECK(doc.at("schema_version").get<int>() == 1);
  CHECK(doc.at("rows").size() == 2);

  std::ostringstream csv;
  write_report_csv(csv, report);
  CHECK(csv.str().find("question_id,excluded,mae") == 0);
}

// ---------------------------------------------------------------------------
// PVQ

namespace {

PvqAnswers pvq(int fill) {
  PvqAnswers answers;
  answers.item_scores.assign(40, fill);
  for (const auto& dim : sys()->dimensions()) {
    for (int i = 0; i < 4; ++i) answers.item_map.push_back(dim);
  }
  return answers;
}

}  // namespace

TEST_CASE("pvq endpoints and midpoint") {
  const auto zeros = pvq_score(pvq(1), *sys());
  const auto ones = pvq_score(pvq(6), *sys());
  for (const auto& dim : sys()->dimensions()) {
    CHECK(zeros.at(dim) == 0.0);
    CHECK(ones.at(dim) == 1.0);
  }

  PvqAnswers mixed = pvq(1);
  // give one dimension the items (2, 3, 4, 5): mean 3.5 -> 0.5
  int next = 2;
  for (std::size_t i = 0; i < mixed.item_map.size(); ++i) {
    if (mixed.item_map[i] == "Security") mixed.item_scores[i] = next++;
  }
  CHECK(pvq_score(mixed, *sys()).at("Security") == 0.5);
}

TEST_CASE("pvq is monotone in every item score") {
  PvqAnswers base = pvq(3);
  const auto before = pvq_score(base, *sys());
  base.item_scores[7] += 1;
  const auto after = pvq_score(base, *sys());
  const std::string& dim = base.item_map[7];
  CHECK(after.at(dim) > before.at(dim));
  for (const auto& [name, value] : after) {
    if (name != dim) CHECK(value == before.at(name));
  }
}

TEST_CASE("pvq invariants") {
  PvqAnswers wrong_count = pvq(3);
  wrong_count.item_scores.pop_back();
  wrong_count.item_map.pop_back();
  CHECK_THROWS_AS(pvq_score(wrong_count, *sys()), Error);

  PvqAnswers out_of_range = pvq(3);
  out_of_range.item_scores[0] = 7;
  CHECK_THROWS_AS(pvq_score(out_of_range, *sys()), Error);

  PvqAnswers unknown_dim = pvq(3);
  unknown_dim.item_map[0] = "NotADimension";
  CHECK_THROWS_AS(pvq_score(unknown_dim, *sys()), Error);
}

TEST_CASE("pvq mae") {
  const auto a = pvq_score(pvq(3), *sys());
  CHECK(pvq_mae(a, a) == 0.0);
  std::map<std::string, double> shifted = a;
  for (auto& [dim, value] : shifted) value += 0.1;
  CHECK(pvq_mae(a, shifted) == doctest::Approx(0.1).epsilon(1e-12));
  std::map<std::string, double> smaller(a);
  smaller.erase(smaller.begin());
  CHECK_THROWS_AS(pvq_mae(a, smaller), Error);
}

// ---------------------------------------------------------------------------
// concept frequency

namespace {

causal::CounterfactualRecord concept_record(const std::string& id, const std::string& phrase) {
  causal::CounterfactualRecord r;
  r.question_id = id;
  r.mode = causal::PipelineMode::full;
  r.relevant_dims = {"Universalism"};
  r.target_profile = values::ValueProfile(sys(), {{"Universalism", 5}});
  r.intervened = true;
  r.counterfactual_concepts.concepts.push_back({phrase, false});
  return r;
}

}  // namespace

TEST_CASE("concept frequency matches the hand count with lexicographic ties") {
  const std::vector<causal::CounterfactualRecord> records{
      concept_record("q1", "global welfare for all"),
      concept_record("q2", "welfare for all people"),
  };
  const auto counts = concept_frequency(records, "Universalism", 5, 10);
  CHECK(counts == std::vector<WordCount>{
                      {"all", 2}, {"for", 2}, {"welfare", 2}, {"global", 1}, {"people", 1}});

  // invariant to record order
  const std::vector<causal::CounterfactualRecord> reversed{records[1], records[0]};
  CHECK(concept_frequency(reversed, "Universalism", 5, 10) == counts);

  // top_k larger than the vocabulary returns the full list; smaller truncates
  CHECK(concept_frequency(records, "Universalism", 5, 2) ==
        std::vector<WordCount>{{"all", 2}, {"for", 2}});
}

TEST_CASE("concept frequency errors") {
  const std::vector<causal::CounterfactualRecord> records{
      concept_record("q1", "global welfare for all")};
  CHECK_THROWS_AS(concept_frequency(records, "Universalism", 5, 0), Error);
  CHECK_THROWS_AS(concept_frequency(records, "Universalism", 1, 5), Error);  // wrong priority
  CHECK_THROWS_AS(concept_frequency(records, "Power", 5, 5), Error);         // wrong dimension
}

TEST_CASE("tokenize lowercases and splits on non-alphanumeric runs") {
  CHECK(tokenize("Global-Welfare, for ALL!") ==
        std::vector<std::string>{"global", "welfare", "for", "all"});
  CHECK(tokenize("").empty());
}

// ---------------------------------------------------------------------------
// corpus preparation

TEST_CASE("corpus_prepare rewrites statements into questions") {
  const std::vector<std::string> out = corpus_prepare({
      "We should subsidize Wikipedia.",
      "Cannabis is harmful.",
      "Should we ban fast food?",
      "we should entrench the right to housing.",
  });
  REQUIRE(out.size() == 4);
  CHECK(out[0] == "Should we subsidize Wikipedia?");
  CHECK(out[1] == "Do you agree that cannabis is harmful?");
  CHECK(out[2] == "Should we ban fast food?");
  CHECK(out[3] == "Should we entrench the right to housing?");
}

TEST_CASE("corpus_prepare is idempotent") {
  const std::vector<std::string> statements{
      "We should subsidize Wikipedia.", "Cannabis is harmful.", "Already a question?"};
  const auto once = corpus_prepare(statements);
  CHECK(corpus_prepare(once) == once);
}
