#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "couple/cli.hpp"
#include "support.hpp"

using namespace couple;
namespace fs = std::filesystem;

namespace {

/// Self-cleaning scratch workspace with a scripted two-question setup.
struct Workspace {
  fs::path dir;

  Workspace() {
    dir = fs::temp_directory_path() /
          ("couple-cli-test-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(dir);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }

  std::string write(const std::string& name, const std::string& content) const {
    const fs::path path = dir / name;
    std::ofstream out(path);
    out << content;
    return path.string();
  }

  std::string read(const std::string& relative) const {
    std::ifstream in(dir / relative);
    REQUIRE(in);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
  }

  void write_standard_setup() const {
    using namespace test_support;
    nlohmann::json rules = nlohmann::json::array();
    auto add_rules = [&](const std::string& question) {
      for (const llm::ScriptedRule& rule : standard_rules(question)) {
        rules.push_back({{"match_all", rule.match_all}, {"response", rule.response}});
      }
    };
    add_rules("First question?");
    add_rules("Second question?");
    // judge rules
    rules.push_back({{"match_all", nlohmann::json::array({kMarkJudge, "First question?"})},
                     {"response", "Security: 5\nSelf-direction: 1"}});
    rules.push_back({{"match_all", nlohmann::json::array({kMarkJudge, "Second question?"})},
                     {"response", "Security: 4\nSelf-direction: 1"}});
    write("rules.json", rules.dump(2));

    write("profiles.json", nlohmann::json{
                               {"system", "schwartz10"},
                               {"profiles",
                                {{"sample", {{"Security", 5}, {"Self-direction", 1}}}}}}
                               .dump(2));
    write("corpus.json",
          nlohmann::json::array(
              {{{"id", "q1"},
                {"question", "First question?"},
                {"relevant_dims", {"Security", "Self-direction"}}},
               {{"id", "q2"},
                {"question", "Second question?"},
                {"relevant_dims", {"Security", "Self-direction"}}}})
              .dump(2));
    write("config.json", nlohmann::json{
                             {"value_system", "schwartz10"},
                             {"profiles_file", "profiles.json"},
                             {"profile", "sample"},
                             {"corpus_file", "corpus.json"},
                             {"output_dir", "out"},
                             {"pipeline",
                              {{"mode", "full"},
                               {"theta", 0},
                               {"attribution_backend",
                                {{"kind", "scripted"},
                                 {"rules_file", "rules.json"},
                                 {"model_id", "scripted-attr"}}},
                               {"generation_backend",
                                {{"kind", "scripted"},
                                 {"rules_file", "rules.json"},
                                 {"model_id", "scripted-gen"}}}}},
                             {"evaluation",
                              {{"judge_backend",
                                {{"kind", "scripted"},
                                 {"rules_file", "rules.json"},
                                 {"model_id", "scripted-judge"}}},
                               {"allow_same_model", false}}}}
                             .dump(2));
  }

  std::string config() const { return (dir / "config.json").string(); }
};

int run(std::vector<std::string> args) { return cli::run_cli(args); }

}  // namespace

TEST_CASE("cli align produces one record per corpus question") {
  Workspace ws;
  ws.write_standard_setup();
  CHECK(run({"align", "--config", ws.config()}) == cli::kExitOk);

  const std::string records = ws.read("out/run-0/records.jsonl");
  int lines = 0;
  std::istringstream in(records);
  std::string line;
  while (std::getline(in, line)) {
    ++lines;
    const nlohmann::json doc = nlohmann::json::parse(line);
    CHECK(doc.at("mode") == "full");
    CHECK(doc.at("intervened").get<bool>());
  }
  CHECK(lines == 2);
  CHECK(ws.read("out/run-0/align_summary.json").find("\"failed\": 0") != std::string::npos);
}

TEST_CASE("cli align in value_prompt mode logs exactly one exchange per record") {
  Workspace ws;
  ws.write_standard_setup();
  CHECK(run({"align", "--config", ws.config(), "--mode", "value_prompt"}) == cli::kExitOk);
  std::istringstream in(ws.read("out/run-0/records.jsonl"));
  std::string line;
  while (std::getline(in, line)) {
    const nlohmann::json doc = nlohmann::json::parse(line);
    CHECK(doc.at("exchanges").size() == 1);
  }
}

TEST_CASE("cli align rejects a missing profile before any backend call") {
  Workspace ws;
  ws.write_standard_setup();
  CHECK(run({"align", "--config", ws.config(), "--profile", "nonexistent"}) == cli::kExitConfig);
  CHECK_FALSE(fs::exists(ws.dir / "out/run-0/records.jsonl"));
}

TEST_CASE("cli evaluate consumes align output") {
  Workspace ws;
  ws.write_standard_setup();
  REQUIRE(run({"align", "--config", ws.config()}) == cli::kExitOk);
  CHECK(run({"evaluate", "--config", ws.config()}) == cli::kExitOk);

  const nlohmann::json report = nlohmann::json::parse(ws.read("out/run-0/report.json"));
  CHECK(report.at("aggregate").at("n").get<int>() == 2);
  // q1 judged (5,1) -> mae 0; q2 judged (4,1) -> mae 0.5
  CHECK(report.at("aggregate").at("mean_mae").get<double>() == doctest::Approx(0.25));
  CHECK(report.at("judge_model_id") == "scripted-judge");
  CHECK(report.at("aligned_model_id") == "scripted-gen");
  CHECK(ws.read("out/run-0/report_rows.csv").find("q1") != std::string::npos);
  CHECK(ws.read("out/run-0/deviation_vs_mae.csv").find("deviation") == 12);  // header line
  const std::string table = ws.read("out/run-0/report_table.txt");
  CHECK(table.find("Profile") != std::string::npos);
  CHECK(table.find("sample") != std::string::npos);
  CHECK(table.find("0.250") != std::string::npos);
}

TEST_CASE("cli evaluate refuses an identical judge and aligned model") {
  Workspace ws;
  ws.write_standard_setup();
  REQUIRE(run({"align", "--config", ws.config()}) == cli::kExitOk);
  CHECK(run({"evaluate", "--config", ws.config(), "--judge-model", "scripted-gen"}) ==
        cli::kExitConfig);
}

TEST_CASE("cli output files are append-only per run id") {
  Workspace ws;
  ws.write_standard_setup();
  REQUIRE(run({"align", "--config", ws.config()}) == cli::kExitOk);
  CHECK(run({"align", "--config", ws.config()}) == cli::kExitConfig);  // records.jsonl exists
  CHECK(run({"align", "--config", ws.config(), "--seed", "1"}) == cli::kExitOk);
}

TEST_CASE("cli runs are byte-identical across repeats") {
  Workspace ws;
  ws.write_standard_setup();
  REQUIRE(run({"align", "--config", ws.config(), "--out", (ws.dir / "a").string()}) ==
          cli::kExitOk);
  REQUIRE(run({"align", "--config", ws.config(), "--out", (ws.dir / "b").string()}) ==
          cli::kExitOk);
  CHECK(ws.read("a/run-0/records.jsonl") == ws.read("b/run-0/records.jsonl"));

  REQUIRE(run({"evaluate", "--config", ws.config(), "--out", (ws.dir / "a").string()}) ==
          cli::kExitOk);
  REQUIRE(run({"evaluate", "--config", ws.config(), "--out", (ws.dir / "b").string()}) ==
          cli::kExitOk);
  CHECK(ws.read("a/run-0/report.json") == ws.read("b/run-0/report.json"));
  CHECK(ws.read("a/run-0/report_rows.csv") == ws.read("b/run-0/report_rows.csv"));
}

TEST_CASE("cli strict mode signals partial failures") {
  Workspace ws;
  ws.write_standard_setup();
  // a corpus question with no scripted rules fails at the original stage
  ws.write("corpus.json",
           nlohmann::json::array({{{"id", "q1"},
                                   {"question", "First question?"},
                                   {"relevant_dims", {"Security", "Self-direction"}}},
                                  {{"id", "qX"},
                                   {"question", "Unscripted question?"},
                                   {"relevant_dims", {"Security", "Self-direction"}}}})
               .dump(2));
  CHECK(run({"align", "--config", ws.config(), "--strict"}) == cli::kExitPartial);
  CHECK(run({"align", "--config", ws.config(), "--seed", "2"}) == cli::kExitOk);  // non-strict
}

TEST_CASE("cli calibrate runs the scripted loop and writes every version") {
  Workspace ws;
  ws.write_standard_setup();
  // judge/refiner rules keyed on the criteria version visible in the prompt
  nlohmann::json rules = nlohmann::json::array();
  auto scores = [](int k) {
    return "Benevolence: " + std::to_string(k) + "\nConformity: 3\nPower: 3\nSecurity: 3\n"
           "Tradition: 3";
  };
  using test_support::kMarkJudge;
  rules.push_back({{"match_all", nlohmann::json::array({kMarkJudge, "CRIT-A"})},
                   {"response", scores(5)}});  // delta 0.4
  rules.push_back({{"match_all", nlohmann::json::array({kMarkJudge, "CRIT-B"})},
                   {"response", scores(3)}});  // delta 0
  rules.push_back(
      {{"match_all", nlohmann::json::array({"refine and improve the scoring criteria"})},
       {"response", "CRIT-B"}});
  ws.write("calibration_rules.json", rules.dump());
  ws.write("annotated.jsonl",
           nlohmann::json{{"question", "Q1?"},
                          {"response", "<answer>\nStance: yes\nKey Points:\n1. P: j.\n</answer>"},
                          {"scores",
                           {{"Benevolence", 3},
                            {"Conformity", 3},
                            {"Power", 3},
                            {"Security", 3},
                            {"Tradition", 3}}}}
                   .dump() +
               "\n");
  nlohmann::json config = nlohmann::json::parse(ws.read("config.json"));
  config["calibration"] = {{"judge_backend",
                            {{"kind", "scripted"},
                             {"rules_file", "calibration_rules.json"},
                             {"model_id", "scripted-judge"}}}};
  ws.write("config.json", config.dump(2));
  ws.write("initial.txt", "CRIT-A");

  CHECK(run({"calibrate", "--config", ws.config(), "--dataset", "annotated.jsonl", "--initial",
             "initial.txt"}) == cli::kExitOk);
  const nlohmann::json summary =
      nlohmann::json::parse(ws.read("out/run-0/calibration_summary.json"));
  CHECK(summary.at("best_index").get<int>() == 1);
  CHECK(ws.read("out/run-0/criteria_v0.txt") == "CRIT-A");
  CHECK(ws.read("out/run-0/criteria_v1.txt") == "CRIT-B");
}

TEST_CASE("cli synthesize question generation is reproducible") {
  Workspace ws;
  ws.write_standard_setup();
  nlohmann::json config = nlohmann::json::parse(ws.read("config.json"));
  config["synthesis"] = {{"backend",
                          {{"kind", "scripted"},
                           {"rules_file", "synthesis_rules.json"},
                           {"model_id", "scripted-synth"}}},
                         {"topic_seeds", {"technology", "culture"}}};
  ws.write("config.json", config.dump(2));
  ws.write("synthesis_rules.json",
           nlohmann::json::array({{{"match", "opinion-seeking questions"},
                                   {"response", "Should we tax robots?\nShould we ban zoos?"}}})
               .dump());
  REQUIRE(run({"synthesize", "--config", ws.config(), "--questions", "2", "--out",
               (ws.dir / "s1").string()}) == cli::kExitOk);
  REQUIRE(run({"synthesize", "--config", ws.config(), "--questions", "2", "--out",
               (ws.dir / "s2").string()}) == cli::kExitOk);
  CHECK(ws.read("s1/run-0/questions.json") == ws.read("s2/run-0/questions.json"));
  const nlohmann::json questions = nlohmann::json::parse(ws.read("s1/run-0/questions.json"));
  CHECK(questions.size() == 2);
  CHECK(questions.at(0).at("question") == "Should we tax robots?");
}

TEST_CASE("cli synthesize exports datasets from records") {
  Workspace ws;
  ws.write_standard_setup();
  REQUIRE(run({"align", "--config", ws.config()}) == cli::kExitOk);
  CHECK(run({"synthesize", "--config", ws.config(), "--export-records",
             (ws.dir / "out/run-0/records.jsonl").string(), "--kind", "reasoning"}) ==
        cli::kExitOk);
  const std::string dataset = ws.read("out/run-0/dataset_reasoning.jsonl");
  CHECK(dataset.find("\"kind\":\"reasoning\"") != std::string::npos);
  CHECK(dataset.find("Counterfactual Concepts:") != std::string::npos);
}

TEST_CASE("cli prepare-corpus and pvq run standalone") {
  Workspace ws;
  ws.write("statements.txt", "We should subsidize Wikipedia.\nCannabis is harmful.\n");
  CHECK(run({"prepare-corpus", "--input", (ws.dir / "statements.txt").string(), "--out-file",
             (ws.dir / "prepared.json").string()}) == cli::kExitOk);
  const nlohmann::json corpus = nlohmann::json::parse(ws.read("prepared.json"));
  CHECK(corpus.at(0).at("question") == "Should we subsidize Wikipedia?");

  nlohmann::json answers = nlohmann::json::array();
  for (int i = 0; i < 40; ++i) answers.push_back(1);
  ws.write("answers.json", answers.dump());
  nlohmann::json mapping = nlohmann::json::array();
  for (const auto& dim : values::ValueSystem::schwartz10()->dimensions()) {
    for (int i = 0; i < 4; ++i) mapping.push_back(dim);
  }
  ws.write("mapping.json", mapping.dump());
  CHECK(run({"pvq", "--answers", (ws.dir / "answers.json").string(), "--mapping",
             (ws.dir / "mapping.json").string(), "--out-file",
             (ws.dir / "pvq.json").string()}) == cli::kExitOk);
  const nlohmann::json pvq = nlohmann::json::parse(ws.read("pvq.json"));
  CHECK(pvq.at("profile").at("Security").get<double>() == 0.0);
}

TEST_CASE("cli analyze-concepts prints frequencies") {
  Workspace ws;
  ws.write_standard_setup();
  REQUIRE(run({"align", "--config", ws.config()}) == cli::kExitOk);
  CHECK(run({"analyze-concepts", "--records", (ws.dir / "out/run-0/records.jsonl").string(),
             "--dimension", "Security", "--priority", "5", "--top-k", "3", "--out-file",
             (ws.dir / "freq.csv").string()}) == cli::kExitOk);
  CHECK(ws.read("freq.csv").find("word,count") == 0);
}
