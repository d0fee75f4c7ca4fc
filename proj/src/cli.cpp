#include "couple/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "couple/calibration.hpp"
#include "couple/causal_pipeline.hpp"
#include "couple/evaluation.hpp"
#include "couple/synthesis.hpp"

namespace couple::cli {

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  long seed = 0;
  bool strict = false;
};

std::string resolve_path(const std::string& base_dir, const std::string& path) {
  if (path.empty() || path.front() == '/' || base_dir.empty()) return path;
  return base_dir + "/" + path;
}

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  try {
    nlohmann::json doc;
    in >> doc;
    return doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, "invalid JSON in '" + path + "': " + e.what());
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  out << content;
}

/// Loaded configuration document plus the directory paths resolve against.
struct ConfigDoc {
  nlohmann::json doc;
  std::string base_dir;

  std::string path(const std::string& key) const {
    if (!doc.contains(key)) throw Error(ErrorKind::Config, "config needs '" + key + "'");
    return resolve_path(base_dir, doc.at(key).get<std::string>());
  }
  std::optional<std::string> optional_path(const std::string& key) const {
    if (!doc.contains(key) || doc.at(key).is_null()) return std::nullopt;
    return resolve_path(base_dir, doc.at(key).get<std::string>());
  }
};

ConfigDoc load_config(const std::string& path) {
  ConfigDoc config;
  config.doc = load_json_file(path);
  config.base_dir = fs::path(path).parent_path().string();
  if (!config.doc.is_object()) throw Error(ErrorKind::Config, "config must be a JSON object");
  return config;
}

std::shared_ptr<const values::ValueSystem> load_system(const ConfigDoc& config,
                                                       const std::string& override_path) {
  std::string name = override_path;
  if (name.empty()) name = config.doc.value("value_system", "schwartz10");
  if (name == "schwartz10") return values::ValueSystem::schwartz10();
  return values::ValueSystem::from_file(resolve_path(config.base_dir, name));
}

struct SelectedProfile {
  std::string id;
  values::ValueProfile profile;
};

SelectedProfile select_profile(const ConfigDoc& config, const std::string& flag_profile,
                               std::shared_ptr<const values::ValueSystem> system) {
  const values::ProfileSet set =
      values::load_profiles_file(config.path("profiles_file"), std::move(system));
  std::string wanted = flag_profile;
  if (wanted.empty()) wanted = config.doc.value("profile", "");
  if (wanted.empty() && set.profiles.size() == 1) wanted = set.profiles.begin()->first;
  auto it = set.profiles.find(wanted);
  if (it == set.profiles.end()) {
    std::string available;
    for (const auto& [id, _] : set.profiles) available += available.empty() ? id : ", " + id;
    throw Error(ErrorKind::Config,
                "profile '" + wanted + "' not found; available: " + available);
  }
  return {it->first, it->second};
}

std::shared_ptr<llm::ChatBackend> build_backend(const ConfigDoc& config, const char* section,
                                                const char* key, double default_temperature) {
  if (!config.doc.contains(section) || !config.doc.at(section).contains(key)) {
    throw Error(ErrorKind::Config,
                std::string("config needs ") + section + "." + key);
  }
  nlohmann::json spec = config.doc.at(section).at(key);
  if (!spec.contains("temperature")) spec["temperature"] = default_temperature;
  return llm::backend_from_json(spec, config.base_dir);
}

const prompts::TemplateSet& load_templates(const ConfigDoc& config,
                                           std::optional<prompts::TemplateSet>& storage) {
  const auto dir = config.optional_path("templates_dir");
  if (dir) {
    storage = prompts::TemplateSet::from_directory(*dir);
    return *storage;
  }
  return prompts::TemplateSet::embedded_defaults();
}

causal::PipelineConfig build_pipeline_config(const ConfigDoc& config, const std::string& mode_flag,
                                             int theta_flag,
                                             const prompts::TemplateSet& templates) {
  if (!config.doc.contains("pipeline")) throw Error(ErrorKind::Config, "config needs 'pipeline'");
  const nlohmann::json& section = config.doc.at("pipeline");

  causal::PipelineConfig pcfg;
  std::string mode = mode_flag;
  if (mode.empty()) mode = section.value("mode", "full");
  pcfg.mode = causal::mode_from_string(mode);
  pcfg.theta = theta_flag >= 0 ? theta_flag : section.value("theta", 0);
  pcfg.relevant_k = section.value("relevant_k", 5);
  if (section.contains("concept_words")) {
    pcfg.concept_words = {section.at("concept_words").at(0).get<int>(),
                          section.at("concept_words").at(1).get<int>()};
  }
  pcfg.parse_policy.parse_retries = section.value("parse_retries", 2);
  pcfg.attribution_backend = build_backend(config, "pipeline", "attribution_backend", 0.2);
  pcfg.generation_backend = build_backend(config, "pipeline", "generation_backend", 0.5);
  pcfg.templates = &templates;
  if (const auto criteria = config.optional_path("criteria_file")) {
    pcfg.criteria = read_text_file(*criteria);
  }
  pcfg.validate();
  return pcfg;
}

fs::path run_dir_of(const ConfigDoc& config, const CommonFlags& flags) {
  std::string out = flags.out_dir;
  if (out.empty()) out = resolve_path(config.base_dir, config.doc.value("output_dir", "out"));
  return fs::path(out) / ("run-" + std::to_string(flags.seed));
}

fs::path fresh_output_file(const fs::path& run_dir, const std::string& name) {
  fs::create_directories(run_dir);
  const fs::path path = run_dir / name;
  if (fs::exists(path)) {
    throw Error(ErrorKind::Config,
                path.string() + " already exists; output files are append-only per run id");
  }
  return path;
}

// -----------------------------------------------------------------------
// Subcommands

int cmd_align(const CommonFlags& flags, const std::string& mode_flag, int theta_flag,
              const std::string& profile_flag, const std::string& system_flag, int parallel_flag) {
  const ConfigDoc config = load_config(flags.config_path);
  auto system = load_system(config, system_flag);
  const SelectedProfile target = select_profile(config, profile_flag, system);
  const std::vector<causal::CorpusEntry> corpus =
      causal::load_corpus_file(config.path("corpus_file"));
  std::optional<prompts::TemplateSet> template_storage;
  const prompts::TemplateSet& templates = load_templates(config, template_storage);
  causal::PipelineConfig pcfg = build_pipeline_config(config, mode_flag, theta_flag, templates);

  causal::Pipeline pipeline(system, pcfg);
  const int parallel =
      parallel_flag > 0 ? parallel_flag : pcfg.generation_backend->config().max_parallel;
  const std::vector<causal::CounterfactualRecord> records =
      causal::align_batch(pipeline, corpus, target.profile, parallel);

  const fs::path run_dir = run_dir_of(config, flags);
  const fs::path records_path = fresh_output_file(run_dir, "records.jsonl");
  {
    std::ofstream out(records_path);
    causal::write_records(out, records);
  }

  int failed = 0;
  nlohmann::json by_stage = nlohmann::json::object();
  for (const auto& record : records) {
    if (!record.ok()) {
      ++failed;
      const std::string stage = record.failed_at_stage;
      by_stage[stage] = by_stage.value(stage, 0) + 1;
    }
  }
  nlohmann::json summary{{"n", records.size()},
                         {"failed", failed},
                         {"failed_by_stage", std::move(by_stage)},
                         {"mode", causal::to_string(pipeline.config().mode)},
                         {"theta", pipeline.config().theta},
                         {"profile", target.id},
                         {"records_file", records_path.string()}};
  write_text_file((run_dir / "align_summary.json").string(), summary.dump(2) + "\n");

  std::cout << "aligned " << records.size() << " question(s), " << failed << " failed; records: "
            << records_path.string() << "\n";
  if (failed > 0 && flags.strict) return kExitPartial;
  return kExitOk;
}

int cmd_evaluate(const CommonFlags& flags, const std::string& records_flag,
                 const std::string& judge_model_flag, const std::string& profile_flag) {
  const ConfigDoc config = load_config(flags.config_path);
  auto system = load_system(config, "");
  const fs::path run_dir = run_dir_of(config, flags);

  std::string records_path = records_flag;
  if (records_path.empty()) {
    records_path = (run_dir / "records.jsonl").string();
  } else {
    records_path = resolve_path(config.base_dir, records_path);
  }
  const std::vector<causal::CounterfactualRecord> records =
      causal::read_records_file(records_path, system);

  std::optional<prompts::TemplateSet> template_storage;
  const prompts::TemplateSet& templates = load_templates(config, template_storage);

  evaluation::JudgeConfig judge_config;
  {
    if (!config.doc.contains("evaluation")) {
      throw Error(ErrorKind::Config, "config needs 'evaluation'");
    }
    nlohmann::json spec = config.doc.at("evaluation").at("judge_backend");
    if (!judge_model_flag.empty()) spec["model_id"] = judge_model_flag;
    if (!spec.contains("temperature")) spec["temperature"] = 0.2;
    judge_config.judge = llm::backend_from_json(spec, config.base_dir);
    judge_config.allow_same_model = config.doc.at("evaluation").value("allow_same_model", false);
  }
  if (config.doc.contains("pipeline") &&
      config.doc.at("pipeline").contains("generation_backend")) {
    judge_config.aligned_model_id =
        config.doc.at("pipeline").at("generation_backend").value("model_id", "");
  }
  judge_config.templates = &templates;
  if (const auto criteria = config.optional_path("criteria_file")) {
    judge_config.criteria = read_text_file(*criteria);
  }
  judge_config.validate();

  std::string profile_id = profile_flag;
  if (profile_id.empty()) profile_id = config.doc.value("profile", "");

  const evaluation::EvaluationReport report =
      evaluation::evaluate_batch(records, profile_id, judge_config);

  const fs::path report_path = fresh_output_file(run_dir, "report.json");
  write_text_file(report_path.string(), evaluation::report_to_json(report).dump(2) + "\n");
  {
    std::ofstream out(run_dir / "report_rows.csv");
    evaluation::write_report_csv(out, report);
  }
  {
    std::ofstream out(run_dir / "deviation_vs_mae.csv");
    evaluation::write_deviation_csv(out, report);
  }
  {
    std::ofstream out(run_dir / "report_table.txt");
    evaluation::write_report_table(out, report);
  }

  std::cout << "evaluated " << report.n << " row(s), " << report.excluded_count
            << " excluded; mean MAE " << report.mean_mae << ", mean correlation "
            << report.mean_spearman << ", preservation rate " << report.preservation_rate
            << "; report: " << report_path.string() << "\n";
  if (report.excluded_count > 0 && flags.strict) return kExitPartial;
  return kExitOk;
}

int cmd_calibrate(const CommonFlags& flags, const std::string& dataset_flag,
                  const std::string& initial_flag, int max_iters_flag, int patience_flag) {
  const ConfigDoc config = load_config(flags.config_path);
  auto system = load_system(config, "");
  const std::vector<calibration::AnnotatedExample> dataset =
      calibration::load_annotated_file(resolve_path(config.base_dir, dataset_flag), system);

  std::optional<prompts::TemplateSet> template_storage;
  const prompts::TemplateSet& templates = load_templates(config, template_storage);

  auto backend_or = [&](const char* section, const char* key,
                        std::shared_ptr<llm::ChatBackend> fallback) {
    if (config.doc.contains(section) && config.doc.at(section).contains(key)) {
      return build_backend(config, section, key, 0.2);
    }
    if (!fallback) throw Error(ErrorKind::Config, std::string("config needs ") + section + "." + key);
    return fallback;
  };
  std::shared_ptr<llm::ChatBackend> judge =
      config.doc.contains("calibration") && config.doc.at("calibration").contains("judge_backend")
          ? build_backend(config, "calibration", "judge_backend", 0.2)
          : backend_or("evaluation", "judge_backend", nullptr);
  std::shared_ptr<llm::ChatBackend> refiner = backend_or("calibration", "refine_backend", judge);

  std::string initial = prompts::kInitialCriteria;
  if (!initial_flag.empty()) {
    initial = read_text_file(resolve_path(config.base_dir, initial_flag));
  } else if (const auto path = config.optional_path("criteria_file")) {
    initial = read_text_file(*path);
  }
  int max_iters = max_iters_flag;
  int patience = patience_flag;
  if (config.doc.contains("calibration")) {
    if (max_iters <= 0) max_iters = config.doc.at("calibration").value("max_iters", 5);
    if (patience <= 0) patience = config.doc.at("calibration").value("patience", 2);
  }
  if (max_iters <= 0) max_iters = 5;
  if (patience <= 0) patience = 2;

  const calibration::CalibrationResult result =
      calibration::calibrate(initial, dataset, *judge, *refiner, max_iters, patience, templates);

  if (result.versions.empty()) {
    std::cerr << "calibration failed before evaluating the initial criteria: "
              << result.aborted_error.value_or("unknown error") << "\n";
    return kExitBackend;
  }

  const fs::path run_dir = run_dir_of(config, flags);
  const fs::path summary_path = fresh_output_file(run_dir, "calibration_summary.json");
  nlohmann::json versions = nlohmann::json::array();
  for (std::size_t i = 0; i < result.versions.size(); ++i) {
    const auto& version = result.versions[i];
    const std::string file = "criteria_v" + std::to_string(i) + ".txt";
    write_text_file((run_dir / file).string(), version.text);
    versions.push_back({{"file", file},
                        {"mean_disagreement", version.mean_disagreement},
                        {"excluded", version.excluded_count},
                        {"no_change", version.no_change}});
  }
  nlohmann::json summary{{"versions", std::move(versions)},
                         {"best_index", result.best_index},
                         {"iterations_run", result.iterations_run}};
  if (result.aborted_error) summary["aborted_error"] = *result.aborted_error;
  write_text_file(summary_path.string(), summary.dump(2) + "\n");

  std::cout << "calibration ran " << result.iterations_run << " iteration(s); best version "
            << result.best_index << " with mean disagreement "
            << result.best().mean_disagreement << "; summary: " << summary_path.string() << "\n";
  if (result.aborted_error) {
    std::cerr << "calibration aborted early: " << *result.aborted_error << "\n";
    return kExitBackend;
  }
  return kExitOk;
}

int cmd_synthesize(const CommonFlags& flags, int questions_flag,
                   const std::string& export_records_flag, const std::string& kind_flag) {
  const ConfigDoc config = load_config(flags.config_path);
  const fs::path run_dir = run_dir_of(config, flags);
  bool did_anything = false;

  if (questions_flag > 0) {
    std::shared_ptr<llm::ChatBackend> backend =
        config.doc.contains("synthesis") && config.doc.at("synthesis").contains("backend")
            ? build_backend(config, "synthesis", "backend", 0.5)
            : build_backend(config, "pipeline", "generation_backend", 0.5);
    std::vector<std::string> seeds;
    if (config.doc.contains("synthesis")) {
      seeds = config.doc.at("synthesis").value("topic_seeds", std::vector<std::string>{});
    }
    synthesis::SynthesisStats stats;
    const std::vector<std::string> questions =
        synthesis::synthesize_questions(seeds, questions_flag, *backend, &stats);

    nlohmann::json corpus = nlohmann::json::array();
    for (std::size_t i = 0; i < questions.size(); ++i) {
      char id[16];
      std::snprintf(id, sizeof id, "syn%04zu", i + 1);
      corpus.push_back({{"id", id}, {"question", questions[i]}});
    }
    const fs::path path = fresh_output_file(run_dir, "questions.json");
    write_text_file(path.string(), corpus.dump(2) + "\n");
    std::cout << "synthesized " << questions.size() << " question(s) in " << stats.calls
              << " call(s), " << stats.duplicates_removed << " duplicate(s) removed"
              << (stats.shortfall ? " (shortfall)" : "") << "; corpus: " << path.string() << "\n";
    did_anything = true;
  }

  if (!export_records_flag.empty()) {
    if (kind_flag.empty()) throw Error(ErrorKind::Config, "--export-records needs --kind");
    const synthesis::TrainingKind kind = synthesis::kind_from_string(kind_flag);
    auto system = load_system(config, "");
    const std::vector<causal::CounterfactualRecord> records = causal::read_records_file(
        resolve_path(config.base_dir, export_records_flag), system);
    std::vector<causal::CounterfactualRecord> usable;
    int dropped = 0;
    for (const auto& record : records) {
      if (record.ok()) {
        usable.push_back(record);
      } else {
        ++dropped;
      }
    }
    if (dropped > 0) std::cerr << "skipping " << dropped << " failed record(s)\n";

    synthesis::ExportStats stats;
    const std::string name = std::string("dataset_") + synthesis::to_string(kind) + ".jsonl";
    const fs::path path = fresh_output_file(run_dir, name);
    {
      std::ofstream out(path);
      synthesis::export_dataset(usable, kind, out, &stats);
    }
    std::cout << "exported " << stats.exported << " " << synthesis::to_string(kind)
              << " record(s)";
    if (stats.skipped_without_trace > 0) {
      std::cout << ", skipped " << stats.skipped_without_trace << " without a reasoning trace";
    }
    std::cout << "; dataset: " << path.string() << "\n";
    did_anything = true;
  }

  if (!did_anything) {
    throw Error(ErrorKind::Config, "nothing to do: pass --questions N and/or --export-records");
  }
  return kExitOk;
}

int cmd_pvq(const std::string& answers_flag, const std::string& mapping_flag,
            const std::string& target_flag, const std::string& system_flag,
            const std::string& out_flag) {
  auto system = system_flag.empty() ? values::ValueSystem::schwartz10()
                                    : values::ValueSystem::resolve(system_flag);
  const evaluation::PvqAnswers answers =
      evaluation::load_pvq(answers_flag, mapping_flag, *system);
  const std::map<std::string, double> profile = evaluation::pvq_score(answers, *system);

  nlohmann::json doc{{"profile", profile}};
  for (const auto& [dim, value] : profile) {
    std::cout << dim << ": " << value << "\n";
  }
  if (!target_flag.empty()) {
    const nlohmann::json target_doc = load_json_file(target_flag);
    std::map<std::string, double> target;
    for (const auto& [dim, value] : target_doc.items()) {
      target[system->canonical(dim)] = value.get<double>();
    }
    const double mae = evaluation::pvq_mae(profile, target);
    doc["mae"] = mae;
    std::cout << "mae vs target: " << mae << "\n";
  }
  if (!out_flag.empty()) write_text_file(out_flag, doc.dump(2) + "\n");
  return kExitOk;
}

int cmd_analyze_concepts(const std::string& records_flag, const std::string& dimension_flag,
                         int priority_flag, int top_k_flag, const std::string& system_flag,
                         const std::string& out_flag) {
  auto system = system_flag.empty() ? values::ValueSystem::schwartz10()
                                    : values::ValueSystem::resolve(system_flag);
  const std::vector<causal::CounterfactualRecord> records =
      causal::read_records_file(records_flag, system);
  const std::vector<evaluation::WordCount> counts =
      evaluation::concept_frequency(records, dimension_flag, priority_flag, top_k_flag);
  std::ostringstream csv;
  csv << "word,count\n";
  for (const auto& [word, count] : counts) {
    std::cout << word << " (" << count << ")\n";
    csv << word << ',' << count << '\n';
  }
  if (!out_flag.empty()) write_text_file(out_flag, csv.str());
  return kExitOk;
}

int cmd_prepare_corpus(const std::string& input_flag, const std::string& out_flag) {
  std::vector<std::string> statements;
  if (input_flag.size() > 5 && input_flag.substr(input_flag.size() - 5) == ".json") {
    for (const auto& item : load_json_file(input_flag)) {
      statements.push_back(item.is_string() ? item.get<std::string>()
                                            : item.at("statement").get<std::string>());
    }
  } else {
    std::ifstream in(input_flag);
    if (!in) throw Error(ErrorKind::Io, "cannot open '" + input_flag + "'");
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) statements.push_back(line);
    }
  }
  const std::vector<std::string> questions = evaluation::corpus_prepare(statements);
  nlohmann::json corpus = nlohmann::json::array();
  for (std::size_t i = 0; i < questions.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "q%04zu", i + 1);
    corpus.push_back({{"id", id}, {"question", questions[i]}});
  }
  write_text_file(out_flag, corpus.dump(2) + "\n");
  std::cout << "prepared " << questions.size() << " question(s); corpus: " << out_flag << "\n";
  return kExitOk;
}

int exit_code_for(const Error& error) {
  switch (error.kind()) {
    case ErrorKind::TransportExhausted:
    case ErrorKind::RateLimitExhausted:
    case ErrorKind::ParseExhausted:
    case ErrorKind::Auth:
    case ErrorKind::UnmatchedPrompt:
      return kExitBackend;
    default:
      return kExitConfig;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Counterfactual pluralistic-value-alignment pipeline"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string mode_flag, profile_flag, system_flag, records_flag, judge_model_flag;
  std::string dataset_flag, initial_flag, export_records_flag, kind_flag;
  std::string answers_flag, mapping_flag, target_flag, out_file_flag, input_flag;
  std::string dimension_flag;
  int theta_flag = -1, parallel_flag = 0, max_iters_flag = 0, patience_flag = 0;
  int questions_flag = 0, priority_flag = 0, top_k_flag = 5;

  auto add_common = [&](CLI::App* cmd, bool needs_config = true) {
    auto* opt = cmd->add_option("--config", flags.config_path, "Config JSON file");
    if (needs_config) opt->required();
    cmd->add_option("--out", flags.out_dir, "Output directory (overrides config)");
    cmd->add_option("--seed", flags.seed, "Run id seed (names the run directory)");
    cmd->add_flag("--strict", flags.strict, "Nonzero exit on partial failures");
  };

  CLI::App* align = app.add_subcommand("align", "Run the alignment pipeline over a corpus");
  add_common(align);
  align->add_option("--mode", mode_flag,
                    "full | no_scm | no_concepts | no_counterfactual | value_prompt");
  align->add_option("--theta", theta_flag, "Intervention threshold");
  align->add_option("--profile", profile_flag, "Target profile id");
  align->add_option("--system", system_flag, "Value system name or file");
  align->add_option("--parallel", parallel_flag, "Concurrent questions");

  CLI::App* evaluate = app.add_subcommand("evaluate", "Judge aligned records against the target");
  add_common(evaluate);
  evaluate->add_option("--records", records_flag, "Record file (default: <run dir>/records.jsonl)");
  evaluate->add_option("--judge-model", judge_model_flag, "Override the judge model id");
  evaluate->add_option("--profile", profile_flag, "Target profile id label");

  CLI::App* calibrate = app.add_subcommand("calibrate", "Calibrate judging criteria");
  add_common(calibrate);
  calibrate->add_option("--dataset", dataset_flag, "Annotated JSONL dataset")->required();
  calibrate->add_option("--initial", initial_flag, "Initial criteria text file");
  calibrate->add_option("--max-iters", max_iters_flag, "Refinement iterations");
  calibrate->add_option("--patience", patience_flag, "Non-improving iterations tolerated");

  CLI::App* synthesize = app.add_subcommand("synthesize", "Generate questions / export datasets");
  add_common(synthesize);
  synthesize->add_option("--questions", questions_flag, "Number of questions to synthesize");
  synthesize->add_option("--export-records", export_records_flag, "Record file to export");
  synthesize->add_option("--kind", kind_flag, "naive | reasoning");

  CLI::App* pvq = app.add_subcommand("pvq", "Score a 40-item questionnaire");
  pvq->add_option("--answers", answers_flag, "Answers JSON (40 ints)")->required();
  pvq->add_option("--mapping", mapping_flag, "Item-to-dimension mapping JSON")->required();
  pvq->add_option("--target", target_flag, "Normalized target profile JSON");
  pvq->add_option("--system", system_flag, "Value system name or file");
  pvq->add_option("--out-file", out_file_flag, "Write the normalized profile JSON here");

  CLI::App* analyze = app.add_subcommand("analyze-concepts", "Concept word frequencies");
  analyze->add_option("--records", records_flag, "Record file")->required();
  analyze->add_option("--dimension", dimension_flag, "Value dimension")->required();
  analyze->add_option("--priority", priority_flag, "Priority score")->required();
  analyze->add_option("--top-k", top_k_flag, "Words to report");
  analyze->add_option("--system", system_flag, "Value system name or file");
  analyze->add_option("--out-file", out_file_flag, "Write CSV here");

  CLI::App* prepare = app.add_subcommand("prepare-corpus", "Rewrite statements into questions");
  prepare->add_option("--input", input_flag, "Statements (.txt lines or JSON array)")->required();
  prepare->add_option("--out-file", out_file_flag, "Corpus JSON to write")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (align->parsed()) {
      return cmd_align(flags, mode_flag, theta_flag, profile_flag, system_flag, parallel_flag);
    }
    if (evaluate->parsed()) {
      return cmd_evaluate(flags, records_flag, judge_model_flag, profile_flag);
    }
    if (calibrate->parsed()) {
      return cmd_calibrate(flags, dataset_flag, initial_flag, max_iters_flag, patience_flag);
    }
    if (synthesize->parsed()) {
      return cmd_synthesize(flags, questions_flag, export_records_flag, kind_flag);
    }
    if (pvq->parsed()) {
      return cmd_pvq(answers_flag, mapping_flag, target_flag, system_flag, out_file_flag);
    }
    if (analyze->parsed()) {
      return cmd_analyze_concepts(records_flag, dimension_flag, priority_flag, top_k_flag,
                                  system_flag, out_file_flag);
    }
    if (prepare->parsed()) {
      return cmd_prepare_corpus(input_flag, out_file_flag);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace couple::cli
