#include "stepsearch/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "stepsearch/cached_backend.hpp"
#include "stepsearch/dataset.hpp"
#include "stepsearch/errors.hpp"
#include "stepsearch/evaluation.hpp"
#include "stepsearch/http_backend.hpp"
#include "stepsearch/runner.hpp"
#include "stepsearch/strategies.hpp"
#include "stepsearch/synthetic_backend.hpp"

namespace stepsearch {

namespace fs = std::filesystem;

namespace {

BackendSpec spec_from_json(const json& j) {
  BackendSpec s;
  s.kind = j.value("kind", s.kind);
  s.script = j.value("script", s.script);
  s.base_url = j.value("base_url", s.base_url);
  s.api_key = j.value("api_key", s.api_key);
  s.model = j.value("model", s.model);
  s.api_mode = j.value("api_mode", s.api_mode);
  s.cache_dir = j.value("cache_dir", s.cache_dir);
  return s;
}

json spec_to_json(const BackendSpec& s) {
  json j = json::object();
  j["kind"] = s.kind;
  if (!s.script.empty()) j["script"] = s.script;
  if (!s.base_url.empty()) j["base_url"] = s.base_url;
  if (!s.model.empty()) j["model"] = s.model;
  if (s.api_mode != "completions") j["api_mode"] = s.api_mode;
  if (!s.cache_dir.empty()) j["cache_dir"] = s.cache_dir;
  return j;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& body) {
  fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  std::ofstream out(target, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << body;
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path);
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig rc;
  rc.dataset_path = j.value("dataset", rc.dataset_path);
  if (j.contains("backend")) rc.backend = spec_from_json(j.at("backend"));
  if (j.contains("judge")) rc.judge = spec_from_json(j.at("judge"));
  if (j.contains("search")) rc.search = j.at("search").get<SearchConfig>();
  if (j.contains("templates")) {
    const json& t = j.at("templates");
    rc.rubric_template = t.value("rubric", rc.rubric_template);
    rc.extract_template = t.value("extract", rc.extract_template);
  }
  rc.out_dir = j.value("out_dir", rc.out_dir);
  rc.parallelism = j.value("parallelism", rc.parallelism);
  return rc;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, path + ": " + e.what());
  }
  try {
    return from_json(j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, path + ": " + e.what());
  }
}

json RunConfig::to_json() const {
  json j = json::object();
  j["dataset"] = dataset_path;
  j["backend"] = spec_to_json(backend);
  if (judge.configured()) j["judge"] = spec_to_json(judge);
  j["search"] = search;
  j["templates"] = {{"rubric", rubric_template}, {"extract", extract_template}};
  j["out_dir"] = out_dir;
  j["parallelism"] = parallelism;
  return j;
}

std::shared_ptr<PolicyBackend> make_backend(const BackendSpec& spec) {
  std::shared_ptr<PolicyBackend> inner;
  if (spec.kind == "synthetic") {
    if (spec.script.empty()) {
      throw Error(ErrorCode::ConfigError, "synthetic backend needs a script file");
    }
    inner = std::make_shared<SyntheticBackend>(SyntheticBackend::from_file(spec.script));
  } else if (spec.kind == "http") {
    HttpBackendConfig hc;
    hc.base_url = spec.base_url;
    hc.api_key = spec.api_key;
    hc.model = spec.model;
    if (spec.api_mode == "chat") {
      hc.mode = HttpApiMode::chat;
    } else if (spec.api_mode == "completions") {
      hc.mode = HttpApiMode::completions;
    } else {
      throw Error(ErrorCode::ConfigError, "unknown api_mode '" + spec.api_mode + "'");
    }
    hc.apply_env();
    hc.validate();
    inner = std::make_shared<HttpBackend>(hc);
  } else if (spec.kind.empty()) {
    throw Error(ErrorCode::ConfigError, "no backend configured");
  } else {
    throw Error(ErrorCode::ConfigError, "unknown backend kind '" + spec.kind + "'");
  }
  if (!spec.cache_dir.empty()) {
    inner = std::make_shared<CachedBackend>(inner, spec.cache_dir);
  }
  return inner;
}

namespace {

struct Flags {
  std::string config_path;
  std::string dataset;
  std::string strategy = "selective";
  double theta = 1.1;
  int beam = 2;
  std::uint64_t seed = 42;
  std::string out_dir;
  int parallel = -1;

  CLI::Option* strategy_opt = nullptr;
  CLI::Option* theta_opt = nullptr;
  CLI::Option* beam_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
};

void add_common_flags(CLI::App* cmd, Flags& f, bool config_required) {
  auto* c = cmd->add_option("--config", f.config_path, "run configuration JSON file");
  if (config_required) c->required();
  cmd->add_option("--dataset", f.dataset, "questions JSONL, overrides the config");
  f.strategy_opt = cmd->add_option(
      "--strategy", f.strategy,
      "search strategy: selective, stage_beam, sentence_beam, best_of_n, single_chain");
  f.theta_opt = cmd->add_option("--theta", f.theta, "perplexity gate threshold");
  f.beam_opt = cmd->add_option("--beam", f.beam, "candidate budget K per step");
  f.seed_opt = cmd->add_option("--seed", f.seed, "base RNG seed");
  cmd->add_option("--out", f.out_dir, "output directory, overrides the config");
  cmd->add_option("--parallel", f.parallel, "question-level workers, 0 = serial");
}

RunConfig load_run_config(const Flags& f) {
  RunConfig rc = f.config_path.empty() ? RunConfig{} : RunConfig::from_file(f.config_path);
  if (!f.dataset.empty()) rc.dataset_path = f.dataset;
  if (f.strategy_opt && f.strategy_opt->count() > 0) {
    rc.search.strategy = strategy_from_string(f.strategy);
  }
  if (f.theta_opt && f.theta_opt->count() > 0) rc.search.theta = f.theta;
  if (f.beam_opt && f.beam_opt->count() > 0) rc.search.max_beam = f.beam;
  if (f.seed_opt && f.seed_opt->count() > 0) rc.search.seed = f.seed;
  if (!f.out_dir.empty()) rc.out_dir = f.out_dir;
  if (f.parallel >= 0) rc.parallelism = f.parallel;
  rc.search.validate();
  return rc;
}

std::vector<Question> load_dataset(const RunConfig& rc) {
  if (rc.dataset_path.empty()) {
    throw Error(ErrorCode::ConfigError, "no dataset configured (set \"dataset\" or --dataset)");
  }
  if (!fs::exists(rc.dataset_path)) {
    throw Error(ErrorCode::ConfigError, "dataset not found: " + rc.dataset_path);
  }
  return load_questions_jsonl(rc.dataset_path);
}

bool all_have_gold(const std::vector<Question>& questions) {
  return std::all_of(questions.begin(), questions.end(),
                     [](const Question& q) { return q.gold_answer.has_value(); });
}

BatchResult run_batch(PolicyBackend& backend, const std::vector<Question>& questions,
                      const RunConfig& rc) {
  if (rc.parallelism > 0) {
    return run_batch_parallel(backend, questions, rc.search, rc.parallelism);
  }
  return run_batch_serial(backend, questions, rc.search);
}

std::vector<SearchOutcome> successful_outcomes(const BatchResult& batch) {
  std::vector<SearchOutcome> outcomes;
  for (const auto& run : batch.runs) {
    if (run.outcome) outcomes.push_back(*run.outcome);
  }
  return outcomes;
}

int report_failures(const BatchResult& batch, std::ostream& err) {
  int failures = 0;
  for (const auto& run : batch.runs) {
    if (!run.outcome) {
      err << "question " << run.question_id << " failed: " << run.error << "\n";
      ++failures;
    }
  }
  return failures;
}

int cmd_search(const Flags& flags, std::ostream& out, std::ostream& err) {
  RunConfig rc = load_run_config(flags);
  std::vector<Question> questions = load_dataset(rc);
  auto backend = make_backend(rc.backend);

  BatchResult batch = run_batch(*backend, questions, rc);
  write_outcomes(batch, rc.out_dir);
  const int failures = report_failures(batch, err);

  out << "strategy " << to_string(rc.search.strategy) << "  theta " << rc.search.theta << "  K "
      << rc.search.max_beam << "\n";
  out << "questions " << questions.size() << "  failures " << failures << "\n";

  if (!questions.empty() && all_have_gold(questions)) {
    std::vector<Question> answered;
    for (const auto& run : batch.runs) {
      if (!run.outcome) continue;
      for (const auto& q : questions) {
        if (q.id == run.question_id) {
          answered.push_back(q);
          break;
        }
      }
    }
    EvalReport report = aggregate(successful_outcomes(batch), answered);
    write_text_file((fs::path(rc.out_dir) / "report.json").string(),
                    report_to_json(report).dump(2) + "\n");
    const std::string table = render_report_table(report);
    write_text_file((fs::path(rc.out_dir) / "report.txt").string(), table);
    out << table;
  }
  out << "outcomes written to " << rc.out_dir << "\n";
  return failures > 0 ? 1 : 0;
}

struct SweepRow {
  double value = 0.0;
  double accuracy = 0.0;
  std::int64_t nodes_generated = 0;
  double mean_time_ms = 0.0;
};

std::string render_sweep_table(const std::string& axis, const std::vector<SweepRow>& rows) {
  std::string text;
  char line[160];
  std::snprintf(line, sizeof line, "%10s  %8s  %15s  %12s\n", axis.c_str(), "accuracy",
                "nodes_generated", "mean_time_ms");
  text += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%10.4g  %8.4f  %15lld  %12.1f\n", r.value, r.accuracy,
                  static_cast<long long>(r.nodes_generated), r.mean_time_ms);
    text += line;
  }
  return text;
}

std::string render_sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows) {
  std::string text = axis + ",accuracy,nodes_generated,mean_time_ms\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%.10g,%.6f,%lld,%.3f\n", r.value, r.accuracy,
                  static_cast<long long>(r.nodes_generated), r.mean_time_ms);
    text += line;
  }
  return text;
}

int cmd_sweep(const Flags& flags, const std::string& axis, const std::vector<double>& values,
              std::ostream& out, std::ostream& err) {
  if (values.empty()) {
    throw Error(ErrorCode::ConfigError, "sweep needs at least one --values entry");
  }
  if (axis == "beam") {
    for (double v : values) {
      if (v < 1.0 || v != std::floor(v)) {
        throw Error(ErrorCode::ConfigError, "beam values must be positive integers");
      }
    }
  }
  RunConfig rc = load_run_config(flags);
  std::vector<Question> questions = load_dataset(rc);
  if (!all_have_gold(questions)) {
    throw Error(ErrorCode::ConfigError, "sweep needs gold answers for every question");
  }
  auto backend = make_backend(rc.backend);

  std::vector<SweepRow> rows;
  int failures = 0;
  for (double value : values) {
    RunConfig step_rc = rc;
    if (axis == "theta") {
      step_rc.search.theta = value;
    } else {
      step_rc.search.max_beam = static_cast<int>(value);
    }
    step_rc.search.validate();
    BatchResult batch = run_batch(*backend, questions, step_rc);
    failures += report_failures(batch, err);
    std::vector<SearchOutcome> outcomes = successful_outcomes(batch);

    SweepRow row;
    row.value = value;
    for (const auto& o : outcomes) row.nodes_generated += o.tree.accounting.nodes_generated;
    if (!outcomes.empty()) {
      std::vector<Question> answered;
      for (const auto& o : outcomes) {
        for (const auto& q : questions) {
          if (q.id == o.tree.root_question) {
            answered.push_back(q);
            break;
          }
        }
      }
      EvalReport report = aggregate(outcomes, answered);
      row.accuracy = report.accuracy;
      row.mean_time_ms = report.mean_time_ms;
    }
    rows.push_back(row);
  }

  const std::string table = render_sweep_table(axis, rows);
  out << table;
  write_text_file((fs::path(rc.out_dir) / "sweep.csv").string(), render_sweep_csv(axis, rows));
  write_text_file((fs::path(rc.out_dir) / "sweep.txt").string(), table);
  out << "sweep written to " << rc.out_dir << "\n";
  return failures > 0 ? 1 : 0;
}

int cmd_judge(const Flags& flags, const std::string& outcomes_dir_flag, std::ostream& out,
              std::ostream& err) {
  RunConfig rc = load_run_config(flags);
  if (!rc.judge.configured()) {
    throw Error(ErrorCode::ConfigError, "judge backend not configured (set \"judge\" in the config)");
  }
  const std::string outcomes_dir = outcomes_dir_flag.empty() ? rc.out_dir : outcomes_dir_flag;
  std::vector<SearchOutcome> outcomes = load_outcomes(outcomes_dir);
  if (outcomes.empty()) {
    throw Error(ErrorCode::ConfigError, "no outcome files in " + outcomes_dir);
  }
  std::vector<Question> questions = load_dataset(rc);
  std::map<std::string, const Question*> by_id;
  for (const auto& q : questions) by_id[q.id] = &q;
  const std::string rubric = read_text_file(rc.rubric_template);
  auto judge = make_backend(rc.judge);

  std::map<std::string, ProofScore> proofs;
  int failures = 0;
  for (const auto& outcome : outcomes) {
    const auto it = by_id.find(outcome.tree.root_question);
    if (it == by_id.end()) {
      err << "no dataset question for outcome " << outcome.tree.root_question << "\n";
      ++failures;
      continue;
    }
    try {
      proofs[outcome.tree.root_question] = proof_judge(outcome.final_text, *it->second, *judge, rubric);
    } catch (const Error& e) {
      err << "judging " << outcome.tree.root_question << " failed: " << e.what() << "\n";
      ++failures;
    }
  }

  std::vector<SearchOutcome> judged;
  std::vector<Question> judged_questions;
  for (const auto& outcome : outcomes) {
    if (proofs.count(outcome.tree.root_question) == 0) continue;
    judged.push_back(outcome);
    judged_questions.push_back(*by_id.at(outcome.tree.root_question));
  }
  if (!judged.empty() && all_have_gold(judged_questions)) {
    EvalReport report = aggregate(judged, judged_questions, &proofs);
    const std::string table = render_report_table(report);
    out << table;
    write_text_file((fs::path(outcomes_dir) / "judged_report.json").string(),
                    report_to_json(report).dump(2) + "\n");
    write_text_file((fs::path(outcomes_dir) / "judged_report.txt").string(), table);
  } else if (!judged.empty()) {
    double sum = 0.0;
    json scores = json::object();
    for (const auto& [id, p] : proofs) {
      sum += p.mean;
      scores[id] = p;
    }
    out << "mean_proof " << sum / static_cast<double>(proofs.size()) << " over " << proofs.size()
        << " responses\n";
    write_text_file((fs::path(outcomes_dir) / "proof_scores.json").string(), scores.dump(2) + "\n");
  }
  return failures > 0 ? 1 : 0;
}

int cmd_dataset_build(const Flags& flags, const std::string& schema_name,
                      const std::string& template_flag, int count, std::ostream& out,
                      std::ostream& err) {
  StepSchema schema;
  if (schema_name == "finance") {
    schema = StepSchema::finance();
  } else if (schema_name == "legal") {
    schema = StepSchema::legal();
  } else {
    throw Error(ErrorCode::ConfigError, "unknown schema '" + schema_name + "'");
  }
  RunConfig rc = load_run_config(flags);
  std::vector<Question> questions = load_dataset(rc);
  if (count > 0 && static_cast<std::size_t>(count) < questions.size()) {
    questions.resize(static_cast<std::size_t>(count));
  }
  const std::string template_file =
      template_flag.empty() ? "templates/" + schema_name + "_teacher.txt" : template_flag;
  if (!fs::exists(template_file)) {
    throw Error(ErrorCode::ConfigError, "template not found: " + template_file);
  }
  auto teacher = make_backend(rc.backend);

  DatasetManifest manifest;
  std::vector<CotRecord> records = build_records(*teacher, questions, schema, template_file, &manifest);

  std::error_code ec;
  fs::create_directories(rc.out_dir, ec);
  write_text_file((fs::path(rc.out_dir) / "manifest.json").string(),
                  manifest_to_json(manifest).dump(2) + "\n");
  out << "kept " << manifest.kept << " of " << manifest.requested << " records ("
      << manifest.dropped << " dropped)\n";
  if (records.empty()) {
    err << "no valid records produced\n";
    return 1;
  }
  save_records_jsonl(records, (fs::path(rc.out_dir) / "records.jsonl").string());
  export_sft(records, (fs::path(rc.out_dir) / "sft.jsonl").string());
  out << "records and SFT export written to " << rc.out_dir << "\n";
  return manifest.dropped > 0 ? 1 : 0;
}

int cmd_report(const Flags& flags, const std::string& outcomes_dir_flag, const std::string& csv_path,
               std::ostream& out, std::ostream& /*err*/) {
  RunConfig rc = load_run_config(flags);
  const std::string outcomes_dir = outcomes_dir_flag.empty() ? rc.out_dir : outcomes_dir_flag;
  std::vector<SearchOutcome> outcomes = load_outcomes(outcomes_dir);
  if (outcomes.empty()) {
    throw Error(ErrorCode::ConfigError, "no outcome files in " + outcomes_dir);
  }
  std::vector<Question> questions = load_dataset(rc);
  std::map<std::string, const Question*> by_id;
  for (const auto& q : questions) by_id[q.id] = &q;
  std::vector<Question> matched;
  std::vector<SearchOutcome> usable;
  for (const auto& o : outcomes) {
    const auto it = by_id.find(o.tree.root_question);
    if (it == by_id.end() || !it->second->gold_answer) continue;
    usable.push_back(o);
    matched.push_back(*it->second);
  }
  if (usable.empty()) {
    throw Error(ErrorCode::ConfigError, "no outcomes with gold-labelled questions in " + outcomes_dir);
  }
  std::map<std::string, ProofScore> proofs;
  const fs::path judged = fs::path(outcomes_dir) / "judged_report.json";
  if (fs::exists(judged)) {
    try {
      json j;
      std::ifstream in(judged);
      in >> j;
      for (const auto& pq : j.at("per_question")) {
        if (pq.contains("proof") && !pq.at("proof").is_null()) {
          proofs[pq.at("question_id").get<std::string>()] = pq.at("proof").get<ProofScore>();
        }
      }
    } catch (const json::exception&) {
      proofs.clear();  // stale or malformed judged report, ignore it
    }
  }
  EvalReport report = aggregate(usable, matched, proofs.empty() ? nullptr : &proofs);
  out << render_report_table(report);
  if (!csv_path.empty()) write_text_file(csv_path, render_report_csv(report));
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"step-structured reasoning-path search over language model backends"};
  app.require_subcommand(1);

  Flags search_flags, sweep_flags, judge_flags, build_flags, report_flags;

  CLI::App* search_cmd = app.add_subcommand("search", "run the configured search over a dataset");
  add_common_flags(search_cmd, search_flags, /*config_required=*/true);

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "re-run the search across a parameter grid");
  add_common_flags(sweep_cmd, sweep_flags, /*config_required=*/true);
  std::string sweep_axis;
  std::vector<double> sweep_values;
  sweep_cmd->add_option("--axis", sweep_axis, "parameter to vary: theta or beam")
      ->required()
      ->check(CLI::IsMember({"theta", "beam"}));
  sweep_cmd->add_option("--values", sweep_values, "grid values, space separated");

  CLI::App* judge_cmd = app.add_subcommand("judge", "score stored outcomes with the judge backend");
  add_common_flags(judge_cmd, judge_flags, /*config_required=*/true);
  std::string judge_outcomes;
  judge_cmd->add_option("--outcomes", judge_outcomes, "outcome directory, defaults to out_dir");

  CLI::App* build_cmd =
      app.add_subcommand("dataset-build", "collect tagged teacher responses into an SFT corpus");
  add_common_flags(build_cmd, build_flags, /*config_required=*/true);
  std::string build_schema = "finance";
  std::string build_template;
  int build_count = 0;
  build_cmd->add_option("--schema", build_schema, "step schema: finance or legal");
  build_cmd->add_option("--template", build_template, "teacher prompt template file");
  build_cmd->add_option("--count", build_count, "limit to the first N questions");

  CLI::App* report_cmd = app.add_subcommand("report", "re-score stored outcomes against the dataset");
  add_common_flags(report_cmd, report_flags, /*config_required=*/false);
  std::string report_outcomes;
  std::string report_csv;
  report_cmd->add_option("--outcomes", report_outcomes, "outcome directory, defaults to out_dir");
  report_cmd->add_option("--csv", report_csv, "also write the per-question table as CSV");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (search_cmd->parsed()) return cmd_search(search_flags, out, err);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_flags, sweep_axis, sweep_values, out, err);
    if (judge_cmd->parsed()) return cmd_judge(judge_flags, judge_outcomes, out, err);
    if (build_cmd->parsed()) {
      return cmd_dataset_build(build_flags, build_schema, build_template, build_count, out, err);
    }
    if (report_cmd->parsed()) return cmd_report(report_flags, report_outcomes, report_csv, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  err << "no command given\n";
  return 2;
}

}  // namespace stepsearch
