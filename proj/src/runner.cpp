#include "stepsearch/runner.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "stepsearch/errors.hpp"
#include "stepsearch/evaluation.hpp"
#include "stepsearch/strategies.hpp"

namespace stepsearch {

namespace fs = std::filesystem;

namespace {

QuestionRun run_one(PolicyBackend& backend, const Question& question, const SearchConfig& config) {
  QuestionRun run;
  run.question_id = question.id;
  try {
    SearchOutcome outcome = run_search(backend, question, config);
    if (!outcome.extracted_answer && !question.answer_space.empty()) {
      outcome.extracted_answer = extract_answer(outcome.final_text, question.answer_space);
    }
    run.outcome = std::move(outcome);
  } catch (const Error& e) {
    run.error = e.what();
  }
  return run;
}

}  // namespace

std::size_t BatchResult::failed() const {
  return static_cast<std::size_t>(
      std::count_if(runs.begin(), runs.end(), [](const QuestionRun& r) { return !r.outcome; }));
}

json BatchResult::to_comparable_json() const {
  json arr = json::array();
  for (const auto& run : runs) {
    if (run.outcome) {
      arr.push_back(outcome_to_json(*run.outcome, /*include_timing=*/false));
    } else {
      arr.push_back(nullptr);
    }
  }
  return arr;
}

BatchResult run_batch_serial(PolicyBackend& backend, const std::vector<Question>& questions,
                             const SearchConfig& config) {
  BatchResult batch;
  batch.runs.reserve(questions.size());
  for (const auto& question : questions) {
    batch.runs.push_back(run_one(backend, question, config));
  }
  return batch;
}

BatchResult run_batch_parallel(PolicyBackend& backend, const std::vector<Question>& questions,
                               const SearchConfig& config, int max_parallel) {
  if (!backend.supports_concurrent_calls() || questions.size() < 2) {
    return run_batch_serial(backend, questions, config);
  }
  BatchResult batch;
  batch.runs.resize(questions.size());
  int threads = max_parallel > 0 ? max_parallel : omp_get_max_threads();
  threads = std::max(1, std::min<int>(threads, static_cast<int>(questions.size())));
  const auto n = static_cast<std::int64_t>(questions.size());
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::int64_t i = 0; i < n; ++i) {
    batch.runs[static_cast<std::size_t>(i)] =
        run_one(backend, questions[static_cast<std::size_t>(i)], config);
  }
  return batch;
}

std::string sanitize_filename(const std::string& name) {
  std::string out;
  out.reserve(name.size());
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '-' || c == '_' || c == '.';
    out.push_back(ok ? c : '_');
  }
  if (out.empty()) out = "_";
  return out;
}

namespace {

void write_file_atomic(const fs::path& target, const std::string& body) {
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out << body;
    if (!out) throw Error(ErrorCode::IoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw Error(ErrorCode::IoError, "rename failed for " + target.string() + ": " + ec.message());
}

}  // namespace

void write_outcomes(const BatchResult& batch, const std::string& out_dir) {
  fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + out_dir + ": " + ec.message());

  json timings = json::object();
  for (const auto& run : batch.runs) {
    if (!run.outcome) continue;
    const std::string stem = sanitize_filename(run.question_id);
    write_file_atomic(dir / (stem + ".outcome.json"),
                      outcome_to_json(*run.outcome, /*include_timing=*/false).dump(2) + "\n");
    timings[run.question_id] = run.outcome->tree.accounting.wall_time_ms;
  }
  write_file_atomic(dir / "timings.json", timings.dump(2) + "\n");
}

std::vector<SearchOutcome> load_outcomes(const std::string& out_dir) {
  fs::path dir(out_dir);
  if (!fs::is_directory(dir)) {
    throw Error(ErrorCode::IoError, "not a directory: " + out_dir);
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 13 && name.substr(name.size() - 13) == ".outcome.json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<SearchOutcome> outcomes;
  outcomes.reserve(files.size());
  for (const auto& file : files) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + file.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, file.string() + ": " + e.what());
    }
    outcomes.push_back(outcome_from_json(j));
  }
  return outcomes;
}

}  // namespace stepsearch
