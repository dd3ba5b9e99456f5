#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stepsearch/backends.hpp"
#include "stepsearch/core.hpp"

// Batch execution over a question set: a serial reference path and an OpenMP
// question-parallel path that must produce identical outcomes, plus the
// outcome-file layout shared by the CLI commands.

namespace stepsearch {

struct QuestionRun {
  std::string question_id;
  std::optional<SearchOutcome> outcome;  // empty on failure
  std::string error;                     // diagnostic when the search failed
};

struct BatchResult {
  std::vector<QuestionRun> runs;  // same order as the input questions

  std::size_t failed() const;
  // Outcome JSON (timing excluded) per run; failures serialize as null.
  // Two batches are replay-equal iff these match.
  json to_comparable_json() const;
};

// Reference implementation: one search after another on the calling thread.
BatchResult run_batch_serial(PolicyBackend& backend, const std::vector<Question>& questions,
                             const SearchConfig& config);

// OpenMP variant, parallel across questions. Degrades to the serial path when
// the backend cannot take concurrent calls. `max_parallel` <= 0 uses the
// OpenMP default thread count.
BatchResult run_batch_parallel(PolicyBackend& backend, const std::vector<Question>& questions,
                               const SearchConfig& config, int max_parallel = 0);

// One "<question_id>.outcome.json" per successful run (written atomically),
// with wall times collected into a timings.json sidecar so outcome files
// byte-compare across replays.
void write_outcomes(const BatchResult& batch, const std::string& out_dir);
std::vector<SearchOutcome> load_outcomes(const std::string& out_dir);

std::string sanitize_filename(const std::string& name);

}  // namespace stepsearch
