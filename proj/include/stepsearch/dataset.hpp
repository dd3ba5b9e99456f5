#pragma once

#include <string>
#include <vector>

#include "stepsearch/backends.hpp"
#include "stepsearch/core.hpp"

// Structured chain-of-thought dataset construction: teacher prompts listing
// the per-domain step schema, tag-structure validation of teacher replies,
// tag stripping, and SFT-ready JSONL export.

namespace stepsearch {

// The ordered reasoning-step plan for one domain, with one open/close tag
// pair per step (upper-snake names in angle brackets, e.g.
// <MARKET_SIZE_AND_DOMINANCE>).
struct StepSchema {
  Domain domain = Domain::generic;
  std::vector<std::string> step_names;
  std::vector<std::string> token_vocabulary;  // open, close, per step in order

  static StepSchema finance();  // 10 steps
  static StepSchema legal();    // 4 steps

  static std::string tag_name(const std::string& step_name);  // MARKET_SIZE_AND_DOMINANCE
  static std::string open_tag(const std::string& step_name);
  static std::string close_tag(const std::string& step_name);
};

// Union of both schemas' vocabularies: 26 distinct tags (13 step names, with
// Summary shared between domains, times open/close). Asserted at startup.
const std::vector<std::string>& full_token_vocabulary();

struct ValidationResult {
  bool valid = true;
  std::string error;          // empty when valid
  std::size_t error_pos = 0;  // byte offset of the first offense
};

// A response passes when every schema section appears exactly once, in schema
// order, properly closed, with a non-empty body, and nothing but whitespace
// between sections.
ValidationResult validate_structure(const std::string& tagged_response, const StepSchema& schema);

// Removes the tag vocabulary. Tag-free input is returned verbatim, making the
// function idempotent. Valid responses keep their section bodies byte-exact
// (edges trimmed) joined by one blank line; malformed tagged input falls back
// to plain tag removal with blank-line collapsing.
std::string strip_tokens(const std::string& tagged_response, const StepSchema& schema);

// Renders the template file ({{question}}, {{steps}} placeholders); {{steps}}
// expands to the numbered step list with each step's tag pair. Guarantees
// each step name appears exactly once afterward.
std::string render_teacher_prompt(const Question& question, const StepSchema& schema,
                                  const std::string& template_file);

struct CotRecord {
  Question question;
  std::string tagged_response;
  std::string stripped_response;
  std::string teacher_model;
  bool valid = false;
};

void to_json(json& j, const CotRecord& r);
void from_json(const json& j, CotRecord& r);

std::vector<CotRecord> load_records_jsonl(const std::string& path);
void save_records_jsonl(const std::vector<CotRecord>& records, const std::string& path);

// Writes {"instruction", "input", "output"} JSONL (instruction = the question
// prompt, input empty, output = stripped response). Any invalid record aborts
// before a single byte is written. Returns the line count.
std::size_t export_sft(const std::vector<CotRecord>& records, const std::string& out_file);

struct DatasetManifest {
  std::string schema_domain;
  std::string teacher_model;
  std::size_t requested = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::vector<std::string> drop_reasons;  // "question_id: why"
};

json manifest_to_json(const DatasetManifest& m);

// Asks the teacher backend for a tagged response per question. A reply that
// fails validation is retried once with the validation error appended to the
// prompt; still-invalid replies are dropped and logged in the manifest.
std::vector<CotRecord> build_records(PolicyBackend& teacher,
                                     const std::vector<Question>& questions,
                                     const StepSchema& schema, const std::string& template_file,
                                     DatasetManifest* manifest);

}  // namespace stepsearch
