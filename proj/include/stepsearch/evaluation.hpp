#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stepsearch/backends.hpp"
#include "stepsearch/core.hpp"

// Outcome scoring: answer extraction, accuracy, Matthews correlation, judged
// reasoning-quality scores, and aggregate reports.

namespace stepsearch {

// Three-aspect judged quality of a reasoning chain: reasoning completeness
// (rc), degree of safety (ds), factual accuracy (fa), each an integer 1-7,
// with their arithmetic mean. An explanation-free response skips judging and
// pins the whole score to 0.
struct ProofScore {
  double rc = 0.0;
  double ds = 0.0;
  double fa = 0.0;
  double mean = 0.0;
  bool overridden = false;   // bare-answer response, score forced to 0
  std::string raw_reply;     // judge transcript kept for audit

  void validate() const;
  static ProofScore from_components(double rc, double ds, double fa);
  static ProofScore zero_override();
};

void to_json(json& j, const ProofScore& p);
void from_json(const json& j, ProofScore& p);

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t tn = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
};

// Matthews correlation in [-1, 1]; any zero marginal makes the denominator
// vanish and returns 0 by convention.
double mcc(const ConfusionCounts& counts);

enum class ExtractorKind { rule, judge };

// Rule extractor. Precedence: the text after the last answer/prediction/
// conclusion marker, then the first parenthesized option, then the last bare
// word-boundary occurrence of an option. Returns the canonical answer-space
// member, or nothing when no option appears. Matching is case-insensitive.
std::optional<std::string> extract_answer(const std::string& response_text,
                                          const std::vector<std::string>& answer_space);

// Judge extractor: renders the extraction template ({{response}}, {{options}})
// and parses a single option out of the judge reply. Backend failures surface
// as JudgeUnavailable.
std::optional<std::string> extract_answer_judge(const std::string& response_text,
                                                const std::vector<std::string>& answer_space,
                                                PolicyBackend& judge_backend,
                                                const std::string& extract_template);

// True when the response carries no reasoning beyond a (possibly decorated)
// answer-space member, e.g. "(b)" or "Answer: positive".
bool is_explanation_free(const std::string& response_text,
                         const std::vector<std::string>& answer_space);

// Parses a judge reply into the three aspect scores. Accepts "RC: 6",
// "Reasoning Completeness: 6", spelled-out aspect names, and bare
// numeric-first lines assigned in rc/ds/fa order. Returns nothing when fewer
// than three in-range scores can be found.
std::optional<ProofScore> parse_judge_reply(const std::string& reply);

// Judges one response against the rubric template ({{question}},
// {{response}}). Applies the explanation-free override before calling the
// judge; retries an unparseable reply once. Temperature is pinned to 0.
ProofScore proof_judge(const std::string& response_text, const Question& question,
                       PolicyBackend& judge_backend, const std::string& rubric_prompt);

struct PerQuestionEval {
  std::string question_id;
  std::optional<std::string> extracted_answer;
  bool correct = false;
  std::optional<ProofScore> proof;
  std::int64_t nodes_generated = 0;
  std::int64_t wall_time_ms = 0;
  std::int64_t answer_length_words = 0;
};

struct EvalReport {
  std::vector<PerQuestionEval> per_question;
  double accuracy = 0.0;
  std::optional<double> mcc_value;      // binary answer spaces only
  std::optional<double> mean_proof;     // present when any question was judged
  double mean_time_ms = 0.0;
  double mean_answer_length_words = 0.0;
};

// Scores outcomes against gold questions. Unextractable answers count as
// incorrect. MCC is computed when every question shares the same two-option
// answer space (the first option is the positive class). `proofs` optionally
// attaches judged scores by question id.
EvalReport aggregate(const std::vector<SearchOutcome>& outcomes,
                     const std::vector<Question>& gold,
                     const std::map<std::string, ProofScore>* proofs = nullptr);

json report_to_json(const EvalReport& report);
std::string render_report_table(const EvalReport& report);
std::string render_report_csv(const EvalReport& report);

}  // namespace stepsearch
