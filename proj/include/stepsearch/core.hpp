#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stepsearch/errors.hpp"

// Core domain types for multi-step answer search: questions, scored steps,
// partial-answer states, search trees and their run artifacts. All types are
// plain values; "mutation" means constructing a new value.

namespace stepsearch {

using json = nlohmann::ordered_json;

enum class Domain { finance, legal, generic };

enum class Strategy { selective, stage_beam, sentence_beam, best_of_n, single_chain };

// How candidate steps are ranked when a strategy has to pick one. The default
// ranks by step perplexity; self_eval asks the policy model to rate the
// candidate 1-10 instead (used by the beam/best-of-n baselines only).
enum class ScorerKind { perplexity, self_eval };

struct Question {
  std::string id;
  Domain domain = Domain::generic;
  std::string prompt_text;
  std::optional<std::string> gold_answer;
  std::vector<std::string> answer_space;  // empty when the task is free-form

  void validate() const;  // gold_answer must be in answer_space when both present
};

// One generated token with the natural log of its softmax probability.
// Backends report log-probabilities directly; raw logits never cross this
// boundary.
struct TokenScore {
  std::string token_text;
  double logprob = 0.0;  // <= 0
};

struct ReasoningStep {
  std::string text;
  std::vector<TokenScore> tokens;  // nonempty; concatenation equals text
  double perplexity = 1.0;
  int candidate_index = 0;  // which regeneration attempt produced this step
  bool terminal = false;    // step ended with end-of-sequence
  bool truncated = false;   // step hit the per-step token budget

  void validate() const;  // recomputes perplexity from tokens, rel. tol 1e-9
};

// The ordered chain of steps forming a partial answer. Depth of a state with
// n steps is n-1; a fresh state has depth -1. Immutable: extending returns a
// new state.
class SearchState {
 public:
  SearchState() = default;
  explicit SearchState(std::string question_id) : question_id_(std::move(question_id)) {}

  const std::string& question_ref() const { return question_id_; }
  const std::vector<ReasoningStep>& steps() const { return steps_; }
  int depth() const { return static_cast<int>(steps_.size()) - 1; }
  bool empty() const { return steps_.empty(); }
  const ReasoningStep& last_step() const { return steps_.back(); }

 private:
  friend SearchState state_extend(const SearchState&, ReasoningStep, int);
  std::string question_id_;
  std::vector<ReasoningStep> steps_;
};

// Appends a step, enforcing the terminal and max-depth contracts.
// Throws ExtendPastTerminal / DepthExceeded. The input state is not modified.
SearchState state_extend(const SearchState& state, ReasoningStep step, int max_steps);

struct SearchConfig {
  double theta = 1.1;          // sampling threshold; regenerate while p >= theta
  int max_beam = 2;            // K: max candidates per step (N for best-of-n)
  int max_steps = 16;          // T: max selection rounds
  int max_tokens_per_step = 256;
  double temperature = 0.8;    // attempts >= 1; attempt 0 decodes greedily
  std::uint64_t seed = 42;
  std::string step_delimiter = "\n\n";
  Strategy strategy = Strategy::selective;
  ScorerKind scorer = ScorerKind::perplexity;

  void validate() const;  // theta >= 0 (0 legal: degenerates to stage beam)
};

// Large finite gate that no realistic step perplexity reaches; selective with
// this theta never regenerates and matches single_chain.
inline constexpr double kThetaSentinel = 1e6;

struct TreeNode {
  int id = 0;
  int parent = -1;  // -1: a depth-0 node (child of the root question)
  ReasoningStep step;
  bool selected = false;
};

struct Accounting {
  std::int64_t nodes_generated = 0;
  std::int64_t backend_calls = 0;
  std::int64_t wall_time_ms = 0;
};

// Every generated candidate, selected or not. Node ids are dense integers in
// generation order so runs replay deterministically.
struct SearchTree {
  std::string root_question;
  std::vector<TreeNode> nodes;  // index == id
  Accounting accounting;

  int add_node(int parent, ReasoningStep step);
  std::vector<int> selected_path() const;  // node ids, root to leaf

  // Checks in O(nodes) that the selected set forms a single root-to-leaf
  // chain and that accounting matches; throws on violation.
  void verify() const;
};

struct SearchOutcome {
  SearchTree tree;
  std::string final_text;  // selected step texts joined by the delimiter
  std::optional<std::string> extracted_answer;
  bool truncated = false;  // hit max_steps, or a selected step hit the token budget

  void verify(const std::string& step_delimiter) const;
};

// --- shared decoding conventions -------------------------------------------

// Prompt sent to the backend when generating the next step of `state`:
// question prompt, then each selected step, each followed by the delimiter.
std::string build_step_prompt(const Question& question, const SearchState& state,
                              const std::string& step_delimiter);

// Per-attempt randomness: a mix of (base_seed, question_id, depth) in the high
// bits with the attempt index in the low 16. Distinct per attempt, and the
// scripted backend can read the attempt back out.
std::uint64_t derive_attempt_seed(std::uint64_t base_seed, std::string_view question_id,
                                  int depth, int attempt);
int attempt_from_seed(std::uint64_t seed);

std::string join_steps(const std::vector<std::string>& texts, const std::string& delimiter);

// Replaces every {{name}} in the template with values.at(name). A placeholder
// with no value, or an unclosed one, throws TemplateError.
std::string render_template(const std::string& tpl,
                            const std::map<std::string, std::string>& values);

// --- enum <-> string --------------------------------------------------------

std::string to_string(Domain d);
std::string to_string(Strategy s);
std::string to_string(ScorerKind s);
Domain domain_from_string(const std::string& s);
Strategy strategy_from_string(const std::string& s);
ScorerKind scorer_from_string(const std::string& s);

// --- JSON -------------------------------------------------------------------

void to_json(json& j, const Question& q);
void from_json(const json& j, Question& q);
void to_json(json& j, const TokenScore& t);
void from_json(const json& j, TokenScore& t);
void to_json(json& j, const ReasoningStep& s);
void from_json(const json& j, ReasoningStep& s);
void to_json(json& j, const SearchConfig& c);
void from_json(const json& j, SearchConfig& c);

// Timing is withheld by default so outcome files byte-compare across replays;
// wall_time_ms travels in a sidecar instead.
json tree_to_json(const SearchTree& tree, bool include_timing = false);
SearchTree tree_from_json(const json& j);
json outcome_to_json(const SearchOutcome& outcome, bool include_timing = false);
SearchOutcome outcome_from_json(const json& j);

// Gold files: one Question object per line.
std::vector<Question> load_questions_jsonl(const std::string& path);
void save_questions_jsonl(const std::vector<Question>& questions, const std::string& path);

}  // namespace stepsearch
