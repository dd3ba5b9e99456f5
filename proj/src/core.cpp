#include "stepsearch/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_set>

#include "stepsearch/scoring.hpp"

namespace stepsearch {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ExtendPastTerminal: return "ExtendPastTerminal";
    case ErrorCode::DepthExceeded: return "DepthExceeded";
    case ErrorCode::EmptyStep: return "EmptyStep";
    case ErrorCode::NonFiniteLogprob: return "NonFiniteLogprob";
    case ErrorCode::InvalidLogprob: return "InvalidLogprob";
    case ErrorCode::NoProgress: return "NoProgress";
    case ErrorCode::Transport: return "Transport";
    case ErrorCode::Protocol: return "Protocol";
    case ErrorCode::MissingLogprobs: return "MissingLogprobs";
    case ErrorCode::ScriptError: return "ScriptError";
    case ErrorCode::CacheCorrupt: return "CacheCorrupt";
    case ErrorCode::JudgeUnavailable: return "JudgeUnavailable";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MissingGold: return "MissingGold";
    case ErrorCode::TemplateError: return "TemplateError";
    case ErrorCode::InvalidRecord: return "InvalidRecord";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

void Question::validate() const {
  if (id.empty()) {
    throw Error(ErrorCode::ConfigError, "question id must be nonempty");
  }
  if (prompt_text.empty()) {
    throw Error(ErrorCode::ConfigError, "question '" + id + "' has empty prompt text");
  }
  if (gold_answer && !answer_space.empty()) {
    if (std::find(answer_space.begin(), answer_space.end(), *gold_answer) == answer_space.end()) {
      throw Error(ErrorCode::ConfigError,
                  "gold answer '" + *gold_answer + "' not in answer space (question " + id + ")");
    }
  }
}

void ReasoningStep::validate() const {
  if (tokens.empty()) {
    throw Error(ErrorCode::EmptyStep, "reasoning step has no tokens");
  }
  std::string joined;
  for (const TokenScore& t : tokens) joined += t.token_text;
  if (joined != text) {
    throw Error(ErrorCode::ConfigError,
                "step text does not match its tokens: '" + text + "' vs '" + joined + "'");
  }
  const StepScore score = step_perplexity(tokens);
  const double rel = std::abs(score.perplexity - perplexity) / score.perplexity;
  if (rel > 1e-9) {
    throw Error(ErrorCode::ConfigError,
                "stored perplexity " + std::to_string(perplexity) +
                    " does not match tokens (expected " + std::to_string(score.perplexity) + ")");
  }
}

SearchState state_extend(const SearchState& state, ReasoningStep step, int max_steps) {
  if (!state.empty() && state.last_step().terminal) {
    throw Error(ErrorCode::ExtendPastTerminal,
                "state for question '" + state.question_ref() + "' already ended");
  }
  if (state.depth() + 1 >= max_steps) {
    throw Error(ErrorCode::DepthExceeded,
                "extending past max_steps=" + std::to_string(max_steps));
  }
  SearchState next = state;
  next.steps_.push_back(std::move(step));
  return next;
}

void SearchConfig::validate() const {
  if (theta < 0.0) {
    throw Error(ErrorCode::ConfigError, "theta must be >= 0");
  }
  if (max_beam < 1) {
    throw Error(ErrorCode::ConfigError, "max_beam must be >= 1");
  }
  if (max_steps < 1) {
    throw Error(ErrorCode::ConfigError, "max_steps must be >= 1");
  }
  if (max_tokens_per_step < 1) {
    throw Error(ErrorCode::ConfigError, "max_tokens_per_step must be >= 1");
  }
  if (temperature < 0.0) {
    throw Error(ErrorCode::ConfigError, "temperature must be >= 0");
  }
  if (step_delimiter.empty()) {
    throw Error(ErrorCode::ConfigError, "step_delimiter must be nonempty");
  }
}

int SearchTree::add_node(int parent, ReasoningStep step) {
  const int id = static_cast<int>(nodes.size());
  if (parent >= id || parent < -1) {
    throw Error(ErrorCode::ConfigError, "node parent " + std::to_string(parent) + " out of range");
  }
  nodes.push_back(TreeNode{id, parent, std::move(step), false});
  accounting.nodes_generated = static_cast<std::int64_t>(nodes.size());
  return id;
}

std::vector<int> SearchTree::selected_path() const {
  // Selected nodes keyed by parent; walk from the root (-1) down.
  std::vector<int> child_of(nodes.size() + 1, -1);
  int selected_count = 0;
  for (const TreeNode& n : nodes) {
    if (!n.selected) continue;
    ++selected_count;
    int slot = n.parent + 1;
    if (child_of[slot] != -1) {
      throw Error(ErrorCode::ConfigError,
                  "two selected nodes share parent " + std::to_string(n.parent));
    }
    child_of[slot] = n.id;
  }
  std::vector<int> path;
  int cur = child_of[0];
  while (cur != -1) {
    path.push_back(cur);
    cur = child_of[cur + 1];
  }
  if (static_cast<int>(path.size()) != selected_count) {
    throw Error(ErrorCode::ConfigError, "selected nodes do not form a root-to-leaf chain");
  }
  return path;
}

void SearchTree::verify() const {
  if (accounting.nodes_generated != static_cast<std::int64_t>(nodes.size())) {
    throw Error(ErrorCode::ConfigError, "nodes_generated does not match node count");
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id != static_cast<int>(i)) {
      throw Error(ErrorCode::ConfigError, "node ids must be dense and ordered");
    }
    if (nodes[i].parent >= static_cast<int>(i)) {
      throw Error(ErrorCode::ConfigError, "node parent must precede the node");
    }
  }
  // Chain property: selected parents are selected, except at the root.
  for (const TreeNode& n : nodes) {
    if (n.selected && n.parent != -1 && !nodes[n.parent].selected) {
      throw Error(ErrorCode::ConfigError,
                  "selected node " + std::to_string(n.id) + " has unselected parent");
    }
  }
  selected_path();  // throws if not a single chain
}

void SearchOutcome::verify(const std::string& step_delimiter) const {
  tree.verify();
  std::vector<std::string> texts;
  for (int id : tree.selected_path()) {
    texts.push_back(tree.nodes[id].step.text);
  }
  if (join_steps(texts, step_delimiter) != final_text) {
    throw Error(ErrorCode::ConfigError, "final_text does not reconstruct from selected steps");
  }
}

std::string build_step_prompt(const Question& question, const SearchState& state,
                              const std::string& step_delimiter) {
  std::string prompt = question.prompt_text;
  prompt += step_delimiter;
  for (const ReasoningStep& step : state.steps()) {
    prompt += step.text;
    prompt += step_delimiter;
  }
  return prompt;
}

namespace {

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t derive_attempt_seed(std::uint64_t base_seed, std::string_view question_id,
                                  int depth, int attempt) {
  std::uint64_t h = mix64(base_seed ^ mix64(fnv1a(question_id)) ^
                          mix64(static_cast<std::uint64_t>(depth) * 0x9e3779b97f4a7c15ULL));
  return (h << 16) | (static_cast<std::uint64_t>(attempt) & 0xffffULL);
}

int attempt_from_seed(std::uint64_t seed) { return static_cast<int>(seed & 0xffffULL); }

std::string join_steps(const std::vector<std::string>& texts, const std::string& delimiter) {
  std::string out;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (i > 0) out += delimiter;
    out += texts[i];
  }
  return out;
}

std::string render_template(const std::string& tpl,
                            const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t i = 0;
  while (i < tpl.size()) {
    const std::size_t open = tpl.find("{{", i);
    if (open == std::string::npos) {
      out.append(tpl, i, std::string::npos);
      break;
    }
    out.append(tpl, i, open - i);
    const std::size_t close = tpl.find("}}", open + 2);
    if (close == std::string::npos) {
      throw Error(ErrorCode::TemplateError, "unclosed {{ placeholder");
    }
    const std::string name = tpl.substr(open + 2, close - open - 2);
    const auto it = values.find(name);
    if (it == values.end()) {
      throw Error(ErrorCode::TemplateError, "no value for placeholder {{" + name + "}}");
    }
    out += it->second;
    i = close + 2;
  }
  return out;
}

std::string to_string(Domain d) {
  switch (d) {
    case Domain::finance: return "finance";
    case Domain::legal: return "legal";
    case Domain::generic: return "generic";
  }
  return "generic";
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::selective: return "selective";
    case Strategy::stage_beam: return "stage_beam";
    case Strategy::sentence_beam: return "sentence_beam";
    case Strategy::best_of_n: return "best_of_n";
    case Strategy::single_chain: return "single_chain";
  }
  return "selective";
}

std::string to_string(ScorerKind s) {
  return s == ScorerKind::perplexity ? "perplexity" : "self_eval";
}

Domain domain_from_string(const std::string& s) {
  if (s == "finance") return Domain::finance;
  if (s == "legal") return Domain::legal;
  if (s == "generic") return Domain::generic;
  throw Error(ErrorCode::ConfigError, "unknown domain '" + s + "'");
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "selective") return Strategy::selective;
  if (s == "stage_beam") return Strategy::stage_beam;
  if (s == "sentence_beam") return Strategy::sentence_beam;
  if (s == "best_of_n") return Strategy::best_of_n;
  if (s == "single_chain") return Strategy::single_chain;
  throw Error(ErrorCode::ConfigError, "unknown strategy '" + s + "'");
}

ScorerKind scorer_from_string(const std::string& s) {
  if (s == "perplexity") return ScorerKind::perplexity;
  if (s == "self_eval") return ScorerKind::self_eval;
  throw Error(ErrorCode::ConfigError, "unknown scorer '" + s + "'");
}

void to_json(json& j, const Question& q) {
  j = json{{"id", q.id}, {"domain", to_string(q.domain)}, {"prompt_text", q.prompt_text}};
  if (q.gold_answer) j["gold_answer"] = *q.gold_answer;
  if (!q.answer_space.empty()) j["answer_space"] = q.answer_space;
}

void from_json(const json& j, Question& q) {
  q = Question{};
  j.at("id").get_to(q.id);
  q.domain = domain_from_string(j.value("domain", "generic"));
  j.at("prompt_text").get_to(q.prompt_text);
  if (j.contains("gold_answer") && !j["gold_answer"].is_null()) {
    q.gold_answer = j["gold_answer"].get<std::string>();
  }
  if (j.contains("answer_space") && !j["answer_space"].is_null()) {
    q.answer_space = j["answer_space"].get<std::vector<std::string>>();
  }
  q.validate();
}

void to_json(json& j, const TokenScore& t) {
  j = json{{"token_text", t.token_text}, {"logprob", t.logprob}};
}

void from_json(const json& j, TokenScore& t) {
  j.at("token_text").get_to(t.token_text);
  j.at("logprob").get_to(t.logprob);
}

void to_json(json& j, const ReasoningStep& s) {
  j = json{{"text", s.text},
           {"tokens", s.tokens},
           {"perplexity", s.perplexity},
           {"candidate_index", s.candidate_index},
           {"terminal", s.terminal},
           {"truncated", s.truncated}};
}

void from_json(const json& j, ReasoningStep& s) {
  j.at("text").get_to(s.text);
  j.at("tokens").get_to(s.tokens);
  j.at("perplexity").get_to(s.perplexity);
  j.at("candidate_index").get_to(s.candidate_index);
  j.at("terminal").get_to(s.terminal);
  s.truncated = j.value("truncated", false);
}

void to_json(json& j, const SearchConfig& c) {
  j = json{{"theta", c.theta},
           {"max_beam", c.max_beam},
           {"max_steps", c.max_steps},
           {"max_tokens_per_step", c.max_tokens_per_step},
           {"temperature", c.temperature},
           {"seed", c.seed},
           {"step_delimiter", c.step_delimiter},
           {"strategy", to_string(c.strategy)},
           {"scorer", to_string(c.scorer)}};
}

void from_json(const json& j, SearchConfig& c) {
  c = SearchConfig{};
  if (j.contains("theta")) {
    // "inf" disables the gate; JSON numbers cannot carry infinity.
    if (j["theta"].is_string()) {
      const std::string s = j["theta"].get<std::string>();
      c.theta = (s == "inf" || s == "infinity") ? std::numeric_limits<double>::infinity()
                                                : std::stod(s);
    } else {
      j.at("theta").get_to(c.theta);
    }
  }
  c.max_beam = j.value("max_beam", c.max_beam);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.max_tokens_per_step = j.value("max_tokens_per_step", c.max_tokens_per_step);
  c.temperature = j.value("temperature", c.temperature);
  c.seed = j.value("seed", c.seed);
  c.step_delimiter = j.value("step_delimiter", c.step_delimiter);
  if (j.contains("strategy")) c.strategy = strategy_from_string(j["strategy"].get<std::string>());
  if (j.contains("scorer")) c.scorer = scorer_from_string(j["scorer"].get<std::string>());
  c.validate();
}

json tree_to_json(const SearchTree& tree, bool include_timing) {
  json nodes = json::array();
  for (const TreeNode& n : tree.nodes) {
    json jn{{"id", n.id}};
    if (n.parent == -1) {
      jn["parent"] = nullptr;
    } else {
      jn["parent"] = n.parent;
    }
    jn["selected"] = n.selected;
    jn["step"] = n.step;
    nodes.push_back(std::move(jn));
  }
  json acc{{"nodes_generated", tree.accounting.nodes_generated},
           {"backend_calls", tree.accounting.backend_calls}};
  if (include_timing) acc["wall_time_ms"] = tree.accounting.wall_time_ms;
  return json{{"root_question", tree.root_question},
              {"nodes", std::move(nodes)},
              {"accounting", std::move(acc)}};
}

SearchTree tree_from_json(const json& j) {
  SearchTree tree;
  j.at("root_question").get_to(tree.root_question);
  for (const json& jn : j.at("nodes")) {
    TreeNode n;
    jn.at("id").get_to(n.id);
    n.parent = jn["parent"].is_null() ? -1 : jn["parent"].get<int>();
    jn.at("selected").get_to(n.selected);
    jn.at("step").get_to(n.step);
    tree.nodes.push_back(std::move(n));
  }
  const json& acc = j.at("accounting");
  tree.accounting.nodes_generated = acc.at("nodes_generated").get<std::int64_t>();
  tree.accounting.backend_calls = acc.at("backend_calls").get<std::int64_t>();
  tree.accounting.wall_time_ms = acc.value("wall_time_ms", std::int64_t{0});
  return tree;
}

json outcome_to_json(const SearchOutcome& outcome, bool include_timing) {
  json j{{"tree", tree_to_json(outcome.tree, include_timing)},
         {"final_text", outcome.final_text}};
  j["extracted_answer"] = outcome.extracted_answer ? json(*outcome.extracted_answer) : json(nullptr);
  j["truncated"] = outcome.truncated;
  return j;
}

SearchOutcome outcome_from_json(const json& j) {
  SearchOutcome o;
  o.tree = tree_from_json(j.at("tree"));
  j.at("final_text").get_to(o.final_text);
  if (j.contains("extracted_answer") && !j["extracted_answer"].is_null()) {
    o.extracted_answer = j["extracted_answer"].get<std::string>();
  }
  o.truncated = j.value("truncated", false);
  return o;
}

std::vector<Question> load_questions_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open question file: " + path);
  }
  std::vector<Question> questions;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      questions.push_back(json::parse(line).get<Question>());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::IoError,
                  path + ":" + std::to_string(lineno) + ": bad question record: " + e.what());
    }
  }
  std::unordered_set<std::string> seen;
  for (const Question& q : questions) {
    if (!seen.insert(q.id).second) {
      throw Error(ErrorCode::ConfigError, "duplicate question id '" + q.id + "'");
    }
  }
  return questions;
}

void save_questions_jsonl(const std::vector<Question>& questions, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot write question file: " + path);
  }
  for (const Question& q : questions) {
    out << json(q).dump() << "\n";
  }
}

}  // namespace stepsearch
