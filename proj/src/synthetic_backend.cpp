#include "stepsearch/synthetic_backend.hpp"

#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

namespace stepsearch {

namespace {

// Resolves node JSON (inline objects and {"ref": name} links) into the pool.
// Named nodes are parsed once and shared; a ref back into a node that is still
// being parsed is a cycle.
struct ScriptParser {
  const json* question_defs = nullptr;  // question-level "nodes" table
  const json* shared_defs = nullptr;    // script-level "nodes" table
  std::string delimiter;
  std::vector<ScriptNode>* pool = nullptr;
  std::unordered_map<std::string, int> parsed_named;
  std::unordered_set<std::string> open_named;

  int parse_node(const json& jn, const std::string& path) {
    if (!jn.is_object()) {
      throw Error(ErrorCode::ScriptError, path + ": node must be an object");
    }
    if (jn.contains("ref")) {
      return parse_ref(jn.at("ref").get<std::string>(), path);
    }
    ScriptNode node;
    node.text = jn.value("text", "");
    if (node.text.find(delimiter) != std::string::npos) {
      throw Error(ErrorCode::ScriptError, path + ": step text contains the step delimiter");
    }
    node.terminal = jn.value("terminal", false);
    node.token_texts = tokenize_preserving(node.text);
    if (jn.contains("logprobs") && jn.contains("perplexity")) {
      throw Error(ErrorCode::ScriptError, path + ": give logprobs or perplexity, not both");
    }
    if (jn.contains("logprobs")) {
      node.logprobs = jn.at("logprobs").get<std::vector<double>>();
      if (node.logprobs.size() != node.token_texts.size()) {
        throw Error(ErrorCode::ScriptError,
                    path + ": expected " + std::to_string(node.token_texts.size()) +
                        " logprobs, got " + std::to_string(node.logprobs.size()));
      }
      for (double lp : node.logprobs) {
        if (!std::isfinite(lp) || lp > 0.0) {
          throw Error(ErrorCode::ScriptError, path + ": logprobs must be finite and <= 0");
        }
      }
    } else if (jn.contains("perplexity")) {
      const double p = jn.at("perplexity").get<double>();
      if (!(p >= 1.0)) {
        throw Error(ErrorCode::ScriptError, path + ": perplexity must be >= 1");
      }
      node.logprobs.assign(node.token_texts.size(), -std::log(p));
    } else {
      node.logprobs.assign(node.token_texts.size(), 0.0);  // certain tokens
    }
    // Reserve the slot before parsing children so ids stay stable.
    const int id = static_cast<int>(pool->size());
    pool->push_back(std::move(node));
    if (jn.contains("branches")) {
      if ((*pool)[id].terminal && !jn.at("branches").empty()) {
        throw Error(ErrorCode::ScriptError, path + ": terminal node must not have branches");
      }
      std::vector<int> branches;
      int i = 0;
      for (const json& jb : jn.at("branches")) {
        branches.push_back(parse_node(jb, path + ".branches[" + std::to_string(i) + "]"));
        ++i;
      }
      (*pool)[id].branches = std::move(branches);
    }
    return id;
  }

  int parse_ref(const std::string& name, const std::string& path) {
    auto it = parsed_named.find(name);
    if (it != parsed_named.end()) return it->second;
    if (open_named.count(name)) {
      throw Error(ErrorCode::ScriptError, path + ": cyclic reference through node '" + name + "'");
    }
    const json* def = nullptr;
    if (question_defs && question_defs->contains(name)) {
      def = &question_defs->at(name);
    } else if (shared_defs && shared_defs->contains(name)) {
      def = &shared_defs->at(name);
    }
    if (!def) {
      throw Error(ErrorCode::ScriptError, path + ": unknown node ref '" + name + "'");
    }
    open_named.insert(name);
    const int id = parse_node(*def, "nodes." + name);
    open_named.erase(name);
    parsed_named.emplace(name, id);
    return id;
  }
};

}  // namespace

SyntheticBackend SyntheticBackend::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::ScriptError, "cannot open script file: " + path);
  }
  json spec;
  try {
    in >> spec;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ScriptError, path + ": " + e.what());
  }
  return from_json(spec);
}

SyntheticBackend SyntheticBackend::from_json(const json& spec) {
  SyntheticBackend backend;
  backend.delimiter_ = spec.value("step_delimiter", "\n\n");
  if (backend.delimiter_.empty()) {
    throw Error(ErrorCode::ScriptError, "step_delimiter must be nonempty");
  }
  if (!spec.contains("questions") || !spec.at("questions").is_array()) {
    throw Error(ErrorCode::ScriptError, "script needs a questions array");
  }
  const json* shared_defs = spec.contains("nodes") ? &spec.at("nodes") : nullptr;
  std::unordered_set<std::string> ids;
  std::unordered_set<std::string> prompts;
  for (const json& jq : spec.at("questions")) {
    ScriptQuestion q;
    q.id = jq.at("id").get<std::string>();
    q.prompt = jq.at("prompt").get<std::string>();
    if (!ids.insert(q.id).second) {
      throw Error(ErrorCode::ScriptError, "duplicate scripted question id '" + q.id + "'");
    }
    if (!prompts.insert(q.prompt).second) {
      throw Error(ErrorCode::ScriptError, "duplicate scripted prompt for question '" + q.id + "'");
    }
    if (jq.contains("planted_answer") && !jq["planted_answer"].is_null()) {
      q.planted_answer = jq["planted_answer"].get<std::string>();
    }
    ScriptParser parser;
    parser.question_defs = jq.contains("nodes") ? &jq.at("nodes") : nullptr;
    parser.shared_defs = shared_defs;
    parser.delimiter = backend.delimiter_;
    parser.pool = &backend.pool_;
    if (!jq.contains("root_branches") || jq.at("root_branches").empty()) {
      throw Error(ErrorCode::ScriptError, "question '" + q.id + "' has no root_branches");
    }
    int i = 0;
    for (const json& jb : jq.at("root_branches")) {
      q.root_branches.push_back(
          parser.parse_node(jb, q.id + ".root_branches[" + std::to_string(i) + "]"));
      ++i;
    }
    backend.questions_.push_back(std::move(q));
  }
  return backend;
}

const ScriptQuestion* SyntheticBackend::find_question(const std::string& id) const {
  for (const ScriptQuestion& q : questions_) {
    if (q.id == id) return &q;
  }
  return nullptr;
}

SyntheticBackend::Position SyntheticBackend::resolve_prompt(const std::string& prompt) const {
  // Longest scripted prompt that prefixes the request wins.
  const ScriptQuestion* best = nullptr;
  for (const ScriptQuestion& q : questions_) {
    if (prompt.size() < q.prompt.size()) continue;
    if (prompt.compare(0, q.prompt.size(), q.prompt) != 0) continue;
    const std::string_view rest(prompt.data() + q.prompt.size(), prompt.size() - q.prompt.size());
    if (!rest.empty() && rest.substr(0, delimiter_.size()) != delimiter_) continue;
    if (!best || q.prompt.size() > best->prompt.size()) best = &q;
  }
  if (!best) {
    throw Error(ErrorCode::ScriptError, "prompt does not match any scripted question");
  }
  std::string rest = prompt.substr(best->prompt.size());
  if (!rest.empty()) rest.erase(0, delimiter_.size());

  const std::vector<int>* children = &best->root_branches;
  Position pos;
  while (!rest.empty()) {
    bool matched = false;
    for (int id : *children) {
      const ScriptNode& node = pool_[id];
      if (node.text.empty()) continue;  // empty steps never appear in prompts
      if (rest == node.text) {
        pos.branch_point = nullptr;
        pos.node = id;
        pos.offset = node.text.size();
        rest.clear();
        matched = true;
        break;
      }
      if (rest.size() > node.text.size() &&
          rest.compare(0, node.text.size(), node.text) == 0 &&
          rest.compare(node.text.size(), delimiter_.size(), delimiter_) == 0) {
        rest.erase(0, node.text.size() + delimiter_.size());
        children = &node.branches;
        pos = Position{};
        matched = true;
        break;
      }
      if (node.text.size() > rest.size() && node.text.compare(0, rest.size(), rest) == 0) {
        pos.branch_point = nullptr;
        pos.node = id;
        pos.offset = rest.size();
        rest.clear();
        matched = true;
        break;
      }
    }
    if (!matched) {
      throw Error(ErrorCode::ScriptError,
                  "prompt diverges from script for question '" + best->id + "'");
    }
  }
  if (pos.node == -1) pos.branch_point = children;
  return pos;
}

GenerationResult SyntheticBackend::generate(const GenerationRequest& request) {
  request.validate();
  const int attempt = attempt_from_seed(request.seed);
  Position pos = resolve_prompt(request.prompt_text);

  GenerationResult result;
  std::string text;
  // Pending emission state: walk the script forward, one token at a time,
  // until a stop sequence completes, the token budget is reached, or a
  // terminal step ends.
  const std::vector<int>* branch_point = pos.branch_point;
  int node = pos.node;
  std::size_t char_offset = pos.offset;     // consumed chars of pool_[node].text
  std::size_t token_offset = 0;
  bool mid_delim = false;                   // a step just ended; delimiter next
  if (node != -1) {
    // Skip tokens wholly inside the consumed prefix; re-emit any partial token
    // from its cut point.
    std::size_t seen = 0;
    const ScriptNode& n = pool_[node];
    while (token_offset < n.token_texts.size() &&
           seen + n.token_texts[token_offset].size() <= char_offset) {
      seen += n.token_texts[token_offset].size();
      ++token_offset;
    }
    char_offset -= seen;  // now an offset inside token_texts[token_offset]
    if (token_offset == n.token_texts.size()) mid_delim = true;
  }

  int hops = 0;
  auto next_token = [&]() -> std::optional<TokenScore> {
    for (;;) {
      if (++hops > 100000) {
        throw Error(ErrorCode::ScriptError, "script walk does not terminate");
      }
      if (branch_point) {
        if (branch_point->empty()) {
          throw Error(ErrorCode::ScriptError, "script exhausted: node has no branches");
        }
        const int pick = std::min<int>(attempt, static_cast<int>(branch_point->size()) - 1);
        node = (*branch_point)[pick];
        branch_point = nullptr;
        token_offset = 0;
        char_offset = 0;
        mid_delim = false;
        continue;
      }
      const ScriptNode& n = pool_[node];
      if (mid_delim) {
        mid_delim = false;
        branch_point = &n.branches;
        return TokenScore{delimiter_, 0.0};
      }
      if (token_offset >= n.token_texts.size()) {
        if (n.terminal) return std::nullopt;  // end of sequence
        mid_delim = true;
        continue;
      }
      TokenScore t{n.token_texts[token_offset].substr(char_offset), n.logprobs[token_offset]};
      ++token_offset;
      char_offset = 0;
      if (t.token_text.empty()) continue;
      return t;
    }
  };

  bool eos = false;
  while (true) {
    // Emitting the leading delimiter of an empty scripted step would loop; an
    // empty non-terminal step yields an empty stop_sequence result instead.
    if (node != -1 && !branch_point && !mid_delim && pool_[node].text.empty() &&
        !pool_[node].terminal && token_offset == 0) {
      result.finish_reason = FinishReason::stop_sequence;
      result.matched_stop = delimiter_;
      return result;
    }
    auto tok = next_token();
    if (!tok) {
      eos = true;
      break;
    }
    result.tokens.push_back(*tok);
    text += tok->token_text;
    std::string matched;
    const std::size_t stop_pos = find_first_stop(text, request.stop_sequences, &matched);
    if (stop_pos != std::string::npos) {
      result.tokens = truncate_tokens_at(std::move(result.tokens), stop_pos);
      result.finish_reason = FinishReason::stop_sequence;
      result.matched_stop = matched;
      return result;
    }
    if (static_cast<int>(result.tokens.size()) >= request.max_tokens) {
      result.finish_reason = FinishReason::token_budget;
      return result;
    }
  }
  (void)eos;
  result.finish_reason = FinishReason::end_of_sequence;
  return result;
}

}  // namespace stepsearch
