#pragma once

#include <optional>

#include "stepsearch/backends.hpp"

// Scripted policy backend. A script defines, per question, an attempt-indexed
// tree of steps; generation replays the scripted text token by token, so the
// backend is a pure function of the request. See docs/script_schema.md.

namespace stepsearch {

struct ScriptNode {
  std::string text;
  std::vector<std::string> token_texts;
  std::vector<double> logprobs;  // parallel to token_texts
  bool terminal = false;
  std::vector<int> branches;  // pool ids, indexed by attempt (clamped)
};

struct ScriptQuestion {
  std::string id;
  std::string prompt;
  std::optional<std::string> planted_answer;
  std::vector<int> root_branches;
};

class SyntheticBackend : public PolicyBackend {
 public:
  static SyntheticBackend from_file(const std::string& path);
  static SyntheticBackend from_json(const json& spec);

  GenerationResult generate(const GenerationRequest& request) override;
  std::string name() const override { return "synthetic"; }
  bool supports_concurrent_calls() const override { return true; }

  const std::string& step_delimiter() const { return delimiter_; }
  const std::vector<ScriptQuestion>& questions() const { return questions_; }
  const ScriptQuestion* find_question(const std::string& id) const;

 private:
  SyntheticBackend() = default;

  // Where in the script a prompt lands: a branch point about to start a new
  // step, or a position inside/at-the-end-of a step already underway.
  struct Position {
    const std::vector<int>* branch_point = nullptr;  // set when at a step start
    int node = -1;          // set when inside a step
    std::size_t offset = 0; // chars of pool_[node].text already in the prompt
  };
  Position resolve_prompt(const std::string& prompt) const;

  std::vector<ScriptNode> pool_;
  std::vector<ScriptQuestion> questions_;
  std::string delimiter_ = "\n\n";
};

}  // namespace stepsearch
