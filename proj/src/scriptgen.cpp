#include "stepsearch/scriptgen.hpp"

#include <functional>
#include <random>

namespace stepsearch {

namespace {

// Platform-stable uniform double in [lo, hi): the standard distributions are
// implementation-defined, the raw engine output is not.
double next_uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + u * (hi - lo);
}

const char* kFillers[] = {"margin", "volume", "tone",   "context", "signal",
                          "trend",  "basis",  "outlook", "detail",  "factor"};

std::string make_step_text(int depth, int index, const char* kind, int tokens,
                           std::mt19937_64& rng) {
  std::string text = "Step " + std::to_string(depth) + "." + std::to_string(index) + " " + kind +
                     " assessment";
  for (int t = 0; t < tokens - 4; ++t) {
    text += " ";
    text += kFillers[rng() % 10];
  }
  text += ".";
  return text;
}

}  // namespace

json make_uniform_script(const ScriptGenConfig& config) {
  std::mt19937_64 rng(config.seed);
  json questions = json::array();
  for (int q = 0; q < config.num_questions; ++q) {
    const std::string qid = config.id_prefix + "-" + std::to_string(q);
    json jq;
    jq["id"] = qid;
    jq["prompt"] = "Question " + qid + ": walk through the assessment.";

    std::function<json(int, int)> build = [&](int depth, int index) {
      json node;
      node["text"] = make_step_text(depth, index, "plain", config.tokens_per_step, rng);
      node["perplexity"] = next_uniform(rng, config.min_perplexity, config.max_perplexity);
      if (depth == config.depth - 1) {
        node["terminal"] = true;
      } else {
        json branches = json::array();
        for (int b = 0; b < config.branching; ++b) branches.push_back(build(depth + 1, b));
        node["branches"] = std::move(branches);
      }
      return node;
    };
    json roots = json::array();
    for (int b = 0; b < config.branching; ++b) roots.push_back(build(0, b));
    jq["root_branches"] = std::move(roots);
    questions.push_back(std::move(jq));
  }
  json script;
  script["version"] = 1;
  script["step_delimiter"] = "\n\n";
  script["questions"] = std::move(questions);
  return script;
}

json make_planted_corpus(const PlantedCorpusConfig& config, std::vector<Question>* gold) {
  std::mt19937_64 rng(config.seed);
  const std::vector<std::string> space = {"alpha", "beta"};
  if (gold) gold->clear();

  json questions = json::array();
  for (int q = 0; q < config.num_questions; ++q) {
    const std::string qid = config.id_prefix + "-" + std::to_string(q);
    const std::string prompt =
        "Question " + qid + ": weigh the signals and choose alpha or beta.";
    const std::string gold_answer = (rng() & 1) ? space[0] : space[1];
    const std::string wrong_answer = gold_answer == space[0] ? space[1] : space[0];

    json nodes = json::object();
    auto ref = [](const std::string& name) { return json{{"ref", name}}; };

    // One clean table per depth, shared by every clean parent at that depth,
    // plus an all-poisoned table once a bad step has been taken. That sharing
    // is what makes per-question correctness depend only on whether the
    // selected path stayed clean.
    for (int d = 0; d < config.depth; ++d) {
      const bool last = d == config.depth - 1;
      for (int i = 0; i < config.branching; ++i) {
        const bool poisoned = next_uniform(rng, 0.0, 1.0) < config.poison_rate;
        json node;
        if (last) {
          node["text"] = "Step " + std::to_string(d) + "." + std::to_string(i) +
                         (poisoned ? " off synthesis." : " clean synthesis.") +
                         " Answer: " + (poisoned ? wrong_answer : gold_answer);
          node["terminal"] = true;
        } else {
          node["text"] = make_step_text(d, i, poisoned ? "off" : "clean",
                                        6, rng);
          json branches = json::array();
          for (int b = 0; b < config.branching; ++b) {
            branches.push_back(ref((poisoned ? "p" : "c") + std::to_string(d + 1) + "_" +
                                   std::to_string(b)));
          }
          node["branches"] = std::move(branches);
        }
        node["perplexity"] = poisoned ? next_uniform(rng, config.bad_low, config.bad_high)
                                      : next_uniform(rng, config.good_low, config.good_high);
        nodes["c" + std::to_string(d) + "_" + std::to_string(i)] = std::move(node);
      }
      if (d == 0) continue;  // the poisoned tables start at depth 1
      for (int i = 0; i < config.branching; ++i) {
        json node;
        if (last) {
          node["text"] = "Step " + std::to_string(d) + "." + std::to_string(i) +
                         " adrift synthesis. Answer: " + wrong_answer;
          node["terminal"] = true;
        } else {
          node["text"] = make_step_text(d, i, "adrift", 6, rng);
          json branches = json::array();
          for (int b = 0; b < config.branching; ++b) {
            branches.push_back(ref("p" + std::to_string(d + 1) + "_" + std::to_string(b)));
          }
          node["branches"] = std::move(branches);
        }
        node["perplexity"] = next_uniform(rng, config.bad_low, config.bad_high);
        nodes["p" + std::to_string(d) + "_" + std::to_string(i)] = std::move(node);
      }
    }

    json roots = json::array();
    for (int b = 0; b < config.branching; ++b) {
      roots.push_back(ref("c0_" + std::to_string(b)));
    }
    json jq;
    jq["id"] = qid;
    jq["prompt"] = prompt;
    jq["planted_answer"] = gold_answer;
    jq["nodes"] = std::move(nodes);
    jq["root_branches"] = std::move(roots);
    questions.push_back(std::move(jq));

    if (gold) {
      Question question;
      question.id = qid;
      question.domain = Domain::generic;
      question.prompt_text = prompt;
      question.gold_answer = gold_answer;
      question.answer_space = space;
      gold->push_back(std::move(question));
    }
  }
  json script;
  script["version"] = 1;
  script["step_delimiter"] = "\n\n";
  script["questions"] = std::move(questions);
  return script;
}

std::vector<Question> questions_from_script(const json& script) {
  std::vector<Question> out;
  for (const json& jq : script.at("questions")) {
    Question q;
    q.id = jq.at("id").get<std::string>();
    q.domain = Domain::generic;
    q.prompt_text = jq.at("prompt").get<std::string>();
    if (jq.contains("planted_answer") && !jq["planted_answer"].is_null()) {
      q.gold_answer = jq["planted_answer"].get<std::string>();
    }
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace stepsearch
