#pragma once

#include <vector>

#include "stepsearch/core.hpp"

// Generators for synthetic backend scripts used by the test corpora: plain
// random trees of uniform depth, and a planted-answer corpus whose accuracy
// is provably monotone in the search budget.

namespace stepsearch {

struct ScriptGenConfig {
  int num_questions = 50;
  int depth = 3;          // steps per chain, uniform across the tree
  int branching = 5;      // attempt-indexed children per non-terminal node
  int tokens_per_step = 6;
  std::uint64_t seed = 1234;
  double min_perplexity = 1.02;
  double max_perplexity = 1.60;
  std::string id_prefix = "synth";
};

// Full random trees: every root-to-leaf chain has exactly `depth` steps and
// every non-terminal node offers `branching` children with perplexities drawn
// uniformly from the configured range. Node texts are unique per question.
json make_uniform_script(const ScriptGenConfig& config);

struct PlantedCorpusConfig {
  int num_questions = 200;
  int depth = 3;
  int branching = 5;       // must cover the largest K swept against it
  std::uint64_t seed = 99;
  double good_low = 1.01;  // clean-step perplexity band
  double good_high = 1.19;
  double bad_low = 1.21;   // poisoned-step band, disjoint from the clean one
  double bad_high = 1.45;
  double poison_rate = 0.5;  // chance each child of a clean table is poisoned
  std::string id_prefix = "trend";
};

// Corpus with a planted gold answer. Each depth has one shared "clean" branch
// table; a poisoned child leads to an all-poisoned subtree and a wrong final
// answer, while any clean path ends in the gold answer. Because the clean and
// poisoned perplexity bands are disjoint and clean children share tables,
// raising K or lowering theta can repair a question but never break one, so
// measured accuracy is monotone question by question, not just on average.
// `gold` receives the matching gold-labelled questions.
json make_planted_corpus(const PlantedCorpusConfig& config, std::vector<Question>* gold);

// Bare questions (id + prompt, no gold) for running searches over a script.
std::vector<Question> questions_from_script(const json& script);

}  // namespace stepsearch
