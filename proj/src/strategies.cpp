#include "stepsearch/strategies.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <future>
#include <optional>

#include "stepsearch/scoring.hpp"

namespace stepsearch {

void CandidateBatch::validate(int max_beam) const {
  if (candidates.empty() || static_cast<int>(candidates.size()) > max_beam) {
    throw Error(ErrorCode::ConfigError, "candidate batch size must be in [1, K]");
  }
  int prev = -1;
  for (const ReasoningStep& c : candidates) {
    if (c.candidate_index <= prev || c.candidate_index >= max_beam) {
      throw Error(ErrorCode::ConfigError, "candidate indices must be increasing attempts below K");
    }
    prev = c.candidate_index;
  }
}

ReasoningStep generate_step(PolicyBackend& backend, const Question& question,
                            const SearchState& state, const SearchConfig& config, int attempt) {
  const int depth = static_cast<int>(state.steps().size());
  GenerationRequest req;
  req.prompt_text = build_step_prompt(question, state, config.step_delimiter);
  req.max_tokens = config.max_tokens_per_step;
  req.temperature = attempt == 0 ? 0.0 : config.temperature;
  req.seed = derive_attempt_seed(config.seed, question.id, depth, attempt);
  req.stop_sequences = {config.step_delimiter};

  const GenerationResult res = backend.generate(req);
  if (res.tokens.empty() || res.text().empty()) {
    throw Error(ErrorCode::EmptyStep,
                "backend produced no text for '" + question.id + "' at depth " +
                    std::to_string(depth) + ", attempt " + std::to_string(attempt));
  }
  ReasoningStep step;
  step.text = res.text();
  step.tokens = res.tokens;
  step.perplexity = step_perplexity(step.tokens).perplexity;
  step.candidate_index = attempt;
  step.terminal = res.finish_reason == FinishReason::end_of_sequence;
  step.truncated = res.finish_reason == FinishReason::token_budget;
  return step;
}

namespace {

constexpr const char* kRatingInstruction =
    "Rate the quality of the reasoning above on a scale from 1 to 10. "
    "Answer with a single integer.\nRating:";

// Asks the backend for a 1-10 quality rating of whatever precedes the
// instruction in `context`. Lower return value = better, to match perplexity.
double rate_with_backend(PolicyBackend& backend, const std::string& context,
                         Accounting* accounting) {
  GenerationRequest req;
  req.prompt_text = context + kRatingInstruction;
  req.max_tokens = 8;
  req.temperature = 0.0;
  req.seed = 0;
  req.want_logprobs = false;
  req.stop_sequences = {"\n"};
  const GenerationResult res = backend.generate(req);
  if (accounting) ++accounting->backend_calls;
  const std::string reply = res.text();
  for (std::size_t i = 0; i < reply.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(reply[i]))) continue;
    std::size_t end = i;
    while (end < reply.size() && std::isdigit(static_cast<unsigned char>(reply[end]))) ++end;
    const long value = std::stol(reply.substr(i, end - i));
    return -static_cast<double>(std::clamp(value, 1L, 10L));
  }
  throw Error(ErrorCode::ParseError, "self-eval reply has no rating: '" + reply + "'");
}

std::optional<ReasoningStep> try_generate(PolicyBackend& backend, const Question& question,
                                          const SearchState& state, const SearchConfig& config,
                                          int attempt) {
  try {
    return generate_step(backend, question, state, config, attempt);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::EmptyStep) return std::nullopt;
    throw;
  }
}

enum class DepthMode { gated, full_beam, single };

struct DepthOutcome {
  CandidateBatch batch;
  std::vector<int> node_ids;  // parallel to batch.candidates
  int chosen_pos = -1;

  const ReasoningStep& chosen() const { return batch.candidates[chosen_pos]; }
  int chosen_node() const { return node_ids[chosen_pos]; }
};

DepthOutcome run_depth(PolicyBackend& backend, const Question& question, const SearchState& state,
                       const SearchConfig& config, SearchTree& tree, int parent, DepthMode mode) {
  const int k = mode == DepthMode::single ? 1 : config.max_beam;
  std::vector<std::optional<ReasoningStep>> slots(k);

  if (mode == DepthMode::full_beam && k > 1 && backend.supports_concurrent_calls()) {
    std::vector<std::future<std::optional<ReasoningStep>>> futures;
    futures.reserve(k);
    for (int a = 0; a < k; ++a) {
      futures.push_back(std::async(std::launch::async, [&, a] {
        return try_generate(backend, question, state, config, a);
      }));
    }
    for (int a = 0; a < k; ++a) slots[a] = futures[a].get();
    tree.accounting.backend_calls += k;
  } else {
    for (int a = 0; a < k; ++a) {
      slots[a] = try_generate(backend, question, state, config, a);
      ++tree.accounting.backend_calls;
      // Gated mode stops regenerating as soon as a candidate clears theta.
      if (mode == DepthMode::gated && slots[a] && slots[a]->perplexity < config.theta) break;
    }
  }

  DepthOutcome out;
  out.batch.parent_state = state;
  int pass_pos = -1;
  for (int a = 0; a < k; ++a) {
    if (!slots[a]) continue;
    out.node_ids.push_back(tree.add_node(parent, *slots[a]));
    out.batch.candidates.push_back(std::move(*slots[a]));
    if (mode == DepthMode::gated && pass_pos < 0 &&
        out.batch.candidates.back().perplexity < config.theta) {
      pass_pos = static_cast<int>(out.batch.candidates.size()) - 1;
    }
  }
  if (out.batch.candidates.empty()) {
    throw Error(ErrorCode::NoProgress,
                "no nonempty candidate in " + std::to_string(k) + " attempts for '" +
                    question.id + "' at depth " + std::to_string(state.steps().size()));
  }
  out.batch.validate(config.max_beam);

  if (pass_pos >= 0) {
    out.chosen_pos = pass_pos;
  } else if (out.batch.candidates.size() == 1) {
    out.chosen_pos = 0;
  } else {
    out.chosen_pos = 0;
    double best = candidate_score(backend, question, state, out.batch.candidates[0], config,
                                  &tree.accounting);
    for (std::size_t i = 1; i < out.batch.candidates.size(); ++i) {
      const double s = candidate_score(backend, question, state, out.batch.candidates[i], config,
                                       &tree.accounting);
      if (s < best) {  // strict: ties keep the lowest attempt
        best = s;
        out.chosen_pos = static_cast<int>(i);
      }
    }
  }
  tree.nodes[out.node_ids[out.chosen_pos]].selected = true;
  return out;
}

// Sentence-granular variant of candidate_score: the context is the raw
// accumulated text rather than delimiter-joined steps.
double sentence_score(PolicyBackend& backend, const Question& question, const SearchConfig& config,
                      const std::string& accumulated, const ReasoningStep& step, Accounting& acc) {
  if (config.scorer == ScorerKind::perplexity) return step.perplexity;
  const std::string context = question.prompt_text + config.step_delimiter + accumulated +
                              step.text + config.step_delimiter;
  return rate_with_backend(backend, context, &acc);
}

SearchOutcome drive_stepwise(PolicyBackend& backend, const Question& question,
                             const SearchConfig& config, DepthMode mode) {
  question.validate();
  config.validate();
  SearchOutcome outcome;
  outcome.tree.root_question = question.id;
  SearchState state(question.id);
  int parent = -1;
  bool terminal = false;
  bool step_truncated = false;
  std::vector<std::string> texts;
  for (int round = 0; round < config.max_steps && !terminal; ++round) {
    DepthOutcome d = run_depth(backend, question, state, config, outcome.tree, parent, mode);
    const ReasoningStep& chosen = d.chosen();
    state = state_extend(state, chosen, config.max_steps);
    parent = d.chosen_node();
    terminal = chosen.terminal;
    step_truncated = step_truncated || chosen.truncated;
    texts.push_back(chosen.text);
  }
  outcome.final_text = join_steps(texts, config.step_delimiter);
  outcome.truncated = step_truncated || !terminal;
  return outcome;
}

}  // namespace

double candidate_score(PolicyBackend& backend, const Question& question, const SearchState& state,
                       const ReasoningStep& step, const SearchConfig& config,
                       Accounting* accounting) {
  if (config.scorer == ScorerKind::perplexity) return step.perplexity;
  const std::string context =
      build_step_prompt(question, state, config.step_delimiter) + step.text + config.step_delimiter;
  return rate_with_backend(backend, context, accounting);
}

SearchOutcome selective_tree_exploration(PolicyBackend& backend, const Question& question,
                                         const SearchConfig& config) {
  return drive_stepwise(backend, question, config, DepthMode::gated);
}

SearchOutcome stage_level_beam(PolicyBackend& backend, const Question& question,
                               const SearchConfig& config) {
  return drive_stepwise(backend, question, config, DepthMode::full_beam);
}

SearchOutcome single_chain(PolicyBackend& backend, const Question& question,
                           const SearchConfig& config) {
  return drive_stepwise(backend, question, config, DepthMode::single);
}

SearchOutcome best_of_n(PolicyBackend& backend, const Question& question,
                        const SearchConfig& config) {
  question.validate();
  config.validate();
  const int n = config.max_beam;
  SearchOutcome outcome;
  outcome.tree.root_question = question.id;

  // A completion is a single chain that keeps its attempt index at every
  // depth, so chain i replays the i-th sampling stream end to end.
  auto gen_chain = [&](int attempt) -> std::pair<std::vector<ReasoningStep>, std::int64_t> {
    std::vector<ReasoningStep> steps;
    std::int64_t calls = 0;
    SearchState state(question.id);
    for (int round = 0; round < config.max_steps; ++round) {
      auto step = try_generate(backend, question, state, config, attempt);
      ++calls;
      if (!step) break;  // backend yielded nothing; the chain cannot advance
      state = state_extend(state, *step, config.max_steps);
      steps.push_back(std::move(*step));
      if (steps.back().terminal) break;
    }
    return {std::move(steps), calls};
  };

  std::vector<std::vector<ReasoningStep>> chains(n);
  if (n > 1 && backend.supports_concurrent_calls()) {
    std::vector<std::future<std::pair<std::vector<ReasoningStep>, std::int64_t>>> futures;
    futures.reserve(n);
    for (int i = 0; i < n; ++i) {
      futures.push_back(std::async(std::launch::async, gen_chain, i));
    }
    for (int i = 0; i < n; ++i) {
      auto [steps, calls] = futures[i].get();
      chains[i] = std::move(steps);
      outcome.tree.accounting.backend_calls += calls;
    }
  } else {
    for (int i = 0; i < n; ++i) {
      auto [steps, calls] = gen_chain(i);
      chains[i] = std::move(steps);
      outcome.tree.accounting.backend_calls += calls;
    }
  }

  std::vector<std::vector<int>> chain_ids(n);
  for (int i = 0; i < n; ++i) {
    int parent = -1;
    for (const ReasoningStep& step : chains[i]) {
      parent = outcome.tree.add_node(parent, step);
      chain_ids[i].push_back(parent);
    }
  }

  // Rank complete answers: full-sequence perplexity over every token of the
  // chain, or one self-eval rating of the whole answer.
  int best = -1;
  double best_score = 0.0;
  for (int i = 0; i < n; ++i) {
    if (chains[i].empty()) continue;
    double score = 0.0;
    if (config.scorer == ScorerKind::perplexity) {
      std::vector<TokenScore> all_tokens;
      for (const ReasoningStep& step : chains[i]) {
        all_tokens.insert(all_tokens.end(), step.tokens.begin(), step.tokens.end());
      }
      score = step_perplexity(all_tokens).perplexity;
    } else {
      std::vector<std::string> texts;
      for (const ReasoningStep& step : chains[i]) texts.push_back(step.text);
      const std::string context = question.prompt_text + config.step_delimiter +
                                  join_steps(texts, config.step_delimiter) + config.step_delimiter;
      score = rate_with_backend(backend, context, &outcome.tree.accounting);
    }
    if (best < 0 || score < best_score) {  // strict: ties keep the lowest index
      best = i;
      best_score = score;
    }
  }
  if (best < 0) {
    throw Error(ErrorCode::NoProgress,
                "all " + std::to_string(n) + " completions empty for '" + question.id + "'");
  }

  std::vector<std::string> texts;
  bool step_truncated = false;
  for (std::size_t j = 0; j < chains[best].size(); ++j) {
    outcome.tree.nodes[chain_ids[best][j]].selected = true;
    texts.push_back(chains[best][j].text);
    step_truncated = step_truncated || chains[best][j].truncated;
  }
  outcome.final_text = join_steps(texts, config.step_delimiter);
  outcome.truncated = step_truncated || !chains[best].back().terminal;
  return outcome;
}

SearchOutcome sentence_level_beam(PolicyBackend& backend, const Question& question,
                                  const SearchConfig& config) {
  question.validate();
  config.validate();
  SearchOutcome outcome;
  outcome.tree.root_question = question.id;

  std::vector<std::string> stops = {". ", "? ", "! ", "\n"};
  if (std::find(stops.begin(), stops.end(), config.step_delimiter) == stops.end()) {
    stops.push_back(config.step_delimiter);
  }

  // The running context carries each selected sentence with the exact stop
  // text that ended it, so the backend resumes mid-step where it left off.
  std::string accumulated;
  int parent = -1;
  bool terminal = false;
  bool step_truncated = false;
  std::vector<std::string> texts;

  for (int round = 0; round < config.max_steps && !terminal; ++round) {
    struct SentenceCandidate {
      ReasoningStep step;
      std::string stop;
    };
    std::vector<SentenceCandidate> candidates;
    std::vector<int> node_ids;
    for (int a = 0; a < config.max_beam; ++a) {
      GenerationRequest req;
      req.prompt_text = question.prompt_text + config.step_delimiter + accumulated;
      req.max_tokens = config.max_tokens_per_step;
      req.temperature = a == 0 ? 0.0 : config.temperature;
      req.seed = derive_attempt_seed(config.seed, question.id, round, a);
      req.stop_sequences = stops;
      const GenerationResult res = backend.generate(req);
      ++outcome.tree.accounting.backend_calls;
      if (res.tokens.empty() || res.text().empty()) continue;
      SentenceCandidate cand;
      cand.step.text = res.text();
      cand.step.tokens = res.tokens;
      cand.step.perplexity = step_perplexity(cand.step.tokens).perplexity;
      cand.step.candidate_index = a;
      cand.step.terminal = res.finish_reason == FinishReason::end_of_sequence;
      cand.step.truncated = res.finish_reason == FinishReason::token_budget;
      cand.stop = res.matched_stop;
      node_ids.push_back(outcome.tree.add_node(parent, cand.step));
      candidates.push_back(std::move(cand));
    }
    if (candidates.empty()) {
      throw Error(ErrorCode::NoProgress,
                  "no nonempty sentence in " + std::to_string(config.max_beam) +
                      " attempts for '" + question.id + "' at round " + std::to_string(round));
    }
    int chosen = 0;
    if (candidates.size() > 1) {
      double best = sentence_score(backend, question, config, accumulated, candidates[0].step,
                                   outcome.tree.accounting);
      for (std::size_t i = 1; i < candidates.size(); ++i) {
        const double s = sentence_score(backend, question, config, accumulated,
                                        candidates[i].step, outcome.tree.accounting);
        if (s < best) {
          best = s;
          chosen = static_cast<int>(i);
        }
      }
    }
    outcome.tree.nodes[node_ids[chosen]].selected = true;
    parent = node_ids[chosen];
    texts.push_back(candidates[chosen].step.text);
    accumulated += candidates[chosen].step.text + candidates[chosen].stop;
    terminal = candidates[chosen].step.terminal;
    step_truncated = step_truncated || candidates[chosen].step.truncated;
  }
  outcome.final_text = join_steps(texts, config.step_delimiter);
  outcome.truncated = step_truncated || !terminal;
  return outcome;
}

SearchOutcome run_search(PolicyBackend& backend, const Question& question,
                         const SearchConfig& config) {
  const auto started = std::chrono::steady_clock::now();
  SearchOutcome outcome;
  switch (config.strategy) {
    case Strategy::selective:
      outcome = selective_tree_exploration(backend, question, config);
      break;
    case Strategy::stage_beam:
      outcome = stage_level_beam(backend, question, config);
      break;
    case Strategy::sentence_beam:
      outcome = sentence_level_beam(backend, question, config);
      break;
    case Strategy::best_of_n:
      outcome = best_of_n(backend, question, config);
      break;
    case Strategy::single_chain:
      outcome = single_chain(backend, question, config);
      break;
  }
  outcome.tree.accounting.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                             std::chrono::steady_clock::now() - started)
                                             .count();
  outcome.verify(config.step_delimiter);
  return outcome;
}

}  // namespace stepsearch
