#pragma once

#include "stepsearch/backends.hpp"
#include "stepsearch/core.hpp"

// Search strategies over a policy backend: perplexity-gated selective tree
// exploration plus the stage-beam / sentence-beam / best-of-n / single-chain
// comparison baselines. All of them emit a SearchOutcome whose tree records
// every generated candidate.

namespace stepsearch {

// The candidates generated at one depth, in attempt order.
struct CandidateBatch {
  SearchState parent_state;
  std::vector<ReasoningStep> candidates;

  void validate(int max_beam) const;
};

// Generates one candidate step by extending `state` with a single backend
// call. Attempt 0 decodes greedily (temperature 0); later attempts sample at
// config.temperature under an attempt-derived seed. The step ends at the step
// delimiter, at end-of-sequence (terminal=true) or at the per-step token
// budget (truncated=true). Throws EmptyStep when the backend produced no
// text before the delimiter.
ReasoningStep generate_step(PolicyBackend& backend, const Question& question,
                            const SearchState& state, const SearchConfig& config, int attempt);

SearchOutcome selective_tree_exploration(PolicyBackend& backend, const Question& question,
                                         const SearchConfig& config);
SearchOutcome stage_level_beam(PolicyBackend& backend, const Question& question,
                               const SearchConfig& config);
SearchOutcome sentence_level_beam(PolicyBackend& backend, const Question& question,
                                  const SearchConfig& config);
SearchOutcome best_of_n(PolicyBackend& backend, const Question& question,
                        const SearchConfig& config);
SearchOutcome single_chain(PolicyBackend& backend, const Question& question,
                           const SearchConfig& config);

// Dispatches on config.strategy and stamps wall time into the accounting.
SearchOutcome run_search(PolicyBackend& backend, const Question& question,
                         const SearchConfig& config);

// Candidate ranking value; lower is better. The perplexity scorer reads the
// step's own perplexity; the self-eval scorer asks the backend to rate the
// candidate 1-10 and negates the rating. The extra rating call is charged to
// accounting.backend_calls when `accounting` is given.
double candidate_score(PolicyBackend& backend, const Question& question,
                       const SearchState& state, const ReasoningStep& step,
                       const SearchConfig& config, Accounting* accounting);

}  // namespace stepsearch
