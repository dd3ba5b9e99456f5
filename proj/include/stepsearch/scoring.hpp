#pragma once

#include <span>

#include "stepsearch/core.hpp"

// Step perplexity: exp of the mean negative token log-probability. Low values
// mean the model was confident generating the step; strategies use this as the
// value function when ranking candidate steps.

namespace stepsearch {

struct StepScore {
  double perplexity = 1.0;   // >= 1; equals 1 iff every logprob is 0
  int token_count = 0;
  double mean_logprob = 0.0; // <= 0

  void validate() const;  // perplexity == exp(-mean_logprob), rel. tol 1e-12
};

// Throws EmptyStep on an empty list, NonFiniteLogprob on NaN/inf entries and
// InvalidLogprob for logprob > 0 (a probability above 1 is backend corruption).
// The mean is accumulated in the log domain; a single exp at the end keeps
// long low-probability steps from overflowing.
StepScore step_perplexity(std::span<const TokenScore> tokens);

void to_json(json& j, const StepScore& s);
void from_json(const json& j, StepScore& s);

}  // namespace stepsearch
