#include "stepsearch/scoring.hpp"

#include <cmath>

namespace stepsearch {

void StepScore::validate() const {
  if (token_count < 1) {
    throw Error(ErrorCode::EmptyStep, "step score over zero tokens");
  }
  const double expected = std::exp(-mean_logprob);
  if (std::abs(perplexity - expected) > 1e-12 * expected) {
    throw Error(ErrorCode::ConfigError, "perplexity does not match exp(-mean_logprob)");
  }
}

StepScore step_perplexity(std::span<const TokenScore> tokens) {
  if (tokens.empty()) {
    throw Error(ErrorCode::EmptyStep, "cannot score an empty token list");
  }
  double sum = 0.0;
  for (const TokenScore& t : tokens) {
    if (!std::isfinite(t.logprob)) {
      throw Error(ErrorCode::NonFiniteLogprob, "token '" + t.token_text + "' has non-finite logprob");
    }
    if (t.logprob > 0.0) {
      throw Error(ErrorCode::InvalidLogprob,
                  "token '" + t.token_text + "' has logprob > 0 (probability above 1)");
    }
    sum += t.logprob;
  }
  StepScore score;
  score.token_count = static_cast<int>(tokens.size());
  score.mean_logprob = sum / static_cast<double>(tokens.size());
  score.perplexity = std::exp(-score.mean_logprob);
  return score;
}

void to_json(json& j, const StepScore& s) {
  j = json{{"perplexity", s.perplexity},
           {"token_count", s.token_count},
           {"mean_logprob", s.mean_logprob}};
}

void from_json(const json& j, StepScore& s) {
  j.at("perplexity").get_to(s.perplexity);
  j.at("token_count").get_to(s.token_count);
  j.at("mean_logprob").get_to(s.mean_logprob);
}

}  // namespace stepsearch
