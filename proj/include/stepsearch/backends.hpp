#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "stepsearch/core.hpp"

// Policy-backend abstraction: prompt in, tokens with log-probabilities out.

namespace stepsearch {

struct GenerationRequest {
  std::string prompt_text;
  int max_tokens = 256;
  double temperature = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> stop_sequences;
  bool want_logprobs = true;

  void validate() const;
  // Stable key material for caching: field order and float formatting fixed.
  std::string canonical() const;
};

enum class FinishReason { stop_sequence, end_of_sequence, token_budget };

std::string to_string(FinishReason r);
FinishReason finish_reason_from_string(const std::string& s);

struct GenerationResult {
  std::vector<TokenScore> tokens;
  FinishReason finish_reason = FinishReason::end_of_sequence;
  std::int64_t latency_ms = 0;
  // The stop sequence that ended generation (empty for EOS / token budget).
  // Stop text is never part of tokens.
  std::string matched_stop;

  std::string text() const;
};

void to_json(json& j, const GenerationRequest& r);
void from_json(const json& j, GenerationRequest& r);
void to_json(json& j, const GenerationResult& r);
void from_json(const json& j, GenerationResult& r);

class PolicyBackend {
 public:
  virtual ~PolicyBackend() = default;
  virtual GenerationResult generate(const GenerationRequest& request) = 0;
  virtual std::string name() const = 0;
  // Backends that cannot take concurrent in-flight requests return false and
  // callers fall back to sequential issuance.
  virtual bool supports_concurrent_calls() const { return false; }
};

// Earliest-position match over the stop set; on position ties the longest stop
// wins (so "\n\n" beats "\n" at a paragraph break). Returns npos when nothing
// matches. `matched` receives the winning stop sequence.
std::size_t find_first_stop(const std::string& text, const std::vector<std::string>& stops,
                            std::string* matched);

// Splits text into tokens, attaching leading whitespace to the following
// chunk so that the concatenation reproduces the text byte-exactly.
std::vector<std::string> tokenize_preserving(const std::string& text);

// Cuts a token list at a character position of the concatenated text. A token
// straddling the boundary is shortened to its kept prefix and keeps its
// original logprob; zero-length remainders are dropped.
std::vector<TokenScore> truncate_tokens_at(std::vector<TokenScore> tokens, std::size_t char_pos);

}  // namespace stepsearch
