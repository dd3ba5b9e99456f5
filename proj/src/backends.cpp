#include "stepsearch/backends.hpp"

#include <array>
#include <cstdio>

namespace stepsearch {

void GenerationRequest::validate() const {
  if (max_tokens < 1) {
    throw Error(ErrorCode::ConfigError, "max_tokens must be >= 1");
  }
  if (temperature < 0.0) {
    throw Error(ErrorCode::ConfigError, "temperature must be >= 0");
  }
  for (const std::string& s : stop_sequences) {
    if (s.empty()) {
      throw Error(ErrorCode::ConfigError, "stop sequences must be nonempty strings");
    }
  }
}

std::string GenerationRequest::canonical() const {
  // Hex-formatted doubles are exact, so equal requests canonicalize equally.
  std::array<char, 32> temp_buf;
  std::snprintf(temp_buf.data(), temp_buf.size(), "%a", temperature);
  json j{{"prompt_text", prompt_text},
         {"max_tokens", max_tokens},
         {"temperature", temp_buf.data()},
         {"seed", seed},
         {"stop_sequences", stop_sequences},
         {"want_logprobs", want_logprobs}};
  return j.dump();
}

std::string to_string(FinishReason r) {
  switch (r) {
    case FinishReason::stop_sequence: return "stop_sequence";
    case FinishReason::end_of_sequence: return "end_of_sequence";
    case FinishReason::token_budget: return "token_budget";
  }
  return "end_of_sequence";
}

FinishReason finish_reason_from_string(const std::string& s) {
  if (s == "stop_sequence") return FinishReason::stop_sequence;
  if (s == "end_of_sequence") return FinishReason::end_of_sequence;
  if (s == "token_budget") return FinishReason::token_budget;
  throw Error(ErrorCode::Protocol, "unknown finish reason '" + s + "'");
}

std::string GenerationResult::text() const {
  std::string out;
  for (const TokenScore& t : tokens) out += t.token_text;
  return out;
}

void to_json(json& j, const GenerationRequest& r) {
  j = json{{"prompt_text", r.prompt_text},
           {"max_tokens", r.max_tokens},
           {"temperature", r.temperature},
           {"seed", r.seed},
           {"stop_sequences", r.stop_sequences},
           {"want_logprobs", r.want_logprobs}};
}

void from_json(const json& j, GenerationRequest& r) {
  j.at("prompt_text").get_to(r.prompt_text);
  j.at("max_tokens").get_to(r.max_tokens);
  j.at("temperature").get_to(r.temperature);
  j.at("seed").get_to(r.seed);
  j.at("stop_sequences").get_to(r.stop_sequences);
  j.at("want_logprobs").get_to(r.want_logprobs);
}

void to_json(json& j, const GenerationResult& r) {
  j = json{{"tokens", r.tokens},
           {"finish_reason", to_string(r.finish_reason)},
           {"latency_ms", r.latency_ms},
           {"matched_stop", r.matched_stop}};
}

void from_json(const json& j, GenerationResult& r) {
  j.at("tokens").get_to(r.tokens);
  r.finish_reason = finish_reason_from_string(j.at("finish_reason").get<std::string>());
  r.latency_ms = j.value("latency_ms", std::int64_t{0});
  r.matched_stop = j.value("matched_stop", "");
}

std::size_t find_first_stop(const std::string& text, const std::vector<std::string>& stops,
                            std::string* matched) {
  std::size_t best_pos = std::string::npos;
  std::size_t best_len = 0;
  for (const std::string& stop : stops) {
    if (stop.empty()) continue;
    const std::size_t pos = text.find(stop);
    if (pos == std::string::npos) continue;
    if (pos < best_pos || (pos == best_pos && stop.size() > best_len)) {
      best_pos = pos;
      best_len = stop.size();
      if (matched) *matched = stop;
    }
  }
  if (best_pos == std::string::npos && matched) matched->clear();
  return best_pos;
}

std::vector<std::string> tokenize_preserving(const std::string& text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t start = i;
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    tokens.push_back(text.substr(start, i - start));
  }
  return tokens;
}

std::vector<TokenScore> truncate_tokens_at(std::vector<TokenScore> tokens, std::size_t char_pos) {
  std::vector<TokenScore> kept;
  std::size_t covered = 0;
  for (TokenScore& t : tokens) {
    if (covered >= char_pos) break;
    if (covered + t.token_text.size() <= char_pos) {
      covered += t.token_text.size();
      kept.push_back(std::move(t));
    } else {
      kept.push_back(TokenScore{t.token_text.substr(0, char_pos - covered), t.logprob});
      covered = char_pos;
    }
  }
  return kept;
}

}  // namespace stepsearch
