#pragma once

#include <chrono>
#include <mutex>
#include <string>

#include "stepsearch/backends.hpp"

namespace stepsearch {

// Which OpenAI-compatible endpoint shape to speak.
enum class HttpApiMode { completions, chat };

struct HttpBackendConfig {
  std::string base_url;      // e.g. http://127.0.0.1:8080 or http://host/v1
  std::string api_key;       // sent as a bearer token when nonempty
  std::string model;
  HttpApiMode mode = HttpApiMode::completions;
  int timeout_ms = 30000;
  int max_retries = 3;       // extra attempts after the first, transport errors only
  int retry_backoff_ms = 250;
  double requests_per_second = 0.0;  // <= 0 disables rate limiting

  // Fills base_url / api_key / timeout_ms from STEPSEARCH_API_BASE,
  // STEPSEARCH_API_KEY and STEPSEARCH_TIMEOUT_MS when those are set.
  void apply_env();
  void validate() const;
};

// Client for OpenAI-compatible completion servers. Requests always ask for
// logprobs; a reply without them is a hard error because every search
// strategy needs token scores. Stop sequences are re-enforced client-side so
// servers that echo the stop text back behave like ones that do not.
class HttpBackend : public PolicyBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);

  GenerationResult generate(const GenerationRequest& request) override;
  std::string name() const override;
  bool supports_concurrent_calls() const override { return true; }

  // Exposed for tests: JSON body for a request, and reply parsing.
  json build_body(const GenerationRequest& request) const;
  GenerationResult parse_reply(const json& body, const GenerationRequest& request) const;

 private:
  void rate_limit_acquire();

  HttpBackendConfig config_;
  std::string host_;         // scheme://host[:port]
  std::string path_prefix_;  // e.g. /v1

  std::mutex bucket_mutex_;
  double bucket_tokens_ = 0.0;
  std::chrono::steady_clock::time_point bucket_refill_time_{};
};

}  // namespace stepsearch
