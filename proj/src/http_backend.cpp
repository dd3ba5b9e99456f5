#include "stepsearch/http_backend.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>

namespace stepsearch {

void HttpBackendConfig::apply_env() {
  if (const char* v = std::getenv("STEPSEARCH_API_BASE")) base_url = v;
  if (const char* v = std::getenv("STEPSEARCH_API_KEY")) api_key = v;
  if (const char* v = std::getenv("STEPSEARCH_TIMEOUT_MS")) timeout_ms = std::atoi(v);
}

void HttpBackendConfig::validate() const {
  if (base_url.rfind("http://", 0) != 0) {
    throw Error(ErrorCode::ConfigError,
                "http backend needs an http:// base url (set STEPSEARCH_API_BASE); got '" +
                    base_url + "'");
  }
  if (model.empty()) {
    throw Error(ErrorCode::ConfigError, "http backend needs a model name");
  }
  if (timeout_ms <= 0 || max_retries < 0 || retry_backoff_ms < 0) {
    throw Error(ErrorCode::ConfigError, "http backend timing settings must be positive");
  }
}

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  config_.validate();
  // Split "http://host:port/prefix" into the client target and path prefix.
  std::string rest = config_.base_url.substr(std::string("http://").size());
  const std::size_t slash = rest.find('/');
  std::string prefix;
  if (slash != std::string::npos) {
    prefix = rest.substr(slash);
    rest = rest.substr(0, slash);
  }
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  host_ = "http://" + rest;
  path_prefix_ = prefix.empty() ? "/v1" : prefix;
  bucket_refill_time_ = std::chrono::steady_clock::now();
  bucket_tokens_ = config_.requests_per_second;
}

std::string HttpBackend::name() const { return "http(" + config_.model + ")"; }

json HttpBackend::build_body(const GenerationRequest& request) const {
  json body;
  body["model"] = config_.model;
  if (config_.mode == HttpApiMode::completions) {
    body["prompt"] = request.prompt_text;
  } else {
    body["messages"] = json::array({json{{"role", "user"}, {"content", request.prompt_text}}});
  }
  body["max_tokens"] = request.max_tokens;
  body["temperature"] = request.temperature;
  body["seed"] = request.seed;
  if (!request.stop_sequences.empty()) body["stop"] = request.stop_sequences;
  body["logprobs"] = config_.mode == HttpApiMode::completions ? json(1) : json(true);
  if (config_.mode == HttpApiMode::chat) body["top_logprobs"] = 1;
  return body;
}

GenerationResult HttpBackend::parse_reply(const json& body, const GenerationRequest& request) const {
  GenerationResult result;
  const json* choice = nullptr;
  try {
    choice = &body.at("choices").at(0);
  } catch (const json::exception&) {
    throw Error(ErrorCode::Protocol, "reply has no choices");
  }
  const std::string finish = choice->value("finish_reason", "stop");

  try {
    if (config_.mode == HttpApiMode::completions) {
      const json& lp = choice->at("logprobs");
      if (lp.is_null()) throw Error(ErrorCode::MissingLogprobs, "logprobs missing from reply");
      const json& toks = lp.at("tokens");
      const json& vals = lp.at("token_logprobs");
      if (toks.size() != vals.size()) {
        throw Error(ErrorCode::Protocol, "token and logprob arrays differ in length");
      }
      for (std::size_t i = 0; i < toks.size(); ++i) {
        if (vals[i].is_null()) {
          throw Error(ErrorCode::MissingLogprobs, "null token logprob in reply");
        }
        result.tokens.push_back(TokenScore{toks[i].get<std::string>(), vals[i].get<double>()});
      }
    } else {
      const json& lp = choice->at("logprobs");
      if (lp.is_null()) throw Error(ErrorCode::MissingLogprobs, "logprobs missing from reply");
      for (const json& item : lp.at("content")) {
        result.tokens.push_back(
            TokenScore{item.at("token").get<std::string>(), item.at("logprob").get<double>()});
      }
    }
  } catch (const json::exception& e) {
    if (request.want_logprobs) {
      throw Error(ErrorCode::MissingLogprobs, std::string("reply lacks usable logprobs: ") + e.what());
    }
  }

  if (finish == "length") {
    result.finish_reason = FinishReason::token_budget;
  } else {
    result.finish_reason = FinishReason::end_of_sequence;
  }

  // Stop sequences are enforced on our side regardless of what the server
  // claims, so included stop text is cut and matched_stop is always filled.
  std::string text;
  for (const TokenScore& t : result.tokens) text += t.token_text;
  std::string matched;
  const std::size_t pos = find_first_stop(text, request.stop_sequences, &matched);
  if (pos != std::string::npos) {
    result.tokens = truncate_tokens_at(std::move(result.tokens), pos);
    result.finish_reason = FinishReason::stop_sequence;
    result.matched_stop = matched;
  } else if (finish == "stop" && !request.stop_sequences.empty()) {
    // Server stopped on a sequence and stripped it; we cannot tell which one
    // if several are configured, so report the server's account.
    result.finish_reason = FinishReason::stop_sequence;
  }
  return result;
}

void HttpBackend::rate_limit_acquire() {
  if (config_.requests_per_second <= 0.0) return;
  std::unique_lock<std::mutex> lock(bucket_mutex_);
  for (;;) {
    const auto now = std::chrono::steady_clock::now();
    const double elapsed = std::chrono::duration<double>(now - bucket_refill_time_).count();
    bucket_refill_time_ = now;
    bucket_tokens_ = std::min(config_.requests_per_second,
                              bucket_tokens_ + elapsed * config_.requests_per_second);
    if (bucket_tokens_ >= 1.0) {
      bucket_tokens_ -= 1.0;
      return;
    }
    const double wait_s = (1.0 - bucket_tokens_) / config_.requests_per_second;
    lock.unlock();
    std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
    lock.lock();
  }
}

GenerationResult HttpBackend::generate(const GenerationRequest& request) {
  request.validate();
  const std::string endpoint =
      path_prefix_ + (config_.mode == HttpApiMode::completions ? "/completions" : "/chat/completions");
  const std::string payload = build_body(request).dump();

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(config_.retry_backoff_ms * (1 << (attempt - 1))));
    }
    rate_limit_acquire();

    // One client per call: httplib clients are not safe for concurrent use.
    httplib::Client client(host_);
    client.set_connection_timeout(0, config_.timeout_ms * 1000);
    client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
    httplib::Headers headers;
    if (!config_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + config_.api_key);
    }

    const auto started = std::chrono::steady_clock::now();
    httplib::Result res = client.Post(endpoint, headers, payload, "application/json");
    const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - started)
                             .count();

    if (!res) {
      last_error = "connection error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "server error " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(ErrorCode::Protocol,
                  "http " + std::to_string(res->status) + " from " + endpoint + ": " + res->body);
    }
    json body;
    try {
      body = json::parse(res->body);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Protocol, std::string("unparseable reply: ") + e.what());
    }
    GenerationResult result = parse_reply(body, request);
    result.latency_ms = latency;
    return result;
  }
  throw Error(ErrorCode::Transport,
              "request failed after " + std::to_string(config_.max_retries + 1) + " attempts; last: " +
                  last_error);
}

}  // namespace stepsearch
