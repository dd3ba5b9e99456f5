#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>

#include "stepsearch/backends.hpp"

namespace stepsearch {

// Content-addressed on-disk cache wrapped around another backend. Each request
// hashes to one JSON file under the cache directory; hits are served without
// touching the inner backend, misses are forwarded and persisted. Corrupt
// cache entries are rewritten from a fresh inner call rather than failing the
// run.
class CachedBackend : public PolicyBackend {
 public:
  CachedBackend(std::shared_ptr<PolicyBackend> inner, std::filesystem::path cache_dir);

  GenerationResult generate(const GenerationRequest& request) override;
  std::string name() const override;
  bool supports_concurrent_calls() const override;

  std::uint64_t hits() const { return hits_; }
  std::uint64_t misses() const { return misses_; }

  static std::string request_key(const GenerationRequest& request);

 private:
  std::filesystem::path entry_path(const std::string& key) const;

  std::shared_ptr<PolicyBackend> inner_;
  std::filesystem::path cache_dir_;
  std::mutex mutex_;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
};

}  // namespace stepsearch
