#include "stepsearch/cached_backend.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>

namespace stepsearch {

namespace {

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, digest, &digest_len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error(ErrorCode::IoError, "sha256 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(digest_len * 2);
  for (unsigned int i = 0; i < digest_len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

}  // namespace

CachedBackend::CachedBackend(std::shared_ptr<PolicyBackend> inner, std::filesystem::path cache_dir)
    : inner_(std::move(inner)), cache_dir_(std::move(cache_dir)) {
  if (!inner_) {
    throw Error(ErrorCode::ConfigError, "cached backend needs an inner backend");
  }
  std::error_code ec;
  std::filesystem::create_directories(cache_dir_, ec);
  if (ec) {
    throw Error(ErrorCode::IoError,
                "cannot create cache dir " + cache_dir_.string() + ": " + ec.message());
  }
}

std::string CachedBackend::request_key(const GenerationRequest& request) {
  return sha256_hex(request.canonical());
}

std::filesystem::path CachedBackend::entry_path(const std::string& key) const {
  return cache_dir_ / (key + ".json");
}

std::string CachedBackend::name() const { return "cached(" + inner_->name() + ")"; }

bool CachedBackend::supports_concurrent_calls() const {
  return inner_->supports_concurrent_calls();
}

GenerationResult CachedBackend::generate(const GenerationRequest& request) {
  request.validate();
  const std::string key = request_key(request);
  const std::filesystem::path path = entry_path(key);

  {
    std::lock_guard<std::mutex> lock(mutex_);
    std::ifstream in(path);
    if (in) {
      try {
        json entry;
        in >> entry;
        if (entry.at("request_hash").get<std::string>() != key) {
          throw Error(ErrorCode::CacheCorrupt, "hash mismatch");
        }
        GenerationResult result = entry.at("result").get<GenerationResult>();
        ++hits_;
        return result;
      } catch (const std::exception& e) {
        // A bad entry must not fail the run; regenerate and overwrite it.
        std::fprintf(stderr, "warning: corrupt cache entry %s (%s); regenerating\n",
                     path.string().c_str(), e.what());
      }
    }
  }

  GenerationResult result = inner_->generate(request);

  json entry;
  entry["request_hash"] = key;
  entry["request"] = request;
  entry["result"] = result;

  std::lock_guard<std::mutex> lock(mutex_);
  ++misses_;
  const std::filesystem::path tmp =
      cache_dir_ / (key + ".tmp." + std::to_string(::getpid()) + "." + std::to_string(misses_));
  {
    std::ofstream out(tmp);
    if (!out) {
      throw Error(ErrorCode::IoError, "cannot write cache entry " + tmp.string());
    }
    out << entry.dump(2) << "\n";
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::IoError, "cannot finalize cache entry " + path.string());
  }
  return result;
}

}  // namespace stepsearch
