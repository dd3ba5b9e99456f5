#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "stepsearch/backends.hpp"
#include "stepsearch/core.hpp"

// Command-line front end. cli_main is the whole program minus argv plumbing so
// tests can drive it with string vectors and capture streams.

namespace stepsearch {

// One backend endpoint in a run configuration: either a scripted synthetic
// backend (kind "synthetic", script file) or an OpenAI-style HTTP server
// (kind "http", base_url + model). A non-empty cache_dir wraps it in the
// on-disk response cache.
struct BackendSpec {
  std::string kind;  // "synthetic" | "http" | "" (absent)
  std::string script;
  std::string base_url;
  std::string api_key;
  std::string model;
  std::string api_mode = "completions";  // "completions" | "chat"
  std::string cache_dir;

  bool configured() const { return !kind.empty(); }
};

// A full run description, loadable from one JSON document. Command-line flags
// override individual fields after loading.
struct RunConfig {
  std::string dataset_path;
  BackendSpec backend;
  BackendSpec judge;  // optional; required by the judge command
  SearchConfig search;
  std::string rubric_template = "templates/proof_rubric.txt";
  std::string extract_template = "templates/extract_answer.txt";
  std::string out_dir = "out";
  int parallelism = 0;  // question-level workers; 0 runs the serial path

  static RunConfig from_json(const json& j);
  static RunConfig from_file(const std::string& path);
  json to_json() const;
};

std::shared_ptr<PolicyBackend> make_backend(const BackendSpec& spec);

// Exit codes: 0 success, 1 question-level failures (a search, judge call or
// record build failed), 2 configuration errors (bad flags, unreadable or
// invalid config/dataset/script files).
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stepsearch
