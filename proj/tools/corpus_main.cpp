// Generates synthetic backend scripts plus the matching question files so the
// CLI has something to run against without a live model server.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "stepsearch/errors.hpp"
#include "stepsearch/scriptgen.hpp"

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw stepsearch::Error(stepsearch::ErrorCode::IoError, "cannot write " + path.string());
  out << body;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic corpus generator"};
  std::string kind = "planted";
  std::string out_dir = "corpus";
  int questions = 50;
  int depth = 3;
  int branching = 5;
  std::uint64_t seed = 99;
  app.add_option("--kind", kind, "planted (gold answers) or uniform (random trees)")
      ->check(CLI::IsMember({"planted", "uniform"}));
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--questions", questions, "number of questions");
  app.add_option("--depth", depth, "steps per reasoning chain");
  app.add_option("--branching", branching, "children per non-terminal node");
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  try {
    fs::create_directories(out_dir);
    stepsearch::json script;
    std::vector<stepsearch::Question> gold;
    if (kind == "planted") {
      stepsearch::PlantedCorpusConfig config;
      config.num_questions = questions;
      config.depth = depth;
      config.branching = branching;
      config.seed = seed;
      script = stepsearch::make_planted_corpus(config, &gold);
    } else {
      stepsearch::ScriptGenConfig config;
      config.num_questions = questions;
      config.depth = depth;
      config.branching = branching;
      config.seed = seed;
      script = stepsearch::make_uniform_script(config);
      gold = stepsearch::questions_from_script(script);
    }
    write_file(fs::path(out_dir) / "script.json", script.dump(2) + "\n");
    stepsearch::save_questions_jsonl(gold, (fs::path(out_dir) / "questions.jsonl").string());
    std::cout << "wrote " << gold.size() << " questions to " << out_dir << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
