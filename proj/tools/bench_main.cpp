// Benchmarks the serial reference batch runner against the OpenMP-parallel
// one on a generated synthetic corpus and checks that both produce identical
// outcomes.

#include <CLI11.hpp>

#include <chrono>
#include <iostream>

#include "stepsearch/runner.hpp"
#include "stepsearch/scriptgen.hpp"
#include "stepsearch/synthetic_backend.hpp"

using clock_type = std::chrono::steady_clock;

namespace {

double run_ms(const std::function<void()>& fn) {
  const auto start = clock_type::now();
  fn();
  return std::chrono::duration<double, std::milli>(clock_type::now() - start).count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serial vs parallel batch runner benchmark"};
  int questions = 200;
  int depth = 4;
  int branching = 5;
  int threads = 0;
  int repeats = 3;
  std::string strategy = "selective";
  double theta = 1.1;
  int beam = 3;
  app.add_option("--questions", questions, "corpus size");
  app.add_option("--depth", depth, "steps per chain");
  app.add_option("--branching", branching, "children per node");
  app.add_option("--threads", threads, "parallel workers, 0 = OpenMP default");
  app.add_option("--repeats", repeats, "timed repetitions per variant");
  app.add_option("--strategy", strategy, "search strategy");
  app.add_option("--theta", theta, "perplexity gate");
  app.add_option("--beam", beam, "candidate budget K");
  CLI11_PARSE(app, argc, argv);

  try {
    stepsearch::ScriptGenConfig gen;
    gen.num_questions = questions;
    gen.depth = depth;
    gen.branching = branching;
    const stepsearch::json script = stepsearch::make_uniform_script(gen);
    auto backend = stepsearch::SyntheticBackend::from_json(script);
    const std::vector<stepsearch::Question> qs = stepsearch::questions_from_script(script);

    stepsearch::SearchConfig config;
    config.strategy = stepsearch::strategy_from_string(strategy);
    config.theta = theta;
    config.max_beam = beam;
    config.step_delimiter = backend.step_delimiter();

    stepsearch::BatchResult serial, parallel;
    double serial_best = 0.0, parallel_best = 0.0;
    for (int r = 0; r < repeats; ++r) {
      const double s = run_ms([&] { serial = stepsearch::run_batch_serial(backend, qs, config); });
      const double p = run_ms(
          [&] { parallel = stepsearch::run_batch_parallel(backend, qs, config, threads); });
      if (r == 0 || s < serial_best) serial_best = s;
      if (r == 0 || p < parallel_best) parallel_best = p;
    }

    if (serial.to_comparable_json() != parallel.to_comparable_json()) {
      std::cerr << "MISMATCH: parallel outcomes differ from the serial reference\n";
      return 1;
    }
    std::cout << "questions " << questions << "  strategy " << strategy << "  theta " << theta
              << "  K " << beam << "\n";
    std::cout << "serial   " << serial_best << " ms\n";
    std::cout << "parallel " << parallel_best << " ms  (speedup "
              << (parallel_best > 0 ? serial_best / parallel_best : 0.0) << "x)\n";
    std::cout << "outcomes identical across both runners\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
