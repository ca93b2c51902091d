// conic-ricci: run, resume, check and oracle commands over run directories.

#include "conic/experiment.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

namespace {

int thread_cap(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("CONIC_RICCI_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring CONIC_RICCI_THREADS=" << env << "\n";
  }
  return 1;
}

int with_config(const std::string& path, int (*fn)(const conic::ExperimentConfig&, std::ostream&)) {
  try {
    return fn(conic::load_config(path), std::cout);
  } catch (const conic::ConfigError& e) {
    std::cerr << "error: config " << path << ": " << e.what() << "\n";
    return conic::kExitError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal Ricci flow on punctured tori with conical ends"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker cap (default: CONIC_RICCI_THREADS, else 1)")
      ->check(CLI::PositiveNumber);

  std::string config_path;
  std::string dir;
  std::vector<std::string> overrides;

  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  run->add_option("config", config_path, "Config file")->required();
  auto* resume = app.add_subcommand("resume", "Continue a run from its last snapshot");
  resume->add_option("dir", dir, "Run directory")->required();
  resume->add_option("--set", overrides, "Override section.key=value (flow.t_end, diagnostics.*)");
  auto* check = app.add_subcommand("check", "Re-run diagnostics on a stored run");
  check->add_option("dir", dir, "Run directory")->required();
  auto* oracle = app.add_subcommand("oracle", "Solve for the uniformizer only");
  oracle->add_option("config", config_path, "Config file")->required();

  CLI11_PARSE(app, argc, argv);
  Eigen::setNbThreads(thread_cap(threads));

  if (*run) return with_config(config_path, conic::run_experiment);
  if (*oracle) return with_config(config_path, conic::run_oracle);
  if (*resume) return conic::resume_experiment(dir, overrides, std::cout);
  return conic::check_run(dir, std::cout);
}
