#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fcca/config.hpp"
#include "fcca/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Clustered federated learning simulator"};
  std::optional<std::filesystem::path> config_path;
  std::optional<std::string> kind;
  std::optional<std::string> seeds;
  std::optional<std::string> out;
  std::vector<std::string> sets;
  bool print_config = false;

  app.add_option("--config", config_path, "flat key = value config file")->check(CLI::ExistingFile);
  app.add_option("--kind", kind, "fcca | fedavg | m_sweep | ablation_unknown");
  app.add_option("--seed", seeds, "comma-separated seed list");
  app.add_option("--out", out, "output directory");
  app.add_option("--set", sets, "key=value override, repeatable")->take_all();
  app.add_flag("--print-config", print_config, "print the effective config and exit");
  CLI11_PARSE(app, argc, argv);

  try {
    fcca::Overrides overrides;
    for (const auto& s : sets) overrides.push_back(fcca::split_assignment(s));
    if (kind) overrides.emplace_back("kind", *kind);
    if (seeds) overrides.emplace_back("seeds", *seeds);
    if (out) overrides.emplace_back("out", *out);
    const fcca::RunConfig config = fcca::load_config(config_path, overrides);
    if (print_config) {
      std::cout << fcca::render_config(config);
      return 0;
    }
    const fcca::ExperimentOutcome outcome = fcca::run_experiment(config, std::cout);
    if (!outcome.ok()) {
      std::cerr << outcome.failures.size() << " of " << outcome.runs << " runs failed; see "
                << (config.out / "FAILED.txt").string() << '\n';
      return 1;
    }
    return 0;
  } catch (const fcca::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
