#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "fcca/config.hpp"

namespace fcca {

struct ExperimentOutcome {
  std::size_t runs = 0;
  std::vector<std::string> failures;  // one line per failed run

  bool ok() const noexcept { return failures.empty(); }
};

// Writes every artifact for `config.kind` under `config.out`. A failed run is
// recorded and the remaining runs continue; failures end up in FAILED.txt.
ExperimentOutcome run_experiment(const RunConfig& config, std::ostream& log);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

MeanStd mean_std(const std::vector<double>& values);

}  // namespace fcca
