#include "fcca/experiment.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace fcca {

namespace fs = std::filesystem;

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(var / static_cast<double>(values.size()));
  return out;
}

namespace {

std::string num(double v) {
  std::ostringstream out;
  out << std::setprecision(10) << v;
  return out.str();
}

std::ofstream open(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

void write_similarity(const fs::path& dir, std::uint64_t seed, const SimilarityTensors& sim) {
  const std::string tag = std::to_string(seed);
  write_matrix_csv(dir / ("similarity_D_" + tag + ".csv"), sim.reduced);
  for (std::size_t y = 0; y < sim.labels.size(); ++y) {
    write_matrix_csv(dir / ("similarity_S_" + std::to_string(sim.labels[y]) + "_" + tag + ".csv"),
                     sim.fused.slice(y));
  }
}

void dump_datasets(const fs::path& dir, const FederationConfig& config) {
  const FederatedData data = build_federated_data(config);
  const fs::path sub = dir / ("data_" + std::to_string(config.seed));
  fs::create_directories(sub);
  for (std::size_t k = 0; k < data.shards.size(); ++k) {
    write_dataset_csv(sub / ("client" + std::to_string(k) + "_train.csv"), data.shards[k]->train);
    write_dataset_csv(sub / ("client" + std::to_string(k) + "_test.csv"), data.shards[k]->test);
  }
}

struct SeedResult {
  std::uint64_t seed = 0;
  RoundMetrics final;
  double margin = std::nan("");
};

using Runner = std::function<RunReport(const FederationConfig&)>;

// Runs every seed into `dir`; failed seeds are logged and skipped.
std::vector<SeedResult> run_seeds(const RunConfig& config, const FederationConfig& base, const fs::path& dir,
                                  const Runner& runner, ExperimentOutcome& outcome, std::ostream& log) {
  fs::create_directories(dir);
  std::vector<SeedResult> results;
  for (std::uint64_t seed : config.seeds) {
    FederationConfig fc = base;
    fc.seed = seed;
    ++outcome.runs;
    try {
      if (config.dump_datasets) dump_datasets(dir, fc);
      const RunReport report = runner(fc);
      const std::string tag = std::to_string(seed);
      write_metrics_csv(dir / ("metrics_" + tag + ".csv"), report);
      write_final_state(dir / ("final_" + tag + ".txt"), report);
      write_solution_csv(dir / ("solution_" + tag + ".csv"), report);
      SeedResult r{seed, report.history.back(), std::nan("")};
      if (report.final_similarity) {
        write_similarity(dir, seed, *report.final_similarity);
        r.margin = similarity_margin(report.final_similarity->fused, report.ground_truth);
      }
      log << dir.filename().string() << " seed " << seed << ": global " << num(r.final.global_accuracy)
          << " personalized " << num(r.final.personalized_accuracy) << " ari " << num(r.final.ari) << '\n';
      results.push_back(r);
    } catch (const std::exception& e) {
      outcome.failures.push_back(dir.filename().string() + " seed " + std::to_string(seed) + ": " + e.what());
      log << "FAILED " << outcome.failures.back() << '\n';
    }
  }
  return results;
}

std::vector<double> collect(const std::vector<SeedResult>& rs, double RoundMetrics::*field) {
  std::vector<double> out;
  for (const auto& r : rs) out.push_back(r.final.*field);
  return out;
}

std::string cell(const std::vector<double>& values) {
  const MeanStd ms = mean_std(values);
  return num(ms.mean) + "," + num(ms.std);
}

constexpr const char* kSummaryColumns =
    "global_acc_mean,global_acc_std,personalized_acc_mean,personalized_acc_std,ari_mean,ari_std,objective_mean,"
    "objective_std";

std::string summary_row(const std::vector<SeedResult>& rs) {
  return cell(collect(rs, &RoundMetrics::global_accuracy)) + "," +
         cell(collect(rs, &RoundMetrics::personalized_accuracy)) + "," + cell(collect(rs, &RoundMetrics::ari)) +
         "," + cell(collect(rs, &RoundMetrics::objective));
}

}  // namespace

ExperimentOutcome run_experiment(const RunConfig& config, std::ostream& log) {
  config.validate();
  ExperimentOutcome outcome;
  const fs::path out = config.out;
  write_effective_config(out, config);
  const Runner fcca_run = [](const FederationConfig& c) { return run_federation(c); };

  switch (config.kind) {
    case ExperimentKind::fcca:
    case ExperimentKind::fedavg: {
      const Runner runner = config.kind == ExperimentKind::fcca
                                ? fcca_run
                                : Runner([](const FederationConfig& c) { return fedavg_baseline(c); });
      const auto rs = run_seeds(config, config.federation, out, runner, outcome, log);
      auto f = open(out / "summary.csv");
      f << "runs," << kSummaryColumns << '\n' << rs.size() << ',' << summary_row(rs) << '\n';
      break;
    }
    case ExperimentKind::m_sweep: {
      auto f = open(out / "summary.csv");
      f << "clusters,runs," << kSummaryColumns << '\n';
      for (std::size_t m = config.sweep_min; m <= config.sweep_max; ++m) {
        FederationConfig fc = config.federation;
        fc.clusters = m;
        const auto rs = run_seeds(config, fc, out / ("m" + std::to_string(m)), fcca_run, outcome, log);
        f << m << ',' << rs.size() << ',' << summary_row(rs) << '\n';
      }
      break;
    }
    case ExperimentKind::ablation_unknown: {
      FederationConfig with = config.federation;
      with.unknown_augmentation = true;
      FederationConfig without = config.federation;
      without.unknown_augmentation = false;
      const auto rw = run_seeds(config, with, out / "with_unknown", fcca_run, outcome, log);
      const auto ro = run_seeds(config, without, out / "without_unknown", fcca_run, outcome, log);

      auto margins = open(out / "margins.csv");
      margins << "seed,margin_with,margin_without,ari_with,ari_without\n";
      std::vector<double> mw, mo;
      for (const auto& a : rw) {
        for (const auto& b : ro) {
          if (a.seed != b.seed) continue;
          margins << a.seed << ',' << num(a.margin) << ',' << num(b.margin) << ',' << num(a.final.ari) << ','
                  << num(b.final.ari) << '\n';
        }
      }
      for (const auto& a : rw) mw.push_back(a.margin);
      for (const auto& b : ro) mo.push_back(b.margin);

      auto f = open(out / "summary.csv");
      f << "variant,runs,margin_mean,margin_std," << kSummaryColumns << '\n';
      f << "with_unknown," << rw.size() << ',' << cell(mw) << ',' << summary_row(rw) << '\n';
      f << "without_unknown," << ro.size() << ',' << cell(mo) << ',' << summary_row(ro) << '\n';
      break;
    }
  }

  if (!outcome.ok()) {
    auto f = open(out / "FAILED.txt");
    for (const auto& line : outcome.failures) f << line << '\n';
  } else if (fs::exists(out / "FAILED.txt")) {
    fs::remove(out / "FAILED.txt");
  }
  return outcome;
}

}  // namespace fcca
