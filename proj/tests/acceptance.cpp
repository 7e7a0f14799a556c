// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "fcca/cinn.hpp"
#include "fcca/clustering.hpp"
#include "fcca/federation.hpp"
#include "fcca/params.hpp"
#include "fcca/rng.hpp"
#include "support.hpp"

namespace {

using namespace fcca;
using Clock = std::chrono::steady_clock;

// Tolerances and thresholds.
constexpr double kInvertTol = 1e-8;
constexpr double kInvertBudget = 5.0;
constexpr double kLogdetTol = 1e-4;
constexpr double kJacobianStep = 1e-7;
constexpr double kLogdetBudget = 30.0;
constexpr double kFdStep = 1e-5;
constexpr double kFdRelTol = 1e-4;
constexpr double kFdFraction = 0.95;
constexpr std::size_t kFdMaxParams = 500;
constexpr double kGradBudget = 60.0;
constexpr double kMeanTol = 0.1;
constexpr double kVarLo = 0.85;
constexpr double kVarHi = 1.15;
constexpr double kDistBudget = 60.0;
constexpr double kKMeansTol = 1e-9;
constexpr double kKMeansBudget = 10.0;
constexpr std::size_t kSeeds = 10;
constexpr std::size_t kRecoveryNeeded = 8;
constexpr double kRecoveryBudget = 300.0;
constexpr double kFedAvgGap = 0.10;
constexpr std::size_t kAblationNeeded = 7;
constexpr double kTrajectoryTol = 1e-12;
constexpr std::size_t kElbowNeeded = 6;
constexpr double kElbowBudget = 1200.0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const Verdict& v, double secs) {
  std::printf("%s  [%2d] %-32s %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str(), secs);
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

template <class... Args>
std::string format(const char* fmt, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

Tensor gaussian(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t = Tensor::matrix(rows, cols);
  for (auto& v : t.values()) v = normal(rng);
  return t;
}

std::vector<std::size_t> uniform_labels(std::size_t n, std::size_t width, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, width - 1);
  std::vector<std::size_t> out(n);
  for (auto& y : out) y = pick(rng);
  return out;
}

Verdict invertibility() {
  Rng rng(101);
  CinnShape shape{.latent_dim = 16, .condition_dim = 5, .blocks = 4, .hidden = {32}, .clamp = 2.0};
  CinnParams untrained = make_cinn(shape, rng, CinnInit::random);
  CinnParams trained = make_cinn(shape, rng, CinnInit::identity);
  for (int step = 0; step < 50; ++step) {
    const Tensor z = gaussian(32, 16, rng, 2.0);
    const auto y = uniform_labels(32, 5, rng);
    auto g = cml_loss_and_gradient(trained, z, y, Tensor(), {}, 1.0);
    clip_gradient_norm(g.grads, 100.0);
    sgd_step(trained, g.grads, 0.01);
  }
  double worst = 0.0;
  for (const CinnParams* p : {&untrained, &trained}) {
    const Tensor z = gaussian(100, 16, rng, 2.0);
    const auto y = uniform_labels(100, 5, rng);
    const Tensor back = cinn_inverse(*p, cinn_forward(*p, z, y).out, y);
    for (std::size_t i = 0; i < z.size(); ++i) worst = std::max(worst, std::abs(back[i] - z[i]));
  }
  return {worst < kInvertTol, format("max |c^-1(c(z)) - z| = %.2e (< %.0e)", worst, kInvertTol)};
}

Verdict logdet_exactness() {
  Rng rng(202);
  double worst = 0.0;
  for (std::size_t latent : {2u, 4u, 6u}) {
    for (int draw = 0; draw < 20; ++draw) {
      CinnShape shape{.latent_dim = latent, .condition_dim = 5, .blocks = 4, .hidden = {32}, .clamp = 2.0};
      const CinnParams p = make_cinn(shape, rng, CinnInit::random);
      const Tensor z = gaussian(1, latent, rng);
      const auto y = uniform_labels(1, 5, rng);
      const double analytic = cinn_forward(p, z, y).logdet[0];
      worst = std::max(worst, std::abs(analytic - testing::numeric_cinn_logdet(p, z.row(0), y[0], kJacobianStep)));
    }
  }
  return {worst < kLogdetTol, format("max |analytic - numeric| = %.2e over 60 draws (< %.0e)", worst, kLogdetTol)};
}

Verdict gradient_fidelity() {
  Rng rng(303);
  CinnShape shape{.latent_dim = 4, .condition_dim = 3, .blocks = 2, .hidden = {6}, .clamp = 2.0};
  const CinnParams p = make_cinn(shape, rng, CinnInit::random);
  const std::size_t count = parameter_count(p);
  const Tensor z = gaussian(8, 4, rng), zs = gaussian(8, 4, rng);
  const auto y = uniform_labels(8, 3, rng), ys = uniform_labels(8, 3, rng);
  const CmlGradient g = cml_loss_and_gradient(p, z, y, zs, ys, 1.0);
  const auto agreement = testing::compare_gradients<CinnParams>(
      p, g.grads, [&](const CinnParams& q) { return cml_loss(q, z, y, zs, ys, 1.0); }, kFdStep, kFdRelTol);
  const bool ok = count <= kFdMaxParams && agreement.fraction() >= kFdFraction;
  return {ok, format("%zu/%zu parameters within rel %.0e (%zu params)", agreement.agreeing, agreement.checked,
                     kFdRelTol, count)};
}

Verdict distribution_learning() {
  Rng rng(404);
  CinnShape shape{.latent_dim = 2, .condition_dim = 3, .blocks = 4, .hidden = {32}, .clamp = 2.0};
  CinnParams p = make_cinn(shape, rng, CinnInit::identity);
  const double mean[2][2] = {{2.0, -1.0}, {-1.5, 2.0}};
  const double sd[2][2] = {{0.5, 1.5}, {1.2, 0.4}};
  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin(0.5);
  auto draw = [&](std::size_t n, std::vector<std::size_t>& y, int fixed) {
    Tensor z = Tensor::matrix(n, 2);
    y.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      y[r] = fixed >= 0 ? static_cast<std::size_t>(fixed) : static_cast<std::size_t>(coin(rng));
      for (int c = 0; c < 2; ++c) z(r, c) = mean[y[r]][c] + sd[y[r]][c] * normal(rng);
    }
    return z;
  };
  const int steps = 6000;
  for (int s = 0; s < steps; ++s) {
    std::vector<std::size_t> y;
    const Tensor z = draw(128, y, -1);
    const SyntheticBatch syn = sample_synthetic(2, {}, 128, 2, rng);
    auto g = cml_loss_and_gradient(p, z, y, syn.z, syn.labels, 1.0);
    clip_gradient_norm(g.grads, 10.0);
    sgd_step(p, g.grads, s < steps / 2 ? 0.01 : s < 5 * steps / 6 ? 0.002 : 0.0004);
  }
  bool ok = true;
  std::string detail;
  for (int label = 0; label < 2; ++label) {
    std::vector<std::size_t> y;
    const std::size_t n = 20000;
    const Tensor z = draw(n, y, label);
    const Tensor eps = cinn_forward(p, z, y).out;
    double m[2] = {0, 0}, v[2] = {0, 0};
    for (std::size_t r = 0; r < n; ++r) {
      for (int c = 0; c < 2; ++c) m[c] += eps(r, c) / n;
    }
    for (std::size_t r = 0; r < n; ++r) {
      for (int c = 0; c < 2; ++c) v[c] += (eps(r, c) - m[c]) * (eps(r, c) - m[c]) / n;
    }
    const double mn = std::hypot(m[0], m[1]);
    ok = ok && mn < kMeanTol;
    for (double var : v) ok = ok && var >= kVarLo && var <= kVarHi;
    detail += format("y%d |mean| %.3f var (%.3f, %.3f)  ", label, mn, v[0], v[1]);
  }
  return {ok, detail};
}

Verdict kmeans_oracle() {
  Rng rng(505);
  std::uniform_int_distribution<std::size_t> size(2, 8), dim(1, 3);
  std::normal_distribution<double> normal;
  std::size_t matched = 0;
  const std::size_t instances = 1000;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t rows = size(rng);
    Tensor pts = Tensor::matrix(rows, dim(rng));
    for (auto& v : pts.values()) v = normal(rng);
    const std::size_t n = pts.rows(), d = pts.cols();
    double best = INFINITY;
    for (std::size_t mask = 1; mask + 1 < (1u << n); ++mask) {
      std::vector<std::size_t> a(n);
      for (std::size_t k = 0; k < n; ++k) a[k] = (mask >> k) & 1u;
      // Independent inertia: sum of squared deviations from group means.
      double total = 0.0;
      for (std::size_t side = 0; side < 2; ++side) {
        std::vector<double> mu(d, 0.0);
        double cnt = 0;
        for (std::size_t k = 0; k < n; ++k) {
          if (a[k] != side) continue;
          cnt += 1;
          for (std::size_t c = 0; c < d; ++c) mu[c] += pts(k, c);
        }
        for (std::size_t k = 0; k < n; ++k) {
          if (a[k] != side) continue;
          for (std::size_t c = 0; c < d; ++c) total += std::pow(pts(k, c) - mu[c] / cnt, 2);
        }
      }
      best = std::min(best, total);
    }
    const ClusterSolution s = kmeans(pts, 2, KMeansOptions{.max_iterations = 100, .restarts = 10}, rng);
    if (std::abs(s.inertia - best) <= kKMeansTol * std::max(1.0, best)) ++matched;
  }
  return {matched == instances, format("%zu/%zu instances at the brute-force minimum", matched, instances)};
}

FederationConfig task(std::uint64_t seed) {
  FederationConfig c;
  c.clients = 10;
  c.clusters = 2;
  c.true_clusters = 2;
  c.classes = 4;
  c.rounds = 20;
  c.local_iterations = 20;
  c.learning_rate = 0.01;
  c.alpha = 1.0;
  c.batch_size = 64;
  c.seed = seed;
  return c;
}

struct SeedRuns {
  std::vector<RunReport> fcca;  // criterion-6 task, M = 2
  double fcca_seconds = 0.0;
};

double final_personalized(const RunReport& r) { return r.history.back().personalized_accuracy; }

double margin_of(const RunReport& r) {
  return r.final_similarity ? similarity_margin(r.final_similarity->fused, r.ground_truth) : -INFINITY;
}

Verdict recovery(const SeedRuns& runs) {
  std::size_t perfect = 0;
  std::string aris;
  for (const auto& r : runs.fcca) {
    const double ari = r.history.back().ari;
    perfect += ari == 1.0;
    aris += format(" %.2f", ari);
  }
  const bool ok = perfect >= kRecoveryNeeded && runs.fcca_seconds < kRecoveryBudget;
  return {ok, format("ARI = 1 on %zu/%zu seeds (need %zu); ARIs:%s; %.0f s of %.0f s budget", perfect, kSeeds,
                     kRecoveryNeeded, aris.c_str(), runs.fcca_seconds, kRecoveryBudget)};
}

Verdict beats_fedavg(const SeedRuns& runs) {
  double fcca = 0.0, fedavg = 0.0;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    fcca += final_personalized(runs.fcca[s]) / kSeeds;
    fedavg += final_personalized(fedavg_baseline(task(s))) / kSeeds;
  }
  const double gap = fcca - fedavg;
  return {gap >= kFedAvgGap, format("personalized FCCA %.3f vs FedAvg %.3f, gap %.1f pp (need %.0f)", fcca, fedavg,
                                    100 * gap, 100 * kFedAvgGap)};
}

Verdict unknown_ablation(const SeedRuns& runs) {
  std::size_t wins = 0;
  std::string pairs;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    FederationConfig off = task(s);
    off.unknown_augmentation = false;
    const double with = margin_of(runs.fcca[s]);
    const double without = margin_of(run_federation(off));
    wins += with > without;
    pairs += format(" %.2f/%.2f", with, without);
  }
  return {wins >= kAblationNeeded,
          format("margin larger with UNKNOWN on %zu/%zu seeds (need %zu); with/without:%s", wins, kSeeds,
                 kAblationNeeded, pairs.c_str())};
}

Verdict single_cluster_equivalence() {
  double worst = 0.0;
  bool shapes = true;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    FederationConfig c = task(seed);
    c.clusters = 1;
    c.cinn_phase = false;
    const RunReport a = run_federation(c, {.record_trajectory = true});
    const RunReport b = fedavg_baseline(c, {.record_trajectory = true});
    shapes = shapes && a.trajectory.size() == b.trajectory.size() && a.trajectory.size() == c.rounds;
    for (std::size_t r = 0; shapes && r < a.trajectory.size(); ++r) {
      shapes = a.trajectory[r].size() == b.trajectory[r].size();
      for (std::size_t i = 0; shapes && i < a.trajectory[r].size(); ++i) {
        worst = std::max(worst, std::abs(a.trajectory[r][i] - b.trajectory[r][i]));
      }
    }
  }
  return {shapes && worst <= kTrajectoryTol,
          format("max trajectory gap %.2e over 3 seeds x 20 rounds (<= %.0e)", worst, kTrajectoryTol)};
}

Verdict complexity(const SeedRuns& runs) {
  const FederationConfig c = task(0);
  std::size_t invocations = 0, bad = 0, rounds = 0;
  for (const auto& r : runs.fcca) {
    for (std::size_t i = 1; i < r.history.size(); ++i) {
      const auto& m = r.history[i];
      ++rounds;
      invocations += m.clustering_invocations;
      const bool ok = m.clustering_invocations == 1 && m.inversion_batches == 2 * c.clients &&
                      m.similarity_entries == c.classes * c.clients * c.clients &&
                      m.cinn_steps == c.clients * c.local_iterations;
      bad += !ok;
    }
  }
  return {bad == 0 && rounds > 0,
          format("%zu rounds, %zu clustering invocations: 2N=%zu inversion batches, |Y|N^2=%zu entries, NK=%zu cINN "
                 "steps each; %zu mismatches",
                 rounds, invocations, 2 * c.clients, c.classes * c.clients * c.clients,
                 c.clients * c.local_iterations, bad)};
}

Verdict elbow(const SeedRuns& runs) {
  const auto t0 = Clock::now();
  std::size_t hits = 0;
  std::map<std::size_t, double> mean;
  std::string winners;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    std::map<std::size_t, double> acc;
    acc[2] = final_personalized(runs.fcca[s]);
    for (std::size_t m : {1u, 3u, 4u}) {
      FederationConfig c = task(s);
      c.clusters = m;
      acc[m] = final_personalized(run_federation(c));
    }
    const double best = std::max_element(acc.begin(), acc.end(), [](auto& a, auto& b) { return a.second < b.second; })
                            ->second;
    hits += acc[2] >= best;
    std::size_t arg = 0;
    for (const auto& [m, a] : acc) {
      mean[m] += a / kSeeds;
      if (arg == 0 && a >= best) arg = m;
    }
    winners += format(" %zu", arg);
  }
  const double secs = seconds_since(t0) + runs.fcca_seconds;
  return {hits >= kElbowNeeded && secs < kElbowBudget,
          format("M=2 best on %zu/%zu seeds (need %zu); mean acc M1..4 %.3f %.3f %.3f %.3f; argmax:%s; %.0f s of "
                 "%.0f s",
                 hits, kSeeds, kElbowNeeded, mean[1], mean[2], mean[3], mean[4], winners.c_str(), secs,
                 kElbowBudget)};
}

template <class F>
void timed(int id, const char* name, F&& f) {
  const auto t0 = Clock::now();
  Verdict v;
  try {
    v = f();
  } catch (const std::exception& e) {
    v = {false, std::string("threw: ") + e.what()};
  }
  report(id, name, v, seconds_since(t0));
}

}  // namespace

int main() {
  timed(1, "invertibility", [] {
    const auto t0 = Clock::now();
    Verdict v = invertibility();
    const double s = seconds_since(t0);
    v.pass = v.pass && s < kInvertBudget;
    return v;
  });
  timed(2, "logdet exactness", [] {
    const auto t0 = Clock::now();
    Verdict v = logdet_exactness();
    v.pass = v.pass && seconds_since(t0) < kLogdetBudget;
    return v;
  });
  timed(3, "gradient fidelity", [] {
    const auto t0 = Clock::now();
    Verdict v = gradient_fidelity();
    v.pass = v.pass && seconds_since(t0) < kGradBudget;
    return v;
  });
  timed(4, "distribution learning", [] {
    const auto t0 = Clock::now();
    Verdict v = distribution_learning();
    v.pass = v.pass && seconds_since(t0) < kDistBudget;
    return v;
  });
  timed(5, "k-means optimality", [] {
    const auto t0 = Clock::now();
    Verdict v = kmeans_oracle();
    v.pass = v.pass && seconds_since(t0) < kKMeansBudget;
    return v;
  });

  SeedRuns runs;
  {
    const auto t0 = Clock::now();
    for (std::size_t s = 0; s < kSeeds; ++s) runs.fcca.push_back(run_federation(task(s)));
    runs.fcca_seconds = seconds_since(t0);
  }
  timed(6, "end-to-end cluster recovery", [&] { return recovery(runs); });
  timed(7, "FCCA beats FedAvg", [&] { return beats_fedavg(runs); });
  timed(8, "UNKNOWN ablation", [&] { return unknown_ablation(runs); });
  timed(9, "M=1 equivalence with FedAvg", [] { return single_cluster_equivalence(); });
  timed(10, "complexity accounting", [&] { return complexity(runs); });
  timed(11, "elbow at M=2", [&] { return elbow(runs); });

  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
