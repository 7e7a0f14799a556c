#include "fcca/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <stdexcept>

namespace fcca {

Tensor LabelTensor::slice(std::size_t y) const {
  Tensor out = Tensor::matrix(clients_, clients_);
  for (std::size_t i = 0; i < clients_; ++i) {
    for (std::size_t j = 0; j < clients_; ++j) out(i, j) = at(y, i, j);
  }
  return out;
}

ReconstructionTable::ReconstructionTable(std::vector<std::size_t> label_axis, std::size_t client_count)
    : labels(std::move(label_axis)),
      clients(client_count),
      first(labels.size(), std::vector<std::vector<double>>(client_count)),
      second(labels.size(), std::vector<std::vector<double>>(client_count)) {}

namespace {

std::vector<double> mean_of_rows(const Tensor& m, std::size_t begin, std::size_t count) {
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t r = begin; r < begin + count; ++r) {
    auto row = m.row(r);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += row[k];
  }
  for (auto& v : out) v /= static_cast<double>(count);
  return out;
}

// Stacks eps once per label so a single inverse call covers every label.
Tensor invert_all_labels(const CinnParams& cinn, std::span<const std::size_t> labels, const Tensor& eps) {
  const std::size_t batch = eps.rows();
  Tensor stacked = Tensor::matrix(batch * labels.size(), eps.cols());
  std::vector<std::size_t> conditions;
  conditions.reserve(stacked.rows());
  for (std::size_t l = 0; l < labels.size(); ++l) {
    std::copy(eps.values().begin(), eps.values().end(),
              stacked.values().begin() + static_cast<std::ptrdiff_t>(l * eps.size()));
    conditions.insert(conditions.end(), batch, labels[l]);
  }
  return cinn_inverse(cinn, stacked, conditions);
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> reconstruct_pair(const CinnParams& cinn, std::size_t label,
                                                                     const Tensor& eps1, const Tensor& eps2) {
  const ConditionVector cond(label, cinn.condition_dim);
  const Tensor z1 = cinn_inverse(cinn, eps1, cond);
  const Tensor z2 = cinn_inverse(cinn, eps2, cond);
  return {mean_of_rows(z1, 0, z1.rows()), mean_of_rows(z2, 0, z2.rows())};
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

LabelTensor basic_similarity(const ReconstructionTable& table) {
  LabelTensor basic(table.labels.size(), table.clients);
  for (std::size_t y = 0; y < table.labels.size(); ++y) {
    for (std::size_t i = 0; i < table.clients; ++i) {
      for (std::size_t j = 0; j < table.clients; ++j) {
        basic.at(y, i, j) = cosine(table.first[y][i], table.second[y][j]);
      }
    }
  }
  return basic;
}

LabelTensor confidence_matrix(const LabelTensor& basic) {
  LabelTensor conf(basic.labels(), basic.clients());
  for (std::size_t y = 0; y < basic.labels(); ++y) {
    for (std::size_t i = 0; i < basic.clients(); ++i) {
      for (std::size_t j = 0; j < basic.clients(); ++j) {
        conf.at(y, i, j) = std::max(std::abs(basic.at(y, i, i)), std::abs(basic.at(y, j, j)));
      }
    }
  }
  return conf;
}

std::pair<LabelTensor, Tensor> fuse_and_reduce(const LabelTensor& basic, const LabelTensor& confidence) {
  if (basic.labels() != confidence.labels() || basic.clients() != confidence.clients()) {
    throw ShapeError("B and P must share a shape");
  }
  const std::size_t n = basic.clients();
  LabelTensor fused(basic.labels(), n);
  Tensor reduced = Tensor::matrix(n, n);
  for (std::size_t y = 0; y < basic.labels(); ++y) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        fused.at(y, i, j) = basic.at(y, i, j) * confidence.at(y, i, j);
        reduced(i, j) += fused.at(y, i, j);
      }
    }
  }
  if (basic.labels() > 0) {
    for (auto& v : reduced.values()) v /= static_cast<double>(basic.labels());
  }
  return {std::move(fused), std::move(reduced)};
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

Tensor seed_plus_plus(const Tensor& points, std::size_t clusters, Rng& rng) {
  const std::size_t n = points.rows();
  Tensor centers = Tensor::matrix(clusters, points.cols());
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  auto copy_row = [&](std::size_t c, std::size_t r) {
    std::copy(points.row(r).begin(), points.row(r).end(), centers.row(c).begin());
  };
  copy_row(0, first(rng));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < clusters; ++c) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      d2[r] = std::min(d2[r], squared_distance(points.row(r), centers.row(c - 1)));
      total += d2[r];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      pick = n - 1;
      for (std::size_t r = 0; r < n; ++r) {
        if (target < d2[r]) {
          pick = r;
          break;
        }
        target -= d2[r];
      }
    } else {
      pick = first(rng);
    }
    copy_row(c, pick);
  }
  return centers;
}

void assign_nearest(const Tensor& points, const Tensor& centers, std::vector<std::size_t>& assignment) {
  for (std::size_t r = 0; r < points.rows(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.rows(); ++c) {
      const double d = squared_distance(points.row(r), centers.row(c));
      if (d < best) {
        best = d;
        assignment[r] = c;
      }
    }
  }
}

// Moves the point farthest from its centroid (taken from a cluster that can
// spare it) into each empty cluster.
void repair_empty(const Tensor& points, Tensor& centers, std::vector<std::size_t>& assignment) {
  const std::size_t k = centers.rows();
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<std::size_t> sizes(k, 0);
    for (auto a : assignment) ++sizes[a];
    if (sizes[c] > 0) continue;
    std::size_t far = points.rows();
    double far_d = -1.0;
    for (std::size_t r = 0; r < points.rows(); ++r) {
      if (sizes[assignment[r]] < 2) continue;
      const double d = squared_distance(points.row(r), centers.row(assignment[r]));
      if (d > far_d) {
        far_d = d;
        far = r;
      }
    }
    if (far == points.rows()) continue;
    assignment[far] = c;
    std::copy(points.row(far).begin(), points.row(far).end(), centers.row(c).begin());
  }
}

void update_centers(const Tensor& points, const std::vector<std::size_t>& assignment, Tensor& centers) {
  std::vector<std::size_t> sizes(centers.rows(), 0);
  Tensor sums = Tensor::matrix(centers.rows(), centers.cols());
  for (std::size_t r = 0; r < points.rows(); ++r) {
    ++sizes[assignment[r]];
    auto dst = sums.row(assignment[r]);
    auto src = points.row(r);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
  for (std::size_t c = 0; c < centers.rows(); ++c) {
    if (sizes[c] == 0) continue;
    for (std::size_t k = 0; k < centers.cols(); ++k) centers(c, k) = sums(c, k) / static_cast<double>(sizes[c]);
  }
}

// Single-point moves that strictly lower the inertia; escapes Lloyd fixed
// points where a point sits nearer its own centroid only because it pulls it.
void hartigan_refine(const Tensor& points, ClusterSolution& sol, const KMeansOptions& options) {
  const std::size_t k = sol.centroids.rows();
  std::vector<std::size_t> sizes(k, 0);
  for (auto a : sol.assignment) ++sizes[a];
  for (std::size_t pass = 0; pass < std::max<std::size_t>(1, options.max_iterations); ++pass) {
    bool moved = false;
    for (std::size_t r = 0; r < points.rows(); ++r) {
      const std::size_t from = sol.assignment[r];
      if (sizes[from] < 2) continue;
      const double nf = static_cast<double>(sizes[from]);
      const double leave = nf / (nf - 1.0) * squared_distance(points.row(r), sol.centroids.row(from));
      std::size_t best = from;
      double best_gain = options.tolerance;
      for (std::size_t c = 0; c < k; ++c) {
        if (c == from) continue;
        const double nt = static_cast<double>(sizes[c]);
        const double join = nt / (nt + 1.0) * squared_distance(points.row(r), sol.centroids.row(c));
        if (leave - join > best_gain) {
          best_gain = leave - join;
          best = c;
        }
      }
      if (best == from) continue;
      sol.assignment[r] = best;
      --sizes[from];
      ++sizes[best];
      update_centers(points, sol.assignment, sol.centroids);
      moved = true;
    }
    if (!moved) break;
    sol.inertia = inertia(points, sol.assignment, k);
    sol.inertia_history.push_back(sol.inertia);
  }
}

ClusterSolution lloyd(const Tensor& points, std::size_t clusters, const KMeansOptions& options, Rng& rng) {
  ClusterSolution sol;
  sol.centroids = seed_plus_plus(points, clusters, rng);
  sol.assignment.assign(points.rows(), 0);
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < std::max<std::size_t>(1, options.max_iterations); ++it) {
    const auto before = sol.assignment;
    assign_nearest(points, sol.centroids, sol.assignment);
    repair_empty(points, sol.centroids, sol.assignment);
    update_centers(points, sol.assignment, sol.centroids);
    sol.inertia = inertia(points, sol.assignment, clusters);
    sol.inertia_history.push_back(sol.inertia);
    const bool settled = it > 0 && before == sol.assignment;
    if (settled || previous - sol.inertia <= options.tolerance) break;
    previous = sol.inertia;
  }
  hartigan_refine(points, sol, options);
  return sol;
}

}  // namespace

double inertia(const Tensor& points, std::span<const std::size_t> assignment, std::size_t clusters) {
  Tensor centers = Tensor::matrix(clusters, points.cols());
  std::vector<std::size_t> a(assignment.begin(), assignment.end());
  update_centers(points, a, centers);
  double total = 0.0;
  for (std::size_t r = 0; r < points.rows(); ++r) total += squared_distance(points.row(r), centers.row(a[r]));
  return total;
}

ClusterSolution kmeans(const Tensor& points, std::size_t clusters, const KMeansOptions& options, Rng& rng) {
  if (clusters == 0) throw std::invalid_argument("K-Means needs at least one cluster");
  if (points.shape().size() != 2 || points.rows() == 0) throw ShapeError("K-Means needs a non-empty point matrix");
  if (clusters > points.rows()) {
    throw std::invalid_argument("K-Means asked for " + std::to_string(clusters) + " clusters over " +
                                std::to_string(points.rows()) + " points");
  }
  if (!points.all_finite()) throw std::domain_error("K-Means input contains non-finite values");
  ClusterSolution best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t restart = 0; restart < std::max<std::size_t>(1, options.restarts); ++restart) {
    ClusterSolution candidate = lloyd(points, clusters, options, rng);
    if (candidate.inertia < best.inertia) best = std::move(candidate);
  }
  return best;
}

double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) throw std::invalid_argument("ARI needs equally long labelings");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  std::map<std::pair<std::size_t, std::size_t>, double> table;
  std::map<std::size_t, double> rows, cols;
  for (std::size_t i = 0; i < n; ++i) {
    table[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [_, v] : table) index += pairs(v);
  for (const auto& [_, v] : rows) sum_a += pairs(v);
  for (const auto& [_, v] : cols) sum_b += pairs(v);
  const double expected = sum_a * sum_b / pairs(static_cast<double>(n));
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return index == expected ? 1.0 : 0.0;
  return (index - expected) / (max_index - expected);
}

ClusteringOutcome cluster_clients(std::span<const CinnParams* const> cinns, std::size_t num_classes,
                                  const ClusteringOptions& options, Rng& rng) {
  if (cinns.empty()) throw std::invalid_argument("no client models to cluster");
  if (options.reconstruction_batch == 0) throw std::invalid_argument("reconstruction batch must be positive");
  const std::size_t n = cinns.size();
  const std::size_t latent = cinns.front()->latent_dim;

  std::vector<std::size_t> label_axis;
  for (std::size_t y = 0; y < num_classes; ++y) label_axis.push_back(y);
  if (options.include_unknown) label_axis.push_back(unknown_label(num_classes));

  ClusteringOutcome outcome;
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor eps1 = Tensor::matrix(options.reconstruction_batch, latent);
  Tensor eps2 = Tensor::matrix(options.reconstruction_batch, latent);
  for (auto& v : eps1.values()) v = normal(rng);
  for (auto& v : eps2.values()) v = normal(rng);

  ReconstructionTable table(label_axis, n);
  const std::size_t batch = options.reconstruction_batch;
  for (std::size_t i = 0; i < n; ++i) {
    if (cinns[i]->latent_dim != latent) throw ShapeError("clients disagree on latent width");
    const Tensor z1 = invert_all_labels(*cinns[i], label_axis, eps1);
    const Tensor z2 = invert_all_labels(*cinns[i], label_axis, eps2);
    outcome.stats.inversion_batches += 2;
    for (std::size_t l = 0; l < label_axis.size(); ++l) {
      table.first[l][i] = mean_of_rows(z1, l * batch, batch);
      table.second[l][i] = mean_of_rows(z2, l * batch, batch);
    }
  }

  auto& sim = outcome.similarity;
  sim.labels = label_axis;
  sim.basic = basic_similarity(table);
  outcome.stats.similarity_entries += sim.basic.size();
  sim.confidence = confidence_matrix(sim.basic);
  std::tie(sim.fused, sim.reduced) = fuse_and_reduce(sim.basic, sim.confidence);

  Tensor features = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) features(i, j) = 0.5 * (sim.reduced(i, j) + sim.reduced(j, i));
  }
  outcome.solution = kmeans(features, options.clusters, options.kmeans, rng);
  return outcome;
}

double similarity_margin(const LabelTensor& fused, std::span<const std::size_t> truth) {
  if (truth.size() != fused.clients()) throw std::invalid_argument("one ground-truth cluster per client");
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t y = 0; y < fused.labels(); ++y) {
    for (std::size_t i = 0; i < fused.clients(); ++i) {
      for (std::size_t j = 0; j < fused.clients(); ++j) {
        if (i == j) continue;
        if (truth[i] == truth[j]) {
          intra += fused.at(y, i, j);
          ++n_intra;
        } else {
          inter += fused.at(y, i, j);
          ++n_inter;
        }
      }
    }
  }
  const double mean_intra = n_intra ? intra / static_cast<double>(n_intra) : 0.0;
  const double mean_inter = n_inter ? inter / static_cast<double>(n_inter) : 0.0;
  return mean_intra - mean_inter;
}

void write_matrix_csv(const std::filesystem::path& path, const Tensor& matrix) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "client";
  for (std::size_t j = 0; j < matrix.cols(); ++j) f << ',' << j;
  f << '\n' << std::setprecision(10);
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    f << i;
    for (double v : matrix.row(i)) f << ',' << v;
    f << '\n';
  }
}

}  // namespace fcca
