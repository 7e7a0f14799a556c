#include "fcca/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fcca {

void LabeledDataset::validate() const {
  if (features.rows() != labels.size()) {
    throw std::invalid_argument("dataset has " + std::to_string(features.rows()) + " rows but " +
                                std::to_string(labels.size()) + " labels");
  }
  for (auto y : labels) {
    if (y >= label_space_size) throw std::invalid_argument("label " + std::to_string(y) + " outside label space");
  }
}

LabeledDataset subset(const LabeledDataset& data, std::span<const std::size_t> rows) {
  LabeledDataset out;
  out.label_space_size = data.label_space_size;
  out.features = gather_rows(data.features, rows);
  out.labels.reserve(rows.size());
  for (auto r : rows) out.labels.push_back(data.labels[r]);
  return out;
}

std::vector<std::size_t> label_counts(const LabeledDataset& data) {
  std::vector<std::size_t> counts(data.label_space_size, 0);
  for (auto y : data.labels) ++counts.at(y);
  return counts;
}

std::vector<std::size_t> absent_labels(const LabeledDataset& data) {
  std::vector<std::size_t> out;
  const auto counts = label_counts(data);
  for (std::size_t y = 0; y < counts.size(); ++y) {
    if (counts[y] == 0) out.push_back(y);
  }
  return out;
}

LabeledDataset make_blobs(std::size_t classes, std::size_t per_class, std::size_t input_dim, double separation,
                          double sigma, Rng& rng) {
  if (classes < 2) throw std::invalid_argument("make_blobs needs at least two classes");
  if (input_dim == 0) throw std::invalid_argument("make_blobs needs a positive input width");
  if (separation < 0.0 || sigma < 0.0) throw std::invalid_argument("separation and sigma must be non-negative");

  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor means = Tensor::matrix(classes, input_dim);
  double closest = 0.0;
  while (closest < 1e-6) {
    for (auto& v : means.values()) v = normal(rng);
    closest = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < classes; ++a) {
      for (std::size_t b = a + 1; b < classes; ++b) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < input_dim; ++k) d2 += std::pow(means(a, k) - means(b, k), 2);
        closest = std::min(closest, std::sqrt(d2));
      }
    }
  }
  for (auto& v : means.values()) v *= separation / closest;

  LabeledDataset out;
  out.label_space_size = classes;
  out.features = Tensor::matrix(classes * per_class, input_dim);
  out.labels.reserve(classes * per_class);
  std::size_t row = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i, ++row) {
      for (std::size_t k = 0; k < input_dim; ++k) out.features(row, k) = means(c, k) + sigma * normal(rng);
      out.labels.push_back(c);
    }
  }
  return out;
}

void PartitionSpec::validate() const {
  if (clients == 0) throw std::invalid_argument("partition needs at least one client");
  if (!(dirichlet_beta > 0.0)) throw std::invalid_argument("dirichlet beta must be positive");
  if (cluster_count == 0 || cluster_count > clients) throw std::invalid_argument("cluster count must lie in [1, N]");
  if (cluster_assignment.size() != clients) throw std::invalid_argument("one ground-truth cluster per client");
  std::vector<bool> hit(cluster_count, false);
  for (auto c : cluster_assignment) {
    if (c >= cluster_count) throw std::invalid_argument("ground-truth cluster out of range");
    hit[c] = true;
  }
  if (std::find(hit.begin(), hit.end(), false) != hit.end()) {
    throw std::invalid_argument("ground-truth assignment must cover every cluster");
  }
}

std::vector<std::size_t> contiguous_assignment(std::size_t clients, std::size_t clusters) {
  if (clusters == 0 || clusters > clients) throw std::invalid_argument("need 1 <= clusters <= clients");
  std::vector<std::size_t> out(clients);
  for (std::size_t k = 0; k < clients; ++k) out[k] = k * clusters / clients;
  return out;
}

Partition dirichlet_partition(const LabeledDataset& data, const PartitionSpec& spec) {
  spec.validate();
  data.validate();
  Rng rng = make_stream(spec.seed, Stream::partition);
  std::gamma_distribution<double> gamma(spec.dirichlet_beta, 1.0);

  std::vector<std::vector<std::size_t>> by_class(data.label_space_size);
  for (std::size_t r = 0; r < data.size(); ++r) by_class[data.labels[r]].push_back(r);

  Partition result;
  for (std::size_t attempt = 0; attempt <= spec.max_redraws; ++attempt) {
    std::vector<std::vector<std::size_t>> rows(spec.clients);
    for (auto members : by_class) {
      if (members.empty()) continue;
      std::shuffle(members.begin(), members.end(), rng);
      std::vector<double> p(spec.clients);
      double total = 0.0;
      while (!(total > 0.0)) {
        for (auto& v : p) v = gamma(rng);
        total = std::accumulate(p.begin(), p.end(), 0.0);
      }
      double cumulative = 0.0;
      std::size_t start = 0;
      for (std::size_t k = 0; k < spec.clients; ++k) {
        cumulative += p[k] / total;
        const std::size_t end =
            k + 1 == spec.clients ? members.size()
                                  : std::min(members.size(), static_cast<std::size_t>(std::llround(
                                                                 cumulative * static_cast<double>(members.size()))));
        for (std::size_t i = start; i < std::max(start, end); ++i) rows[k].push_back(members[i]);
        start = std::max(start, end);
      }
    }
    const bool any_empty = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.empty(); });
    if (any_empty) {
      ++result.redraws;
      continue;
    }
    for (auto& r : rows) {
      std::sort(r.begin(), r.end());
      result.shards.push_back(subset(data, r));
    }
    result.rows = std::move(rows);
    return result;
  }
  throw std::runtime_error("dirichlet partition left a client empty after " + std::to_string(spec.max_redraws) +
                           " redraws");
}

bool is_permutation(const Permutation& p, std::size_t n) {
  if (p.size() != n) return false;
  std::vector<bool> seen(n, false);
  for (auto v : p) {
    if (v >= n || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

Permutation invert(const Permutation& p) {
  if (!is_permutation(p, p.size())) throw std::invalid_argument("not a permutation");
  Permutation inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[p[i]] = i;
  return inv;
}

std::vector<Permutation> make_swap_tables(std::size_t clusters, std::size_t classes, std::uint64_t seed) {
  if (clusters == 0) throw std::invalid_argument("at least one cluster required");
  if (classes < 2 && clusters > 1) throw std::invalid_argument("label swaps need at least two classes");
  Rng rng = make_stream(seed, Stream::swap);
  std::vector<Permutation> tables;
  Permutation identity(classes);
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  tables.push_back(identity);
  std::set<Permutation> used{identity};
  // Distinct derangements exist for small label spaces only up to a point;
  // after that we accept repeats rather than loop forever.
  constexpr std::size_t kMaxTries = 10000;
  for (std::size_t c = 1; c < clusters; ++c) {
    Permutation p = identity;
    for (std::size_t tries = 0;; ++tries) {
      std::shuffle(p.begin(), p.end(), rng);
      bool fixed_point = false;
      for (std::size_t i = 0; i < classes; ++i) fixed_point = fixed_point || p[i] == i;
      if (fixed_point) continue;
      if (!used.contains(p) || tries > kMaxTries) break;
    }
    used.insert(p);
    tables.push_back(p);
  }
  return tables;
}

LabeledDataset apply_label_swap(const LabeledDataset& shard, std::size_t cluster_id,
                                const std::vector<Permutation>& swap_tables) {
  if (cluster_id >= swap_tables.size()) throw std::out_of_range("no swap table for cluster");
  const auto& table = swap_tables[cluster_id];
  if (!is_permutation(table, shard.label_space_size)) {
    throw std::invalid_argument("swap table for cluster " + std::to_string(cluster_id) +
                                " is not a permutation of the label space");
  }
  LabeledDataset out = shard;
  for (auto& y : out.labels) y = table.at(y);
  return out;
}

Split train_test_split(const LabeledDataset& shard, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split fraction must lie in (0, 1)");
  Rng rng = make_stream(seed, Stream::split);

  std::vector<std::vector<std::size_t>> by_label(shard.label_space_size);
  for (std::size_t r = 0; r < shard.size(); ++r) by_label[shard.labels[r]].push_back(r);

  // Largest-remainder allocation of the train budget across labels.
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(shard.size())));
  std::vector<std::size_t> take(by_label.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t allocated = 0;
  for (std::size_t y = 0; y < by_label.size(); ++y) {
    const double ideal = fraction * static_cast<double>(by_label[y].size());
    take[y] = static_cast<std::size_t>(std::floor(ideal));
    allocated += take[y];
    remainders.emplace_back(ideal - std::floor(ideal), y);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; allocated < target && i < remainders.size(); ++i) {
    const auto y = remainders[i].second;
    if (take[y] < by_label[y].size()) {
      ++take[y];
      ++allocated;
    }
  }

  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t y = 0; y < by_label.size(); ++y) {
    auto members = by_label[y];
    std::shuffle(members.begin(), members.end(), rng);
    train_rows.insert(train_rows.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take[y]));
    test_rows.insert(test_rows.end(), members.begin() + static_cast<std::ptrdiff_t>(take[y]), members.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());

  Split out;
  out.train = subset(shard, train_rows);
  out.test = subset(shard, test_rows);
  out.test_empty = test_rows.empty();
  return out;
}

void write_dataset_csv(const std::filesystem::path& path, const LabeledDataset& data) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t k = 0; k < data.input_dim(); ++k) f << 'f' << k << ',';
  f << "label\n";
  f << std::setprecision(17);
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (double v : data.features.row(r)) f << v << ',';
    f << data.labels[r] << '\n';
  }
}

LabeledDataset read_dataset_csv(const std::filesystem::path& path, std::size_t label_space_size) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path.string() + ": missing header");
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 2 || line.substr(line.rfind(',') + 1) != "label") {
    throw std::runtime_error(path.string() + ": header must end with a label column");
  }
  const std::size_t dim = columns - 1;
  std::vector<double> values;
  LabeledDataset out;
  out.label_space_size = label_space_size;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(row, cell, ',')) {
      if (col < dim) {
        values.push_back(std::stod(cell));
      } else {
        out.labels.push_back(static_cast<std::size_t>(std::stoul(cell)));
      }
      ++col;
    }
    if (col != columns) throw std::runtime_error(path.string() + ": ragged row");
  }
  out.features = Tensor({out.labels.size(), dim}, std::move(values));
  out.validate();
  return out;
}

}  // namespace fcca
