#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fcca/rng.hpp"
#include "fcca/tensor.hpp"

namespace fcca {

struct LabeledDataset {
  Tensor features;                  // {samples, input_dim}
  std::vector<std::size_t> labels;  // one per row, each < label_space_size
  std::size_t label_space_size = 0;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  std::size_t input_dim() const noexcept { return features.cols(); }

  // Throws std::invalid_argument when rows/labels disagree or a label is out of range.
  void validate() const;
};

LabeledDataset subset(const LabeledDataset& data, std::span<const std::size_t> rows);
std::vector<std::size_t> label_counts(const LabeledDataset& data);
// Classes with no sample in `data`.
std::vector<std::size_t> absent_labels(const LabeledDataset& data);

// Isotropic Gaussian blobs. Class means are random directions rescaled so the
// closest pair sits exactly `separation` apart.
LabeledDataset make_blobs(std::size_t classes, std::size_t per_class, std::size_t input_dim, double separation,
                          double sigma, Rng& rng);

struct PartitionSpec {
  std::size_t clients = 10;
  double dirichlet_beta = 0.5;
  std::size_t cluster_count = 2;
  std::vector<std::size_t> cluster_assignment;  // client -> ground-truth cluster
  std::uint64_t seed = 0;
  std::size_t max_redraws = 100;

  void validate() const;
};

// Client k belongs to cluster floor(k * M / N): contiguous, surjective blocks.
std::vector<std::size_t> contiguous_assignment(std::size_t clients, std::size_t clusters);

struct Partition {
  std::vector<LabeledDataset> shards;
  std::vector<std::vector<std::size_t>> rows;  // source rows of each shard
  std::size_t redraws = 0;                     // how many draws left some client empty
};

// Per class, proportions ~ Dirichlet(beta * 1_N) decide how that class's samples
// are dealt to clients. Draws leaving a client with no data at all are redrawn.
Partition dirichlet_partition(const LabeledDataset& data, const PartitionSpec& spec);

using Permutation = std::vector<std::size_t>;

bool is_permutation(const Permutation& p, std::size_t n);
Permutation invert(const Permutation& p);

// Table 0 is the identity; every other cluster gets a distinct seeded derangement.
std::vector<Permutation> make_swap_tables(std::size_t clusters, std::size_t classes, std::uint64_t seed);

// Relabels y -> table[cluster][y]; features are copied untouched.
LabeledDataset apply_label_swap(const LabeledDataset& shard, std::size_t cluster_id,
                                const std::vector<Permutation>& swap_tables);

struct Split {
  LabeledDataset train;
  LabeledDataset test;
  bool test_empty = false;
};

// Stratified: each label contributes within one sample of fraction * count, and
// the train total is round(fraction * size).
Split train_test_split(const LabeledDataset& shard, double fraction, std::uint64_t seed);

// Header: f0..f{d-1},label
void write_dataset_csv(const std::filesystem::path& path, const LabeledDataset& data);
LabeledDataset read_dataset_csv(const std::filesystem::path& path, std::size_t label_space_size);

}  // namespace fcca
