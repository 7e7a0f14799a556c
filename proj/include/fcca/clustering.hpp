#pragma once

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "fcca/cinn.hpp"
#include "fcca/rng.hpp"
#include "fcca/tensor.hpp"

namespace fcca {

// Array indexed (label position, client i, client j).
class LabelTensor {
 public:
  LabelTensor() = default;
  LabelTensor(std::size_t labels, std::size_t clients, double fill = 0.0)
      : labels_(labels), clients_(clients), values_(labels * clients * clients, fill) {}

  std::size_t labels() const noexcept { return labels_; }
  std::size_t clients() const noexcept { return clients_; }
  std::size_t size() const noexcept { return values_.size(); }

  double& at(std::size_t y, std::size_t i, std::size_t j) { return values_[(y * clients_ + i) * clients_ + j]; }
  double at(std::size_t y, std::size_t i, std::size_t j) const { return values_[(y * clients_ + i) * clients_ + j]; }

  // Client-by-client slice for one label.
  Tensor slice(std::size_t y) const;
  std::span<const double> values() const noexcept { return values_; }

 private:
  std::size_t labels_ = 0;
  std::size_t clients_ = 0;
  std::vector<double> values_;
};

struct SimilarityTensors {
  std::vector<std::size_t> labels;  // condition index of each position on the label axis
  LabelTensor basic;                // B: cosine of reconstructions
  LabelTensor confidence;           // P: max(|B_yii|, |B_yjj|)
  LabelTensor fused;                // S = B * P
  Tensor reduced;                   // D: mean of S over the label axis, {N, N}
};

// Mean reconstructions zeta[label position][client] for both noise halves.
struct ReconstructionTable {
  std::vector<std::size_t> labels;
  std::size_t clients = 0;
  std::vector<std::vector<std::vector<double>>> first;   // [label][client] -> latent
  std::vector<std::vector<std::vector<double>>> second;  // [label][client] -> latent

  ReconstructionTable(std::vector<std::size_t> label_axis, std::size_t client_count);
};

// Batch means of c^{-1}(eps1; label) and c^{-1}(eps2; label).
std::pair<std::vector<double>, std::vector<double>> reconstruct_pair(const CinnParams& cinn, std::size_t label,
                                                                     const Tensor& eps1, const Tensor& eps2);

// Cosine; a zero vector scores 0.
double cosine(std::span<const double> a, std::span<const double> b);

// B[y,i,j] = cos(zeta1[y,i], zeta2[y,j]).
LabelTensor basic_similarity(const ReconstructionTable& table);
LabelTensor confidence_matrix(const LabelTensor& basic);
// S = B * P elementwise and D = mean_y S.
std::pair<LabelTensor, Tensor> fuse_and_reduce(const LabelTensor& basic, const LabelTensor& confidence);

struct KMeansOptions {
  std::size_t max_iterations = 100;
  std::size_t restarts = 10;
  double tolerance = 1e-8;
};

// Cluster 𝒞 as a surjective client -> cluster map.
struct ClusterSolution {
  std::vector<std::size_t> assignment;
  Tensor centroids;  // {M, point_dim}
  double inertia = 0.0;
  std::vector<double> inertia_history;  // per Lloyd iteration of the winning restart

  std::size_t clusters() const noexcept { return centroids.rows(); }
};

// Lloyd iterations from k-means++ seeding; best inertia across restarts.
ClusterSolution kmeans(const Tensor& points, std::size_t clusters, const KMeansOptions& options, Rng& rng);

double inertia(const Tensor& points, std::span<const std::size_t> assignment, std::size_t clusters);

double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b);

struct ClusteringOptions {
  std::size_t clusters = 2;
  std::size_t reconstruction_batch = 64;
  bool include_unknown = false;  // UNKNOWN slot on the label axis
  KMeansOptions kmeans;
};

struct ClusteringStats {
  std::size_t inversion_batches = 0;
  std::size_t similarity_entries = 0;
};

struct ClusteringOutcome {
  ClusterSolution solution;
  SimilarityTensors similarity;
  ClusteringStats stats;
};

// Server side: shared noise, per-client inversion, B/P/S/D, then K-Means over
// the rows of (D + D^T) / 2.
ClusteringOutcome cluster_clients(std::span<const CinnParams* const> cinns, std::size_t num_classes,
                                  const ClusteringOptions& options, Rng& rng);

// Mean fused similarity between distinct same-cluster clients minus the mean
// between clients of different clusters, pooled over labels.
double similarity_margin(const LabelTensor& fused, std::span<const std::size_t> truth);

// Header "client,0,1,...,N-1".
void write_matrix_csv(const std::filesystem::path& path, const Tensor& matrix);

}  // namespace fcca
