#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "fcca/cinn.hpp"
#include "fcca/clustering.hpp"
#include "fcca/data.hpp"
#include "fcca/mlp.hpp"

namespace fcca {

struct FederationConfig {
  std::size_t clients = 10;           // N
  std::size_t clusters = 2;           // M used by the server
  std::size_t true_clusters = 2;      // label-swap groups present in the data
  std::size_t rounds = 20;            // E
  std::size_t local_iterations = 20;  // K
  double learning_rate = 0.01;
  double alpha = 1.0;
  std::size_t batch_size = 64;

  std::size_t classes = 4;
  std::size_t input_dim = 8;
  std::size_t samples_per_client = 200;
  double separation = 6.0;
  double sigma = 1.0;
  double dirichlet_beta = 0.5;
  double train_fraction = 0.8;

  std::vector<std::size_t> encoder_hidden{32};
  std::vector<std::size_t> classifier_hidden{};
  std::size_t latent_dim = 16;
  std::size_t cinn_blocks = 4;
  std::vector<std::size_t> cinn_hidden{32};
  double clamp = 4.0;
  bool cinn_identity_init = true;  // zero output layers so the flow starts as a permutation
  double cinn_grad_clip = 100.0;  // global L2 bound on cINN gradients, 0 disables

  std::size_t recluster_every = 1;
  std::size_t reconstruction_batch = 64;
  std::size_t kmeans_restarts = 10;
  std::size_t kmeans_iterations = 100;
  double kmeans_tolerance = 1e-8;

  bool cinn_phase = true;
  bool unknown_augmentation = true;
  bool include_unknown = false;

  std::uint64_t seed = 0;
  std::size_t threads = 1;

  // Throws std::invalid_argument naming the offending key.
  void validate() const;
  CinnShape cinn_shape() const;
  ClusteringOptions clustering_options() const;
};

struct ClientShard {
  LabeledDataset train;
  LabeledDataset test;
  std::vector<std::size_t> absent;  // classes missing from train
  std::size_t true_cluster = 0;
};

// Everything the simulation derives from the data seed.
struct FederatedData {
  std::vector<std::shared_ptr<const ClientShard>> shards;
  std::vector<std::size_t> ground_truth;
  std::vector<Permutation> swap_tables;
  std::size_t partition_redraws = 0;
};

FederatedData build_federated_data(const FederationConfig& config);

// theta_k = (encoder, classifier, cINN) plus a handle on the local data.
struct ClientModel {
  std::size_t client_id = 0;
  MlpParams encoder;
  MlpParams classifier;
  CinnParams cinn;
  std::shared_ptr<const ClientShard> data;
};

struct GlobalState {
  MlpParams global_encoder;
  std::vector<MlpParams> cluster_classifiers;
  ClusterSolution solution;
  std::size_t round = 0;
};

struct ClientUpdate {
  ClientModel model;
  double ce_loss = 0.0;   // mean over phase-1 steps
  double cml_loss = 0.0;  // mean over phase-2 steps
  std::size_t cinn_steps = 0;
  bool skipped = false;
};

// Phase 1: K SGD steps of cross-entropy through h(f(x)). Phase 2: encoder
// frozen, K SGD steps of the cML loss on z = f(x) with paired synthetic samples.
ClientUpdate client_update(const ClientModel& client, const MlpParams& global_encoder,
                           const MlpParams& cluster_classifier, const FederationConfig& config, std::size_t round);

struct AggregationWeights {
  std::vector<double> encoder;     // sums to one over participating clients
  std::vector<double> classifier;  // sums to one within each cluster
};

// Proportional to training-shard size; clients with participates[k] == false get zero.
AggregationWeights aggregation_weights(std::span<const std::size_t> shard_sizes,
                                       std::span<const std::size_t> assignment, std::size_t clusters,
                                       const std::vector<bool>& participates);

MlpParams aggregate_encoder(std::span<const MlpParams* const> encoders, std::span<const double> weights);

// One average per cluster. A cluster without weighted members keeps its
// previous classifier and is listed in `empty_clusters`.
std::vector<MlpParams> aggregate_cluster_classifiers(std::span<const MlpParams* const> classifiers,
                                                     std::span<const std::size_t> assignment,
                                                     std::span<const double> weights,
                                                     const std::vector<MlpParams>& previous,
                                                     std::vector<std::size_t>* empty_clusters = nullptr);

struct Evaluation {
  double global_accuracy = 0.0;
  double global_std = 0.0;  // across cluster models
  double personalized_accuracy = 0.0;
  double personalized_std = 0.0;  // across clients
  std::vector<double> per_client;  // NaN where the test shard is empty
  std::size_t excluded_clients = 0;
};

Evaluation evaluate(const GlobalState& state, std::span<const ClientModel> clients);

// Sum over clients of the mean training cross-entropy under the client's cluster model.
double empirical_risk(const GlobalState& state, std::span<const ClientModel> clients);

struct RoundStats {
  std::size_t client_updates = 0;
  std::size_t skipped_clients = 0;
  std::size_t cinn_steps = 0;
  std::size_t clustering_invocations = 0;
  std::size_t inversion_batches = 0;
  std::size_t similarity_entries = 0;
  std::vector<std::size_t> empty_clusters;
  double ce_loss = 0.0;
  double cml_loss = 0.0;
  std::optional<SimilarityTensors> similarity;
};

struct RoundOptions {
  // When set, the server skips similarity assessment and uses this map.
  std::optional<std::vector<std::size_t>> fixed_assignment;
};

GlobalState run_round(const GlobalState& state, std::vector<ClientModel>& clients, const FederationConfig& config,
                      RoundStats& stats, const RoundOptions& options = {});

struct RoundMetrics {
  std::size_t round = 0;
  double global_accuracy = 0.0;
  double global_std = 0.0;
  double personalized_accuracy = 0.0;
  double personalized_std = 0.0;
  double ari = 0.0;
  double ce_loss = 0.0;
  double cml_loss = 0.0;
  double objective = 0.0;
  std::size_t client_updates = 0;
  std::size_t skipped_clients = 0;
  std::size_t cinn_steps = 0;
  std::size_t clustering_invocations = 0;
  std::size_t inversion_batches = 0;
  std::size_t similarity_entries = 0;
};

struct RunReport {
  std::vector<RoundMetrics> history;  // history[0] is the initial state
  GlobalState final_state;
  std::vector<std::size_t> ground_truth;
  std::optional<SimilarityTensors> final_similarity;
  std::size_t partition_redraws = 0;
  // Flattened (encoder, classifiers...) after each round, when requested.
  std::vector<std::vector<double>> trajectory;
};

struct RunOptions {
  std::optional<std::vector<std::size_t>> fixed_assignment;
  bool record_trajectory = false;
};

GlobalState initial_state(const FederationConfig& config);
std::vector<ClientModel> initial_clients(const FederationConfig& config, const FederatedData& data);

RunReport run_federation(const FederationConfig& config, const RunOptions& options = {});

// Plain FedAvg: one model, no cINN, whole-model averaging.
RunReport fedavg_baseline(const FederationConfig& config, const RunOptions& options = {});

// Per-round metrics CSV and a key,value summary of the final state.
void write_metrics_csv(const std::filesystem::path& path, const RunReport& report);
void write_final_state(const std::filesystem::path& path, const RunReport& report);
void write_solution_csv(const std::filesystem::path& path, const RunReport& report);

}  // namespace fcca
