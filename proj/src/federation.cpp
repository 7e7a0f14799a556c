#include "fcca/federation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "parallel.hpp"

namespace fcca {

namespace {

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw std::invalid_argument(key + ": " + what);
}

std::vector<std::size_t> widths_of(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

}  // namespace

void FederationConfig::validate() const {
  require(clients > 0, "clients", "must be positive");
  require(clusters > 0, "clusters", "must be positive");
  require(clusters <= clients, "clusters", "must not exceed clients");
  require(true_clusters > 0 && true_clusters <= clients, "true_clusters", "must lie in [1, clients]");
  require(batch_size > 0, "batch_size", "must be positive");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning_rate", "must be finite and >= 0");
  require(alpha >= 0.0 && std::isfinite(alpha), "alpha", "must be finite and >= 0");
  require(classes >= 2, "classes", "must be at least 2");
  require(input_dim > 0, "input_dim", "must be positive");
  require(samples_per_client > 0, "samples_per_client", "must be positive");
  require(separation >= 0.0, "separation", "must be >= 0");
  require(sigma >= 0.0, "sigma", "must be >= 0");
  require(dirichlet_beta > 0.0, "dirichlet_beta", "must be positive");
  require(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction", "must lie in (0, 1)");
  require(latent_dim > 0 && latent_dim % 2 == 0, "latent_dim", "must be even and positive");
  require(cinn_blocks > 0, "cinn_blocks", "must be positive");
  require(clamp > 0.0, "clamp", "must be positive");
  require(cinn_grad_clip >= 0.0, "cinn_grad_clip", "must be non-negative");
  require(recluster_every > 0, "recluster_every", "must be positive");
  require(reconstruction_batch > 0, "reconstruction_batch", "must be positive");
  require(kmeans_restarts > 0, "kmeans_restarts", "must be positive");
  require(kmeans_iterations > 0, "kmeans_iterations", "must be positive");
  require(threads > 0, "threads", "must be positive");
  for (auto w : encoder_hidden) require(w > 0, "encoder_hidden", "widths must be positive");
  for (auto w : classifier_hidden) require(w > 0, "classifier_hidden", "widths must be positive");
  for (auto w : cinn_hidden) require(w > 0, "cinn_hidden", "widths must be positive");
}

CinnShape FederationConfig::cinn_shape() const {
  CinnShape shape;
  shape.latent_dim = latent_dim;
  shape.condition_dim = condition_width(classes);
  shape.blocks = cinn_blocks;
  shape.hidden = cinn_hidden;
  shape.clamp = clamp;
  return shape;
}

ClusteringOptions FederationConfig::clustering_options() const {
  ClusteringOptions o;
  o.clusters = clusters;
  o.reconstruction_batch = reconstruction_batch;
  o.include_unknown = include_unknown;
  o.kmeans.max_iterations = kmeans_iterations;
  o.kmeans.restarts = kmeans_restarts;
  o.kmeans.tolerance = kmeans_tolerance;
  return o;
}

FederatedData build_federated_data(const FederationConfig& config) {
  config.validate();
  Rng rng = make_stream(config.seed, Stream::data);
  const std::size_t per_class = (config.samples_per_client * config.clients + config.classes - 1) / config.classes;
  const LabeledDataset pool =
      make_blobs(config.classes, per_class, config.input_dim, config.separation, config.sigma, rng);

  FederatedData out;
  out.ground_truth = contiguous_assignment(config.clients, config.true_clusters);
  PartitionSpec spec;
  spec.clients = config.clients;
  spec.dirichlet_beta = config.dirichlet_beta;
  spec.cluster_count = config.true_clusters;
  spec.cluster_assignment = out.ground_truth;
  spec.seed = config.seed;
  Partition partition = dirichlet_partition(pool, spec);
  out.partition_redraws = partition.redraws;
  out.swap_tables = make_swap_tables(config.true_clusters, config.classes, config.seed);

  for (std::size_t k = 0; k < config.clients; ++k) {
    const LabeledDataset swapped = apply_label_swap(partition.shards[k], out.ground_truth[k], out.swap_tables);
    Split split = train_test_split(swapped, config.train_fraction, make_stream(config.seed, Stream::split, {k})());
    auto shard = std::make_shared<ClientShard>();
    shard->train = std::move(split.train);
    shard->test = std::move(split.test);
    shard->absent = absent_labels(shard->train);
    shard->true_cluster = out.ground_truth[k];
    out.shards.push_back(std::move(shard));
  }
  return out;
}

namespace {

std::vector<std::size_t> minibatch(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t take = std::min(n, batch);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(take);
  return idx;
}

std::vector<std::size_t> pick_labels(const LabeledDataset& data, std::span<const std::size_t> rows) {
  std::vector<std::size_t> y;
  y.reserve(rows.size());
  for (auto r : rows) y.push_back(data.labels[r]);
  return y;
}

// K steps of cross-entropy SGD through classifier(encoder(x)); returns the mean loss.
double supervised_phase(MlpParams& encoder, MlpParams& classifier, const LabeledDataset& train,
                        const FederationConfig& config, Rng& rng) {
  double total = 0.0;
  for (std::size_t step = 0; step < config.local_iterations; ++step) {
    const auto rows = minibatch(train.size(), config.batch_size, rng);
    const Tensor x = gather_rows(train.features, rows);
    const auto y = pick_labels(train, rows);

    const MlpTrace enc = mlp_trace(encoder, x);
    const MlpTrace cls = mlp_trace(classifier, enc.output);
    Tensor g_logits;
    total += softmax_cross_entropy_batch(cls.output, y, g_logits);

    MlpGradients g_cls = zeros_like(classifier);
    MlpGradients g_enc = zeros_like(encoder);
    Tensor g_latent;
    mlp_backward(classifier, cls, g_logits, g_cls, &g_latent);
    mlp_backward(encoder, enc, g_latent, g_enc);
    sgd_step(encoder, g_enc, config.learning_rate);
    sgd_step(classifier, g_cls, config.learning_rate);
  }
  return config.local_iterations ? total / static_cast<double>(config.local_iterations) : 0.0;
}

double generative_phase(const MlpParams& encoder, CinnParams& cinn, const ClientShard& shard,
                        const FederationConfig& config, Rng& rng) {
  double total = 0.0;
  for (std::size_t step = 0; step < config.local_iterations; ++step) {
    const auto rows = minibatch(shard.train.size(), config.batch_size, rng);
    const Tensor z = mlp_forward(encoder, gather_rows(shard.train.features, rows));
    const auto y = pick_labels(shard.train, rows);
    CmlGradient g;
    if (config.unknown_augmentation) {
      const SyntheticBatch syn = sample_synthetic(config.classes, shard.absent, rows.size(), cinn.latent_dim, rng);
      g = cml_loss_and_gradient(cinn, z, y, syn.z, syn.labels, config.alpha);
    } else {
      g = cml_loss_and_gradient(cinn, z, y, Tensor(), {}, config.alpha);
    }
    total += g.loss;
    clip_gradient_norm(g.grads, config.cinn_grad_clip);
    sgd_step(cinn, g.grads, config.learning_rate);
  }
  return config.local_iterations ? total / static_cast<double>(config.local_iterations) : 0.0;
}

ClusterSolution fixed_solution(std::vector<std::size_t> assignment, std::size_t clusters) {
  ClusterSolution s;
  s.assignment = std::move(assignment);
  s.centroids = Tensor::matrix(clusters, 1);
  return s;
}

std::vector<std::size_t> round_robin(std::size_t clients, std::size_t clusters) {
  std::vector<std::size_t> a(clients);
  for (std::size_t k = 0; k < clients; ++k) a[k] = k % clusters;
  return a;
}

}  // namespace

ClientUpdate client_update(const ClientModel& client, const MlpParams& global_encoder,
                           const MlpParams& cluster_classifier, const FederationConfig& config, std::size_t round) {
  ClientUpdate out;
  out.model = client;
  out.model.encoder = global_encoder;
  out.model.classifier = cluster_classifier;
  if (!client.data || client.data->train.empty()) {
    out.skipped = true;
    return out;
  }
  Rng ce_rng = make_stream(config.seed, Stream::local_ce, {round, client.client_id});
  out.ce_loss = supervised_phase(out.model.encoder, out.model.classifier, client.data->train, config, ce_rng);
  if (config.cinn_phase) {
    Rng cinn_rng = make_stream(config.seed, Stream::local_cinn, {round, client.client_id});
    out.cml_loss = generative_phase(out.model.encoder, out.model.cinn, *client.data, config, cinn_rng);
    out.cinn_steps = config.local_iterations;
  }
  return out;
}

AggregationWeights aggregation_weights(std::span<const std::size_t> shard_sizes,
                                       std::span<const std::size_t> assignment, std::size_t clusters,
                                       const std::vector<bool>& participates) {
  const std::size_t n = shard_sizes.size();
  if (assignment.size() != n || participates.size() != n) {
    throw std::invalid_argument("aggregation weights need one size, cluster and flag per client");
  }
  AggregationWeights w;
  w.encoder.assign(n, 0.0);
  w.classifier.assign(n, 0.0);
  double total = 0.0;
  std::vector<double> cluster_total(clusters, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    if (!participates[k]) continue;
    if (assignment[k] >= clusters) throw std::out_of_range("client assigned outside the cluster range");
    total += static_cast<double>(shard_sizes[k]);
    cluster_total[assignment[k]] += static_cast<double>(shard_sizes[k]);
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!participates[k]) continue;
    const auto size = static_cast<double>(shard_sizes[k]);
    if (total > 0.0) w.encoder[k] = size / total;
    if (cluster_total[assignment[k]] > 0.0) w.classifier[k] = size / cluster_total[assignment[k]];
  }
  return w;
}

MlpParams aggregate_encoder(std::span<const MlpParams* const> encoders, std::span<const double> weights) {
  for (const auto* e : encoders) {
    if (!congruent(*e, *encoders.front())) throw ShapeError("encoders are not structurally congruent");
  }
  return weighted_average(encoders, weights, 1e-9);
}

std::vector<MlpParams> aggregate_cluster_classifiers(std::span<const MlpParams* const> classifiers,
                                                     std::span<const std::size_t> assignment,
                                                     std::span<const double> weights,
                                                     const std::vector<MlpParams>& previous,
                                                     std::vector<std::size_t>* empty_clusters) {
  if (classifiers.size() != assignment.size() || classifiers.size() != weights.size()) {
    throw std::invalid_argument("one classifier, cluster and weight per client required");
  }
  std::vector<MlpParams> out;
  out.reserve(previous.size());
  for (std::size_t c = 0; c < previous.size(); ++c) {
    std::vector<const MlpParams*> members;
    std::vector<double> w;
    for (std::size_t k = 0; k < classifiers.size(); ++k) {
      if (assignment[k] == c && weights[k] > 0.0) {
        members.push_back(classifiers[k]);
        w.push_back(weights[k]);
      }
    }
    if (members.empty()) {
      out.push_back(previous[c]);
      if (empty_clusters) empty_clusters->push_back(c);
      continue;
    }
    out.push_back(weighted_average(std::span<const MlpParams* const>(members), std::span<const double>(w), 1e-9));
  }
  return out;
}

namespace {

// Correct predictions of classifier(encoder(x)) on `data`.
std::size_t count_correct(const MlpParams& encoder, const MlpParams& classifier, const LabeledDataset& data) {
  if (data.empty()) return 0;
  const Tensor logits = mlp_forward(classifier, mlp_forward(encoder, data.features));
  std::size_t correct = 0;
  for (std::size_t r = 0; r < data.size(); ++r) correct += argmax(logits.row(r)) == data.labels[r] ? 1 : 0;
  return correct;
}

double population_std(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace

Evaluation evaluate(const GlobalState& state, std::span<const ClientModel> clients) {
  Evaluation ev;
  const std::size_t m = state.cluster_classifiers.size();
  std::vector<std::size_t> cluster_correct(m, 0), cluster_total(m, 0);
  std::vector<double> personal;
  for (std::size_t k = 0; k < clients.size(); ++k) {
    const auto& test = clients[k].data->test;
    if (test.empty()) {
      ev.per_client.push_back(std::numeric_limits<double>::quiet_NaN());
      ++ev.excluded_clients;
      continue;
    }
    const std::size_t c = state.solution.assignment.at(k);
    const std::size_t correct = count_correct(state.global_encoder, state.cluster_classifiers.at(c), test);
    cluster_correct[c] += correct;
    cluster_total[c] += test.size();
    const double acc = static_cast<double>(correct) / static_cast<double>(test.size());
    ev.per_client.push_back(acc);
    personal.push_back(acc);
  }
  const std::size_t pooled_total = std::accumulate(cluster_total.begin(), cluster_total.end(), std::size_t{0});
  const std::size_t pooled_correct = std::accumulate(cluster_correct.begin(), cluster_correct.end(), std::size_t{0});
  if (pooled_total > 0) ev.global_accuracy = static_cast<double>(pooled_correct) / static_cast<double>(pooled_total);
  std::vector<double> per_cluster;
  for (std::size_t c = 0; c < m; ++c) {
    if (cluster_total[c] > 0) {
      per_cluster.push_back(static_cast<double>(cluster_correct[c]) / static_cast<double>(cluster_total[c]));
    }
  }
  ev.global_std = population_std(per_cluster);
  if (!personal.empty()) {
    ev.personalized_accuracy = std::accumulate(personal.begin(), personal.end(), 0.0) / static_cast<double>(personal.size());
  }
  ev.personalized_std = population_std(personal);
  return ev;
}

double empirical_risk(const GlobalState& state, std::span<const ClientModel> clients) {
  double risk = 0.0;
  for (std::size_t k = 0; k < clients.size(); ++k) {
    const auto& train = clients[k].data->train;
    if (train.empty()) continue;
    const auto& cls = state.cluster_classifiers.at(state.solution.assignment.at(k));
    const Tensor logits = mlp_forward(cls, mlp_forward(state.global_encoder, train.features));
    Tensor unused;
    risk += softmax_cross_entropy_batch(logits, train.labels, unused);
  }
  return risk;
}

GlobalState run_round(const GlobalState& state, std::vector<ClientModel>& clients, const FederationConfig& config,
                      RoundStats& stats, const RoundOptions& options) {
  const std::size_t n = clients.size();
  if (state.solution.assignment.size() != n) throw std::invalid_argument("state does not cover every client");
  if (state.cluster_classifiers.size() != config.clusters) {
    throw std::invalid_argument("state carries the wrong number of cluster classifiers");
  }

  std::vector<ClientUpdate> updates(n);
  detail::parallel_for(n, config.threads, [&](std::size_t k) {
    const auto& cls = state.cluster_classifiers.at(state.solution.assignment[k]);
    updates[k] = client_update(clients[k], state.global_encoder, cls, config, state.round);
  });

  std::vector<bool> participates(n);
  std::vector<std::size_t> sizes(n);
  std::size_t participants = 0;
  double ce = 0.0, cml = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    participates[k] = !updates[k].skipped;
    sizes[k] = clients[k].data ? clients[k].data->train.size() : 0;
    clients[k] = std::move(updates[k].model);
    if (!participates[k]) {
      ++stats.skipped_clients;
      continue;
    }
    ++participants;
    ++stats.client_updates;
    stats.cinn_steps += updates[k].cinn_steps;
    ce += updates[k].ce_loss;
    cml += updates[k].cml_loss;
  }
  if (participants > 0) {
    stats.ce_loss = ce / static_cast<double>(participants);
    stats.cml_loss = cml / static_cast<double>(participants);
  }

  GlobalState next;
  next.round = state.round + 1;
  if (options.fixed_assignment) {
    next.solution = fixed_solution(*options.fixed_assignment, config.clusters);
  } else if (config.clusters == 1) {
    next.solution = fixed_solution(std::vector<std::size_t>(n, 0), 1);
  } else if (config.cinn_phase && state.round % config.recluster_every == 0) {
    std::vector<const CinnParams*> cinns;
    for (const auto& c : clients) cinns.push_back(&c.cinn);
    Rng rng = make_stream(config.seed, Stream::server_noise, {state.round});
    ClusteringOutcome outcome = cluster_clients(cinns, config.classes, config.clustering_options(), rng);
    ++stats.clustering_invocations;
    stats.inversion_batches += outcome.stats.inversion_batches;
    stats.similarity_entries += outcome.stats.similarity_entries;
    next.solution = std::move(outcome.solution);
    stats.similarity = std::move(outcome.similarity);
  } else {
    next.solution = state.solution;
  }

  const AggregationWeights weights = aggregation_weights(sizes, next.solution.assignment, config.clusters, participates);
  std::vector<const MlpParams*> encoders, classifiers;
  for (const auto& c : clients) {
    encoders.push_back(&c.encoder);
    classifiers.push_back(&c.classifier);
  }
  next.global_encoder = participants > 0 ? aggregate_encoder(encoders, weights.encoder) : state.global_encoder;
  next.cluster_classifiers = aggregate_cluster_classifiers(classifiers, next.solution.assignment, weights.classifier,
                                                           state.cluster_classifiers, &stats.empty_clusters);
  return next;
}

GlobalState initial_state(const FederationConfig& config) {
  config.validate();
  GlobalState state;
  Rng enc_rng = make_stream(config.seed, Stream::encoder_init);
  Rng cls_rng = make_stream(config.seed, Stream::classifier_init);
  state.global_encoder = make_mlp(widths_of(config.input_dim, config.encoder_hidden, config.latent_dim), enc_rng);
  const MlpParams classifier = make_mlp(widths_of(config.latent_dim, config.classifier_hidden, config.classes), cls_rng);
  state.cluster_classifiers.assign(config.clusters, classifier);
  state.solution = fixed_solution(round_robin(config.clients, config.clusters), config.clusters);
  return state;
}

std::vector<ClientModel> initial_clients(const FederationConfig& config, const FederatedData& data) {
  Rng rng = make_stream(config.seed, Stream::cinn_init);
  const CinnParams cinn = make_cinn(config.cinn_shape(), rng, config.cinn_identity_init ? CinnInit::identity : CinnInit::random);
  const GlobalState state = initial_state(config);
  std::vector<ClientModel> clients;
  for (std::size_t k = 0; k < config.clients; ++k) {
    clients.push_back({k, state.global_encoder, state.cluster_classifiers.front(), cinn, data.shards.at(k)});
  }
  return clients;
}

namespace {

RoundMetrics measure(const GlobalState& state, std::span<const ClientModel> clients,
                     std::span<const std::size_t> truth) {
  RoundMetrics m;
  m.round = state.round;
  const Evaluation ev = evaluate(state, clients);
  m.global_accuracy = ev.global_accuracy;
  m.global_std = ev.global_std;
  m.personalized_accuracy = ev.personalized_accuracy;
  m.personalized_std = ev.personalized_std;
  m.ari = adjusted_rand_index(state.solution.assignment, truth);
  m.objective = empirical_risk(state, clients);
  return m;
}

void absorb(RoundMetrics& m, const RoundStats& s) {
  m.ce_loss = s.ce_loss;
  m.cml_loss = s.cml_loss;
  m.client_updates = s.client_updates;
  m.skipped_clients = s.skipped_clients;
  m.cinn_steps = s.cinn_steps;
  m.clustering_invocations = s.clustering_invocations;
  m.inversion_batches = s.inversion_batches;
  m.similarity_entries = s.similarity_entries;
}

std::vector<double> snapshot(const GlobalState& state) {
  std::vector<double> flat = flatten(state.global_encoder);
  for (const auto& c : state.cluster_classifiers) {
    const auto v = flatten(c);
    flat.insert(flat.end(), v.begin(), v.end());
  }
  return flat;
}

}  // namespace

RunReport run_federation(const FederationConfig& config, const RunOptions& options) {
  config.validate();
  if (options.fixed_assignment) {
    const auto& a = *options.fixed_assignment;
    if (a.size() != config.clients) throw std::invalid_argument("fixed assignment must cover every client");
    for (auto c : a) {
      if (c >= config.clusters) throw std::invalid_argument("fixed assignment names a cluster beyond M");
    }
  }
  const FederatedData data = build_federated_data(config);
  std::vector<ClientModel> clients = initial_clients(config, data);
  GlobalState state = initial_state(config);
  if (options.fixed_assignment) state.solution = fixed_solution(*options.fixed_assignment, config.clusters);

  RunReport report;
  report.ground_truth = data.ground_truth;
  report.partition_redraws = data.partition_redraws;
  report.history.push_back(measure(state, clients, data.ground_truth));

  RoundOptions round_options;
  round_options.fixed_assignment = options.fixed_assignment;
  for (std::size_t r = 0; r < config.rounds; ++r) {
    RoundStats stats;
    state = run_round(state, clients, config, stats, round_options);
    RoundMetrics m = measure(state, clients, data.ground_truth);
    absorb(m, stats);
    report.history.push_back(m);
    if (stats.similarity) report.final_similarity = std::move(stats.similarity);
    if (options.record_trajectory) report.trajectory.push_back(snapshot(state));
  }
  report.final_state = std::move(state);
  return report;
}

RunReport fedavg_baseline(const FederationConfig& base, const RunOptions& options) {
  FederationConfig config = base;
  config.clusters = 1;
  config.cinn_phase = false;
  config.validate();
  const FederatedData data = build_federated_data(config);
  std::vector<ClientModel> clients = initial_clients(config, data);
  GlobalState state = initial_state(config);

  RunReport report;
  report.ground_truth = data.ground_truth;
  report.partition_redraws = data.partition_redraws;
  report.history.push_back(measure(state, clients, data.ground_truth));

  const std::size_t n = config.clients;
  for (std::size_t r = 0; r < config.rounds; ++r) {
    RoundStats stats;
    std::vector<double> losses(n, 0.0);
    std::vector<char> participates(n, 0);
    detail::parallel_for(n, config.threads, [&](std::size_t k) {
      auto& c = clients[k];
      c.encoder = state.global_encoder;
      c.classifier = state.cluster_classifiers.front();
      if (c.data->train.empty()) return;
      Rng rng = make_stream(config.seed, Stream::local_ce, {state.round, c.client_id});
      losses[k] = supervised_phase(c.encoder, c.classifier, c.data->train, config, rng);
      participates[k] = 1;
    });

    std::vector<std::size_t> sizes(n);
    std::vector<const MlpParams*> encoders, classifiers;
    std::vector<double> encoder_w, classifier_w;
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      sizes[k] = clients[k].data->train.size();
      if (participates[k]) {
        total += static_cast<double>(sizes[k]);
        stats.ce_loss += losses[k];
        ++stats.client_updates;
      } else {
        ++stats.skipped_clients;
      }
    }
    if (stats.client_updates) stats.ce_loss /= static_cast<double>(stats.client_updates);
    for (std::size_t k = 0; k < n; ++k) {
      encoders.push_back(&clients[k].encoder);
      classifiers.push_back(&clients[k].classifier);
      encoder_w.push_back(participates[k] ? static_cast<double>(sizes[k]) / total : 0.0);
    }

    GlobalState next;
    next.round = state.round + 1;
    next.solution = state.solution;
    if (total > 0.0) {
      next.global_encoder = weighted_average(std::span<const MlpParams* const>(encoders),
                                             std::span<const double>(encoder_w), 1e-9);
      next.cluster_classifiers = {weighted_average(std::span<const MlpParams* const>(classifiers),
                                                   std::span<const double>(encoder_w), 1e-9)};
    } else {
      next.global_encoder = state.global_encoder;
      next.cluster_classifiers = state.cluster_classifiers;
    }
    state = std::move(next);

    RoundMetrics m = measure(state, clients, data.ground_truth);
    absorb(m, stats);
    report.history.push_back(m);
    if (options.record_trajectory) report.trajectory.push_back(snapshot(state));
  }
  report.final_state = std::move(state);
  return report;
}

void write_metrics_csv(const std::filesystem::path& path, const RunReport& report) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "round,global_acc,global_std,personalized_acc,personalized_std,ari,ce_loss,cml_loss,objective,"
       "client_updates,skipped_clients,cinn_steps,clustering_invocations,inversion_batches,similarity_entries\n";
  f << std::setprecision(10);
  for (const auto& m : report.history) {
    f << m.round << ',' << m.global_accuracy << ',' << m.global_std << ',' << m.personalized_accuracy << ','
      << m.personalized_std << ',' << m.ari << ',' << m.ce_loss << ',' << m.cml_loss << ',' << m.objective << ','
      << m.client_updates << ',' << m.skipped_clients << ',' << m.cinn_steps << ',' << m.clustering_invocations
      << ',' << m.inversion_batches << ',' << m.similarity_entries << '\n';
  }
}

void write_final_state(const std::filesystem::path& path, const RunReport& report) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  const auto& last = report.history.back();
  const auto& state = report.final_state;
  std::vector<std::size_t> sizes(state.cluster_classifiers.size(), 0);
  for (auto a : state.solution.assignment) ++sizes.at(a);
  f << "key,value\n" << std::setprecision(10);
  f << "rounds," << state.round << '\n';
  f << "clusters," << state.cluster_classifiers.size() << '\n';
  f << "global_acc," << last.global_accuracy << '\n';
  f << "global_std," << last.global_std << '\n';
  f << "personalized_acc," << last.personalized_accuracy << '\n';
  f << "personalized_std," << last.personalized_std << '\n';
  f << "ari," << last.ari << '\n';
  f << "objective," << last.objective << '\n';
  f << "cluster_sizes,";
  for (std::size_t c = 0; c < sizes.size(); ++c) f << (c ? ";" : "") << sizes[c];
  f << '\n';
  f << "partition_redraws," << report.partition_redraws << '\n';
  f << "encoder_parameters," << parameter_count(state.global_encoder) << '\n';
  f << "classifier_parameters," << parameter_count(state.cluster_classifiers.front()) << '\n';
}

void write_solution_csv(const std::filesystem::path& path, const RunReport& report) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "client,assigned,ground_truth\n";
  const auto& a = report.final_state.solution.assignment;
  for (std::size_t k = 0; k < a.size(); ++k) f << k << ',' << a[k] << ',' << report.ground_truth.at(k) << '\n';
}

}  // namespace fcca
