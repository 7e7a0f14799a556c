#include "fcca/cinn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace fcca {

ConditionVector::ConditionVector(std::size_t label, std::size_t width) : label_(label), width_(width) {
  if (label >= width) {
    throw std::out_of_range("condition label " + std::to_string(label) + " outside width " + std::to_string(width));
  }
}

std::vector<double> ConditionVector::one_hot() const {
  std::vector<double> v(width_, 0.0);
  v[label_] = 1.0;
  return v;
}

double soft_clamp(double raw, double clamp) { return clamp * (2.0 / std::numbers::pi) * std::atan(raw); }

double soft_clamp_derivative(double raw, double clamp) {
  return clamp * (2.0 / std::numbers::pi) / (1.0 + raw * raw);
}

std::vector<std::span<double>> CouplingBlockParams::views() {
  std::vector<std::span<double>> out;
  for (auto* m : {&s1, &t1, &s2, &t2}) {
    auto v = m->views();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

std::vector<std::span<const double>> CouplingBlockParams::views() const {
  std::vector<std::span<const double>> out;
  for (const auto* m : {&s1, &t1, &s2, &t2}) {
    auto v = m->views();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

std::vector<std::span<double>> CinnParams::views() {
  std::vector<std::span<double>> out;
  for (auto& b : blocks) {
    auto v = b.views();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

std::vector<std::span<const double>> CinnParams::views() const {
  std::vector<std::span<const double>> out;
  for (const auto& b : blocks) {
    auto v = b.views();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

CouplingBlockParams make_coupling_block(const CinnShape& shape, Rng& rng, CinnInit init) {
  if (shape.latent_dim == 0 || shape.latent_dim % 2 != 0) {
    throw ShapeError("cINN latent width must be even and positive, got " + std::to_string(shape.latent_dim));
  }
  if (shape.condition_dim == 0) throw ShapeError("cINN condition width must be positive");
  if (!(shape.clamp > 0.0)) throw std::invalid_argument("soft clamp must be positive");
  const std::size_t half = shape.latent_dim / 2;
  std::vector<std::size_t> widths{half + shape.condition_dim};
  widths.insert(widths.end(), shape.hidden.begin(), shape.hidden.end());
  widths.push_back(half);

  auto subnet = [&]() {
    switch (init) {
      case CinnInit::zero:
        return zero_mlp(widths);
      case CinnInit::random:
        return make_mlp(widths, rng, OutputInit::glorot);
      case CinnInit::identity:
      default:
        return make_mlp(widths, rng, OutputInit::zero);
    }
  };
  CouplingBlockParams block;
  block.s1 = subnet();
  block.t1 = subnet();
  block.s2 = subnet();
  block.t2 = subnet();
  block.clamp = shape.clamp;
  return block;
}

CinnParams make_cinn(const CinnShape& shape, Rng& rng, CinnInit init) {
  CinnParams params;
  params.latent_dim = shape.latent_dim;
  params.condition_dim = shape.condition_dim;
  for (std::size_t b = 0; b < shape.blocks; ++b) {
    params.blocks.push_back(make_coupling_block(shape, rng, init));
    std::vector<std::size_t> perm(shape.latent_dim);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    params.permutations.push_back(std::move(perm));
  }
  return params;
}

void validate(const CinnParams& params) {
  if (params.latent_dim == 0 || params.latent_dim % 2 != 0) throw ShapeError("cINN latent width must be even");
  if (params.permutations.size() != params.blocks.size()) throw ShapeError("one permutation per block required");
  for (const auto& perm : params.permutations) {
    if (perm.size() != params.latent_dim) throw ShapeError("permutation width mismatch");
    std::vector<bool> seen(params.latent_dim, false);
    for (auto i : perm) {
      if (i >= params.latent_dim || seen[i]) throw ShapeError("permutation is not a bijection");
      seen[i] = true;
    }
  }
  const std::size_t in = params.half() + params.condition_dim;
  for (const auto& b : params.blocks) {
    for (const auto* m : {&b.s1, &b.t1, &b.s2, &b.t2}) {
      if (m->input_width() != in || m->output_width() != params.half()) {
        throw ShapeError("coupling subnet widths do not match latent/condition layout");
      }
    }
  }
}

namespace {

Tensor condition_matrix(std::span<const std::size_t> labels, std::size_t condition_dim) {
  Tensor c = Tensor::matrix(labels.size(), condition_dim);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= condition_dim) {
      throw std::out_of_range("condition label " + std::to_string(labels[r]) + " outside width " +
                              std::to_string(condition_dim));
    }
    c(r, labels[r]) = 1.0;
  }
  return c;
}

void check_latent(const Tensor& x, std::size_t latent_dim, std::size_t label_count) {
  if (x.shape().size() != 2 || x.cols() != latent_dim) {
    throw ShapeError("expected latent batch of width " + std::to_string(latent_dim) + ", got " +
                     shape_string(x.shape()));
  }
  if (label_count != x.rows()) throw ShapeError("one condition label per latent row required");
}

Tensor permute_cols(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor y = Tensor::matrix(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto src = x.row(r);
    auto dst = y.row(r);
    for (std::size_t i = 0; i < perm.size(); ++i) dst[i] = src[perm[i]];
  }
  return y;
}

Tensor unpermute_cols(const Tensor& y, const std::vector<std::size_t>& perm) {
  Tensor x = Tensor::matrix(y.rows(), y.cols());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto src = y.row(r);
    auto dst = x.row(r);
    for (std::size_t i = 0; i < perm.size(); ++i) dst[perm[i]] = src[i];
  }
  return x;
}

struct BlockTrace {
  Tensor u1, u2, v1;
  MlpTrace s1, t1, s2, t2;
  Tensor e1, e2;  // exp of the clamped scales
};

// v1 = u1 * exp(s1(u2, c)) + t1(u2, c);  v2 = u2 * exp(s2(v1, c)) + t2(v1, c)
Tensor block_forward(const CouplingBlockParams& block, const Tensor& u, const Tensor& cond,
                     std::vector<double>& logdet, BlockTrace* trace) {
  const std::size_t half = u.cols() / 2;
  const std::size_t rows = u.rows();
  Tensor u1 = slice_cols(u, 0, half);
  Tensor u2 = slice_cols(u, half, half);

  Tensor in1 = concat_cols(u2, cond);
  MlpTrace s1 = mlp_trace(block.s1, in1);
  MlpTrace t1 = mlp_trace(block.t1, in1);
  Tensor v1 = Tensor::matrix(rows, half);
  Tensor e1 = Tensor::matrix(rows, half);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < half; ++k) {
      const double s = soft_clamp(s1.output(r, k), block.clamp);
      e1(r, k) = std::exp(s);
      v1(r, k) = u1(r, k) * e1(r, k) + t1.output(r, k);
      logdet[r] += s;
    }
  }

  Tensor in2 = concat_cols(v1, cond);
  MlpTrace s2 = mlp_trace(block.s2, in2);
  MlpTrace t2 = mlp_trace(block.t2, in2);
  Tensor v2 = Tensor::matrix(rows, half);
  Tensor e2 = Tensor::matrix(rows, half);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < half; ++k) {
      const double s = soft_clamp(s2.output(r, k), block.clamp);
      e2(r, k) = std::exp(s);
      v2(r, k) = u2(r, k) * e2(r, k) + t2.output(r, k);
      logdet[r] += s;
    }
  }

  Tensor v = concat_cols(v1, v2);
  if (trace) {
    trace->u1 = std::move(u1);
    trace->u2 = std::move(u2);
    trace->v1 = std::move(v1);
    trace->s1 = std::move(s1);
    trace->t1 = std::move(t1);
    trace->s2 = std::move(s2);
    trace->t2 = std::move(t2);
    trace->e1 = std::move(e1);
    trace->e2 = std::move(e2);
  }
  return v;
}

Tensor block_inverse(const CouplingBlockParams& block, const Tensor& v, const Tensor& cond) {
  const std::size_t half = v.cols() / 2;
  const std::size_t rows = v.rows();
  Tensor v1 = slice_cols(v, 0, half);
  Tensor v2 = slice_cols(v, half, half);

  Tensor in2 = concat_cols(v1, cond);
  Tensor s2 = mlp_forward(block.s2, in2);
  Tensor t2 = mlp_forward(block.t2, in2);
  Tensor u2 = Tensor::matrix(rows, half);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < half; ++k) {
      u2(r, k) = (v2(r, k) - t2(r, k)) * std::exp(-soft_clamp(s2(r, k), block.clamp));
    }
  }

  Tensor in1 = concat_cols(u2, cond);
  Tensor s1 = mlp_forward(block.s1, in1);
  Tensor t1 = mlp_forward(block.t1, in1);
  Tensor u1 = Tensor::matrix(rows, half);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < half; ++k) {
      u1(r, k) = (v1(r, k) - t1(r, k)) * std::exp(-soft_clamp(s1(r, k), block.clamp));
    }
  }
  return concat_cols(u1, u2);
}

// Returns dL/du given dL/dv and the per-row weight on logdet.
Tensor block_backward(const CouplingBlockParams& block, const BlockTrace& tr, const Tensor& grad_v,
                      std::span<const double> grad_logdet, CouplingBlockParams& grads) {
  const std::size_t half = tr.u1.cols();
  const std::size_t rows = tr.u1.rows();
  Tensor g_v1 = slice_cols(grad_v, 0, half);
  Tensor g_v2 = slice_cols(grad_v, half, half);

  Tensor g_u1 = Tensor::matrix(rows, half);
  Tensor g_u2 = Tensor::matrix(rows, half);
  Tensor g_a2 = Tensor::matrix(rows, half);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < half; ++k) {
      const double e = tr.e2(r, k);
      g_u2(r, k) = g_v2(r, k) * e;
      const double g_s = g_v2(r, k) * tr.u2(r, k) * e + grad_logdet[r];
      g_a2(r, k) = g_s * soft_clamp_derivative(tr.s2.output(r, k), block.clamp);
    }
  }
  Tensor g_in;
  mlp_backward(block.s2, tr.s2, g_a2, grads.s2, &g_in);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < half; ++k) g_v1(r, k) += g_in(r, k);
  }
  mlp_backward(block.t2, tr.t2, g_v2, grads.t2, &g_in);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < half; ++k) g_v1(r, k) += g_in(r, k);
  }

  Tensor g_a1 = Tensor::matrix(rows, half);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < half; ++k) {
      const double e = tr.e1(r, k);
      g_u1(r, k) = g_v1(r, k) * e;
      const double g_s = g_v1(r, k) * tr.u1(r, k) * e + grad_logdet[r];
      g_a1(r, k) = g_s * soft_clamp_derivative(tr.s1.output(r, k), block.clamp);
    }
  }
  mlp_backward(block.s1, tr.s1, g_a1, grads.s1, &g_in);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < half; ++k) g_u2(r, k) += g_in(r, k);
  }
  mlp_backward(block.t1, tr.t1, g_v1, grads.t1, &g_in);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < half; ++k) g_u2(r, k) += g_in(r, k);
  }
  return concat_cols(g_u1, g_u2);
}

std::vector<std::size_t> repeat_label(const ConditionVector& cond, std::size_t rows) {
  return std::vector<std::size_t>(rows, cond.label());
}

void check_block_input(const CouplingBlockParams& block, const Tensor& u, std::size_t label_count,
                       std::size_t condition_dim) {
  if (u.shape().size() != 2 || u.cols() == 0 || u.cols() % 2 != 0) {
    throw ShapeError("coupling input must be a batch of even width, got " + shape_string(u.shape()));
  }
  if (label_count != u.rows()) throw ShapeError("one condition label per row required");
  if (block.s1.input_width() != u.cols() / 2 + condition_dim) {
    throw ShapeError("coupling subnet input width does not match half-latent plus condition");
  }
}

}  // namespace

FlowResult coupling_forward(const CouplingBlockParams& block, const Tensor& u,
                            std::span<const std::size_t> labels, std::size_t condition_dim) {
  check_block_input(block, u, labels.size(), condition_dim);
  FlowResult result;
  result.logdet.assign(u.rows(), 0.0);
  result.out = block_forward(block, u, condition_matrix(labels, condition_dim), result.logdet, nullptr);
  return result;
}

Tensor coupling_inverse(const CouplingBlockParams& block, const Tensor& v, std::span<const std::size_t> labels,
                        std::size_t condition_dim) {
  check_block_input(block, v, labels.size(), condition_dim);
  return block_inverse(block, v, condition_matrix(labels, condition_dim));
}

FlowResult cinn_forward(const CinnParams& params, const Tensor& z, std::span<const std::size_t> labels) {
  check_latent(z, params.latent_dim, labels.size());
  const Tensor cond = condition_matrix(labels, params.condition_dim);
  FlowResult result;
  result.logdet.assign(z.rows(), 0.0);
  Tensor x = z;
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    x = block_forward(params.blocks[b], permute_cols(x, params.permutations[b]), cond, result.logdet, nullptr);
  }
  result.out = std::move(x);
  return result;
}

Tensor cinn_inverse(const CinnParams& params, const Tensor& eps, std::span<const std::size_t> labels) {
  check_latent(eps, params.latent_dim, labels.size());
  const Tensor cond = condition_matrix(labels, params.condition_dim);
  Tensor x = eps;
  for (std::size_t b = params.blocks.size(); b-- > 0;) {
    x = unpermute_cols(block_inverse(params.blocks[b], x, cond), params.permutations[b]);
  }
  return x;
}

FlowResult cinn_forward(const CinnParams& params, const Tensor& z, const ConditionVector& cond) {
  if (cond.width() != params.condition_dim) throw ShapeError("condition width mismatch");
  const auto labels = repeat_label(cond, z.rows());
  return cinn_forward(params, z, labels);
}

Tensor cinn_inverse(const CinnParams& params, const Tensor& eps, const ConditionVector& cond) {
  if (cond.width() != params.condition_dim) throw ShapeError("condition width mismatch");
  const auto labels = repeat_label(cond, eps.rows());
  return cinn_inverse(params, eps, labels);
}

SyntheticBatch sample_synthetic(std::size_t num_classes, std::span<const std::size_t> absent_labels,
                                std::size_t batch, std::size_t latent_dim, Rng& rng) {
  std::vector<std::size_t> support;
  for (auto y : absent_labels) {
    if (y > num_classes) throw std::out_of_range("absent label outside the label space");
    if (y != unknown_label(num_classes)) support.push_back(y);
  }
  std::sort(support.begin(), support.end());
  support.erase(std::unique(support.begin(), support.end()), support.end());
  support.push_back(unknown_label(num_classes));

  SyntheticBatch out;
  out.z = Tensor::matrix(batch, latent_dim);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : out.z.values()) v = normal(rng);
  std::uniform_int_distribution<std::size_t> pick(0, support.size() - 1);
  out.labels.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) out.labels.push_back(support[pick(rng)]);
  return out;
}

namespace {

struct StackedBatch {
  Tensor z;
  std::vector<std::size_t> labels;
  std::vector<double> weights;  // 1 for real rows, alpha for synthetic
  std::size_t pairs = 0;
};

StackedBatch stack_pairs(const CinnParams& params, const Tensor& z, std::span<const std::size_t> y,
                         const Tensor& z_syn, std::span<const std::size_t> y_syn, double alpha) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("augmentation weight alpha must be non-negative");
  check_latent(z, params.latent_dim, y.size());
  if (z.rows() == 0) throw ShapeError("cML loss needs at least one real sample");
  const bool augmented = !y_syn.empty() || z_syn.size() > 0;
  if (augmented) {
    check_latent(z_syn, params.latent_dim, y_syn.size());
    if (z_syn.rows() != z.rows()) throw ShapeError("synthetic batch must pair the real batch row for row");
  }
  StackedBatch s;
  s.pairs = z.rows();
  const std::size_t rows = z.rows() + (augmented ? z_syn.rows() : 0);
  s.z = Tensor::matrix(rows, params.latent_dim);
  std::copy(z.values().begin(), z.values().end(), s.z.values().begin());
  s.labels.assign(y.begin(), y.end());
  s.weights.assign(z.rows(), 1.0);
  if (augmented) {
    std::copy(z_syn.values().begin(), z_syn.values().end(),
              s.z.values().begin() + static_cast<std::ptrdiff_t>(z.size()));
    s.labels.insert(s.labels.end(), y_syn.begin(), y_syn.end());
    s.weights.insert(s.weights.end(), z_syn.rows(), alpha);
  }
  return s;
}

double stacked_loss(const StackedBatch& s, const FlowResult& f) {
  double total = 0.0;
  for (std::size_t r = 0; r < s.z.rows(); ++r) {
    auto e = f.out.row(r);
    total += 0.5 * s.weights[r] * dot(e, e) - f.logdet[r];
  }
  return total / static_cast<double>(s.pairs);
}

}  // namespace

double cml_loss(const CinnParams& params, const Tensor& z, std::span<const std::size_t> y, const Tensor& z_syn,
                std::span<const std::size_t> y_syn, double alpha) {
  const StackedBatch s = stack_pairs(params, z, y, z_syn, y_syn, alpha);
  return stacked_loss(s, cinn_forward(params, s.z, s.labels));
}

CmlGradient cml_loss_and_gradient(const CinnParams& params, const Tensor& z, std::span<const std::size_t> y,
                                  const Tensor& z_syn, std::span<const std::size_t> y_syn, double alpha) {
  const StackedBatch s = stack_pairs(params, z, y, z_syn, y_syn, alpha);
  const Tensor cond = condition_matrix(s.labels, params.condition_dim);
  const std::size_t rows = s.z.rows();

  std::vector<BlockTrace> traces(params.blocks.size());
  FlowResult f;
  f.logdet.assign(rows, 0.0);
  Tensor x = s.z;
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    x = block_forward(params.blocks[b], permute_cols(x, params.permutations[b]), cond, f.logdet, &traces[b]);
  }
  f.out = std::move(x);

  CmlGradient result;
  result.loss = stacked_loss(s, f);
  result.grads = zeros_like(params);

  const double inv_pairs = 1.0 / static_cast<double>(s.pairs);
  Tensor g = Tensor::matrix(rows, params.latent_dim);
  for (std::size_t r = 0; r < rows; ++r) {
    auto e = f.out.row(r);
    auto gr = g.row(r);
    for (std::size_t k = 0; k < e.size(); ++k) gr[k] = s.weights[r] * e[k] * inv_pairs;
  }
  const std::vector<double> g_logdet(rows, -inv_pairs);
  for (std::size_t b = params.blocks.size(); b-- > 0;) {
    Tensor g_u = block_backward(params.blocks[b], traces[b], g, g_logdet, result.grads.blocks[b]);
    g = unpermute_cols(g_u, params.permutations[b]);
  }
  return result;
}

}  // namespace fcca
