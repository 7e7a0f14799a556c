#pragma once

#include <span>
#include <vector>

#include "fcca/mlp.hpp"
#include "fcca/params.hpp"
#include "fcca/rng.hpp"
#include "fcca/tensor.hpp"

namespace fcca {

// One-hot label over |Y| + 1 slots; the last slot is UNKNOWN.
class ConditionVector {
 public:
  ConditionVector(std::size_t label, std::size_t width);

  std::size_t label() const noexcept { return label_; }
  std::size_t width() const noexcept { return width_; }
  std::vector<double> one_hot() const;

 private:
  std::size_t label_;
  std::size_t width_;
};

inline std::size_t unknown_label(std::size_t num_classes) { return num_classes; }
inline std::size_t condition_width(std::size_t num_classes) { return num_classes + 1; }

// s-subnet outputs pass through clamp * (2/pi) * atan(s).
double soft_clamp(double raw, double clamp);
double soft_clamp_derivative(double raw, double clamp);

// Affine coupling block. Each subnet sees [half, one-hot condition] and emits
// a half-width vector.
struct CouplingBlockParams {
  MlpParams s1, t1, s2, t2;
  double clamp = 2.0;

  std::vector<std::span<double>> views();
  std::vector<std::span<const double>> views() const;
};

struct CinnShape {
  std::size_t latent_dim = 16;
  std::size_t condition_dim = 5;
  std::size_t blocks = 4;
  std::vector<std::size_t> hidden{32};
  double clamp = 2.0;
};

struct CinnParams {
  std::vector<CouplingBlockParams> blocks;
  // permutations[b][i] is the source index of coordinate i entering block b.
  std::vector<std::vector<std::size_t>> permutations;
  std::size_t latent_dim = 0;
  std::size_t condition_dim = 0;

  std::size_t half() const noexcept { return latent_dim / 2; }

  std::vector<std::span<double>> views();
  std::vector<std::span<const double>> views() const;
};

// identity: hidden layers Glorot, subnet output layers zero (the flow starts as
//           a pure permutation).
// random:   every layer Glorot.
// zero:     all weights zero.
enum class CinnInit { identity, random, zero };

CinnParams make_cinn(const CinnShape& shape, Rng& rng, CinnInit init = CinnInit::identity);
CouplingBlockParams make_coupling_block(const CinnShape& shape, Rng& rng, CinnInit init);

// Throws ShapeError if the structure is inconsistent (odd width, bad permutation...).
void validate(const CinnParams& params);

struct FlowResult {
  Tensor out;                  // {rows, latent_dim}
  std::vector<double> logdet;  // one per row
};

FlowResult coupling_forward(const CouplingBlockParams& block, const Tensor& u,
                            std::span<const std::size_t> labels, std::size_t condition_dim);
Tensor coupling_inverse(const CouplingBlockParams& block, const Tensor& v,
                        std::span<const std::size_t> labels, std::size_t condition_dim);

// Rows are conditioned individually; `labels` has one entry per row.
FlowResult cinn_forward(const CinnParams& params, const Tensor& z, std::span<const std::size_t> labels);
Tensor cinn_inverse(const CinnParams& params, const Tensor& eps, std::span<const std::size_t> labels);

// Every row under the same condition.
FlowResult cinn_forward(const CinnParams& params, const Tensor& z, const ConditionVector& cond);
Tensor cinn_inverse(const CinnParams& params, const Tensor& eps, const ConditionVector& cond);

struct SyntheticBatch {
  Tensor z;                         // {batch, latent_dim}, i.i.d. N(0, 1)
  std::vector<std::size_t> labels;  // uniform over absent labels plus UNKNOWN
};

// `absent_labels` are the classes missing from a client; UNKNOWN is always added.
SyntheticBatch sample_synthetic(std::size_t num_classes, std::span<const std::size_t> absent_labels,
                                std::size_t batch, std::size_t latent_dim, Rng& rng);

// Mean over pairs of (|c(z)|^2 + alpha |c(z')|^2) / 2 - logdet(z) - logdet(z').
// The synthetic batch must pair the real one row for row, or be empty (no
// augmentation).
double cml_loss(const CinnParams& params, const Tensor& z, std::span<const std::size_t> y,
                const Tensor& z_syn, std::span<const std::size_t> y_syn, double alpha);

struct CmlGradient {
  double loss = 0.0;
  CinnParams grads;
};

CmlGradient cml_loss_and_gradient(const CinnParams& params, const Tensor& z, std::span<const std::size_t> y,
                                  const Tensor& z_syn, std::span<const std::size_t> y_syn, double alpha);

}  // namespace fcca
