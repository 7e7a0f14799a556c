#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "fcca/cinn.hpp"
#include "fcca/params.hpp"
#include "fcca/rng.hpp"
#include "support.hpp"

namespace fcca {
namespace {

constexpr double kClamp = 2.0;

// Raw subnet output whose soft-clamped value is `target`.
double raw_for(double target, double clamp) { return std::tan(target * std::numbers::pi / (2.0 * clamp)); }

// latent 2, s1 = 0.5, t1 = 1, s2 = t2 = 0 regardless of input.
CouplingBlockParams constants_block(std::size_t condition_dim) {
  CinnShape shape{.latent_dim = 2, .condition_dim = condition_dim, .blocks = 1, .hidden = {3}, .clamp = kClamp};
  Rng rng(0);
  CouplingBlockParams block = make_coupling_block(shape, rng, CinnInit::zero);
  block.s1.layers.back().bias[0] = raw_for(0.5, kClamp);
  block.t1.layers.back().bias[0] = 1.0;
  return block;
}

CinnParams single_block_cinn(CouplingBlockParams block, std::size_t condition_dim) {
  CinnParams p;
  p.blocks.push_back(std::move(block));
  p.permutations.push_back({0, 1});
  p.latent_dim = 2;
  p.condition_dim = condition_dim;
  return p;
}

Tensor gaussian(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t = Tensor::matrix(rows, cols);
  for (auto& v : t.values()) v = normal(rng);
  return t;
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t width, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, width - 1);
  std::vector<std::size_t> out(n);
  for (auto& y : out) y = pick(rng);
  return out;
}

TEST(Condition, OneHotWithUnknownSlot) {
  const ConditionVector c(unknown_label(4), condition_width(4));
  const auto v = c.one_hot();
  ASSERT_EQ(v.size(), 5u);
  EXPECT_EQ(v[4], 1.0);
  EXPECT_EQ(v[0] + v[1] + v[2] + v[3], 0.0);
  EXPECT_THROW(ConditionVector(5, 5), std::out_of_range);
}

TEST(SoftClamp, BoundedAndOdd) {
  for (double raw : {-1e6, -3.0, 0.0, 0.7, 1e6}) {
    EXPECT_LT(std::abs(soft_clamp(raw, kClamp)), kClamp);
    EXPECT_DOUBLE_EQ(soft_clamp(-raw, kClamp), -soft_clamp(raw, kClamp));
  }
  const double h = 1e-6;
  EXPECT_NEAR(soft_clamp_derivative(0.3, kClamp), (soft_clamp(0.3 + h, kClamp) - soft_clamp(0.3 - h, kClamp)) / (2 * h),
              1e-8);
}

TEST(Coupling, HandEvaluatedConstants) {
  const CouplingBlockParams block = constants_block(2);
  const Tensor u({1, 2}, {2.0, 3.0});
  const std::vector<std::size_t> labels{0};
  const FlowResult r = coupling_forward(block, u, labels, 2);
  EXPECT_NEAR(r.out(0, 0), 2.0 * std::exp(0.5) + 1.0, 1e-12);
  EXPECT_NEAR(r.out(0, 1), 3.0, 1e-12);
  EXPECT_NEAR(r.logdet[0], 0.5, 1e-12);
  const Tensor back = coupling_inverse(block, r.out, labels, 2);
  EXPECT_NEAR(back(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(back(0, 1), 3.0, 1e-12);
}

TEST(Coupling, ZeroSubnetsAreIdentity) {
  CinnShape shape{.latent_dim = 6, .condition_dim = 3, .blocks = 1, .hidden = {4}, .clamp = kClamp};
  Rng rng(1);
  const CouplingBlockParams block = make_coupling_block(shape, rng, CinnInit::zero);
  const Tensor u = gaussian(5, 6, rng);
  const auto labels = random_labels(5, 3, rng);
  const FlowResult r = coupling_forward(block, u, labels, 3);
  EXPECT_EQ(r.out, u);
  for (double l : r.logdet) EXPECT_EQ(l, 0.0);
  EXPECT_EQ(coupling_inverse(block, u, labels, 3), u);
}

TEST(Cinn, OddLatentRejected) {
  Rng rng(0);
  CinnShape shape{.latent_dim = 5};
  EXPECT_THROW(make_cinn(shape, rng), ShapeError);
}

TEST(Cinn, ZeroBlocksApplyComposedPermutation) {
  Rng rng(2);
  CinnShape shape{.latent_dim = 6, .condition_dim = 3, .blocks = 3, .hidden = {4}};
  const CinnParams p = make_cinn(shape, rng, CinnInit::zero);
  const Tensor z = gaussian(4, 6, rng);
  const ConditionVector cond(1, 3);
  const FlowResult f = cinn_forward(p, z, cond);
  Tensor expected = z;
  for (const auto& perm : p.permutations) {
    Tensor next = expected;
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t i = 0; i < 6; ++i) next(r, i) = expected(r, perm[i]);
    }
    expected = next;
  }
  EXPECT_EQ(f.out, expected);
  for (double l : f.logdet) EXPECT_EQ(l, 0.0);
  EXPECT_EQ(cinn_inverse(p, f.out, cond), z);
}

TEST(Cinn, InverseUndoesForwardRandomNetwork) {
  Rng rng(3);
  CinnShape shape{.latent_dim = 16, .condition_dim = 5, .blocks = 4, .hidden = {32}, .clamp = kClamp};
  const CinnParams p = make_cinn(shape, rng, CinnInit::random);
  const Tensor z = gaussian(100, 16, rng, 2.0);
  const auto labels = random_labels(100, 5, rng);
  const Tensor back = cinn_inverse(p, cinn_forward(p, z, labels).out, labels);
  double worst = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) worst = std::max(worst, std::abs(back[i] - z[i]));
  EXPECT_LT(worst, 1e-8);
}

TEST(Cinn, InversionIsDeterministic) {
  Rng rng(4);
  CinnShape shape{.latent_dim = 8, .condition_dim = 3, .blocks = 2, .hidden = {8}};
  const CinnParams p = make_cinn(shape, rng, CinnInit::random);
  const Tensor eps = gaussian(10, 8, rng);
  const ConditionVector cond(2, 3);
  EXPECT_EQ(cinn_inverse(p, eps, cond), cinn_inverse(p, eps, cond));
}

TEST(Cinn, LogdetMatchesNumericJacobian) {
  Rng rng(5);
  for (std::size_t latent : {2u, 4u, 6u}) {
    CinnShape shape{.latent_dim = latent, .condition_dim = 3, .blocks = 4, .hidden = {16}, .clamp = kClamp};
    const CinnParams p = make_cinn(shape, rng, CinnInit::random);
    const Tensor z = gaussian(3, latent, rng);
    const std::vector<std::size_t> labels{0, 1, 2};
    const FlowResult f = cinn_forward(p, z, labels);
    for (std::size_t r = 0; r < 3; ++r) {
      EXPECT_NEAR(f.logdet[r], testing::numeric_cinn_logdet(p, z.row(r), labels[r]), 1e-4) << "latent " << latent;
    }
  }
}

TEST(Synthetic, LabelsComeFromAbsentAndUnknown) {
  Rng rng(6);
  const std::vector<std::size_t> absent{1, 3};
  const SyntheticBatch b = sample_synthetic(4, absent, 3000, 2, rng);
  std::vector<std::size_t> counts(5, 0);
  for (auto y : b.labels) ++counts.at(y);
  EXPECT_EQ(counts[0] + counts[2], 0u);
  for (std::size_t y : {1u, 3u, 4u}) EXPECT_NEAR(counts[y] / 3000.0, 1.0 / 3.0, 0.04);
}

TEST(Synthetic, StandardNormalMoments) {
  Rng rng(7);
  const SyntheticBatch b = sample_synthetic(4, {}, 10000, 3, rng);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t r = 0; r < 10000; ++r) m += b.z(r, c);
    m /= 10000.0;
    for (std::size_t r = 0; r < 10000; ++r) v += (b.z(r, c) - m) * (b.z(r, c) - m);
    v /= 10000.0;
    EXPECT_NEAR(m, 0.0, 0.05);
    EXPECT_NEAR(v, 1.0, 0.05);
  }
  for (auto y : b.labels) EXPECT_EQ(y, unknown_label(4));
}

TEST(CmlLoss, ZeroNetworkAtOriginIsZero) {
  Rng rng(8);
  CinnShape shape{.latent_dim = 4, .condition_dim = 3, .blocks = 2, .hidden = {4}};
  const CinnParams p = make_cinn(shape, rng, CinnInit::zero);
  const Tensor zeros = Tensor::matrix(3, 4);
  const std::vector<std::size_t> y{0, 1, 2};
  EXPECT_EQ(cml_loss(p, zeros, y, zeros, y, 1.0), 0.0);
}

TEST(CmlLoss, ScalarOracleWithConstantsBlock) {
  const CinnParams p = single_block_cinn(constants_block(3), 3);
  const Tensor z({2, 2}, {2.0, 3.0, -1.0, 0.5});
  const Tensor zs({2, 2}, {0.3, -0.2, 1.5, 1.0});
  const std::vector<std::size_t> y{0, 1}, ys{2, 2};
  const double alpha = 0.7;
  auto sq = [](double a, double b) {
    const double v1 = a * std::exp(0.5) + 1.0;
    return v1 * v1 + b * b;
  };
  double expected = 0.0;
  for (int r = 0; r < 2; ++r) {
    expected += (sq(z(r, 0), z(r, 1)) + alpha * sq(zs(r, 0), zs(r, 1))) / 2.0 - 0.5 - 0.5;
  }
  expected /= 2.0;
  EXPECT_NEAR(cml_loss(p, z, y, zs, ys, alpha), expected, 1e-12);
  const double real_only = ((sq(2.0, 3.0) / 2.0 - 0.5) + (sq(-1.0, 0.5) / 2.0 - 0.5)) / 2.0;
  EXPECT_NEAR(cml_loss(p, z, y, Tensor(), {}, alpha), real_only, 1e-12);
}

TEST(CmlLoss, RejectsBadArguments) {
  Rng rng(9);
  CinnShape shape{.latent_dim = 2, .condition_dim = 2, .blocks = 1, .hidden = {2}};
  const CinnParams p = make_cinn(shape, rng);
  const Tensor z = Tensor::matrix(2, 2);
  const std::vector<std::size_t> y{0, 1};
  EXPECT_THROW(cml_loss(p, z, y, z, y, -1.0), std::invalid_argument);
  EXPECT_THROW(cml_loss(p, z, y, Tensor::matrix(3, 2), std::vector<std::size_t>{0, 0, 0}, 1.0), ShapeError);
}

TEST(CmlLoss, GradientMatchesFiniteDifferences) {
  Rng rng(10);
  CinnShape shape{.latent_dim = 4, .condition_dim = 3, .blocks = 2, .hidden = {6}, .clamp = kClamp};
  const CinnParams p = make_cinn(shape, rng, CinnInit::random);
  ASSERT_LE(parameter_count(p), 500u);
  const Tensor z = gaussian(5, 4, rng);
  const Tensor zs = gaussian(5, 4, rng);
  const auto y = random_labels(5, 3, rng);
  const auto ys = random_labels(5, 3, rng);
  const CmlGradient g = cml_loss_and_gradient(p, z, y, zs, ys, 0.8);
  EXPECT_NEAR(g.loss, cml_loss(p, z, y, zs, ys, 0.8), 1e-12);
  const auto agreement = testing::compare_gradients<CinnParams>(
      p, g.grads, [&](const CinnParams& q) { return cml_loss(q, z, y, zs, ys, 0.8); });
  EXPECT_GE(agreement.fraction(), 0.95) << agreement.agreeing << "/" << agreement.checked;
}

TEST(CmlLoss, SgdReducesLoss) {
  Rng rng(12);
  CinnShape shape{.latent_dim = 2, .condition_dim = 2, .blocks = 2, .hidden = {8}};
  CinnParams p = make_cinn(shape, rng);
  const Tensor z = gaussian(64, 2, rng, 0.3);
  const std::vector<std::size_t> y(64, 0);
  const double before = cml_loss(p, z, y, Tensor(), {}, 1.0);
  for (int i = 0; i < 50; ++i) sgd_step(p, cml_loss_and_gradient(p, z, y, Tensor(), {}, 1.0).grads, 0.01);
  EXPECT_LT(cml_loss(p, z, y, Tensor(), {}, 1.0), before);
}

}  // namespace
}  // namespace fcca
