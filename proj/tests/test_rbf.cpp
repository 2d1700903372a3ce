#include "se3conv/rbf.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "se3conv/grid.hpp"
#include "se3conv/quaternion.hpp"
#include "se3conv/rng.hpp"

using namespace se3conv;

namespace {

std::vector<UnitQuaternion> random_targets(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<UnitQuaternion> t;
  t.reserve(n);
  for (std::size_t i = 0; i < n; ++i) t.push_back(haar_sample(rng));
  return t;
}

TEST(DefaultSigma, V4IsPi) { EXPECT_NEAR(default_sigma(finite_subgroup(Subgroup::V4)), kPi, 1e-12); }

TEST(DefaultSigma, O24IsHalfPi) {
  const RotationGrid g = finite_subgroup(Subgroup::O24);
  EXPECT_NEAR(default_sigma(g), uniformity_stats(g).mean_nn_dist, 0.0);
  EXPECT_NEAR(default_sigma(g), kPi / 2, 1e-12);
}

TEST(DefaultSigma, SingleElementGridIsPi) {
  EXPECT_EQ(default_sigma(generate_uniform_grid(1, 3)), kPi);
}

TEST(DefaultSigma, DeterministicOnRepulsionGrid) {
  EXPECT_EQ(default_sigma(generate_uniform_grid(8, 21)),
            default_sigma(generate_uniform_grid(8, 21)));
}

TEST(InterpWeights, PartitionOfUnity) {
  const RotationGrid sources = generate_uniform_grid(12, 4);
  const RbfConfig cfg{default_sigma(sources), true};
  const auto targets = random_targets(500, 9);
  const InterpWeights w = interp_weights(targets, sources, cfg);
  for (std::size_t m = 0; m < w.rows; ++m) {
    double sum = 0;
    for (std::size_t n = 0; n < w.cols; ++n) {
      EXPECT_GE(w.at(m, n), 0.0);
      EXPECT_LE(w.at(m, n), 1.0 + 1e-15);
      sum += w.at(m, n);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(InterpWeights, NearestSourceDominates) {
  const RotationGrid sources = finite_subgroup(Subgroup::V4);  // neighbors at pi >= 2 sigma
  const RbfConfig cfg{1.0, true};
  const InterpWeights w = interp_weights({sources[2]}, sources, cfg);
  for (std::size_t n = 0; n < 4; ++n) {
    if (n != 2) EXPECT_GT(w.at(0, 2), w.at(0, n));
  }
}

TEST(InterpWeights, EquidistantPairSplitsEvenly) {
  RotationGrid sources;
  sources.elements = {UnitQuaternion::identity(),
                      UnitQuaternion::from_axis_angle({0, 0, 1}, 1.0)};
  const UnitQuaternion mid = UnitQuaternion::from_axis_angle({0, 0, 1}, 0.5);
  const InterpWeights w = interp_weights({mid}, sources, RbfConfig{0.7, true});
  EXPECT_NEAR(w.at(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(w.at(0, 1), 0.5, 1e-12);
}

TEST(InterpWeights, HugeSigmaGivesUniformWeights) {
  const RotationGrid sources = generate_uniform_grid(9, 6);
  const auto targets = random_targets(50, 10);
  const InterpWeights w = interp_weights(targets, sources, RbfConfig{1e6, true});
  for (std::size_t m = 0; m < w.rows; ++m)
    for (std::size_t n = 0; n < w.cols; ++n) EXPECT_NEAR(w.at(m, n), 1.0 / 9, 1e-9);
}

TEST(InterpWeights, TinySigmaGivesOneHotRows) {
  const RotationGrid sources = generate_uniform_grid(8, 13);
  const InterpWeights w = interp_weights(sources.elements, sources, RbfConfig{1e-4, true});
  for (std::size_t m = 0; m < w.rows; ++m)
    for (std::size_t n = 0; n < w.cols; ++n)
      EXPECT_NEAR(w.at(m, n), m == n ? 1.0 : 0.0, 1e-8);
}

TEST(InterpWeights, LeftInvariance) {
  const RotationGrid sources = generate_uniform_grid(10, 15);
  const auto targets = random_targets(40, 16);
  const RbfConfig cfg{default_sigma(sources), true};
  const InterpWeights w0 = interp_weights(targets, sources, cfg);

  Rng rng(17);
  const UnitQuaternion g = haar_sample(rng);
  auto rotated_targets = targets;
  for (auto& t : rotated_targets) t = quat_mul(g, t);
  const InterpWeights w1 = interp_weights(rotated_targets, rotate_grid(sources, g), cfg);
  for (std::size_t i = 0; i < w0.data.size(); ++i)
    EXPECT_NEAR(w0.data[i], w1.data[i], 1e-12);
}

TEST(InterpWeights, SignInvariance) {
  const RotationGrid sources = generate_uniform_grid(7, 19);
  auto flipped = sources;
  for (std::size_t i = 0; i < flipped.resolution(); i += 2)
    flipped.elements[i] = flipped.elements[i].negated();
  const auto targets = random_targets(20, 20);
  auto neg_targets = targets;
  for (std::size_t i = 1; i < neg_targets.size(); i += 2)
    neg_targets[i] = neg_targets[i].negated();
  const RbfConfig cfg{0.8, true};
  const InterpWeights a = interp_weights(targets, sources, cfg);
  const InterpWeights b = interp_weights(neg_targets, flipped, cfg);
  for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_EQ(a.data[i], b.data[i]);
}

TEST(InterpWeights, SmoothnessLipschitzBound) {
  for (std::uint64_t gseed : {8u, 16u}) {
    const RotationGrid sources = generate_uniform_grid(gseed, 100 + gseed);
    const double sigma = default_sigma(sources);
    const RbfConfig cfg{sigma, true};
    Rng rng(23 + gseed);
    for (int trial = 0; trial < 200; ++trial) {
      const UnitQuaternion t1 = haar_sample(rng);
      const double eps = rng.uniform(1e-4, 0.01);
      Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
      const UnitQuaternion t2 = quat_mul(t1, UnitQuaternion::from_axis_angle(axis, eps));
      const InterpWeights w = interp_weights({t1, t2}, sources, cfg);
      double worst = 0;
      for (std::size_t n = 0; n < w.cols; ++n)
        worst = std::max(worst, std::abs(w.at(0, n) - w.at(1, n)));
      EXPECT_LE(worst, (2.0 / sigma) * eps);
    }
  }
}

TEST(ExpandKernel, ConstantParamsGiveConstantOutput) {
  Rng rng(31);
  GroupMixingKernel k = make_mixing_kernel(generate_uniform_grid(6, 33), 2, 3, rng);
  const double c = 0.37;
  std::fill(k.params.begin(), k.params.end(), c);
  const auto targets = random_targets(25, 34);
  const auto out = expand_kernel(k, targets);
  for (double v : out) EXPECT_NEAR(v, c, 1e-12);
}

TEST(ExpandKernel, TinySigmaRecoversParamsAtGridPoints) {
  Rng rng(35);
  GroupMixingKernel k = make_mixing_kernel(generate_uniform_grid(5, 36), 2, 2, rng);
  k.rbf.sigma = 1e-4;
  const auto out = expand_kernel(k, k.param_grid.elements);
  const std::size_t n = k.param_resolution();
  for (std::size_t oi = 0; oi < k.c_out * k.c_in; ++oi)
    for (std::size_t m = 0; m < n; ++m)
      EXPECT_NEAR(out[oi * n + m], k.params[oi * n + m], 1e-8);
}

TEST(ExpandKernel, EquidistantTwoSourceSplit) {
  GroupMixingKernel k;
  k.param_grid.elements = {UnitQuaternion::identity(),
                           UnitQuaternion::from_axis_angle({1, 0, 0}, 0.8)};
  k.rbf = RbfConfig{0.5, true};
  k.c_out = 1;
  k.c_in = 1;
  k.params = {0.0, 1.0};
  const auto out = expand_kernel(k, {UnitQuaternion::from_axis_angle({1, 0, 0}, 0.4)});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(out[0], 0.5, 1e-12);
}

TEST(ExpandKernel, Linearity) {
  Rng rng(41);
  GroupMixingKernel p = make_mixing_kernel(generate_uniform_grid(7, 42), 2, 2, rng);
  GroupMixingKernel q = p;
  for (auto& v : q.params) v = rng.uniform(-1, 1);
  const auto targets = random_targets(11, 43);
  const double a = 0.7, b = -1.3;
  GroupMixingKernel mix = p;
  for (std::size_t i = 0; i < mix.params.size(); ++i)
    mix.params[i] = a * p.params[i] + b * q.params[i];
  const auto out_mix = expand_kernel(mix, targets);
  const auto out_p = expand_kernel(p, targets);
  const auto out_q = expand_kernel(q, targets);
  for (std::size_t i = 0; i < out_mix.size(); ++i)
    EXPECT_NEAR(out_mix[i], a * out_p[i] + b * out_q[i], 1e-12);
}

TEST(ExpandKernelBackward, ZeroUpstreamGivesZeroGrad) {
  Rng rng(45);
  GroupMixingKernel k = make_mixing_kernel(generate_uniform_grid(4, 46), 2, 2, rng);
  const auto targets = random_targets(6, 47);
  const std::vector<double> upstream(k.c_out * k.c_in * targets.size(), 0.0);
  for (double g : expand_kernel_backward(k, targets, upstream)) EXPECT_EQ(g, 0.0);
}

TEST(ExpandKernelBackward, AdjointInnerProductIdentity) {
  Rng rng(49);
  GroupMixingKernel k = make_mixing_kernel(generate_uniform_grid(6, 50), 3, 2, rng);
  const auto targets = random_targets(9, 51);
  std::vector<double> upstream(k.c_out * k.c_in * targets.size());
  for (auto& u : upstream) u = rng.uniform(-1, 1);
  const auto out = expand_kernel(k, targets);
  const auto grad = expand_kernel_backward(k, targets, upstream);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < out.size(); ++i) lhs += out[i] * upstream[i];
  for (std::size_t i = 0; i < grad.size(); ++i) rhs += grad[i] * k.params[i];
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
}

TEST(ExpandKernelBackward, FiniteDifferenceCheck) {
  Rng rng(53);
  GroupMixingKernel k = make_mixing_kernel(generate_uniform_grid(5, 54), 2, 2, rng);
  const auto targets = random_targets(7, 55);
  std::vector<double> proj(k.c_out * k.c_in * targets.size());
  for (auto& u : proj) u = rng.uniform(-1, 1);
  auto loss = [&](const GroupMixingKernel& kk) {
    const auto out = expand_kernel(kk, targets);
    double l = 0;
    for (std::size_t i = 0; i < out.size(); ++i) l += proj[i] * out[i];
    return l;
  };
  const auto analytic = expand_kernel_backward(k, targets, proj);
  const double h = 1e-5;
  for (std::size_t i = 0; i < k.params.size(); i += 3) {
    GroupMixingKernel kp = k, km = k;
    kp.params[i] += h;
    km.params[i] -= h;
    const double fd = (loss(kp) - loss(km)) / (2 * h);
    EXPECT_NEAR(fd, analytic[i], 1e-6 * std::max(1.0, std::abs(analytic[i])));
  }
}

}  // namespace
