#include "se3conv/quaternion.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "se3conv/grid.hpp"
#include "se3conv/rng.hpp"

using namespace se3conv;

namespace {

UnitQuaternion rot_x(double deg) {
  return UnitQuaternion::from_axis_angle({1, 0, 0}, deg * kPi / 180.0);
}
UnitQuaternion rot_y(double deg) {
  return UnitQuaternion::from_axis_angle({0, 1, 0}, deg * kPi / 180.0);
}
UnitQuaternion rot_z(double deg) {
  return UnitQuaternion::from_axis_angle({0, 0, 1}, deg * kPi / 180.0);
}

double matrix_max_abs_diff(const RotationMatrix& a, const RotationMatrix& b) {
  double worst = 0;
  for (int i = 0; i < 9; ++i) worst = std::max(worst, std::abs(a.m[i] - b.m[i]));
  return worst;
}

TEST(QuatMul, IdentityIsNeutral) {
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const UnitQuaternion q = haar_sample(rng);
    EXPECT_LT(geodesic_distance(quat_mul(UnitQuaternion::identity(), q), q), 1e-12);
    EXPECT_LT(geodesic_distance(quat_mul(q, UnitQuaternion::identity()), q), 1e-12);
  }
}

TEST(QuatMul, SameAxisAnglesAdd) {
  EXPECT_LT(geodesic_distance(quat_mul(rot_z(90), rot_z(90)), rot_z(180)), 1e-12);
}

TEST(QuatMul, MatchesMatrixProductOracle) {
  // oracle: composition of rotations is the product of their matrices
  const UnitQuaternion q = quat_mul(rot_x(90), rot_y(90));
  const RotationMatrix expected = matmul(quat_to_matrix(rot_x(90)), quat_to_matrix(rot_y(90)));
  EXPECT_LT(matrix_max_abs_diff(quat_to_matrix(q), expected), 1e-12);
}

TEST(QuatInverse, Identity) {
  const UnitQuaternion e = UnitQuaternion::identity();
  EXPECT_LT(geodesic_distance(quat_inverse(e), e), 1e-12);
}

TEST(QuatInverse, AxisAngleNegation) {
  EXPECT_LT(geodesic_distance(quat_inverse(rot_z(90)), rot_z(-90)), 1e-12);
}

TEST(QuatInverse, CompositionGivesIdentity) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const UnitQuaternion q = haar_sample(rng);
    EXPECT_LT(geodesic_distance(quat_mul(q, quat_inverse(q)), UnitQuaternion::identity()),
              1e-12);
  }
}

TEST(MatrixConversion, IdentityMapsToIdentity) {
  const RotationMatrix m = quat_to_matrix(UnitQuaternion::identity());
  EXPECT_LT(matrix_max_abs_diff(m, RotationMatrix{}), 0.0 + 1e-15);
  EXPECT_LT(geodesic_distance(matrix_to_quat(RotationMatrix{}), UnitQuaternion::identity()),
            1e-12);
}

TEST(MatrixConversion, Rz90HasStandardMatrix) {
  const RotationMatrix m = quat_to_matrix(rot_z(90));
  RotationMatrix expected;
  expected.m = {0, -1, 0, 1, 0, 0, 0, 0, 1};
  EXPECT_LT(matrix_max_abs_diff(m, expected), 1e-12);
}

TEST(MatrixConversion, RoundTripOn1000HaarSamples) {
  Rng rng(3);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const UnitQuaternion q = haar_sample(rng);
    worst = std::max(worst, geodesic_distance(matrix_to_quat(quat_to_matrix(q)), q));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(MatrixConversion, CanonicalSignW0TieBreak) {
  // 180-degree rotations have w = 0; representative must have the first
  // nonzero of (x, y, z) positive
  const UnitQuaternion q = matrix_to_quat(quat_to_matrix(UnitQuaternion{0, 0, -1, 0}));
  EXPECT_GT(q.y, 0);
}

TEST(MatrixConversion, RejectsCorruptedMatrix) {
  RotationMatrix m;
  m.m = {1, 0, 0, 0, 1, 0, 0, 0, 1.01};
  EXPECT_THROW(matrix_to_quat(m), validation_error);
  RotationMatrix refl;
  refl.m = {1, 0, 0, 0, 1, 0, 0, 0, -1};  // det -1
  EXPECT_THROW(matrix_to_quat(refl), validation_error);
}

TEST(GeodesicDistance, NamedValues) {
  Rng rng(5);
  const UnitQuaternion q = haar_sample(rng);
  EXPECT_EQ(geodesic_distance(q, q), 0.0);
  EXPECT_NEAR(geodesic_distance(UnitQuaternion::identity(), rot_z(180)), kPi, 1e-12);
  EXPECT_NEAR(geodesic_distance(rot_z(90), rot_z(180)), kPi / 2, 1e-12);
}

TEST(GeodesicDistance, EqualsAngleOfRelativeRotation) {
  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    const UnitQuaternion a = haar_sample(rng), b = haar_sample(rng);
    EXPECT_NEAR(geodesic_distance(a, b), rotation_angle(quat_mul(quat_inverse(a), b)),
                1e-10);
  }
}

TEST(GeodesicDistance, MetricProperties) {
  Rng rng(23);
  for (int i = 0; i < 200; ++i) {
    const UnitQuaternion a = haar_sample(rng), b = haar_sample(rng), c = haar_sample(rng);
    const double ab = geodesic_distance(a, b);
    const double ba = geodesic_distance(b, a);
    const double ac = geodesic_distance(a, c);
    const double cb = geodesic_distance(c, b);
    EXPECT_GE(ab, 0.0);
    EXPECT_EQ(ab, ba);
    EXPECT_LE(ab, ac + cb + 1e-10);
  }
}

TEST(SignInvariance, AllOperationsIgnoreQuaternionSign) {
  Rng rng(29);
  for (int i = 0; i < 100; ++i) {
    const UnitQuaternion a = haar_sample(rng), b = haar_sample(rng);
    const UnitQuaternion na = a.negated(), nb = b.negated();
    EXPECT_EQ(geodesic_distance(a, b), geodesic_distance(na, b));
    EXPECT_EQ(geodesic_distance(a, b), geodesic_distance(a, nb));
    EXPECT_LT(geodesic_distance(quat_mul(na, b), quat_mul(a, b)), 1e-12);
    EXPECT_LT(geodesic_distance(quat_inverse(na), quat_inverse(a)), 1e-12);
    EXPECT_LT(matrix_max_abs_diff(quat_to_matrix(na), quat_to_matrix(a)), 1e-15);
  }
}

TEST(GroupAxioms, SampledTriples) {
  Rng rng(31);
  for (int i = 0; i < 100; ++i) {
    const UnitQuaternion a = haar_sample(rng), b = haar_sample(rng), c = haar_sample(rng);
    EXPECT_LT(geodesic_distance(quat_mul(quat_mul(a, b), c), quat_mul(a, quat_mul(b, c))),
              1e-12);
  }
}

TEST(RotateVector, ConsistentWithMatrix) {
  Rng rng(37);
  for (int i = 0; i < 100; ++i) {
    const UnitQuaternion q = haar_sample(rng);
    const Vec3 v{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Vec3 a = rotate_vector(q, v);
    const Vec3 b = quat_to_matrix(q).apply(v);
    EXPECT_LT(norm(a - b), 1e-12);
  }
}

TEST(HaarSample, DeterministicForFixedSeed) {
  Rng a(123), b(123);
  for (int i = 0; i < 10; ++i) {
    const UnitQuaternion qa = haar_sample(a), qb = haar_sample(b);
    EXPECT_EQ(qa.w, qb.w);
    EXPECT_EQ(qa.x, qb.x);
    EXPECT_EQ(qa.y, qb.y);
    EXPECT_EQ(qa.z, qb.z);
  }
}

TEST(HaarSample, MatrixEntriesAverageToZero) {
  Rng rng(41);
  std::array<double, 9> mean{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const RotationMatrix m = quat_to_matrix(haar_sample(rng));
    for (int j = 0; j < 9; ++j) mean[j] += m.m[j];
  }
  for (int j = 0; j < 9; ++j) EXPECT_LT(std::abs(mean[j] / n), 0.02);
}

TEST(HaarSample, AngleDistributionMatchesDensityOracle) {
  // oracle: integrate the Haar angle density (1 - cos t) / pi over [0, pi/2]
  const int steps = 20000;
  double integral = 0;
  for (int i = 0; i < steps; ++i) {
    const double t = (i + 0.5) * (kPi / 2) / steps;
    integral += (1 - std::cos(t)) / kPi * (kPi / 2) / steps;
  }
  Rng rng(43);
  const int n = 100000;
  int below = 0;
  for (int i = 0; i < n; ++i) {
    if (rotation_angle(haar_sample(rng)) <= kPi / 2) ++below;
  }
  EXPECT_NEAR(static_cast<double>(below) / n, integral, 0.01);
  EXPECT_NEAR(integral, 0.1817, 0.0005);
}

TEST(FiniteSubgroup, V4AllPairwiseDistancesPi) {
  const RotationGrid g = finite_subgroup(Subgroup::V4);
  ASSERT_EQ(g.resolution(), 4u);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j)
      EXPECT_NEAR(geodesic_distance(g[i], g[j]), kPi, 1e-12);
}

TEST(FiniteSubgroup, O24ClosureOracle) {
  const RotationGrid g = finite_subgroup(Subgroup::O24);
  ASSERT_EQ(g.resolution(), 24u);
  // all 576 products stay in the set
  EXPECT_LT(closure_defect(g), 1e-10);
}

TEST(FiniteSubgroup, T12MinDistanceIsTwoThirdsPi) {
  const RotationGrid g = finite_subgroup(Subgroup::T12);
  ASSERT_EQ(g.resolution(), 12u);
  double min_d = kPi;
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = i + 1; j < 12; ++j)
      min_d = std::min(min_d, geodesic_distance(g[i], g[j]));
  EXPECT_NEAR(min_d, 2 * kPi / 3, 1e-10);
}

TEST(FiniteSubgroup, UnknownNameRejected) {
  EXPECT_THROW(finite_subgroup("D8"), validation_error);
}

}  // namespace
