#pragma once

#include <array>
#include <cmath>

#include "se3conv/common.hpp"
#include "se3conv/rng.hpp"

namespace se3conv {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 v) { return {s * v.x, s * v.y, s * v.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 v) { return std::sqrt(dot(v, v)); }

// Row-major 3x3 rotation matrix.
struct RotationMatrix {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double operator()(int r, int c) const { return m[3 * r + c]; }
  double& operator()(int r, int c) { return m[3 * r + c]; }

  Vec3 apply(Vec3 v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  RotationMatrix transposed() const {
    RotationMatrix t;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
    return t;
  }

  double orthogonality_defect() const {
    // max |M^T M - I|
    double worst = 0;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += (*this)(k, r) * (*this)(k, c);
        worst = std::max(worst, std::abs(s - (r == c ? 1.0 : 0.0)));
      }
    }
    return worst;
  }

  double determinant() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }
};

inline RotationMatrix matmul(const RotationMatrix& a, const RotationMatrix& b) {
  RotationMatrix r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
      r(i, j) = s;
    }
  return r;
}

// Unit quaternion representing a rotation in SO(3). q and -q describe the
// same rotation; factory functions return the canonical representative with
// w >= 0 (tie at w == 0: first nonzero of x, y, z positive). Raw aggregate
// construction is allowed so sign-invariance can be exercised directly.
struct UnitQuaternion {
  double w = 1, x = 0, y = 0, z = 0;

  static UnitQuaternion identity() { return {1, 0, 0, 0}; }

  static UnitQuaternion from_components(double w, double x, double y, double z) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    require(std::isfinite(n) && n > 0, "quaternion: zero or non-finite norm");
    return UnitQuaternion{w / n, x / n, y / n, z / n}.canonical();
  }

  static UnitQuaternion from_axis_angle(Vec3 axis, double angle) {
    const double n = se3conv::norm(axis);
    require(n > 0, "from_axis_angle: zero axis");
    const double s = std::sin(angle / 2) / n;
    return from_components(std::cos(angle / 2), s * axis.x, s * axis.y, s * axis.z);
  }

  UnitQuaternion canonical() const {
    if (w > 0) return *this;
    if (w < 0) return {-w, -x, -y, -z};
    if (x != 0) return x > 0 ? *this : UnitQuaternion{w, -x, -y, -z};
    if (y != 0) return y > 0 ? *this : UnitQuaternion{w, x, -y, -z};
    if (z < 0) return {w, x, y, -z};
    return *this;
  }

  UnitQuaternion negated() const { return {-w, -x, -y, -z}; }

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
};

inline double quat_dot(const UnitQuaternion& a, const UnitQuaternion& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

// Hamilton product: the rotation "apply b, then a". Renormalized and
// canonicalized so drift cannot accumulate through long compositions.
inline UnitQuaternion quat_mul(const UnitQuaternion& a, const UnitQuaternion& b) {
  return UnitQuaternion::from_components(
      a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
      a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
      a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
      a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w);
}

inline UnitQuaternion quat_inverse(const UnitQuaternion& q) {
  return UnitQuaternion{q.w, -q.x, -q.y, -q.z}.canonical();
}

// Riemannian distance on SO(3): the rotation angle of a^-1 b, in [0, pi].
// Equal to 2*acos(|<a,b>|) but evaluated through atan2 of the chord lengths,
// which stays well-conditioned when the rotations nearly coincide (acos
// loses half the significant digits near 1). Sign-invariant.
inline double geodesic_distance(const UnitQuaternion& a, const UnitQuaternion& b) {
  const double s = quat_dot(a, b) < 0 ? -1.0 : 1.0;
  const double dw = a.w - s * b.w, dx = a.x - s * b.x, dy = a.y - s * b.y,
               dz = a.z - s * b.z;
  const double sw = a.w + s * b.w, sx = a.x + s * b.x, sy = a.y + s * b.y,
               sz = a.z + s * b.z;
  const double chord_diff = std::sqrt(dw * dw + dx * dx + dy * dy + dz * dz);
  const double chord_sum = std::sqrt(sw * sw + sx * sx + sy * sy + sz * sz);
  return 4.0 * std::atan2(chord_diff, chord_sum);
}

// Rotation angle of q itself, in [0, pi].
inline double rotation_angle(const UnitQuaternion& q) {
  return 2.0 * std::atan2(std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z), std::abs(q.w));
}

inline RotationMatrix quat_to_matrix(const UnitQuaternion& q) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  RotationMatrix r;
  r.m = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)};
  return r;
}

// Shepperd's method, canonical sign. Rejects matrices that are not rotations
// (a corrupted grid file is the typical source).
inline UnitQuaternion matrix_to_quat(const RotationMatrix& m) {
  require(m.orthogonality_defect() <= 1e-10,
          "matrix_to_quat: matrix is not orthogonal within 1e-10");
  require(std::abs(m.determinant() - 1.0) <= 1e-10,
          "matrix_to_quat: determinant is not +1 within 1e-10");
  const double t = m(0, 0) + m(1, 1) + m(2, 2);
  double w, x, y, z;
  if (t > m(0, 0) && t > m(1, 1) && t > m(2, 2)) {
    const double s = std::sqrt(1.0 + t) * 2.0;
    w = 0.25 * s;
    x = (m(2, 1) - m(1, 2)) / s;
    y = (m(0, 2) - m(2, 0)) / s;
    z = (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    const double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
    w = (m(2, 1) - m(1, 2)) / s;
    x = 0.25 * s;
    y = (m(0, 1) + m(1, 0)) / s;
    z = (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) > m(2, 2)) {
    const double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
    w = (m(0, 2) - m(2, 0)) / s;
    x = (m(0, 1) + m(1, 0)) / s;
    y = 0.25 * s;
    z = (m(1, 2) + m(2, 1)) / s;
  } else {
    const double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
    w = (m(1, 0) - m(0, 1)) / s;
    x = (m(0, 2) + m(2, 0)) / s;
    y = (m(1, 2) + m(2, 1)) / s;
    z = 0.25 * s;
  }
  return UnitQuaternion::from_components(w, x, y, z);
}

inline Vec3 rotate_vector(const UnitQuaternion& q, Vec3 v) {
  // v' = v + 2 w (u x v) + 2 u x (u x v), u = (x, y, z)
  const Vec3 u{q.x, q.y, q.z};
  const Vec3 c = cross(u, v);
  return v + 2.0 * q.w * c + 2.0 * cross(u, c);
}

// Haar-uniform rotation: four iid standard normals, normalized.
inline UnitQuaternion haar_sample(Rng& rng) {
  const double a = rng.normal(), b = rng.normal(), c = rng.normal(), d = rng.normal();
  return UnitQuaternion::from_components(a, b, c, d);
}

}  // namespace se3conv
