#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "se3conv/common.hpp"
#include "se3conv/quaternion.hpp"
#include "se3conv/rng.hpp"

namespace se3conv {

enum class GridKind { UniformRepulsion, FiniteSubgroup, IidRandom };

inline std::string to_string(GridKind k) {
  switch (k) {
    case GridKind::UniformRepulsion: return "uniform-repulsion";
    case GridKind::FiniteSubgroup: return "finite-subgroup";
    case GridKind::IidRandom: return "iid-random";
  }
  return "unknown";
}

inline GridKind grid_kind_from_string(const std::string& s) {
  if (s == "uniform-repulsion") return GridKind::UniformRepulsion;
  if (s == "finite-subgroup") return GridKind::FiniteSubgroup;
  if (s == "iid-random") return GridKind::IidRandom;
  throw validation_error("unknown grid kind '" + s + "'");
}

struct UniformityStats {
  double min_dist = 0;      // min pairwise geodesic distance
  double mean_nn_dist = 0;  // mean distance to nearest neighbor
};

// An ordered set of rotations. Elements are unit quaternions with canonical
// sign; min_dist / mean_nn_dist are recorded at construction (pi by
// convention for a single-element grid).
struct RotationGrid {
  std::vector<UnitQuaternion> elements;
  GridKind kind = GridKind::IidRandom;
  std::uint64_t seed = 0;
  double min_dist = kPi;
  double mean_nn_dist = kPi;

  std::size_t resolution() const { return elements.size(); }
  const UnitQuaternion& operator[](std::size_t i) const { return elements[i]; }
};

inline UniformityStats uniformity_stats(const RotationGrid& grid) {
  const std::size_t n = grid.resolution();
  require(n >= 2, "uniformity_stats: need at least 2 elements");
  double min_all = std::numeric_limits<double>::infinity();
  double nn_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double nn = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      nn = std::min(nn, geodesic_distance(grid.elements[i], grid.elements[j]));
    }
    nn_sum += nn;
    min_all = std::min(min_all, nn);
  }
  return {min_all, nn_sum / static_cast<double>(n)};
}

inline void record_stats(RotationGrid& grid) {
  if (grid.resolution() < 2) {
    grid.min_dist = kPi;
    grid.mean_nn_dist = kPi;
  } else {
    const UniformityStats s = uniformity_stats(grid);
    grid.min_dist = s.min_dist;
    grid.mean_nn_dist = s.mean_nn_dist;
  }
}

// ---------------------------------------------------------------------------
// Exact finite subgroups
// ---------------------------------------------------------------------------

enum class Subgroup { V4, T12, O24 };

inline Subgroup subgroup_from_string(const std::string& s) {
  if (s == "V4" || s == "v4") return Subgroup::V4;
  if (s == "T12" || s == "t12") return Subgroup::T12;
  if (s == "O24" || s == "o24") return Subgroup::O24;
  throw validation_error("unknown subgroup '" + s + "' (expected V4, T12 or O24)");
}

// V4: identity + the three 180-degree axis rotations. T12: the rotation group
// of the tetrahedron. O24: the rotation group of the cube. Components are
// written out exactly (0, 1/2, sqrt(1/2), 1) and sorted descending on
// (w, x, y, z) for a stable element order.
inline RotationGrid finite_subgroup(Subgroup name) {
  std::vector<UnitQuaternion> q;
  q.push_back({1, 0, 0, 0});
  q.push_back({0, 1, 0, 0});
  q.push_back({0, 0, 1, 0});
  q.push_back({0, 0, 0, 1});
  if (name != Subgroup::V4) {
    for (double sx : {1.0, -1.0})
      for (double sy : {1.0, -1.0})
        for (double sz : {1.0, -1.0}) q.push_back({0.5, 0.5 * sx, 0.5 * sy, 0.5 * sz});
  }
  if (name == Subgroup::O24) {
    const double s = std::sqrt(0.5);
    for (double sg : {1.0, -1.0}) {
      q.push_back({s, sg * s, 0, 0});
      q.push_back({s, 0, sg * s, 0});
      q.push_back({s, 0, 0, sg * s});
    }
    q.push_back({0, s, s, 0});
    q.push_back({0, s, -s, 0});
    q.push_back({0, s, 0, s});
    q.push_back({0, s, 0, -s});
    q.push_back({0, 0, s, s});
    q.push_back({0, 0, s, -s});
  }
  std::sort(q.begin(), q.end(), [](const UnitQuaternion& a, const UnitQuaternion& b) {
    return std::tie(a.w, a.x, a.y, a.z) > std::tie(b.w, b.x, b.y, b.z);
  });
  RotationGrid grid;
  grid.elements = std::move(q);
  grid.kind = GridKind::FiniteSubgroup;
  record_stats(grid);
  return grid;
}

inline RotationGrid finite_subgroup(const std::string& name) {
  return finite_subgroup(subgroup_from_string(name));
}

// Index of the element within tol of q, or -1.
inline int find_element(const RotationGrid& grid, const UnitQuaternion& q,
                        double tol = 1e-6) {
  for (std::size_t i = 0; i < grid.resolution(); ++i) {
    if (geodesic_distance(grid.elements[i], q) <= tol) return static_cast<int>(i);
  }
  return -1;
}

// max over element pairs of the distance from their product to the grid
inline double closure_defect(const RotationGrid& grid) {
  double worst = 0;
  for (const auto& a : grid.elements) {
    for (const auto& b : grid.elements) {
      const UnitQuaternion p = quat_mul(a, b);
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : grid.elements) best = std::min(best, geodesic_distance(p, c));
      worst = std::max(worst, best);
    }
  }
  return worst;
}

// Source indices for the action (T_g F)[j] = F[src[j]], src[j] = index of
// g^-1 * R_j. Throws if g does not map the grid onto itself.
inline std::vector<std::size_t> left_action_source(const RotationGrid& grid,
                                                   const UnitQuaternion& g,
                                                   double tol = 1e-6) {
  const UnitQuaternion gi = quat_inverse(g);
  std::vector<std::size_t> src(grid.resolution());
  for (std::size_t j = 0; j < grid.resolution(); ++j) {
    const int idx = find_element(grid, quat_mul(gi, grid.elements[j]), tol);
    require(idx >= 0, "left_action_source: rotation does not preserve the grid");
    src[j] = static_cast<std::size_t>(idx);
  }
  return src;
}

// ---------------------------------------------------------------------------
// Random and repulsion grids
// ---------------------------------------------------------------------------

inline RotationGrid iid_random_grid(std::size_t n, std::uint64_t seed) {
  require(n >= 1, "iid_random_grid: n must be >= 1");
  Rng rng(seed);
  RotationGrid grid;
  grid.elements.reserve(n);
  for (std::size_t i = 0; i < n; ++i) grid.elements.push_back(haar_sample(rng));
  grid.kind = GridKind::IidRandom;
  grid.seed = seed;
  record_stats(grid);
  return grid;
}

struct RepulsionOptions {
  double power = 3.0;   // displacement magnitude ~ d^-power
  double step = 0.01;   // tangent step size per iteration
  int max_iters = 2000;
  double tol = 1e-6;    // stop when the largest applied displacement is below
};

// Uniform (equidistant) grid by inverse-power repulsion on the quaternion
// 3-sphere. Each element is repelled by both images +-q_j of every other
// element, so the optimization lives on the projective sphere and cannot
// cluster in one hemisphere. Jacobi-style updates keep the result
// independent of element order.
inline RotationGrid generate_uniform_grid(std::size_t n, std::uint64_t seed,
                                          const RepulsionOptions& opts = {}) {
  require(n >= 1, "generate_uniform_grid: n must be >= 1");
  Rng rng(seed);
  std::vector<UnitQuaternion> q;
  q.reserve(n);
  for (std::size_t i = 0; i < n; ++i) q.push_back(haar_sample(rng));

  if (n >= 2) {
    std::vector<std::array<double, 4>> disp(n);
    for (int iter = 0; iter < opts.max_iters; ++iter) {
      for (std::size_t i = 0; i < n; ++i) {
        std::array<double, 4> d{0, 0, 0, 0};
        for (std::size_t j = 0; j < n; ++j) {
          if (j == i) continue;
          for (double sign : {1.0, -1.0}) {
            const double pw = sign * q[j].w, px = sign * q[j].x;
            const double py = sign * q[j].y, pz = sign * q[j].z;
            const double c = std::clamp(
                q[i].w * pw + q[i].x * px + q[i].y * py + q[i].z * pz, -1.0, 1.0);
            const double theta = std::acos(c);
            if (theta < 1e-12) continue;  // coincident; direction undefined
            const double s = std::max(std::sin(theta), 1e-9);
            // unit tangent at q_i pointing away from the image, times theta^-p
            const double mag = std::pow(theta, -opts.power) / s;
            d[0] += mag * (c * q[i].w - pw);
            d[1] += mag * (c * q[i].x - px);
            d[2] += mag * (c * q[i].y - py);
            d[3] += mag * (c * q[i].z - pz);
          }
        }
        // project to the tangent space at q_i
        const double r = d[0] * q[i].w + d[1] * q[i].x + d[2] * q[i].y + d[3] * q[i].z;
        d[0] -= r * q[i].w;
        d[1] -= r * q[i].x;
        d[2] -= r * q[i].y;
        d[3] -= r * q[i].z;
        disp[i] = d;
      }
      double max_disp = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double dw = opts.step * disp[i][0], dx = opts.step * disp[i][1];
        const double dy = opts.step * disp[i][2], dz = opts.step * disp[i][3];
        max_disp = std::max(max_disp, std::sqrt(dw * dw + dx * dx + dy * dy + dz * dz));
        q[i] = UnitQuaternion::from_components(q[i].w + dw, q[i].x + dx, q[i].y + dy,
                                               q[i].z + dz);
      }
      if (max_disp < opts.tol) break;
    }
  }

  RotationGrid grid;
  grid.elements.reserve(n);
  for (auto& e : q) grid.elements.push_back(e.canonical());
  grid.kind = GridKind::UniformRepulsion;
  grid.seed = seed;
  record_stats(grid);
  return grid;
}

// Left-multiply every element by g. The geodesic distance is left-invariant,
// so the full pairwise distance matrix is preserved.
inline RotationGrid rotate_grid(const RotationGrid& grid, const UnitQuaternion& g) {
  require(grid.resolution() >= 1, "rotate_grid: empty grid");
  if (g.w == 1.0) return grid;  // exact identity is a no-op
  RotationGrid out = grid;
  for (auto& e : out.elements) e = quat_mul(g, e);
  record_stats(out);
  return out;
}

inline RotationGrid randomize_grid(const RotationGrid& grid, Rng& rng) {
  return rotate_grid(grid, haar_sample(rng));
}

// ---------------------------------------------------------------------------
// Grid files
// ---------------------------------------------------------------------------

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void save_grid(const RotationGrid& grid, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("save_grid: cannot open '" + path + "' for writing");
  out << "se3conv-grid 1\n";
  out << "n " << grid.resolution() << "\n";
  out << "kind " << to_string(grid.kind) << "\n";
  out << "seed " << grid.seed << "\n";
  out << "min_dist " << format_g17(grid.min_dist) << "\n";
  out << "mean_nn_dist " << format_g17(grid.mean_nn_dist) << "\n";
  out << "elements\n";
  for (const auto& q : grid.elements) {
    const UnitQuaternion c = q.canonical();
    out << format_g17(c.w) << " " << format_g17(c.x) << " " << format_g17(c.y) << " "
        << format_g17(c.z) << "\n";
  }
  if (!out) throw io_error("save_grid: write to '" + path + "' failed");
}

inline RotationGrid load_grid(const std::string& path,
                              std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw io_error("load_grid: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "se3conv-grid 1")
    throw validation_error("load_grid: missing or unsupported format-version header");

  std::size_t n = 0;
  bool have_n = false, have_kind = false, have_seed = false;
  bool have_min = false, have_mean = false;
  RotationGrid grid;
  while (std::getline(in, line)) {
    if (line == "elements") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "n") {
      have_n = static_cast<bool>(ls >> n);
    } else if (key == "kind") {
      std::string v;
      have_kind = static_cast<bool>(ls >> v);
      if (have_kind) grid.kind = grid_kind_from_string(v);
    } else if (key == "seed") {
      have_seed = static_cast<bool>(ls >> grid.seed);
    } else if (key == "min_dist") {
      have_min = static_cast<bool>(ls >> grid.min_dist);
    } else if (key == "mean_nn_dist") {
      have_mean = static_cast<bool>(ls >> grid.mean_nn_dist);
    } else {
      throw validation_error("load_grid: unknown header field '" + key + "'");
    }
  }
  for (auto [ok, name] : {std::pair{have_n, "n"}, {have_kind, "kind"},
                          {have_seed, "seed"}, {have_min, "min_dist"},
                          {have_mean, "mean_nn_dist"}}) {
    if (!ok) throw validation_error(std::string("load_grid: missing field '") + name + "'");
  }
  require(n >= 1, "load_grid: field 'n' must be >= 1");

  grid.elements.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line))
      throw validation_error("load_grid: truncated file, expected " + std::to_string(n) +
                             " elements, got " + std::to_string(i));
    std::istringstream ls(line);
    double w, x, y, z;
    if (!(ls >> w >> x >> y >> z))
      throw validation_error("load_grid: element " + std::to_string(i) +
                             " is not four decimal components");
    const double nrm = std::sqrt(w * w + x * x + y * y + z * z);
    if (!std::isfinite(nrm) || nrm == 0)
      throw validation_error("load_grid: element " + std::to_string(i) +
                             " has zero or non-finite norm");
    if (std::abs(nrm - 1.0) > 1e-12 && warnings) {
      warnings->push_back("load_grid: element " + std::to_string(i) +
                          " non-unit (|q| = " + format_g17(nrm) + "); renormalized");
    }
    grid.elements.push_back(UnitQuaternion::from_components(w, x, y, z));
  }
  record_stats(grid);
  if (grid.kind == GridKind::FiniteSubgroup) {
    const double defect = closure_defect(grid);
    if (defect > 1e-10)
      throw validation_error("load_grid: kind is finite-subgroup but closure defect is " +
                             format_g17(defect));
  }
  return grid;
}

}  // namespace se3conv
