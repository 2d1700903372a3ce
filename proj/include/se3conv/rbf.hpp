#pragma once

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "se3conv/common.hpp"
#include "se3conv/grid.hpp"
#include "se3conv/quaternion.hpp"
#include "se3conv/rng.hpp"

namespace se3conv {

// Gaussian RBF over geodesic distance. Weights are always normalized to a
// partition of unity.
struct RbfConfig {
  double sigma = 1.0;
  bool normalize = true;

  void validate() const {
    require(std::isfinite(sigma) && sigma > 0, "RbfConfig: sigma must be positive");
    require(normalize, "RbfConfig: normalize is fixed to true");
  }
};

// RBF width scaled to the grid resolution: the mean nearest-neighbor
// distance. A single-element grid gets pi.
inline double default_sigma(const RotationGrid& grid) {
  require(grid.resolution() >= 1, "default_sigma: empty grid");
  if (grid.resolution() == 1) return kPi;
  return uniformity_stats(grid).mean_nn_dist;
}

// Row-major [targets x sources] weight matrix.
struct InterpWeights {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  double at(std::size_t m, std::size_t n) const { return data[m * cols + n]; }
};

// w_mn = exp(-d(target_m, source_n)^2 / (2 sigma^2)), rows normalized to sum
// to 1. The per-row minimum distance is subtracted inside the exponent before
// normalizing (identical result in exact arithmetic, keeps rows from
// underflowing to all-zero at small sigma).
inline InterpWeights interp_weights(const std::vector<UnitQuaternion>& targets,
                                    const RotationGrid& sources, const RbfConfig& cfg) {
  cfg.validate();
  require(sources.resolution() >= 1, "interp_weights: empty source grid");
  const std::size_t m_count = targets.size();
  const std::size_t n_count = sources.resolution();
  InterpWeights w;
  w.rows = m_count;
  w.cols = n_count;
  w.data.resize(m_count * n_count);
  const double inv_two_sigma2 = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  std::vector<double> d2(n_count);
  for (std::size_t m = 0; m < m_count; ++m) {
    double d2_min = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < n_count; ++n) {
      const double d = geodesic_distance(targets[m], sources.elements[n]);
      d2[n] = d * d;
      d2_min = std::min(d2_min, d2[n]);
    }
    double sum = 0;
    double* row = &w.data[m * n_count];
    for (std::size_t n = 0; n < n_count; ++n) {
      row[n] = std::exp(-(d2[n] - d2_min) * inv_two_sigma2);
      sum += row[n];
    }
    const double inv_sum = 1.0 / sum;
    for (std::size_t n = 0; n < n_count; ++n) row[n] *= inv_sum;
  }
  return w;
}

// Continuous SO(3) kernel: learnable anchors k_i on a parameter grid {R_i},
// evaluated anywhere as an RBF-weighted combination. One independent anchor
// vector per (out, in) channel pair.
struct GroupMixingKernel {
  RotationGrid param_grid;
  RbfConfig rbf;
  std::size_t c_out = 0, c_in = 0;
  std::vector<double> params;  // [c_out][c_in][N]

  std::size_t param_resolution() const { return param_grid.resolution(); }

  void validate() const {
    rbf.validate();
    require(params.size() == c_out * c_in * param_grid.resolution(),
            "GroupMixingKernel: params size does not match c_out*c_in*N");
  }
};

inline GroupMixingKernel make_mixing_kernel(RotationGrid param_grid, std::size_t c_out,
                                            std::size_t c_in, Rng& rng) {
  GroupMixingKernel k;
  k.rbf.sigma = default_sigma(param_grid);
  k.param_grid = std::move(param_grid);
  k.c_out = c_out;
  k.c_in = c_in;
  const std::size_t n = k.param_grid.resolution();
  const double bound = std::sqrt(1.0 / (static_cast<double>(c_in) * static_cast<double>(n)));
  k.params.resize(c_out * c_in * n);
  for (auto& p : k.params) p = rng.uniform(-bound, bound);
  return k;
}

// out[o][i][m] = sum_n w[m][n] * params[o][i][n]
inline std::vector<double> expand_kernel_with_weights(const GroupMixingKernel& kernel,
                                                      const InterpWeights& w) {
  kernel.validate();
  const std::size_t n = kernel.param_resolution();
  const std::size_t m = w.rows;
  require(w.cols == n, "expand_kernel: weight/source mismatch");
  std::vector<double> out(kernel.c_out * kernel.c_in * m);
  using MatCM = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                               Eigen::RowMajor>>;
  using MatM = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                        Eigen::RowMajor>>;
  MatCM p(kernel.params.data(), static_cast<Eigen::Index>(kernel.c_out * kernel.c_in),
          static_cast<Eigen::Index>(n));
  MatCM wm(w.data.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  MatM o(out.data(), static_cast<Eigen::Index>(kernel.c_out * kernel.c_in),
         static_cast<Eigen::Index>(m));
  o.noalias() = p * wm.transpose();
  return out;
}

inline std::vector<double> expand_kernel(const GroupMixingKernel& kernel,
                                         const std::vector<UnitQuaternion>& targets) {
  return expand_kernel_with_weights(kernel,
                                    interp_weights(targets, kernel.param_grid, kernel.rbf));
}

// Adjoint of expand_kernel: grad_params[o][i][n] = sum_m upstream[o][i][m] * w[m][n]
inline std::vector<double> expand_kernel_backward_with_weights(
    const GroupMixingKernel& kernel, const InterpWeights& w,
    const std::vector<double>& upstream) {
  kernel.validate();
  const std::size_t n = kernel.param_resolution();
  const std::size_t m = w.rows;
  require(w.cols == n, "expand_kernel_backward: weight/source mismatch");
  require(upstream.size() == kernel.c_out * kernel.c_in * m,
          "expand_kernel_backward: upstream shape mismatch");
  std::vector<double> grad(kernel.c_out * kernel.c_in * n);
  using MatCM = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                               Eigen::RowMajor>>;
  using MatM = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                        Eigen::RowMajor>>;
  MatCM up(upstream.data(), static_cast<Eigen::Index>(kernel.c_out * kernel.c_in),
           static_cast<Eigen::Index>(m));
  MatCM wm(w.data.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  MatM g(grad.data(), static_cast<Eigen::Index>(kernel.c_out * kernel.c_in),
         static_cast<Eigen::Index>(n));
  g.noalias() = up * wm;
  return grad;
}

inline std::vector<double> expand_kernel_backward(const GroupMixingKernel& kernel,
                                                  const std::vector<UnitQuaternion>& targets,
                                                  const std::vector<double>& upstream) {
  return expand_kernel_backward_with_weights(
      kernel, interp_weights(targets, kernel.param_grid, kernel.rbf), upstream);
}

}  // namespace se3conv
