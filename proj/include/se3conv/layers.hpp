#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "se3conv/common.hpp"
#include "se3conv/grid.hpp"
#include "se3conv/parallel.hpp"
#include "se3conv/quaternion.hpp"
#include "se3conv/rbf.hpp"
#include "se3conv/rng.hpp"
#include "se3conv/volume.hpp"

namespace se3conv {

using VolumeBatch = std::vector<VolumeSignal>;
using FeatureBatch = std::vector<GroupFeatureMap>;

struct Matrix2D {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Matrix2D() = default;
  Matrix2D(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// View of a named parameter (or state buffer) living inside a layer.
struct TensorRef {
  std::string name;
  std::vector<int> shape;
  std::vector<double>* value = nullptr;
  std::vector<double>* grad = nullptr;  // null for non-learnable buffers

  std::size_t size() const { return value->size(); }
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using MapCRM = Eigen::Map<const RowMat>;

inline void gather_slabs(const GroupFeatureMap& f, int g, double* dst) {
  const std::size_t vox = f.voxels();
  for (int c = 0; c < f.channels; ++c)
    std::copy(f.slab(c, g), f.slab(c, g) + vox, dst + static_cast<std::size_t>(c) * vox);
}

inline void scatter_slabs(const double* src, GroupFeatureMap& f, int g) {
  const std::size_t vox = f.voxels();
  for (int c = 0; c < f.channels; ++c)
    std::copy(src + static_cast<std::size_t>(c) * vox,
              src + static_cast<std::size_t>(c + 1) * vox, f.slab(c, g));
}

inline void reduce_in_order(std::vector<std::vector<double>>& partials,
                            std::vector<double>& into) {
  for (const auto& p : partials)
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += p[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Lifting convolution: R^3 signal -> SE(3) signal (one dense correlation per
// output rotation, with the kernel resampled at that rotation)
// ---------------------------------------------------------------------------

class LiftingConv {
 public:
  LiftingConv() = default;
  LiftingConv(int c_in, int c_out, int k, Rng& rng) : c_in_(c_in), c_out_(c_out), k_(k) {
    bank_.assign(static_cast<std::size_t>(c_out) * c_in * k * k * k, 0.0);
    bank_grad_.assign(bank_.size(), 0.0);
    const double bound = std::sqrt(1.0 / (static_cast<double>(c_in) * k * k * k));
    for (auto& v : bank_) v = rng.uniform(-bound, bound);
  }

  int c_in() const { return c_in_; }
  int c_out() const { return c_out_; }

  FeatureBatch forward(const VolumeBatch& x, const RotationGrid& out_grid) {
    require(!x.empty() && x[0].channels == c_in_, "LiftingConv: channel mismatch");
    const std::size_t bsz = x.size();
    const int gsz = static_cast<int>(out_grid.resolution());
    rotated_ = rotate_banks(out_grid);
    FeatureBatch out(bsz);
    for (std::size_t b = 0; b < bsz; ++b)
      out[b] = GroupFeatureMap(c_out_, out_grid, x[b].depth, x[b].height, x[b].width);
    parallel_for(bsz * gsz, [&](std::size_t idx) {
      const std::size_t b = idx / gsz;
      const int g = static_cast<int>(idx % gsz);
      std::vector<double> tmp(static_cast<std::size_t>(c_out_) * x[b].voxels());
      correlate3d_into(tmp.data(), x[b], rotated_[g], ConvMode::Dense);
      detail::scatter_slabs(tmp.data(), out[b], g);
    });
    return out;
  }

  VolumeBatch backward(const VolumeBatch& x, const FeatureBatch& upstream) {
    const std::size_t bsz = x.size();
    const int gsz = upstream.empty() ? 0 : upstream[0].group_size();
    VolumeBatch grad_x(bsz);
    const std::size_t bank_one = static_cast<std::size_t>(k_) * k_ * k_ * c_in_ * c_out_;
    std::vector<std::vector<double>> rot_grad(bsz,
                                              std::vector<double>(bank_one * gsz, 0.0));
    parallel_for(bsz, [&](std::size_t b) {
      grad_x[b] = VolumeSignal(c_in_, x[b].depth, x[b].height, x[b].width);
      std::vector<double> up_tmp(static_cast<std::size_t>(c_out_) * x[b].voxels());
      for (int g = 0; g < gsz; ++g) {
        detail::gather_slabs(upstream[b], g, up_tmp.data());
        SpatialKernelBank gbank(c_out_, c_in_, k_);
        correlate3d_backward_into(x[b], rotated_[g], up_tmp.data(), grad_x[b].data.data(),
                                  &gbank, ConvMode::Dense);
        double* dst = rot_grad[b].data() + bank_one * g;
        for (std::size_t i = 0; i < bank_one; ++i) dst[i] += gbank.data[i];
      }
    });
    // reduce per-item contributions in fixed order, then pull each rotated
    // gradient back through the resampling adjoint
    for (int g = 0; g < gsz; ++g) {
      SpatialKernelBank acc(c_out_, c_in_, k_);
      for (std::size_t b = 0; b < bsz; ++b) {
        const double* src = rot_grad[b].data() + bank_one * g;
        for (std::size_t i = 0; i < bank_one; ++i) acc.data[i] += src[i];
      }
      const SpatialKernelBank pulled =
          rotate_kernel_adjoint(acc, rotated_grid_.elements[g]);
      for (std::size_t i = 0; i < bank_one; ++i) bank_grad_[i] += pulled.data[i];
    }
    return grad_x;
  }

  void collect(std::vector<TensorRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".bank", {c_out_, c_in_, k_, k_, k_}, &bank_, &bank_grad_});
  }

  std::vector<double>& bank() { return bank_; }
  int kernel_size() const { return k_; }

 private:
  std::vector<SpatialKernelBank> rotate_banks(const RotationGrid& grid) {
    rotated_grid_ = grid;
    SpatialKernelBank src(c_out_, c_in_, k_);
    src.data = bank_;
    std::vector<SpatialKernelBank> out(grid.resolution());
    parallel_for(grid.resolution(),
                 [&](std::size_t g) { out[g] = rotate_kernel(src, grid.elements[g]); });
    return out;
  }

  int c_in_ = 0, c_out_ = 0, k_ = 0;
  std::vector<double> bank_, bank_grad_;
  std::vector<SpatialKernelBank> rotated_;
  RotationGrid rotated_grid_;
};

// ---------------------------------------------------------------------------
// Separable group convolution (channel/group mixing via the RBF-expanded
// SO(3) kernel, then a depthwise spatial correlation per output rotation)
// ---------------------------------------------------------------------------

class GroupConv {
 public:
  GroupConv() = default;
  GroupConv(int c_in, int c_out, int k, RotationGrid param_grid, Rng& rng)
      : c_in_(c_in), c_out_(c_out), k_(k) {
    mixing_ = make_mixing_kernel(std::move(param_grid), c_out, c_in, rng);
    mixing_grad_.assign(mixing_.params.size(), 0.0);
    dw_bank_.assign(static_cast<std::size_t>(c_out) * k * k * k, 0.0);
    dw_grad_.assign(dw_bank_.size(), 0.0);
    const double bound = std::sqrt(1.0 / (k * k * k));
    for (auto& v : dw_bank_) v = rng.uniform(-bound, bound);
  }

  int c_in() const { return c_in_; }
  int c_out() const { return c_out_; }
  const GroupMixingKernel& mixing() const { return mixing_; }

  FeatureBatch forward(const FeatureBatch& f, const RotationGrid& out_grid) {
    require(!f.empty(), "GroupConv: empty batch");
    require(f[0].channels == c_in_, "GroupConv: channel mismatch");
    require(f[0].grid.resolution() >= 1, "GroupConv: empty input grid");
    const std::size_t bsz = f.size();
    const int g_in = f[0].group_size();
    const int g_out = static_cast<int>(out_grid.resolution());
    const std::size_t vox = f[0].voxels();

    build_mixing_matrix(f[0].grid, out_grid);
    rotated_dw_ = rotate_dw_banks(out_grid);

    // stage 1: h[(o,g_out)] = sum_(i,g_in) A * f[(i,g_in)], one GEMM per item
    h_.assign(bsz, Matrix2D(static_cast<std::size_t>(c_out_) * g_out, vox));
    parallel_for(bsz, [&](std::size_t b) {
      detail::MapCRM x(f[b].data.data(), static_cast<Eigen::Index>(c_in_) * g_in,
                       static_cast<Eigen::Index>(vox));
      detail::MapCRM a(mix_matrix_.data.data(), static_cast<Eigen::Index>(c_out_) * g_out,
                       static_cast<Eigen::Index>(c_in_) * g_in);
      detail::MapRM h(h_[b].data.data(), static_cast<Eigen::Index>(c_out_) * g_out,
                      static_cast<Eigen::Index>(vox));
      h.noalias() = a * x;
    });

    // stage 2: depthwise spatial correlation with the kernel rotated to g_out
    FeatureBatch out(bsz);
    for (std::size_t b = 0; b < bsz; ++b)
      out[b] = GroupFeatureMap(c_out_, out_grid, f[b].depth, f[b].height, f[b].width);
    parallel_for(bsz * g_out, [&](std::size_t idx) {
      const std::size_t b = idx / g_out;
      const int g = static_cast<int>(idx % g_out);
      VolumeSignal hv(c_out_, f[b].depth, f[b].height, f[b].width);
      for (int c = 0; c < c_out_; ++c) {
        const double* src = h_[b].data.data() + (static_cast<std::size_t>(c) * g_out + g) * vox;
        std::copy(src, src + vox, hv.channel(c));
      }
      std::vector<double> tmp(static_cast<std::size_t>(c_out_) * vox);
      correlate3d_into(tmp.data(), hv, rotated_dw_[g], ConvMode::Depthwise);
      detail::scatter_slabs(tmp.data(), out[b], g);
    });
    return out;
  }

  FeatureBatch backward(const FeatureBatch& f, const FeatureBatch& upstream) {
    const std::size_t bsz = f.size();
    const int g_in = f[0].group_size();
    const int g_out = upstream[0].group_size();
    const std::size_t vox = f[0].voxels();
    const std::size_t dw_one = dw_bank_.size();

    // spatial stage backward
    std::vector<Matrix2D> grad_h(bsz,
                                 Matrix2D(static_cast<std::size_t>(c_out_) * g_out, vox));
    std::vector<std::vector<double>> rot_dw_grad(
        bsz, std::vector<double>(dw_one * g_out, 0.0));
    parallel_for(bsz * g_out, [&](std::size_t idx) {
      const std::size_t b = idx / g_out;
      const int g = static_cast<int>(idx % g_out);
      VolumeSignal hv(c_out_, f[b].depth, f[b].height, f[b].width);
      for (int c = 0; c < c_out_; ++c) {
        const double* src =
            h_[b].data.data() + (static_cast<std::size_t>(c) * g_out + g) * vox;
        std::copy(src, src + vox, hv.channel(c));
      }
      std::vector<double> up_tmp(static_cast<std::size_t>(c_out_) * vox);
      detail::gather_slabs(upstream[b], g, up_tmp.data());
      SpatialKernelBank gbank(c_out_, 1, k_);
      VolumeSignal gh(c_out_, f[b].depth, f[b].height, f[b].width);
      correlate3d_backward_into(hv, rotated_dw_[g], up_tmp.data(), gh.data.data(), &gbank,
                                ConvMode::Depthwise);
      for (int c = 0; c < c_out_; ++c) {
        double* dst = grad_h[b].data.data() + (static_cast<std::size_t>(c) * g_out + g) * vox;
        std::copy(gh.channel(c), gh.channel(c) + vox, dst);
      }
      double* rg = rot_dw_grad[b].data() + dw_one * g;
      for (std::size_t i = 0; i < dw_one; ++i) rg[i] += gbank.data[i];
    });
    for (int g = 0; g < g_out; ++g) {
      SpatialKernelBank acc(c_out_, 1, k_);
      for (std::size_t b = 0; b < bsz; ++b) {
        const double* src = rot_dw_grad[b].data() + dw_one * g;
        for (std::size_t i = 0; i < dw_one; ++i) acc.data[i] += src[i];
      }
      const SpatialKernelBank pulled = rotate_kernel_adjoint(acc, out_grid_.elements[g]);
      for (std::size_t i = 0; i < dw_one; ++i) dw_grad_[i] += pulled.data[i];
    }

    // mixing stage backward: grad_A accumulates over items, grad_X per item
    FeatureBatch grad_f(bsz);
    const std::size_t a_size = mix_matrix_.data.size();
    std::vector<std::vector<double>> a_grad_parts(bsz, std::vector<double>(a_size, 0.0));
    parallel_for(bsz, [&](std::size_t b) {
      grad_f[b] = GroupFeatureMap(c_in_, f[b].grid, f[b].depth, f[b].height, f[b].width);
      detail::MapCRM gh(grad_h[b].data.data(), static_cast<Eigen::Index>(c_out_) * g_out,
                        static_cast<Eigen::Index>(vox));
      detail::MapCRM x(f[b].data.data(), static_cast<Eigen::Index>(c_in_) * g_in,
                       static_cast<Eigen::Index>(vox));
      detail::MapCRM a(mix_matrix_.data.data(), static_cast<Eigen::Index>(c_out_) * g_out,
                       static_cast<Eigen::Index>(c_in_) * g_in);
      detail::MapRM ga(a_grad_parts[b].data(), static_cast<Eigen::Index>(c_out_) * g_out,
                       static_cast<Eigen::Index>(c_in_) * g_in);
      detail::MapRM gx(grad_f[b].data.data(), static_cast<Eigen::Index>(c_in_) * g_in,
                       static_cast<Eigen::Index>(vox));
      ga.noalias() = gh * x.transpose();
      gx.noalias() = a.transpose() * gh;
    });
    std::vector<double> grad_a(a_size, 0.0);
    detail::reduce_in_order(a_grad_parts, grad_a);

    // map grad_A back to the expanded-kernel layout and through the RBF
    const double inv_gin = 1.0 / static_cast<double>(g_in);
    std::vector<double> grad_expanded(static_cast<std::size_t>(c_out_) * c_in_ * g_out * g_in);
    for (int o = 0; o < c_out_; ++o)
      for (int go = 0; go < g_out; ++go)
        for (int i = 0; i < c_in_; ++i)
          for (int gi = 0; gi < g_in; ++gi) {
            const std::size_t row = static_cast<std::size_t>(o) * g_out + go;
            const std::size_t col = static_cast<std::size_t>(i) * g_in + gi;
            grad_expanded[((static_cast<std::size_t>(o) * c_in_ + i) * g_out + go) * g_in +
                          gi] = grad_a[row * (static_cast<std::size_t>(c_in_) * g_in) + col] * inv_gin;
          }
    const std::vector<double> gp =
        expand_kernel_backward_with_weights(mixing_, weights_, grad_expanded);
    for (std::size_t i = 0; i < gp.size(); ++i) mixing_grad_[i] += gp[i];
    return grad_f;
  }

  void collect(std::vector<TensorRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".mixing",
                   {c_out_, c_in_, static_cast<int>(mixing_.param_resolution())},
                   &mixing_.params, &mixing_grad_});
    out.push_back({prefix + ".dw_bank", {c_out_, 1, k_, k_, k_}, &dw_bank_, &dw_grad_});
  }

  double rbf_sigma() const { return mixing_.rbf.sigma; }
  void mixing_sigma(double sigma) { mixing_.rbf.sigma = sigma; }
  int kernel_size() const { return k_; }

 private:
  void build_mixing_matrix(const RotationGrid& in_grid, const RotationGrid& out_grid) {
    in_grid_ = in_grid;
    out_grid_ = out_grid;
    const int g_in = static_cast<int>(in_grid.resolution());
    const int g_out = static_cast<int>(out_grid.resolution());
    std::vector<UnitQuaternion> targets;
    targets.reserve(static_cast<std::size_t>(g_out) * g_in);
    for (int go = 0; go < g_out; ++go) {
      const UnitQuaternion inv = quat_inverse(out_grid.elements[go]);
      for (int gi = 0; gi < g_in; ++gi)
        targets.push_back(quat_mul(inv, in_grid.elements[gi]));
    }
    weights_ = interp_weights(targets, mixing_.param_grid, mixing_.rbf);
    const std::vector<double> expanded = expand_kernel_with_weights(mixing_, weights_);
    // A[(o,g_out)][(i,g_in)] = k_SO3[o][i](R_out^-1 R_in) / |G_in|; 1/|G_in|
    // is the quadrature weight of the group integral
    const double inv_gin = 1.0 / static_cast<double>(g_in);
    mix_matrix_ = Matrix2D(static_cast<std::size_t>(c_out_) * g_out,
                           static_cast<std::size_t>(c_in_) * g_in);
    for (int o = 0; o < c_out_; ++o)
      for (int go = 0; go < g_out; ++go)
        for (int i = 0; i < c_in_; ++i)
          for (int gi = 0; gi < g_in; ++gi)
            mix_matrix_.at(static_cast<std::size_t>(o) * g_out + go,
                           static_cast<std::size_t>(i) * g_in + gi) =
                expanded[((static_cast<std::size_t>(o) * c_in_ + i) * g_out + go) * g_in +
                         gi] *
                inv_gin;
  }

  std::vector<SpatialKernelBank> rotate_dw_banks(const RotationGrid& grid) {
    SpatialKernelBank src(c_out_, 1, k_);
    src.data = dw_bank_;
    std::vector<SpatialKernelBank> out(grid.resolution());
    parallel_for(grid.resolution(),
                 [&](std::size_t g) { out[g] = rotate_kernel(src, grid.elements[g]); });
    return out;
  }

  int c_in_ = 0, c_out_ = 0, k_ = 0;
  GroupMixingKernel mixing_;
  std::vector<double> mixing_grad_;
  std::vector<double> dw_bank_, dw_grad_;

  // per-forward cache
  RotationGrid in_grid_, out_grid_;
  InterpWeights weights_;
  Matrix2D mix_matrix_;
  std::vector<SpatialKernelBank> rotated_dw_;
  std::vector<Matrix2D> h_;
};

// ---------------------------------------------------------------------------
// Pointwise channel mixing (residual projection): out[o][g] = P f[i][g]
// ---------------------------------------------------------------------------

class PointwiseMix {
 public:
  PointwiseMix() = default;
  PointwiseMix(int c_in, int c_out, Rng& rng) : c_in_(c_in), c_out_(c_out) {
    weight_.assign(static_cast<std::size_t>(c_out) * c_in, 0.0);
    grad_.assign(weight_.size(), 0.0);
    const double bound = std::sqrt(1.0 / c_in);
    for (auto& v : weight_) v = rng.uniform(-bound, bound);
  }

  FeatureBatch forward(const FeatureBatch& f) {
    const std::size_t bsz = f.size();
    FeatureBatch out(bsz);
    parallel_for(bsz, [&](std::size_t b) {
      const int gsz = f[b].group_size();
      const std::size_t vox = f[b].voxels();
      out[b] = GroupFeatureMap(c_out_, f[b].grid, f[b].depth, f[b].height, f[b].width);
      for (int o = 0; o < c_out_; ++o)
        for (int g = 0; g < gsz; ++g) {
          double* dst = out[b].slab(o, g);
          for (int i = 0; i < c_in_; ++i) {
            const double w = weight_[static_cast<std::size_t>(o) * c_in_ + i];
            const double* src = f[b].slab(i, g);
            for (std::size_t v = 0; v < vox; ++v) dst[v] += w * src[v];
          }
        }
    });
    return out;
  }

  FeatureBatch backward(const FeatureBatch& f, const FeatureBatch& upstream) {
    const std::size_t bsz = f.size();
    FeatureBatch grad_f(bsz);
    std::vector<std::vector<double>> wparts(bsz, std::vector<double>(weight_.size(), 0.0));
    parallel_for(bsz, [&](std::size_t b) {
      const int gsz = f[b].group_size();
      const std::size_t vox = f[b].voxels();
      grad_f[b] = GroupFeatureMap(c_in_, f[b].grid, f[b].depth, f[b].height, f[b].width);
      for (int o = 0; o < c_out_; ++o)
        for (int g = 0; g < gsz; ++g) {
          const double* up = upstream[b].slab(o, g);
          for (int i = 0; i < c_in_; ++i) {
            const double w = weight_[static_cast<std::size_t>(o) * c_in_ + i];
            double* gf = grad_f[b].slab(i, g);
            const double* src = f[b].slab(i, g);
            double acc = 0;
            for (std::size_t v = 0; v < vox; ++v) {
              gf[v] += w * up[v];
              acc += up[v] * src[v];
            }
            wparts[b][static_cast<std::size_t>(o) * c_in_ + i] += acc;
          }
        }
    });
    detail::reduce_in_order(wparts, grad_);
    return grad_f;
  }

  void collect(std::vector<TensorRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", {c_out_, c_in_}, &weight_, &grad_});
  }

 private:
  int c_in_ = 0, c_out_ = 0;
  std::vector<double> weight_, grad_;
};

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Batch norm with per-channel statistics over (batch, group, space).
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(int channels, double eps = 1e-5, double momentum = 0.1)
      : c_(channels), eps_(eps), momentum_(momentum) {
    gamma_.assign(c_, 1.0);
    beta_.assign(c_, 0.0);
    gamma_grad_.assign(c_, 0.0);
    beta_grad_.assign(c_, 0.0);
    running_mean_.assign(c_, 0.0);
    running_var_.assign(c_, 1.0);
  }

  FeatureBatch forward(const FeatureBatch& f, bool train) {
    const std::size_t bsz = f.size();
    train_mode_ = train;
    mean_.assign(c_, 0.0);
    inv_std_.assign(c_, 0.0);
    std::vector<double> var(c_, 0.0);
    if (train) {
      parallel_for(c_, [&](std::size_t c) {
        double sum = 0, sum2 = 0;
        std::size_t count = 0;
        for (std::size_t b = 0; b < bsz; ++b) {
          const std::size_t n = f[b].grid.resolution() * f[b].voxels();
          const double* p = f[b].slab(static_cast<int>(c), 0);
          for (std::size_t i = 0; i < n; ++i) {
            sum += p[i];
            sum2 += p[i] * p[i];
          }
          count += n;
        }
        const double m = sum / count;
        mean_[c] = m;
        var[c] = std::max(0.0, sum2 / count - m * m);
      });
      for (int c = 0; c < c_; ++c) {
        running_mean_[c] = (1 - momentum_) * running_mean_[c] + momentum_ * mean_[c];
        running_var_[c] = (1 - momentum_) * running_var_[c] + momentum_ * var[c];
      }
    } else {
      mean_ = running_mean_;
      var = running_var_;
    }
    for (int c = 0; c < c_; ++c) inv_std_[c] = 1.0 / std::sqrt(var[c] + eps_);

    count_ = 0;
    for (std::size_t b = 0; b < bsz; ++b) count_ += f[b].grid.resolution() * f[b].voxels();
    FeatureBatch out(bsz);
    xhat_.resize(bsz);
    parallel_for(bsz, [&](std::size_t b) {
      out[b] = GroupFeatureMap(c_, f[b].grid, f[b].depth, f[b].height, f[b].width);
      xhat_[b].resize(f[b].data.size());
      const std::size_t n = f[b].grid.resolution() * f[b].voxels();
      for (int c = 0; c < c_; ++c) {
        const double* src = f[b].slab(c, 0);
        double* xh = xhat_[b].data() + static_cast<std::size_t>(c) * n;
        double* dst = out[b].slab(c, 0);
        for (std::size_t i = 0; i < n; ++i) {
          xh[i] = (src[i] - mean_[c]) * inv_std_[c];
          dst[i] = gamma_[c] * xh[i] + beta_[c];
        }
      }
    });
    return out;
  }

  FeatureBatch backward(const FeatureBatch& f, const FeatureBatch& upstream) {
    const std::size_t bsz = f.size();
    FeatureBatch grad_f(bsz);
    for (std::size_t b = 0; b < bsz; ++b)
      grad_f[b] = GroupFeatureMap(c_, f[b].grid, f[b].depth, f[b].height, f[b].width);
    std::vector<double> sum_up(c_, 0.0), sum_up_xh(c_, 0.0);
    parallel_for(c_, [&](std::size_t c) {
      double su = 0, sux = 0;
      for (std::size_t b = 0; b < bsz; ++b) {
        const std::size_t n = f[b].grid.resolution() * f[b].voxels();
        const double* up = upstream[b].slab(static_cast<int>(c), 0);
        const double* xh = xhat_[b].data() + c * n;
        for (std::size_t i = 0; i < n; ++i) {
          su += up[i];
          sux += up[i] * xh[i];
        }
      }
      sum_up[c] = su;
      sum_up_xh[c] = sux;
    });
    for (int c = 0; c < c_; ++c) {
      gamma_grad_[c] += sum_up_xh[c];
      beta_grad_[c] += sum_up[c];
    }
    const double inv_count = 1.0 / static_cast<double>(count_);
    parallel_for(bsz, [&](std::size_t b) {
      const std::size_t n = f[b].grid.resolution() * f[b].voxels();
      for (int c = 0; c < c_; ++c) {
        const double* up = upstream[b].slab(c, 0);
        const double* xh = xhat_[b].data() + static_cast<std::size_t>(c) * n;
        double* gf = grad_f[b].slab(c, 0);
        const double g = gamma_[c] * inv_std_[c];
        if (train_mode_) {
          for (std::size_t i = 0; i < n; ++i)
            gf[i] = g * (up[i] - inv_count * (sum_up[c] + xh[i] * sum_up_xh[c]));
        } else {
          for (std::size_t i = 0; i < n; ++i) gf[i] = g * up[i];
        }
      }
    });
    return grad_f;
  }

  void collect(std::vector<TensorRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", {c_}, &gamma_, &gamma_grad_});
    out.push_back({prefix + ".beta", {c_}, &beta_, &beta_grad_});
  }
  void collect_buffers(std::vector<TensorRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".running_mean", {c_}, &running_mean_, nullptr});
    out.push_back({prefix + ".running_var", {c_}, &running_var_, nullptr});
  }

 private:
  int c_ = 0;
  double eps_ = 1e-5, momentum_ = 0.1;
  bool train_mode_ = true;
  std::vector<double> gamma_, beta_, gamma_grad_, beta_grad_;
  std::vector<double> running_mean_, running_var_;
  std::vector<double> mean_, inv_std_;
  std::vector<std::vector<double>> xhat_;
  std::size_t count_ = 0;
};

// Instance norm: statistics per (item, channel) jointly over (group, space).
class InstanceNorm {
 public:
  InstanceNorm() = default;
  explicit InstanceNorm(int channels, double eps = 1e-5) : c_(channels), eps_(eps) {
    gamma_.assign(c_, 1.0);
    beta_.assign(c_, 0.0);
    gamma_grad_.assign(c_, 0.0);
    beta_grad_.assign(c_, 0.0);
  }

  FeatureBatch forward(const FeatureBatch& f) {
    const std::size_t bsz = f.size();
    FeatureBatch out(bsz);
    xhat_.resize(bsz);
    inv_std_.assign(bsz * c_, 0.0);
    for (std::size_t b = 0; b < bsz; ++b) {
      out[b] = GroupFeatureMap(c_, f[b].grid, f[b].depth, f[b].height, f[b].width);
      xhat_[b].resize(f[b].data.size());
    }
    parallel_for(bsz * c_, [&](std::size_t idx) {
      const std::size_t b = idx / c_;
      const int c = static_cast<int>(idx % c_);
      const std::size_t n = f[b].grid.resolution() * f[b].voxels();
      const double* src = f[b].slab(c, 0);
      double sum = 0, sum2 = 0;
      for (std::size_t i = 0; i < n; ++i) {
        sum += src[i];
        sum2 += src[i] * src[i];
      }
      const double m = sum / n;
      const double v = std::max(0.0, sum2 / n - m * m);
      const double is = 1.0 / std::sqrt(v + eps_);
      inv_std_[idx] = is;
      double* xh = xhat_[b].data() + static_cast<std::size_t>(c) * n;
      double* dst = out[b].slab(c, 0);
      for (std::size_t i = 0; i < n; ++i) {
        xh[i] = (src[i] - m) * is;
        dst[i] = gamma_[c] * xh[i] + beta_[c];
      }
    });
    return out;
  }

  FeatureBatch backward(const FeatureBatch& f, const FeatureBatch& upstream) {
    const std::size_t bsz = f.size();
    FeatureBatch grad_f(bsz);
    for (std::size_t b = 0; b < bsz; ++b)
      grad_f[b] = GroupFeatureMap(c_, f[b].grid, f[b].depth, f[b].height, f[b].width);
    std::vector<std::vector<double>> gparts(bsz, std::vector<double>(2 * c_, 0.0));
    parallel_for(bsz * c_, [&](std::size_t idx) {
      const std::size_t b = idx / c_;
      const int c = static_cast<int>(idx % c_);
      const std::size_t n = f[b].grid.resolution() * f[b].voxels();
      const double* up = upstream[b].slab(c, 0);
      const double* xh = xhat_[b].data() + static_cast<std::size_t>(c) * n;
      double su = 0, sux = 0;
      for (std::size_t i = 0; i < n; ++i) {
        su += up[i];
        sux += up[i] * xh[i];
      }
      gparts[b][c] += sux;
      gparts[b][c_ + c] += su;
      double* gf = grad_f[b].slab(c, 0);
      const double g = gamma_[c] * inv_std_[idx];
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        gf[i] = g * (up[i] - inv_n * (su + xh[i] * sux));
    });
    for (std::size_t b = 0; b < bsz; ++b)
      for (int c = 0; c < c_; ++c) {
        gamma_grad_[c] += gparts[b][c];
        beta_grad_[c] += gparts[b][c_ + c];
      }
    return grad_f;
  }

  void collect(std::vector<TensorRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", {c_}, &gamma_, &gamma_grad_});
    out.push_back({prefix + ".beta", {c_}, &beta_, &beta_grad_});
  }

 private:
  int c_ = 0;
  double eps_ = 1e-5;
  std::vector<double> gamma_, beta_, gamma_grad_, beta_grad_;
  std::vector<std::vector<double>> xhat_;
  std::vector<double> inv_std_;
};

// ---------------------------------------------------------------------------
// Pointwise and pooling ops
// ---------------------------------------------------------------------------

inline FeatureBatch relu(const FeatureBatch& f) {
  FeatureBatch out = f;
  parallel_for(out.size(), [&](std::size_t b) {
    for (auto& v : out[b].data) v = v > 0 ? v : 0.0;
  });
  return out;
}

// grad through relu, using the forward output to recover the mask
inline FeatureBatch relu_backward(const FeatureBatch& output, const FeatureBatch& upstream) {
  FeatureBatch grad = upstream;
  parallel_for(grad.size(), [&](std::size_t b) {
    for (std::size_t i = 0; i < grad[b].data.size(); ++i)
      if (output[b].data[i] <= 0) grad[b].data[i] = 0.0;
  });
  return grad;
}

inline FeatureBatch add(const FeatureBatch& a, const FeatureBatch& b) {
  FeatureBatch out = a;
  parallel_for(out.size(), [&](std::size_t i) {
    for (std::size_t j = 0; j < out[i].data.size(); ++j) out[i].data[j] += b[i].data[j];
  });
  return out;
}

// Non-overlapping 2x2x2 max pool over the spatial axes; the group axis is
// untouched. Ties resolve to the first voxel in scan order.
class SpatialMaxPool {
 public:
  FeatureBatch forward(const FeatureBatch& f) {
    const std::size_t bsz = f.size();
    require(!f.empty(), "SpatialMaxPool: empty batch");
    require(f[0].depth % 2 == 0 && f[0].height % 2 == 0 && f[0].width % 2 == 0,
            "SpatialMaxPool: spatial dims must be even");
    FeatureBatch out(bsz);
    argmax_.resize(bsz);
    in_voxels_ = f[0].voxels();
    for (std::size_t b = 0; b < bsz; ++b) {
      out[b] = GroupFeatureMap(f[b].channels, f[b].grid, f[b].depth / 2, f[b].height / 2,
                               f[b].width / 2);
      argmax_[b].resize(out[b].data.size());
    }
    const int cg = f[0].channels * f[0].group_size();
    parallel_for(bsz * cg, [&](std::size_t idx) {
      const std::size_t b = idx / cg;
      const int slab_i = static_cast<int>(idx % cg);
      const int c = slab_i / f[b].group_size();
      const int g = slab_i % f[b].group_size();
      pool_slab(f[b], out[b], b, c, g);
    });
    return out;
  }

  FeatureBatch backward(const FeatureBatch& f, const FeatureBatch& upstream) {
    const std::size_t bsz = f.size();
    FeatureBatch grad(bsz);
    for (std::size_t b = 0; b < bsz; ++b)
      grad[b] = GroupFeatureMap(f[b].channels, f[b].grid, f[b].depth, f[b].height,
                                f[b].width);
    parallel_for(bsz, [&](std::size_t b) {
      for (std::size_t i = 0; i < upstream[b].data.size(); ++i)
        grad[b].data[argmax_[b][i]] += upstream[b].data[i];
    });
    return grad;
  }

 private:
  void pool_slab(const GroupFeatureMap& in, GroupFeatureMap& out, std::size_t b, int c,
                 int g) {
    const int d = in.depth, h = in.height, w = in.width;
    const double* src = in.slab(c, g);
    double* dst = out.slab(c, g);
    const std::size_t slab_base =
        (static_cast<std::size_t>(c) * in.grid.resolution() + g) * in.voxels();
    std::size_t oidx = (static_cast<std::size_t>(c) * in.grid.resolution() + g) *
                       out.voxels();
    std::size_t local = 0;
    for (int z = 0; z < d; z += 2)
      for (int y = 0; y < h; y += 2)
        for (int x = 0; x < w; x += 2, ++local) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const std::size_t i =
                    (static_cast<std::size_t>(z + dz) * h + (y + dy)) * w + (x + dx);
                if (src[i] > best) {
                  best = src[i];
                  best_idx = i;
                }
              }
          dst[local] = best;
          argmax_[b][oidx + local] = slab_base + best_idx;
        }
  }

  std::vector<std::vector<std::size_t>> argmax_;
  std::size_t in_voxels_ = 0;
};

// Mean over the group axis then the spatial axes: an SE(3)-invariant
// descriptor per channel.
inline Matrix2D global_invariant_pool(const FeatureBatch& f) {
  const std::size_t bsz = f.size();
  Matrix2D out(bsz, f.empty() ? 0 : f[0].channels);
  parallel_for(bsz, [&](std::size_t b) {
    const std::size_t n = f[b].grid.resolution() * f[b].voxels();
    for (int c = 0; c < f[b].channels; ++c) {
      const double* p = f[b].slab(c, 0);
      double sum = 0;
      for (std::size_t i = 0; i < n; ++i) sum += p[i];
      out.at(b, c) = sum / static_cast<double>(n);
    }
  });
  return out;
}

inline FeatureBatch global_invariant_pool_backward(const FeatureBatch& f,
                                                   const Matrix2D& upstream) {
  const std::size_t bsz = f.size();
  FeatureBatch grad(bsz);
  parallel_for(bsz, [&](std::size_t b) {
    grad[b] = GroupFeatureMap(f[b].channels, f[b].grid, f[b].depth, f[b].height,
                              f[b].width);
    const std::size_t n = f[b].grid.resolution() * f[b].voxels();
    for (int c = 0; c < f[b].channels; ++c) {
      const double g = upstream.at(b, c) / static_cast<double>(n);
      double* p = grad[b].slab(c, 0);
      for (std::size_t i = 0; i < n; ++i) p[i] = g;
    }
  });
  return grad;
}

// ---------------------------------------------------------------------------
// Linear classifier head
// ---------------------------------------------------------------------------

class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, Rng& rng)
      : in_(in_features), out_(out_features) {
    weight_.assign(static_cast<std::size_t>(out_) * in_, 0.0);
    bias_.assign(out_, 0.0);
    weight_grad_.assign(weight_.size(), 0.0);
    bias_grad_.assign(out_, 0.0);
    const double bound = std::sqrt(1.0 / in_);
    for (auto& v : weight_) v = rng.uniform(-bound, bound);
  }

  Matrix2D forward(const Matrix2D& x) {
    Matrix2D out(x.rows, out_);
    for (std::size_t b = 0; b < x.rows; ++b)
      for (int o = 0; o < out_; ++o) {
        double acc = bias_[o];
        for (int i = 0; i < in_; ++i)
          acc += weight_[static_cast<std::size_t>(o) * in_ + i] * x.at(b, i);
        out.at(b, o) = acc;
      }
    return out;
  }

  Matrix2D backward(const Matrix2D& x, const Matrix2D& upstream) {
    Matrix2D grad_x(x.rows, in_);
    for (std::size_t b = 0; b < x.rows; ++b)
      for (int o = 0; o < out_; ++o) {
        const double u = upstream.at(b, o);
        bias_grad_[o] += u;
        for (int i = 0; i < in_; ++i) {
          weight_grad_[static_cast<std::size_t>(o) * in_ + i] += u * x.at(b, i);
          grad_x.at(b, i) += u * weight_[static_cast<std::size_t>(o) * in_ + i];
        }
      }
    return grad_x;
  }

  void collect(std::vector<TensorRef>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", {out_, in_}, &weight_, &weight_grad_});
    out.push_back({prefix + ".bias", {out_}, &bias_, &bias_grad_});
  }

 private:
  int in_ = 0, out_ = 0;
  std::vector<double> weight_, bias_, weight_grad_, bias_grad_;
};

}  // namespace se3conv
