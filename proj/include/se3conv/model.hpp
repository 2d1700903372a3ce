#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "se3conv/common.hpp"
#include "se3conv/grid.hpp"
#include "se3conv/layers.hpp"
#include "se3conv/rng.hpp"

namespace se3conv {

enum class Variant { CnnBaseline, CnnBig, Gcnn };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::CnnBaseline: return "cnn-baseline";
    case Variant::CnnBig: return "cnn-big";
    case Variant::Gcnn: return "gcnn";
  }
  return "unknown";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "cnn-baseline") return Variant::CnnBaseline;
  if (s == "cnn-big") return Variant::CnnBig;
  if (s == "gcnn") return Variant::Gcnn;
  throw validation_error("unknown model variant '" + s + "'");
}

struct ModelConfig {
  Variant variant = Variant::Gcnn;
  std::string grid_kind = "uniform";  // uniform | V4 | T12 | O24 (gcnn only)
  int resolution = 8;                 // sample/kernel grid resolution (gcnn)
  std::array<int, 3> channels{8, 8, 16};
  int kernel_size = 3;
  int num_classes = 4;
  std::uint64_t seed = 0;

  void validate() const {
    require(channels[0] >= 1 && channels[1] >= 1 && channels[2] >= 1,
            "ModelConfig: channels must be positive");
    require(kernel_size >= 1 && kernel_size % 2 == 1,
            "ModelConfig: kernel_size must be odd");
    require(num_classes >= 2, "ModelConfig: num_classes must be >= 2");
    if (variant == Variant::Gcnn) {
      require(resolution >= 1, "ModelConfig: resolution must be >= 1 for gcnn");
      if (grid_kind != "uniform") subgroup_from_string(grid_kind);
    }
  }

  // The paper-scale preset: 32/64 channels and 7^3 spatial kernels. Valid to
  // build and run, but sized for patience rather than CI.
  static ModelConfig paper_scale(Variant v, int resolution, int num_classes = 11) {
    ModelConfig cfg;
    cfg.variant = v;
    cfg.resolution = resolution;
    cfg.channels = {32, 32, 64};
    cfg.kernel_size = 7;
    cfg.num_classes = num_classes;
    return cfg;
  }
};

// Residual block: conv -> norm -> relu -> conv -> norm, plus the skip path
// (identity when channels match, pointwise projection otherwise), then relu.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(int c_in, int c_out, int k, const RotationGrid& param_grid, Rng& rng)
      : conv1_(c_in, c_out, k, param_grid, rng),
        conv2_(c_out, c_out, k, param_grid, rng),
        n1_(c_out),
        n2_(c_out) {
    if (c_in != c_out) proj_.emplace(c_in, c_out, rng);
  }

  FeatureBatch forward(const FeatureBatch& x, const RotationGrid& grid) {
    x_ = x;
    c1_ = conv1_.forward(x, grid);
    n1out_ = n1_.forward(c1_);
    a1_ = relu(n1out_);
    c2_ = conv2_.forward(a1_, grid);
    n2out_ = n2_.forward(c2_);
    skip_ = proj_ ? proj_->forward(x) : x;
    out_ = relu(add(n2out_, skip_));
    return out_;
  }

  FeatureBatch backward(const FeatureBatch& upstream) {
    FeatureBatch d_sum = relu_backward(out_, upstream);
    FeatureBatch d_skip = d_sum;  // add fans the gradient out to both paths
    FeatureBatch d_n2 = n2_.backward(c2_, d_sum);
    FeatureBatch d_a1 = conv2_.backward(a1_, d_n2);
    FeatureBatch d_n1 = relu_backward(a1_, d_a1);
    FeatureBatch d_c1 = n1_.backward(c1_, d_n1);
    FeatureBatch d_x = conv1_.backward(x_, d_c1);
    if (proj_) {
      FeatureBatch d_proj = proj_->backward(x_, d_skip);
      return add(d_x, d_proj);
    }
    return add(d_x, d_skip);
  }

  void collect(std::vector<TensorRef>& out, const std::string& prefix) {
    conv1_.collect(out, prefix + ".conv1");
    n1_.collect(out, prefix + ".norm1");
    conv2_.collect(out, prefix + ".conv2");
    n2_.collect(out, prefix + ".norm2");
    if (proj_) proj_->collect(out, prefix + ".proj");
  }

  GroupConv& conv1() { return conv1_; }
  GroupConv& conv2() { return conv2_; }
  void set_rbf_sigma(double sigma) {
    conv1_.mixing_sigma(sigma);
    conv2_.mixing_sigma(sigma);
  }

 private:
  GroupConv conv1_, conv2_;
  InstanceNorm n1_, n2_;
  std::optional<PointwiseMix> proj_;

  FeatureBatch x_, c1_, n1out_, a1_, c2_, n2out_, skip_, out_;
};

enum class Mode { Train, Eval };

// The desk-scale classifier of the harness: lifting stem with batch norm, two
// residual blocks with a 2^3 max pool between them, invariant pooling and a
// linear head. The cnn variants are the same network evaluated on the trivial
// one-element grid, which collapses every group convolution to a pointwise
// channel mix plus a depthwise spatial correlation.
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& cfg, RotationGrid base_grid) : cfg_(cfg) {
    cfg_.validate();
    base_grid_ = std::move(base_grid);
    resample_in_train_ =
        cfg.variant == Variant::Gcnn && cfg.grid_kind == "uniform";
    const int mult = cfg.variant == Variant::CnnBig ? 2 : 1;
    c0_ = cfg.channels[0] * mult;
    c1_ = cfg.channels[1] * mult;
    c2_ = cfg.channels[2] * mult;
    Rng rng(cfg.seed);
    stem_ = LiftingConv(1, c0_, cfg.kernel_size, rng);
    stem_bn_ = BatchNorm(c0_);
    block1_ = ResBlock(c0_, c1_, cfg.kernel_size, base_grid_, rng);
    block2_ = ResBlock(c1_, c2_, cfg.kernel_size, base_grid_, rng);
    head_ = Linear(c2_, cfg.num_classes, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const RotationGrid& base_grid() const { return base_grid_; }
  RotationGrid& base_grid() { return base_grid_; }
  bool resamples_in_train() const { return resample_in_train_; }

  // One shared grid per forward pass: the output grid of each layer is the
  // input grid of the next. Training on uniform grids redraws a global
  // rotation of the cached repulsion grid; everything else stays fixed.
  Matrix2D forward(const VolumeBatch& x, Mode mode, Rng* grid_rng = nullptr) {
    require(!x.empty(), "Model::forward: empty batch");
    const bool train = mode == Mode::Train;
    grid_used_ = (train && resample_in_train_ && grid_rng)
                     ? randomize_grid(base_grid_, *grid_rng)
                     : base_grid_;
    x_ = x;
    stem_out_ = stem_.forward(x, grid_used_);
    bn_out_ = stem_bn_.forward(stem_out_, train);
    stem_act_ = relu(bn_out_);
    b1_out_ = block1_.forward(stem_act_, grid_used_);
    pool_out_ = pool_.forward(b1_out_);
    b2_out_ = block2_.forward(pool_out_, grid_used_);
    feat_ = global_invariant_pool(b2_out_);
    return head_.forward(feat_);
  }

  // Gradients accumulate into the tensors; call zero_grad() between steps.
  void backward(const Matrix2D& dlogits) {
    Matrix2D d_feat = head_.backward(feat_, dlogits);
    FeatureBatch d_b2 = global_invariant_pool_backward(b2_out_, d_feat);
    FeatureBatch d_pool = block2_.backward(d_b2);
    FeatureBatch d_b1 = pool_.backward(b1_out_, d_pool);
    FeatureBatch d_stem_act = block1_.backward(d_b1);
    FeatureBatch d_bn = relu_backward(stem_act_, d_stem_act);
    FeatureBatch d_stem = stem_bn_.backward(stem_out_, d_bn);
    stem_.backward(x_, d_stem);
  }

  // Pre-classifier invariant descriptor (eval mode, fixed grid).
  std::vector<double> descriptor(const VolumeSignal& v) {
    forward({v}, Mode::Eval);
    std::vector<double> d(feat_.cols);
    for (std::size_t c = 0; c < feat_.cols; ++c) d[c] = feat_.at(0, c);
    return d;
  }

  std::vector<TensorRef> tensors() {
    std::vector<TensorRef> out;
    stem_.collect(out, "stem");
    stem_bn_.collect(out, "stem_norm");
    block1_.collect(out, "block1");
    block2_.collect(out, "block2");
    head_.collect(out, "head");
    return out;
  }

  std::vector<TensorRef> buffers() {
    std::vector<TensorRef> out;
    stem_bn_.collect_buffers(out, "stem_norm");
    return out;
  }

  void zero_grad() {
    for (auto& t : tensors()) std::fill(t.grad->begin(), t.grad->end(), 0.0);
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& t : tensors()) n += t.size();
    return n;
  }

  double rbf_sigma() { return block1_.conv1().rbf_sigma(); }
  void set_rbf_sigma(double sigma) {
    block1_.set_rbf_sigma(sigma);
    block2_.set_rbf_sigma(sigma);
  }
  const RotationGrid& grid_used() const { return grid_used_; }

 private:
  ModelConfig cfg_;
  RotationGrid base_grid_;
  bool resample_in_train_ = false;
  int c0_ = 0, c1_ = 0, c2_ = 0;

  LiftingConv stem_;
  BatchNorm stem_bn_;
  ResBlock block1_, block2_;
  SpatialMaxPool pool_;
  Linear head_;

  RotationGrid grid_used_;
  VolumeBatch x_;
  FeatureBatch stem_out_, bn_out_, stem_act_, b1_out_, pool_out_, b2_out_;
  Matrix2D feat_;
};

inline RotationGrid make_model_grid(const ModelConfig& cfg) {
  if (cfg.variant != Variant::Gcnn) {
    RotationGrid trivial;
    trivial.elements = {UnitQuaternion::identity()};
    trivial.kind = GridKind::FiniteSubgroup;
    return trivial;
  }
  if (cfg.grid_kind == "uniform")
    return generate_uniform_grid(static_cast<std::size_t>(cfg.resolution), cfg.seed);
  const RotationGrid g = finite_subgroup(cfg.grid_kind);
  require(cfg.resolution == static_cast<int>(g.resolution()),
          "ModelConfig: resolution must match the subgroup size (" +
              std::to_string(g.resolution()) + " for " + cfg.grid_kind + ")");
  return g;
}

inline Model build_model(const ModelConfig& cfg) {
  cfg.validate();
  return Model(cfg, make_model_grid(cfg));
}

}  // namespace se3conv
