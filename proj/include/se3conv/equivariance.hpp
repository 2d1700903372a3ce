#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "se3conv/common.hpp"
#include "se3conv/grid.hpp"
#include "se3conv/model.hpp"
#include "se3conv/synthetic.hpp"
#include "se3conv/train.hpp"
#include "se3conv/volume.hpp"

namespace se3conv {

inline double rel_l2(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / (std::sqrt(den) + 1e-12);
}

// ||desc(g v) - desc(v)|| / ||desc(v)||, descriptor taken before the
// classifier. The input rotation is an exact voxel permutation when g maps
// the lattice to itself, trilinear resampling otherwise.
inline double invariance_error(Model& model, const VolumeSignal& v,
                               const UnitQuaternion& g) {
  const std::vector<double> base = model.descriptor(v);
  const std::vector<double> rotated = model.descriptor(rotate_volume(v, g));
  return rel_l2(rotated, base);
}

// The action T_g on an SE(3) feature map: rotate space, permute the group
// axis (value at R comes from g^-1 R). Exact for subgroup grids and lattice
// rotations only.
inline GroupFeatureMap transform_feature(const GroupFeatureMap& f,
                                         const UnitQuaternion& g) {
  const std::vector<std::size_t> src = left_action_source(f.grid, g);
  const RotationMatrix minv = quat_to_matrix(quat_inverse(g));
  GroupFeatureMap out(f.channels, f.grid, f.depth, f.height, f.width);
  for (int c = 0; c < f.channels; ++c)
    for (int j = 0; j < f.group_size(); ++j)
      detail::rotate_slab_exact(f.slab(c, static_cast<int>(src[j])), out.slab(c, j),
                                f.depth, f.height, f.width, minv);
  return out;
}

// || Layer(T_g f) - T'_g Layer(f) || / || T'_g Layer(f) ||
template <class LayerFn>
double layer_equivariance_error(LayerFn&& apply, const GroupFeatureMap& f,
                                const UnitQuaternion& g) {
  const GroupFeatureMap out = apply(f);
  const GroupFeatureMap lhs = apply(transform_feature(f, g));
  const GroupFeatureMap rhs = transform_feature(out, g);
  return rel_l2(lhs.data, rhs.data);
}

struct EquivarianceReport {
  std::vector<std::pair<double, double>> per_rotation;  // (angle, relative error)
  double mean_error = 0;
  double max_error = 0;
  int grid_resolution = 0;
  std::string mode;  // exact-subgroup | continuous

  void finalize() {
    mean_error = 0;
    max_error = 0;
    for (const auto& [angle, err] : per_rotation) {
      mean_error += err;
      max_error = std::max(max_error, err);
    }
    if (!per_rotation.empty()) mean_error /= static_cast<double>(per_rotation.size());
  }
};

// Invariance of the full network over a rotation set, averaged across the
// given inputs.
inline EquivarianceReport invariance_report(Model& model,
                                            const std::vector<VolumeSignal>& inputs,
                                            const std::vector<UnitQuaternion>& rotations,
                                            const std::string& mode) {
  EquivarianceReport rep;
  rep.mode = mode;
  rep.grid_resolution = static_cast<int>(model.base_grid().resolution());
  for (const auto& g : rotations) {
    double worst = 0;
    for (const auto& v : inputs) worst = std::max(worst, invariance_error(model, v, g));
    rep.per_rotation.emplace_back(rotation_angle(g), worst);
  }
  rep.finalize();
  return rep;
}

struct DropReport {
  double acc = 0;
  double rotated_acc = 0;
  double drop_percent = 0;  // NaN sentinel when acc == 0
};

// Table-style protocol: accuracy on the clean and rotated test sets and the
// percentage drop between them.
inline DropReport drop_in_accuracy_report(Model& model, const Dataset& train_set,
                                          const Dataset& test_set,
                                          const Dataset& rotated_test_set,
                                          std::ostream* warn = nullptr) {
  require(train_set.size() > 0 && test_set.size() > 0 && rotated_test_set.size() > 0,
          "drop_in_accuracy_report: empty dataset");
  DropReport rep;
  rep.acc = evaluate(model, test_set);
  rep.rotated_acc = evaluate(model, rotated_test_set);
  if (rep.acc == 0) {
    rep.drop_percent = std::numeric_limits<double>::quiet_NaN();
    if (warn) *warn << "drop_in_accuracy_report: accuracy is 0, drop undefined\n";
  } else {
    rep.drop_percent = 100.0 * (rep.acc - rep.rotated_acc) / rep.acc;
  }
  return rep;
}

struct SweepRow {
  int resolution = 0;
  std::uint64_t model_seed = 0;
  double mean_error = 0;
  double max_error = 0;
};

// Continuous invariance across grid resolutions. Same rotations and inputs
// for every resolution so rows are directly comparable.
inline std::vector<SweepRow> invariance_sweep(const std::vector<int>& resolutions,
                                              const std::vector<std::uint64_t>& seeds,
                                              int num_rotations, int num_inputs,
                                              int volume_size, std::uint64_t data_seed) {
  SyntheticSpec spec;
  spec.volume_size = volume_size;
  spec.num_classes = 4;
  spec.rotate_train = false;
  spec.rotate_test = false;
  spec.train_samples = num_inputs;
  spec.test_samples = 1;
  spec.seed = data_seed;
  const Dataset inputs = generate_synthetic(spec).train;

  Rng rot_rng(data_seed ^ 0xa02bdbf7bb3c0a7ull);
  std::vector<UnitQuaternion> rotations(num_rotations);
  for (auto& g : rotations) g = haar_sample(rot_rng);

  std::vector<SweepRow> rows;
  for (const std::uint64_t seed : seeds) {
    for (const int res : resolutions) {
      ModelConfig cfg;
      cfg.variant = Variant::Gcnn;
      cfg.grid_kind = "uniform";
      cfg.resolution = res;
      cfg.seed = seed;
      Model model = build_model(cfg);
      double sum = 0, worst = 0;
      for (const auto& g : rotations) {
        double rot_worst = 0;
        for (const auto& v : inputs.volumes)
          rot_worst = std::max(rot_worst, invariance_error(model, v, g));
        sum += rot_worst;
        worst = std::max(worst, rot_worst);
      }
      rows.push_back({res, seed, sum / num_rotations, worst});
    }
  }
  return rows;
}

}  // namespace se3conv
