#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "se3conv/common.hpp"
#include "se3conv/parallel.hpp"
#include "se3conv/quaternion.hpp"
#include "se3conv/rng.hpp"
#include "se3conv/train.hpp"
#include "se3conv/volume.hpp"

namespace se3conv {

// Synthetic stand-in for volumetric classification data. Anisotropic classes
// are rigid polycube-like solids rendered as Gaussian blobs; their pairwise
// inter-atom distance multisets differ, so no rigid motion maps one class
// onto another. Isotropic classes are spherical shells (radial profiles
// only), which makes every sample exactly invariant under lattice rotations.
struct SyntheticSpec {
  int volume_size = 16;
  int num_classes = 4;
  std::string anisotropy = "anisotropic";  // anisotropic | isotropic
  bool rotate_train = false;
  bool rotate_test = true;
  int train_samples = 400;
  int test_samples = 200;
  std::uint64_t seed = 0;

  void validate() const {
    require(volume_size >= 8 && volume_size % 2 == 0,
            "SyntheticSpec: volume_size must be even and >= 8");
    require(num_classes >= 2 && num_classes <= 6,
            "SyntheticSpec: num_classes must be in [2, 6]");
    require(anisotropy == "anisotropic" || anisotropy == "isotropic",
            "SyntheticSpec: anisotropy must be 'anisotropic' or 'isotropic'");
    require(train_samples >= 1 && test_samples >= 1,
            "SyntheticSpec: sample counts must be >= 1");
  }
};

struct SyntheticData {
  Dataset train, test;
};

namespace detail {

// Atom offsets per class (unit cells). The sorted pairwise distance multisets
// are pairwise distinct, so the solids are non-congruent under any isometry.
inline const std::vector<std::vector<Vec3>>& class_atoms() {
  static const std::vector<std::vector<Vec3>> atoms = {
      {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {0, 1, 0}},   // L
      {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {1, 1, 0}},   // T
      {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {2, 1, 0}},   // S
      {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {1, 1, 1}},   // chiral branch
      {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}},   // I
      {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}},   // claw
  };
  return atoms;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t split,
                              std::uint64_t index) {
  std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ull * (split + 1)) ^
                    (0xbf58476d1ce4e5b9ull * (index + 1));
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

// Clean template of an anisotropic class, centered in the volume.
inline VolumeSignal render_class_template(int volume_size, int cls, Vec3 jitter) {
  const auto& atoms = class_atoms()[cls];
  Vec3 centroid{0, 0, 0};
  for (const auto& a : atoms) centroid = centroid + a;
  centroid = (1.0 / static_cast<double>(atoms.size())) * centroid;

  const double spacing = 2.2;        // voxels per unit cell
  const double blob_sigma = 1.1;     // voxels
  const double c = (volume_size - 1) / 2.0;
  VolumeSignal v(1, volume_size, volume_size, volume_size);
  std::vector<Vec3> centers;
  centers.reserve(atoms.size());
  for (const auto& a : atoms)
    centers.push_back({c + spacing * (a.x - centroid.x) + jitter.x,
                       c + spacing * (a.y - centroid.y) + jitter.y,
                       c + spacing * (a.z - centroid.z) + jitter.z});
  std::size_t idx = 0;
  for (int z = 0; z < volume_size; ++z)
    for (int y = 0; y < volume_size; ++y)
      for (int x = 0; x < volume_size; ++x, ++idx) {
        double acc = 0;
        for (const auto& p : centers) {
          const double dx = x - p.x, dy = y - p.y, dz = z - p.z;
          acc += std::exp(-(dx * dx + dy * dy + dz * dz) / (2 * blob_sigma * blob_sigma));
        }
        v.data[idx] = acc;
      }
  return v;
}

// Isotropic sample: a class-specific spherical shell plus per-sample radial
// perturbations. Purely radial, so exactly invariant under any rotation that
// permutes the voxel lattice.
inline VolumeSignal render_isotropic(int volume_size, int cls, Rng& rng) {
  const double c = (volume_size - 1) / 2.0;
  const double shell_radius = 2.0 + 1.4 * cls;
  const double shell_width = 1.2;
  const double amp = rng.uniform(0.85, 1.15);
  struct Bump {
    double amp, center;
  };
  std::vector<Bump> bumps;
  for (int j = 0; j < 3; ++j)
    bumps.push_back({rng.uniform(-0.08, 0.08), rng.uniform(0.0, c)});
  VolumeSignal v(1, volume_size, volume_size, volume_size);
  std::size_t idx = 0;
  for (int z = 0; z < volume_size; ++z)
    for (int y = 0; y < volume_size; ++y)
      for (int x = 0; x < volume_size; ++x, ++idx) {
        const double r =
            std::sqrt((x - c) * (x - c) + (y - c) * (y - c) + (z - c) * (z - c));
        double val =
            amp * std::exp(-(r - shell_radius) * (r - shell_radius) /
                           (2 * shell_width * shell_width));
        for (const auto& b : bumps)
          val += b.amp * std::exp(-(r - b.center) * (r - b.center) / (2 * 0.8 * 0.8));
        v.data[idx] = val;
      }
  return v;
}

inline VolumeSignal render_sample(const SyntheticSpec& spec, int cls, bool rotate,
                                  std::uint64_t sample_seed) {
  Rng rng(sample_seed);
  VolumeSignal v;
  if (spec.anisotropy == "isotropic") {
    v = render_isotropic(spec.volume_size, cls, rng);
  } else {
    const Vec3 jitter{static_cast<double>(static_cast<int>(rng.uniform_index(3))) - 1.0,
                      static_cast<double>(static_cast<int>(rng.uniform_index(3))) - 1.0,
                      static_cast<double>(static_cast<int>(rng.uniform_index(3))) - 1.0};
    v = render_class_template(spec.volume_size, cls, jitter);
    for (auto& x : v.data) x += 0.05 * rng.normal();
  }
  if (rotate) v = rotate_volume_trilinear(v, haar_sample(rng));
  quantize_f32(v);
  return v;
}

inline Dataset generate_split(const SyntheticSpec& spec, int count, bool rotate,
                              std::uint64_t split_id) {
  Dataset data;
  data.volumes.resize(count);
  data.labels.resize(count);
  for (int i = 0; i < count; ++i) data.labels[i] = i % spec.num_classes;
  parallel_for(static_cast<std::size_t>(count), [&](std::size_t i) {
    data.volumes[i] = render_sample(spec, data.labels[i], rotate,
                                    mix_seed(spec.seed, split_id, i));
  });
  return data;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticData out;
  out.train = detail::generate_split(spec, spec.train_samples, spec.rotate_train, 0);
  out.test = detail::generate_split(spec, spec.test_samples, spec.rotate_test, 1);
  return out;
}

// Haar-rotate every sample (trilinear resampling about the volume center),
// one rotation per sample, deterministic in the seed.
inline Dataset rotate_dataset(const Dataset& data, std::uint64_t seed) {
  Dataset out;
  out.labels = data.labels;
  out.volumes.resize(data.size());
  std::vector<UnitQuaternion> rots(data.size());
  Rng rng(seed);
  for (auto& r : rots) r = haar_sample(rng);
  parallel_for(data.size(), [&](std::size_t i) {
    VolumeSignal v = rotate_volume_trilinear(data.volumes[i], rots[i]);
    quantize_f32(v);
    out.volumes[i] = std::move(v);
  });
  return out;
}

}  // namespace se3conv
