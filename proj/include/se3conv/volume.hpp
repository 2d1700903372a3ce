#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "se3conv/common.hpp"
#include "se3conv/grid.hpp"
#include "se3conv/quaternion.hpp"

// Axis convention used throughout: a voxel index triple (iz, iy, ix) with ix
// innermost corresponds to the spatial point (x, y, z) = (ix, iy, iz) minus
// the array center. Rotations act on those (x, y, z) vectors.

namespace se3conv {

// Dense volumetric signal, data layout [C][D][H][W].
struct VolumeSignal {
  int channels = 0, depth = 0, height = 0, width = 0;
  double voxel_spacing = 1.0;
  std::vector<double> data;

  VolumeSignal() = default;
  VolumeSignal(int c, int d, int h, int w)
      : channels(c), depth(d), height(h), width(w),
        data(static_cast<std::size_t>(c) * d * h * w, 0.0) {
    require(c >= 1 && d >= 1 && h >= 1 && w >= 1, "VolumeSignal: dims must be >= 1");
  }

  std::size_t voxels() const { return static_cast<std::size_t>(depth) * height * width; }
  double* channel(int c) { return data.data() + static_cast<std::size_t>(c) * voxels(); }
  const double* channel(int c) const {
    return data.data() + static_cast<std::size_t>(c) * voxels();
  }
  double& at(int c, int z, int y, int x) {
    return data[(static_cast<std::size_t>(c) * depth + z) * height * width +
                static_cast<std::size_t>(y) * width + x];
  }
  double at(int c, int z, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * depth + z) * height * width +
                static_cast<std::size_t>(y) * width + x];
  }
};

// Spatial kernel stack [C_out][C_mul][k][k][k]; C_mul is C_in for dense
// (lifting) kernels and 1 for depthwise kernels. k odd so the center voxel
// is well-defined.
struct SpatialKernelBank {
  int c_out = 0, c_mul = 0, k = 0;
  std::vector<double> data;

  SpatialKernelBank() = default;
  SpatialKernelBank(int c_out_, int c_mul_, int k_)
      : c_out(c_out_), c_mul(c_mul_), k(k_),
        data(static_cast<std::size_t>(c_out_) * c_mul_ * k_ * k_ * k_, 0.0) {
    require(k_ >= 1 && k_ % 2 == 1, "SpatialKernelBank: kernel size must be odd");
    require(c_out_ >= 1 && c_mul_ >= 1, "SpatialKernelBank: channels must be >= 1");
  }

  std::size_t kernel_voxels() const { return static_cast<std::size_t>(k) * k * k; }
  double* kernel(int o, int i) {
    return data.data() + (static_cast<std::size_t>(o) * c_mul + i) * kernel_voxels();
  }
  const double* kernel(int o, int i) const {
    return data.data() + (static_cast<std::size_t>(o) * c_mul + i) * kernel_voxels();
  }
  double& at(int o, int i, int u0, int u1, int u2) {
    return kernel(o, i)[(static_cast<std::size_t>(u0) * k + u1) * k + u2];
  }
  double at(int o, int i, int u0, int u1, int u2) const {
    return kernel(o, i)[(static_cast<std::size_t>(u0) * k + u1) * k + u2];
  }
};

// Signal on SE(3): [C][G][D][H][W] plus the rotation grid it is sampled on.
struct GroupFeatureMap {
  int channels = 0, depth = 0, height = 0, width = 0;
  RotationGrid grid;
  std::vector<double> data;

  GroupFeatureMap() = default;
  GroupFeatureMap(int c, RotationGrid g, int d, int h, int w)
      : channels(c), depth(d), height(h), width(w), grid(std::move(g)),
        data(static_cast<std::size_t>(c) * grid.resolution() * d * h * w, 0.0) {}

  int group_size() const { return static_cast<int>(grid.resolution()); }
  std::size_t voxels() const { return static_cast<std::size_t>(depth) * height * width; }
  double* slab(int c, int g) {
    return data.data() + (static_cast<std::size_t>(c) * grid.resolution() + g) * voxels();
  }
  const double* slab(int c, int g) const {
    return data.data() + (static_cast<std::size_t>(c) * grid.resolution() + g) * voxels();
  }
};

// ---------------------------------------------------------------------------
// Trilinear sampling
// ---------------------------------------------------------------------------

// Interpolate data[D][H][W] at fractional index (fz, fy, fx); neighbors
// outside the array contribute zero.
inline double trilinear_at(const double* data, int d, int h, int w, double fz,
                           double fy, double fx) {
  const int z0 = static_cast<int>(std::floor(fz));
  const int y0 = static_cast<int>(std::floor(fy));
  const int x0 = static_cast<int>(std::floor(fx));
  const double tz = fz - z0, ty = fy - y0, tx = fx - x0;
  double acc = 0;
  for (int dz = 0; dz <= 1; ++dz) {
    const int z = z0 + dz;
    if (z < 0 || z >= d) continue;
    const double wz = dz ? tz : 1.0 - tz;
    for (int dy = 0; dy <= 1; ++dy) {
      const int y = y0 + dy;
      if (y < 0 || y >= h) continue;
      const double wy = dy ? ty : 1.0 - ty;
      for (int dx = 0; dx <= 1; ++dx) {
        const int x = x0 + dx;
        if (x < 0 || x >= w) continue;
        const double wx = dx ? tx : 1.0 - tx;
        acc += wz * wy * wx * data[(static_cast<std::size_t>(z) * h + y) * w + x];
      }
    }
  }
  return acc;
}

// Sample a k^3 kernel at a continuous point relative to its center. The
// support is the voxel cube: any coordinate beyond (k-1)/2 + 0.5 yields 0.
inline double trilinear_sample(const double* vol, int k, Vec3 p) {
  const double half = (k - 1) / 2.0 + 0.5;
  if (std::abs(p.x) > half || std::abs(p.y) > half || std::abs(p.z) > half) return 0.0;
  const double c = (k - 1) / 2.0;
  return trilinear_at(vol, k, k, k, p.z + c, p.y + c, p.x + c);
}

// ---------------------------------------------------------------------------
// Kernel rotation
// ---------------------------------------------------------------------------

// Resample every kernel on the rotated lattice: out(u) = in(R^-1 u), rotation
// about the geometric center. The identity passes through bit-exactly.
inline SpatialKernelBank rotate_kernel(const SpatialKernelBank& bank,
                                       const UnitQuaternion& r) {
  const RotationMatrix minv = quat_to_matrix(quat_inverse(r));
  const int k = bank.k;
  const int c = (k - 1) / 2;
  SpatialKernelBank out(bank.c_out, bank.c_mul, k);
  for (int o = 0; o < bank.c_out; ++o) {
    for (int i = 0; i < bank.c_mul; ++i) {
      const double* src = bank.kernel(o, i);
      double* dst = out.kernel(o, i);
      std::size_t idx = 0;
      for (int u0 = 0; u0 < k; ++u0) {
        for (int u1 = 0; u1 < k; ++u1) {
          for (int u2 = 0; u2 < k; ++u2, ++idx) {
            const Vec3 p = minv.apply({double(u2 - c), double(u1 - c), double(u0 - c)});
            dst[idx] = trilinear_sample(src, k, p);
          }
        }
      }
    }
  }
  return out;
}

// Exact adjoint of rotate_kernel: scatter each upstream voxel onto the eight
// source voxels it interpolated from.
inline SpatialKernelBank rotate_kernel_adjoint(const SpatialKernelBank& upstream,
                                               const UnitQuaternion& r) {
  const RotationMatrix minv = quat_to_matrix(quat_inverse(r));
  const int k = upstream.k;
  const int c = (k - 1) / 2;
  const double half = (k - 1) / 2.0 + 0.5;
  SpatialKernelBank grad(upstream.c_out, upstream.c_mul, k);
  for (int o = 0; o < upstream.c_out; ++o) {
    for (int i = 0; i < upstream.c_mul; ++i) {
      const double* up = upstream.kernel(o, i);
      double* g = grad.kernel(o, i);
      std::size_t idx = 0;
      for (int u0 = 0; u0 < k; ++u0) {
        for (int u1 = 0; u1 < k; ++u1) {
          for (int u2 = 0; u2 < k; ++u2, ++idx) {
            const double v = up[idx];
            if (v == 0.0) continue;
            const Vec3 p = minv.apply({double(u2 - c), double(u1 - c), double(u0 - c)});
            if (std::abs(p.x) > half || std::abs(p.y) > half || std::abs(p.z) > half)
              continue;
            const double fz = p.z + c, fy = p.y + c, fx = p.x + c;
            const int z0 = static_cast<int>(std::floor(fz));
            const int y0 = static_cast<int>(std::floor(fy));
            const int x0 = static_cast<int>(std::floor(fx));
            const double tz = fz - z0, ty = fy - y0, tx = fx - x0;
            for (int dz = 0; dz <= 1; ++dz) {
              const int z = z0 + dz;
              if (z < 0 || z >= k) continue;
              const double wz = dz ? tz : 1.0 - tz;
              for (int dy = 0; dy <= 1; ++dy) {
                const int y = y0 + dy;
                if (y < 0 || y >= k) continue;
                const double wy = dy ? ty : 1.0 - ty;
                for (int dx = 0; dx <= 1; ++dx) {
                  const int x = x0 + dx;
                  if (x < 0 || x >= k) continue;
                  g[(static_cast<std::size_t>(z) * k + y) * k + x] +=
                      v * wz * wy * (dx ? tx : 1.0 - tx);
                }
              }
            }
          }
        }
      }
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Direct 3D correlation, "same" zero padding, stride 1
// ---------------------------------------------------------------------------

enum class ConvMode { Dense, Depthwise };

namespace detail {

// out[o](x) += w * f[i](x + u) over the valid window; the inner x loop is a
// contiguous axpy.
inline void shifted_accumulate(double* out, const double* in, int d, int h, int w,
                               int dz, int dy, int dx, double wgt) {
  const int zlo = std::max(0, -dz), zhi = std::min(d, d - dz);
  const int ylo = std::max(0, -dy), yhi = std::min(h, h - dy);
  const int xlo = std::max(0, -dx), xhi = std::min(w, w - dx);
  for (int z = zlo; z < zhi; ++z) {
    for (int y = ylo; y < yhi; ++y) {
      double* orow = out + (static_cast<std::size_t>(z) * h + y) * w;
      const double* irow = in + (static_cast<std::size_t>(z + dz) * h + (y + dy)) * w + dx;
      for (int x = xlo; x < xhi; ++x) orow[x] += wgt * irow[x];
    }
  }
}

inline double shifted_dot(const double* a, const double* b, int d, int h, int w, int dz,
                          int dy, int dx) {
  const int zlo = std::max(0, -dz), zhi = std::min(d, d - dz);
  const int ylo = std::max(0, -dy), yhi = std::min(h, h - dy);
  const int xlo = std::max(0, -dx), xhi = std::min(w, w - dx);
  double acc = 0;
  for (int z = zlo; z < zhi; ++z) {
    for (int y = ylo; y < yhi; ++y) {
      const double* arow = a + (static_cast<std::size_t>(z) * h + y) * w;
      const double* brow = b + (static_cast<std::size_t>(z + dz) * h + (y + dy)) * w + dx;
      for (int x = xlo; x < xhi; ++x) acc += arow[x] * brow[x];
    }
  }
  return acc;
}

}  // namespace detail

inline void correlate3d_into(double* out, const VolumeSignal& f,
                             const SpatialKernelBank& bank, ConvMode mode) {
  const int d = f.depth, h = f.height, w = f.width;
  const int k = bank.k, r = (k - 1) / 2;
  if (mode == ConvMode::Dense) {
    require(bank.c_mul == f.channels, "correlate3d: dense mode needs C_mul == C_in");
  } else {
    require(bank.c_mul == 1 && bank.c_out == f.channels,
            "correlate3d: depthwise mode needs C_mul == 1 and C_out == C_in");
  }
  const std::size_t vox = f.voxels();
  std::fill(out, out + static_cast<std::size_t>(bank.c_out) * vox, 0.0);
  for (int o = 0; o < bank.c_out; ++o) {
    double* oc = out + static_cast<std::size_t>(o) * vox;
    const int i_begin = (mode == ConvMode::Dense) ? 0 : o;
    const int i_end = (mode == ConvMode::Dense) ? f.channels : o + 1;
    for (int i = i_begin; i < i_end; ++i) {
      const double* ic = f.channel(i);
      const double* ker = bank.kernel(o, mode == ConvMode::Dense ? i : 0);
      std::size_t uidx = 0;
      for (int u0 = 0; u0 < k; ++u0)
        for (int u1 = 0; u1 < k; ++u1)
          for (int u2 = 0; u2 < k; ++u2, ++uidx)
            detail::shifted_accumulate(oc, ic, d, h, w, u0 - r, u1 - r, u2 - r, ker[uidx]);
    }
  }
}

inline VolumeSignal correlate3d(const VolumeSignal& f, const SpatialKernelBank& bank,
                                ConvMode mode) {
  VolumeSignal out(bank.c_out, f.depth, f.height, f.width);
  out.voxel_spacing = f.voxel_spacing;
  correlate3d_into(out.data.data(), f, bank, mode);
  return out;
}

// Adjoints of the linear forward map. grad_f accumulates the correlation of
// upstream with the flipped kernel; grad_bank collects shifted dot products.
inline void correlate3d_backward_into(const VolumeSignal& f, const SpatialKernelBank& bank,
                                      const double* upstream, double* grad_f,
                                      SpatialKernelBank* grad_bank, ConvMode mode) {
  const int d = f.depth, h = f.height, w = f.width;
  const int k = bank.k, r = (k - 1) / 2;
  const std::size_t vox = f.voxels();
  for (int o = 0; o < bank.c_out; ++o) {
    const double* up = upstream + static_cast<std::size_t>(o) * vox;
    const int i_begin = (mode == ConvMode::Dense) ? 0 : o;
    const int i_end = (mode == ConvMode::Dense) ? f.channels : o + 1;
    for (int i = i_begin; i < i_end; ++i) {
      const double* ic = f.channel(i);
      const int bank_i = (mode == ConvMode::Dense) ? i : 0;
      const double* ker = bank.kernel(o, bank_i);
      double* gker = grad_bank ? grad_bank->kernel(o, bank_i) : nullptr;
      double* gf = grad_f ? grad_f + static_cast<std::size_t>(i) * vox : nullptr;
      std::size_t uidx = 0;
      for (int u0 = 0; u0 < k; ++u0) {
        for (int u1 = 0; u1 < k; ++u1) {
          for (int u2 = 0; u2 < k; ++u2, ++uidx) {
            const int dz = u0 - r, dy = u1 - r, dx = u2 - r;
            if (gf)
              detail::shifted_accumulate(gf, up, d, h, w, -dz, -dy, -dx, ker[uidx]);
            if (gker) gker[uidx] += detail::shifted_dot(up, ic, d, h, w, dz, dy, dx);
          }
        }
      }
    }
  }
}

inline std::pair<VolumeSignal, SpatialKernelBank> correlate3d_backward(
    const VolumeSignal& f, const SpatialKernelBank& bank, const VolumeSignal& upstream,
    ConvMode mode) {
  require(upstream.channels == bank.c_out && upstream.depth == f.depth &&
              upstream.height == f.height && upstream.width == f.width,
          "correlate3d_backward: upstream shape mismatch");
  VolumeSignal grad_f(f.channels, f.depth, f.height, f.width);
  SpatialKernelBank grad_bank(bank.c_out, bank.c_mul, bank.k);
  correlate3d_backward_into(f, bank, upstream.data.data(), grad_f.data.data(), &grad_bank,
                            mode);
  return {std::move(grad_f), std::move(grad_bank)};
}

// ---------------------------------------------------------------------------
// Volume rotation (inputs and test transforms)
// ---------------------------------------------------------------------------

inline bool is_lattice_rotation(const UnitQuaternion& q, double tol = 1e-9) {
  const RotationMatrix m = quat_to_matrix(q);
  for (double v : m.m) {
    if (std::abs(v - std::round(v)) > tol) return false;
  }
  return true;
}

namespace detail {

// out(x) = in(R^-1 x) about the array center, per channel slab.
inline void rotate_slab_trilinear(const double* in, double* out, int d, int h, int w,
                                  const RotationMatrix& minv) {
  const double cz = (d - 1) / 2.0, cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  std::size_t idx = 0;
  for (int z = 0; z < d; ++z) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x, ++idx) {
        const Vec3 p = minv.apply({x - cx, y - cy, z - cz});
        out[idx] = trilinear_at(in, d, h, w, p.z + cz, p.y + cy, p.x + cx);
      }
    }
  }
}

inline void rotate_slab_exact(const double* in, double* out, int d, int h, int w,
                              const RotationMatrix& minv) {
  const double cz = (d - 1) / 2.0, cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  std::size_t idx = 0;
  for (int z = 0; z < d; ++z) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x, ++idx) {
        const Vec3 p = minv.apply({x - cx, y - cy, z - cz});
        const double fz = p.z + cz, fy = p.y + cy, fx = p.x + cx;
        const int sz = static_cast<int>(std::llround(fz));
        const int sy = static_cast<int>(std::llround(fy));
        const int sx = static_cast<int>(std::llround(fx));
        require(std::abs(fz - sz) <= 1e-9 && std::abs(fy - sy) <= 1e-9 &&
                    std::abs(fx - sx) <= 1e-9,
                "rotate_volume_exact: rotation does not permute the voxel lattice");
        require(sz >= 0 && sz < d && sy >= 0 && sy < h && sx >= 0 && sx < w,
                "rotate_volume_exact: permuted index out of range");
        out[idx] = in[(static_cast<std::size_t>(sz) * h + sy) * w + sx];
      }
    }
  }
}

}  // namespace detail

inline VolumeSignal rotate_volume_trilinear(const VolumeSignal& v, const UnitQuaternion& q) {
  const RotationMatrix minv = quat_to_matrix(quat_inverse(q));
  VolumeSignal out(v.channels, v.depth, v.height, v.width);
  out.voxel_spacing = v.voxel_spacing;
  for (int c = 0; c < v.channels; ++c)
    detail::rotate_slab_trilinear(v.channel(c), out.channel(c), v.depth, v.height, v.width,
                                  minv);
  return out;
}

inline VolumeSignal rotate_volume_exact(const VolumeSignal& v, const UnitQuaternion& q) {
  const RotationMatrix minv = quat_to_matrix(quat_inverse(q));
  VolumeSignal out(v.channels, v.depth, v.height, v.width);
  out.voxel_spacing = v.voxel_spacing;
  for (int c = 0; c < v.channels; ++c)
    detail::rotate_slab_exact(v.channel(c), out.channel(c), v.depth, v.height, v.width,
                              minv);
  return out;
}

// Exact voxel permutation when the rotation maps the lattice to itself
// (e.g. O24 on cubic volumes), trilinear resampling otherwise.
inline VolumeSignal rotate_volume(const VolumeSignal& v, const UnitQuaternion& q) {
  return is_lattice_rotation(q) ? rotate_volume_exact(v, q) : rotate_volume_trilinear(v, q);
}

// ---------------------------------------------------------------------------
// Volume files: text header + little-endian f32 payload, C-major then D,H,W
// ---------------------------------------------------------------------------

inline void save_volume(const VolumeSignal& v, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("save_volume: cannot open '" + path + "' for writing");
  out << "se3conv-volume 1\n";
  out << "channels " << v.channels << "\n";
  out << "depth " << v.depth << "\n";
  out << "height " << v.height << "\n";
  out << "width " << v.width << "\n";
  out << "dtype f32-le\n";
  out << "data\n";
  std::vector<float> payload(v.data.size());
  for (std::size_t i = 0; i < v.data.size(); ++i) payload[i] = static_cast<float>(v.data[i]);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw io_error("save_volume: write to '" + path + "' failed");
}

inline VolumeSignal load_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("load_volume: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "se3conv-volume 1")
    throw validation_error("load_volume: missing or unsupported format-version header");
  int c = 0, d = 0, h = 0, w = 0;
  bool have_c = false, have_d = false, have_h = false, have_w = false, have_t = false;
  while (std::getline(in, line)) {
    if (line == "data") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "channels") have_c = static_cast<bool>(ls >> c);
    else if (key == "depth") have_d = static_cast<bool>(ls >> d);
    else if (key == "height") have_h = static_cast<bool>(ls >> h);
    else if (key == "width") have_w = static_cast<bool>(ls >> w);
    else if (key == "dtype") {
      std::string t;
      have_t = static_cast<bool>(ls >> t);
      if (have_t && t != "f32-le")
        throw validation_error("load_volume: unsupported dtype '" + t + "'");
    } else {
      throw validation_error("load_volume: unknown header field '" + key + "'");
    }
  }
  for (auto [ok, name] : {std::pair{have_c, "channels"}, {have_d, "depth"},
                          {have_h, "height"}, {have_w, "width"}, {have_t, "dtype"}}) {
    if (!ok)
      throw validation_error(std::string("load_volume: missing field '") + name + "'");
  }
  require(c >= 1 && d >= 1 && h >= 1 && w >= 1, "load_volume: bad dimensions");
  VolumeSignal v(c, d, h, w);
  std::vector<float> payload(v.data.size());
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != payload.size() * sizeof(float))
    throw validation_error("load_volume: truncated payload");
  for (std::size_t i = 0; i < payload.size(); ++i) v.data[i] = payload[i];
  return v;
}

// Round through f32 so in-memory data matches what a save/load cycle yields.
inline void quantize_f32(VolumeSignal& v) {
  for (auto& x : v.data) x = static_cast<float>(x);
}

}  // namespace se3conv
