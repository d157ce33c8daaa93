// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#pragma once

// Dense trilinear voxel grids holding raw density, luminance and per-bin color logits.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "colornerf/errors.hpp"
#include "colornerf/geometry.hpp"

namespace colornerf::field {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

struct GridResolution {
  int nx = 2, ny = 2, nz = 2;
  std::size_t voxels() const { return static_cast<std::size_t>(nx) * ny * nz; }
  friend constexpr bool operator==(GridResolution, GridResolution) = default;
};

struct FieldInit {
  double sigma = 0.1;  // activated density per world unit
  double lum = 0.5;
};

/// Grid values live on the (nx, ny, nz) lattice spanning the box corners, x-fastest.
/// Logits are voxel-major: Q consecutive values per voxel.
struct FieldParams {
  Aabb bbox;
  GridResolution res;
  int Q = 1;
  std::vector<double> density;
  std::vector<double> luminance;
  std::vector<double> logits;

  std::size_t voxels() const { return res.voxels(); }
  int voxel_index(int i, int j, int k) const { return i + res.nx * (j + res.ny * k); }
  std::span<double> logits_at(int v) {
    return std::span<double>(logits).subspan(static_cast<std::size_t>(v) * Q, static_cast<std::size_t>(Q));
  }
  std::span<const double> logits_at(int v) const {
    return std::span<const double>(logits).subspan(static_cast<std::size_t>(v) * Q,
                                                   static_cast<std::size_t>(Q));
  }
  friend bool operator==(const FieldParams&, const FieldParams&) = default;
};

inline FieldParams init_field(const Aabb& bbox, GridResolution res, int Q, const FieldInit& init = {}) {
  if (res.nx < 2 || res.ny < 2 || res.nz < 2)
    throw std::invalid_argument("init_field: resolution must be >= 2 per axis");
  if (Q < 1) throw std::invalid_argument("init_field: Q must be >= 1");
  const Vec3 e = bbox.extent();
  if (!(e.x > 0 && e.y > 0 && e.z > 0)) throw std::invalid_argument("init_field: non-positive bbox extent");
  if (!(init.sigma > 0.0) || !(init.lum > 0.0 && init.lum < 1.0))
    throw std::invalid_argument("init_field: initial activations out of range");
  FieldParams p;
  p.bbox = bbox;
  p.res = res;
  p.Q = Q;
  p.density.assign(res.voxels(), softplus_inverse(init.sigma));
  p.luminance.assign(res.voxels(), logit(init.lum));
  p.logits.assign(res.voxels() * static_cast<std::size_t>(Q), 0.0);
  return p;
}

/// The eight lattice vertices around a point and their trilinear weights.
struct Corners {
  std::array<int, 8> voxel{};
  std::array<double, 8> weight{};
  bool inside = false;
};

inline Corners locate(const FieldParams& p, Vec3 x) {
  Corners c;
  if (!p.bbox.contains(x)) return c;
  const Vec3 e = p.bbox.extent();
  const std::array<int, 3> n = {p.res.nx, p.res.ny, p.res.nz};
  std::array<int, 3> i0{};
  std::array<double, 3> f{};
  for (int a = 0; a < 3; ++a) {
    const double u = (x[a] - p.bbox.lo[a]) / e[a] * (n[a] - 1);
    i0[a] = std::clamp(static_cast<int>(std::floor(u)), 0, n[a] - 2);
    f[a] = std::clamp(u - i0[a], 0.0, 1.0);
  }
  for (int corner = 0; corner < 8; ++corner) {
    const int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
    c.voxel[corner] = p.voxel_index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
    c.weight[corner] = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dz ? f[2] : 1 - f[2]);
  }
  c.inside = true;
  return c;
}

inline double interpolate(std::span<const double> grid, const Corners& c) {
  double s = 0.0;
  for (int k = 0; k < 8; ++k) s += c.weight[k] * grid[static_cast<std::size_t>(c.voxel[k])];
  return s;
}

struct FieldSample {
  double sigma = 0.0;
  double lum = 0.0;
  std::vector<double> logits;
};

/// Outside the box every channel is zero.
inline FieldSample query_field(const FieldParams& p, Vec3 x) {
  FieldSample s;
  s.logits.assign(static_cast<std::size_t>(p.Q), 0.0);
  const Corners c = locate(p, x);
  if (!c.inside) return s;
  s.sigma = softplus(interpolate(p.density, c));
  s.lum = sigmoid(interpolate(p.luminance, c));
  for (int k = 0; k < 8; ++k) {
    const auto z = p.logits_at(c.voxel[k]);
    for (int q = 0; q < p.Q; ++q) s.logits[static_cast<std::size_t>(q)] += c.weight[k] * z[static_cast<std::size_t>(q)];
  }
  return s;
}

/// Accumulated d(loss)/d(raw grid value), same layout as FieldParams.
/// Tracks which voxels were written so zeroing and sparse optimizer steps stay cheap.
class GradBuffer {
public:
  GradBuffer() = default;
  explicit GradBuffer(const FieldParams& p)
      : Q_(p.Q), density_(p.voxels(), 0.0), luminance_(p.voxels(), 0.0),
        logits_(p.logits.size(), 0.0), touched_flag_(p.voxels(), 0) {}

  bool compatible(const FieldParams& p) const {
    return Q_ == p.Q && density_.size() == p.voxels() && logits_.size() == p.logits.size();
  }

  void touch(int v) {
    auto& flag = touched_flag_[static_cast<std::size_t>(v)];
    if (!flag) {
      flag = 1;
      touched_.push_back(v);
    }
  }

  double& density(int v) { return density_[static_cast<std::size_t>(v)]; }
  double& luminance(int v) { return luminance_[static_cast<std::size_t>(v)]; }
  std::span<double> logits_at(int v) {
    return std::span<double>(logits_).subspan(static_cast<std::size_t>(v) * Q_, static_cast<std::size_t>(Q_));
  }

  std::span<const double> density() const { return density_; }
  std::span<const double> luminance() const { return luminance_; }
  std::span<const double> logits() const { return logits_; }
  std::span<const int> touched() const { return touched_; }
  int Q() const { return Q_; }

  void zero() {
    for (int v : touched_) {
      const auto i = static_cast<std::size_t>(v);
      density_[i] = 0.0;
      luminance_[i] = 0.0;
      std::fill_n(logits_.begin() + static_cast<std::ptrdiff_t>(i * Q_), Q_, 0.0);
      touched_flag_[i] = 0;
    }
    touched_.clear();
  }

private:
  int Q_ = 0;
  std::vector<double> density_, luminance_, logits_;
  std::vector<std::uint8_t> touched_flag_;
  std::vector<int> touched_;
};

/// Upstream gradient with respect to one activated FieldSample.
struct SampleGrad {
  double d_sigma = 0.0;
  double d_lum = 0.0;
  std::span<const double> d_logits;  // empty or Q entries
};

inline void query_backward(const FieldParams& p, Vec3 x, const SampleGrad& up, GradBuffer& grads) {
  const Corners c = locate(p, x);
  if (!c.inside) return;
  const double d_raw_sigma = up.d_sigma * sigmoid(interpolate(p.density, c));  // softplus'
  const double s = sigmoid(interpolate(p.luminance, c));
  const double d_raw_lum = up.d_lum * s * (1.0 - s);
  const bool with_logits = !up.d_logits.empty();
  if (d_raw_sigma == 0.0 && d_raw_lum == 0.0 && !with_logits) return;
  for (int k = 0; k < 8; ++k) {
    const int v = c.voxel[k];
    grads.touch(v);
    grads.density(v) += c.weight[k] * d_raw_sigma;
    grads.luminance(v) += c.weight[k] * d_raw_lum;
    if (with_logits) {
      auto g = grads.logits_at(v);
      for (int q = 0; q < p.Q; ++q) g[static_cast<std::size_t>(q)] += c.weight[k] * up.d_logits[static_cast<std::size_t>(q)];
    }
  }
}

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(bytes.data(), bytes.size());
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("field checkpoint truncated");
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  pos += sizeof(T);
  return std::bit_cast<T>(bytes);
}

} // namespace detail

inline constexpr std::uint32_t kFieldFormatVersion = 1;

/// `CNRF`, u32 version, bbox as 6 f64, resolution as 3 u32, Q as u32, then density,
/// luminance and logits grids as little-endian f32.
inline std::string encode_field(const FieldParams& p) {
  std::string out = "CNRF";
  detail::put_le<std::uint32_t>(out, kFieldFormatVersion);
  for (int a = 0; a < 3; ++a) detail::put_le<double>(out, p.bbox.lo[a]);
  for (int a = 0; a < 3; ++a) detail::put_le<double>(out, p.bbox.hi[a]);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.res.nx));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.res.ny));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.res.nz));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.Q));
  out.reserve(out.size() + 4 * (p.density.size() + p.luminance.size() + p.logits.size()));
  for (const auto* grid : {&p.density, &p.luminance, &p.logits})
    for (double v : *grid) detail::put_le<float>(out, static_cast<float>(v));
  return out;
}

inline FieldParams decode_field(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "CNRF") != 0) throw IoError("not a field checkpoint (bad magic)");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kFieldFormatVersion) throw IoError("unsupported field checkpoint version");
  FieldParams p;
  for (int a = 0; a < 3; ++a) p.bbox.lo[a] = detail::get_le<double>(bytes, pos);
  for (int a = 0; a < 3; ++a) p.bbox.hi[a] = detail::get_le<double>(bytes, pos);
  p.res.nx = static_cast<int>(detail::get_le<std::uint32_t>(bytes, pos));
  p.res.ny = static_cast<int>(detail::get_le<std::uint32_t>(bytes, pos));
  p.res.nz = static_cast<int>(detail::get_le<std::uint32_t>(bytes, pos));
  p.Q = static_cast<int>(detail::get_le<std::uint32_t>(bytes, pos));
  if (p.res.nx < 2 || p.res.ny < 2 || p.res.nz < 2 || p.Q < 1) throw IoError("field checkpoint has invalid shape");
  const std::size_t n = p.voxels();
  if (bytes.size() != pos + 4 * n * (2 + static_cast<std::size_t>(p.Q)))
    throw IoError("field checkpoint size does not match its header");
  auto read_grid = [&](std::vector<double>& g, std::size_t count) {
    g.resize(count);
    for (auto& v : g) v = detail::get_le<float>(bytes, pos);
  };
  read_grid(p.density, n);
  read_grid(p.luminance, n);
  read_grid(p.logits, n * static_cast<std::size_t>(p.Q));
  return p;
}

inline void save_field(const FieldParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const std::string bytes = encode_field(p);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline FieldParams load_field(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_field(bytes);
}

} // namespace colornerf::field
