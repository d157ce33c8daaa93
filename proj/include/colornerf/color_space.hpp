// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#pragma once

// sRGB (D65) <-> CIE Lab conversion, quantized ab bins, soft labels and argmax decoding.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "colornerf/errors.hpp"

namespace colornerf::color {

struct RgbPixel {
  double r = 0.0, g = 0.0, b = 0.0;
};

struct LabPixel {
  double L = 0.0, a = 0.0, b = 0.0;
};

struct AbPoint {
  double a = 0.0, b = 0.0;
  friend constexpr bool operator==(AbPoint, AbPoint) = default;
};

/// Training math works on L / kLabLScale, i.e. lightness in [0, 1].
inline constexpr double kLabLScale = 100.0;

namespace detail {

using M33 = std::array<double, 9>;

// Linear sRGB -> XYZ (D65).
inline constexpr M33 kRgbToXyz = {0.4124564, 0.3575761, 0.1804375,  //
                                  0.2126729, 0.7151522, 0.0721750,  //
                                  0.0193339, 0.1191920, 0.9503041};

constexpr M33 inverse(const M33& m) {
  const double c00 = m[4] * m[8] - m[5] * m[7];
  const double c01 = m[5] * m[6] - m[3] * m[8];
  const double c02 = m[3] * m[7] - m[4] * m[6];
  const double det = m[0] * c00 + m[1] * c01 + m[2] * c02;
  return {c00 / det,
          (m[2] * m[7] - m[1] * m[8]) / det,
          (m[1] * m[5] - m[2] * m[4]) / det,
          c01 / det,
          (m[0] * m[8] - m[2] * m[6]) / det,
          (m[2] * m[3] - m[0] * m[5]) / det,
          c02 / det,
          (m[1] * m[6] - m[0] * m[7]) / det,
          (m[0] * m[4] - m[1] * m[3]) / det};
}

inline constexpr M33 kXyzToRgb = inverse(kRgbToXyz);

// Reference white is the image of RGB (1,1,1), so white maps to a = b = 0 exactly.
inline constexpr std::array<double, 3> kWhite = {
    kRgbToXyz[0] + kRgbToXyz[1] + kRgbToXyz[2],
    kRgbToXyz[3] + kRgbToXyz[4] + kRgbToXyz[5],
    kRgbToXyz[6] + kRgbToXyz[7] + kRgbToXyz[8]};

inline constexpr double kDelta = 6.0 / 29.0;
inline constexpr double kGamutTolerance = 1e-9;

inline double srgb_decode(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}
inline double srgb_encode(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}
inline double lab_f(double t) {
  return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}
inline double lab_f_inv(double t) {
  return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0);
}

/// Lab -> linear sRGB, no gamut handling.
inline std::array<double, 3> lab_to_linear(LabPixel lab) {
  const double fy = (lab.L + 16.0) / 116.0;
  const double fx = fy + lab.a / 500.0;
  const double fz = fy - lab.b / 200.0;
  const double X = lab_f_inv(fx) * kWhite[0];
  const double Y = lab_f_inv(fy) * kWhite[1];
  const double Z = lab_f_inv(fz) * kWhite[2];
  const auto& m = kXyzToRgb;
  return {m[0] * X + m[1] * Y + m[2] * Z, m[3] * X + m[4] * Y + m[5] * Z,
          m[6] * X + m[7] * Y + m[8] * Z};
}

inline bool linear_in_gamut(const std::array<double, 3>& c) {
  return std::all_of(c.begin(), c.end(), [](double v) {
    return v >= -kGamutTolerance && v <= 1.0 + kGamutTolerance;
  });
}

} // namespace detail

inline LabPixel rgb_to_lab(RgbPixel rgb) {
  const double r = detail::srgb_decode(rgb.r);
  const double g = detail::srgb_decode(rgb.g);
  const double b = detail::srgb_decode(rgb.b);
  const auto& m = detail::kRgbToXyz;
  const double fx = detail::lab_f((m[0] * r + m[1] * g + m[2] * b) / detail::kWhite[0]);
  const double fy = detail::lab_f((m[3] * r + m[4] * g + m[5] * b) / detail::kWhite[1]);
  const double fz = detail::lab_f((m[6] * r + m[7] * g + m[8] * b) / detail::kWhite[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

/// True iff the Lab value lands inside the sRGB cube.
inline bool in_gamut(LabPixel lab) { return detail::linear_in_gamut(detail::lab_to_linear(lab)); }

/// Inverse of rgb_to_lab. Without clamping, an out-of-gamut result throws OutOfGamutError.
inline RgbPixel lab_to_rgb(LabPixel lab, bool clamp) {
  const auto lin = detail::lab_to_linear(lab);
  if (!clamp && !detail::linear_in_gamut(lin)) {
    std::ostringstream os;
    os << "Lab (" << lab.L << ", " << lab.a << ", " << lab.b << ") is outside the sRGB gamut";
    throw OutOfGamutError(os.str());
  }
  auto enc = [](double v) { return std::clamp(detail::srgb_encode(std::clamp(v, 0.0, 1.0)), 0.0, 1.0); };
  return {enc(lin[0]), enc(lin[1]), enc(lin[2])};
}

/// Pulls (a, b) toward the gray axis at fixed L until the pixel fits in the sRGB cube.
/// At L = 0 this yields black whatever the chroma.
inline LabPixel fit_chroma_to_gamut(LabPixel lab) {
  lab.L = std::clamp(lab.L, 0.0, 100.0);
  if (in_gamut(lab)) return lab;
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 48; ++it) {
    const double mid = 0.5 * (lo + hi);
    (in_gamut({lab.L, lab.a * mid, lab.b * mid}) ? lo : hi) = mid;
  }
  return {lab.L, lab.a * lo, lab.b * lo};
}

struct Neighbor {
  int index = 0;
  double dist2 = 0.0;
};

/// Quantized ab centers on a square lattice, lexicographically ordered by (a, b).
class AbBinTable {
public:
  AbBinTable() = default;

  AbBinTable(double grid_step, std::vector<AbPoint> centers)
      : grid_step_(grid_step), centers_(std::move(centers)) {
    if (!(grid_step_ > 0.0)) throw std::invalid_argument("AbBinTable: grid_step must be positive");
    for (std::size_t i = 1; i < centers_.size(); ++i) {
      const auto& p = centers_[i - 1];
      const auto& q = centers_[i];
      if (!(p.a < q.a || (p.a == q.a && p.b < q.b)))
        throw std::invalid_argument("AbBinTable: centers not strictly ordered by (a, b)");
    }
    build_index();
  }

  double grid_step() const { return grid_step_; }
  int size() const { return static_cast<int>(centers_.size()); }
  bool empty() const { return centers_.empty(); }
  const AbPoint& operator[](int q) const { return centers_.at(static_cast<std::size_t>(q)); }
  std::span<const AbPoint> centers() const { return centers_; }

  /// k nearest centers by Euclidean ab distance, ascending, ties broken by lower index.
  std::vector<Neighbor> nearest(AbPoint p, int k) const {
    if (centers_.empty()) throw std::logic_error("AbBinTable: nearest() on an empty table");
    k = std::clamp(k, 1, size());
    const long ia0 = std::lround(p.a / grid_step_);
    const long ib0 = std::lround(p.b / grid_step_);
    // Ring radius after which every lattice cell has been visited.
    const long r_all = std::max({std::labs(ia0 - ia_min_), std::labs(ia0 - (ia_min_ + na_ - 1)),
                                 std::labs(ib0 - ib_min_), std::labs(ib0 - (ib_min_ + nb_ - 1))});
    std::vector<Neighbor> found;
    auto visit = [&](long ia, long ib) {
      if (ia < ia_min_ || ia >= ia_min_ + na_ || ib < ib_min_ || ib >= ib_min_ + nb_) return;
      const int q = cell_[static_cast<std::size_t>((ia - ia_min_) * nb_ + (ib - ib_min_))];
      if (q < 0) return;
      const double da = p.a - centers_[q].a, db = p.b - centers_[q].b;
      found.push_back({q, da * da + db * db});
    };
    auto by_distance = [](const Neighbor& x, const Neighbor& y) {
      return x.dist2 < y.dist2 || (x.dist2 == y.dist2 && x.index < y.index);
    };
    for (long r = 0;; ++r) {
      if (r == 0) {
        visit(ia0, ib0);
      } else {
        for (long d = -r; d <= r; ++d) {
          visit(ia0 - r, ib0 + d);
          visit(ia0 + r, ib0 + d);
        }
        for (long d = -r + 1; d <= r - 1; ++d) {
          visit(ia0 + d, ib0 - r);
          visit(ia0 + d, ib0 + r);
        }
      }
      if (static_cast<int>(found.size()) >= k) {
        std::nth_element(found.begin(), found.begin() + (k - 1), found.end(), by_distance);
        // Unvisited cells lie at least (r + 0.5) steps away along one axis.
        const double safe = (static_cast<double>(r) + 0.5) * grid_step_;
        if (found[static_cast<std::size_t>(k - 1)].dist2 <= safe * safe || r >= r_all) break;
      } else if (r >= r_all) {
        break;
      }
    }
    std::sort(found.begin(), found.end(), by_distance);
    found.resize(static_cast<std::size_t>(k));
    return found;
  }

  int nearest_index(AbPoint p) const { return nearest(p, 1).front().index; }

private:
  void build_index() {
    if (centers_.empty()) return;
    long amin = std::numeric_limits<long>::max(), amax = std::numeric_limits<long>::min();
    long bmin = amin, bmax = amax;
    std::vector<std::pair<long, long>> cells;
    for (const auto& c : centers_) {
      const long ia = std::lround(c.a / grid_step_);
      const long ib = std::lround(c.b / grid_step_);
      if (std::fabs(ia * grid_step_ - c.a) > 1e-9 * grid_step_ ||
          std::fabs(ib * grid_step_ - c.b) > 1e-9 * grid_step_)
        throw std::invalid_argument("AbBinTable: center not on the grid_step lattice");
      cells.emplace_back(ia, ib);
      amin = std::min(amin, ia), amax = std::max(amax, ia);
      bmin = std::min(bmin, ib), bmax = std::max(bmax, ib);
    }
    ia_min_ = amin, ib_min_ = bmin;
    na_ = amax - amin + 1, nb_ = bmax - bmin + 1;
    cell_.assign(static_cast<std::size_t>(na_ * nb_), -1);
    for (std::size_t q = 0; q < cells.size(); ++q)
      cell_[static_cast<std::size_t>((cells[q].first - ia_min_) * nb_ + (cells[q].second - ib_min_))] =
          static_cast<int>(q);
  }

  double grid_step_ = 10.0;
  std::vector<AbPoint> centers_;
  long ia_min_ = 0, ib_min_ = 0, na_ = 0, nb_ = 0;
  std::vector<int> cell_;
};

/// Integer lightness sweep {1, ..., 99}.
inline std::vector<double> default_l_sweep() {
  std::vector<double> ls;
  for (int l = 1; l <= 99; ++l) ls.push_back(l);
  return ls;
}

/// Centers at every multiple of grid_step in [-half_range, half_range]^2, kept iff some ab
/// point within one cell diagonal (grid_step * sqrt(2)) decodes into the sRGB cube at one of
/// the swept lightness values. The neighbourhood is probed on a grid_step / 16 lattice.
/// Every corner of a lattice cell touched by the gamut is therefore kept, so any in-gamut ab
/// is within grid_step * sqrt(2) / 2 of a center.
inline AbBinTable build_ab_bin_table(double grid_step = 10.0, double half_range = 110.0,
                                     const std::vector<double>& l_sweep = default_l_sweep()) {
  if (!(grid_step > 0.0)) throw std::invalid_argument("build_ab_bin_table: grid_step must be > 0");
  const double ratio = half_range / grid_step;
  const long n = std::lround(ratio);
  if (half_range < 0.0 || std::fabs(ratio - static_cast<double>(n)) > 1e-9)
    throw std::invalid_argument("build_ab_bin_table: half_range must be a multiple of grid_step");

  constexpr long kSub = 16;                  // probe lattice points per grid step
  constexpr long kReach2 = 2 * kSub * kSub;  // squared diagonal, in probe units
  const double h = grid_step / kSub;
  const long extent = (n + 1) * kSub;  // covers the disc around the outermost centers
  const long side = 2 * extent + 1;

  std::vector<std::uint8_t> ok(static_cast<std::size_t>(side * side), 0);
  for (long i = 0; i < side; ++i) {
    for (long j = 0; j < side; ++j) {
      const double a = static_cast<double>(i - extent) * h;
      const double b = static_cast<double>(j - extent) * h;
      for (double L : l_sweep) {
        if (detail::linear_in_gamut(detail::lab_to_linear({L, a, b}))) {
          ok[static_cast<std::size_t>(i * side + j)] = 1;
          break;
        }
      }
    }
  }

  std::vector<AbPoint> centers;
  for (long ia = -n; ia <= n; ++ia) {
    for (long ib = -n; ib <= n; ++ib) {
      const long ci = ia * kSub + extent, cj = ib * kSub + extent;
      bool keep = false;
      for (long di = -kSub * 2; di <= kSub * 2 && !keep; ++di) {
        for (long dj = -kSub * 2; dj <= kSub * 2; ++dj) {
          if (di * di + dj * dj > kReach2) continue;
          const long i = ci + di, j = cj + dj;
          if (i < 0 || j < 0 || i >= side || j >= side) continue;
          if (ok[static_cast<std::size_t>(i * side + j)]) {
            keep = true;
            break;
          }
        }
      }
      if (keep) centers.push_back({static_cast<double>(ia) * grid_step, static_cast<double>(ib) * grid_step});
    }
  }
  return AbBinTable(grid_step, std::move(centers));
}

struct SoftLabelEntry {
  int bin = 0;
  double weight = 0.0;
};

/// Sparse target distribution over bins; entries in ascending distance order.
struct SoftLabel {
  std::vector<SoftLabelEntry> entries;
};

/// k nearest bins with Gaussian distance weights exp(-d^2 / (2 sigma^2)), normalized.
inline SoftLabel soft_label(AbPoint ab, const AbBinTable& table, int k = 5, double sigma = 5.0) {
  if (k < 1 || k > table.size()) throw std::invalid_argument("soft_label: k out of range");
  if (!(sigma > 0.0)) throw std::invalid_argument("soft_label: sigma must be positive");
  const auto nn = table.nearest(ab, k);
  SoftLabel label;
  label.entries.reserve(nn.size());
  const double d0 = nn.front().dist2;
  double total = 0.0;
  for (const auto& n : nn) {
    const double w = std::exp(-(n.dist2 - d0) / (2.0 * sigma * sigma));
    label.entries.push_back({n.index, w});
    total += w;
  }
  for (auto& e : label.entries) e.weight /= total;
  return label;
}

/// Center of the most probable bin; the lowest index wins ties.
inline AbPoint decode_argmax(std::span<const double> dist, const AbBinTable& table) {
  if (static_cast<int>(dist.size()) != table.size())
    throw std::invalid_argument("decode_argmax: distribution size does not match the table");
  int best = -1;
  double best_v = 0.0;
  for (std::size_t q = 0; q < dist.size(); ++q) {
    if (dist[q] < 0.0 || std::isnan(dist[q])) throw std::invalid_argument("decode_argmax: negative entry");
    if (dist[q] > best_v) {
      best_v = dist[q];
      best = static_cast<int>(q);
    }
  }
  if (best < 0) throw std::invalid_argument("decode_argmax: all-zero distribution");
  return table[best];
}

/// Text format: `grid_step count` header, then one `a b` pair per line.
inline void save_ab_table(const AbBinTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << std::setprecision(17) << table.grid_step() << ' ' << table.size() << '\n';
  for (const auto& c : table.centers()) out << c.a << ' ' << c.b << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline AbBinTable load_ab_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  double step = 0.0;
  long count = -1;
  if (!(in >> step >> count) || count < 0) throw IoError("malformed ab table header in " + path);
  std::vector<AbPoint> centers(static_cast<std::size_t>(count));
  for (auto& c : centers)
    if (!(in >> c.a >> c.b)) throw IoError("truncated ab table " + path);
  std::string extra;
  if (in >> extra) throw IoError("trailing data in ab table " + path);
  try {
    return AbBinTable(step, std::move(centers));
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("invalid ab table: ") + e.what());
  }
}

} // namespace colornerf::color
