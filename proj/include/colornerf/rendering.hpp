// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#pragma once

// Emission-absorption quadrature along rays, its exact backward pass, and patch/image rendering.
//
// For depths t_1 < ... < t_M with delta_m = t_{m+1} - t_m (delta_M = t_far - t_M):
//   T_m = exp(-sum_{l<m} sigma_l delta_l),  w_m = T_m (1 - exp(-sigma_m delta_m)),
//   L = sum_m w_m lum_m.
// Color logits are integrated the same way and normalized afterwards by default.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "colornerf/camera.hpp"
#include "colornerf/color_space.hpp"
#include "colornerf/field.hpp"
#include "colornerf/image.hpp"
#include "colornerf/parallel.hpp"
#include "colornerf/sampling.hpp"

namespace colornerf::render {

enum class ColorMode {
  render_then_normalize,  // softmax of volume-rendered logits
  normalize_then_render,  // volume-rendered per-sample softmax, background mass spread uniformly
};

struct RenderOptions {
  int coarse = 32;
  int fine = 32;
  bool luminance = true;
  bool color = true;
  ColorMode color_mode = ColorMode::render_then_normalize;
  // Samples with quadrature weight at or below this are left out of the color integral.
  // Zero keeps every sample inside the box.
  double color_weight_cutoff = 1e-3;
};

struct RaySample {
  double t = 0.0;
  double delta = 0.0;
  double raw_sigma = 0.0;
  double sigma = 0.0;
  double raw_lum = 0.0;
  double lum = 0.0;
  double trans = 1.0;  // transmittance before this sample
  double weight = 0.0;
  field::Corners corners;
};

/// Forward state of one ray, kept for the backward pass.
struct RayRecord {
  Ray ray;
  RenderOptions options;
  std::vector<RaySample> samples;
  double L = 0.0;
  double trans_end = 1.0;
  std::vector<double> logits;  // rendered logits (render_then_normalize only)
  std::vector<double> dist;    // per-bin probabilities
  // (voxel, sum of w_m * trilinear weight) over the samples entering the color integral.
  std::vector<std::pair<int, double>> footprint;

  double weight_sum() const {
    double s = 0.0;
    for (const auto& smp : samples) s += smp.weight;
    return s;
  }
};

inline void softmax(std::span<const double> z, std::span<double> out) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t q = 0; q < z.size(); ++q) total += (out[q] = std::exp(z[q] - zmax));
  for (double& v : out) v /= total;
}

namespace detail {

inline bool in_color_integral(const RaySample& s, double cutoff) {
  return s.corners.inside && (cutoff <= 0.0 || s.weight > cutoff);
}

inline void sample_logits(const field::FieldParams& f, const field::Corners& c, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (int k = 0; k < 8; ++k) {
    const auto z = f.logits_at(c.voxel[k]);
    const double w = c.weight[k];
    for (std::size_t q = 0; q < out.size(); ++q) out[q] += w * z[q];
  }
}

/// Quadrature weights for density only; used by the coarse pass.
inline std::vector<double> density_weights(const field::FieldParams& f, const Ray& ray, std::span<const double> t) {
  std::vector<double> w(t.size(), 0.0);
  double trans = 1.0;
  for (std::size_t m = 0; m < t.size(); ++m) {
    const auto c = field::locate(f, ray.at(t[m]));
    const double sigma = c.inside ? field::softplus(field::interpolate(f.density, c)) : 0.0;
    const double delta = std::fmax(0.0, (m + 1 < t.size() ? t[m + 1] : ray.t_far) - t[m]);
    const double att = std::exp(-sigma * delta);
    w[m] = trans * (1.0 - att);
    trans *= att;
  }
  return w;
}

} // namespace detail

/// Fills the color distribution of a record from its stored samples, using rec.options.
inline void add_color(const field::FieldParams& f, RayRecord& rec) {
  const auto& opt = rec.options;
  const auto Q = static_cast<std::size_t>(f.Q);
  rec.dist.assign(Q, 0.0);
  rec.footprint.clear();
  if (opt.color_mode == ColorMode::render_then_normalize) {
    auto& fp = rec.footprint;
    for (const auto& s : rec.samples) {
      if (!detail::in_color_integral(s, opt.color_weight_cutoff)) continue;
      for (int k = 0; k < 8; ++k) fp.emplace_back(s.corners.voxel[k], s.weight * s.corners.weight[k]);
    }
    std::stable_sort(fp.begin(), fp.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::size_t out = 0;
    for (std::size_t i = 0; i < fp.size(); ++i) {
      if (out > 0 && fp[out - 1].first == fp[i].first)
        fp[out - 1].second += fp[i].second;
      else
        fp[out++] = fp[i];
    }
    fp.resize(out);
    rec.logits.assign(Q, 0.0);
    for (const auto& [v, coef] : fp) {
      const auto z = f.logits_at(v);
      for (std::size_t q = 0; q < Q; ++q) rec.logits[q] += coef * z[q];
    }
    softmax(rec.logits, rec.dist);
  } else {
    std::vector<double> z(Q), p(Q);
    for (const auto& s : rec.samples) {
      if (!detail::in_color_integral(s, opt.color_weight_cutoff)) continue;
      detail::sample_logits(f, s.corners, z);
      softmax(z, p);
      for (std::size_t q = 0; q < Q; ++q) rec.dist[q] += s.weight * p[q];
    }
    // Mass not absorbed by included samples is spread uniformly.
    double absorbed = 0.0;
    for (const auto& s : rec.samples)
      if (detail::in_color_integral(s, opt.color_weight_cutoff)) absorbed += s.weight;
    const double rest = std::fmax(0.0, 1.0 - absorbed) / static_cast<double>(Q);
    for (double& d : rec.dist) d += rest;
  }
}

/// Integrates the field at the given sorted depths.
inline RayRecord render_ray_at(const field::FieldParams& f, const Ray& ray, std::span<const double> t,
                               const RenderOptions& opt) {
  RayRecord rec;
  rec.ray = ray;
  rec.options = opt;
  rec.samples.resize(t.size());
  double trans = 1.0;
  for (std::size_t m = 0; m < t.size(); ++m) {
    RaySample& s = rec.samples[m];
    s.t = t[m];
    s.delta = std::fmax(0.0, (m + 1 < t.size() ? t[m + 1] : ray.t_far) - t[m]);
    s.corners = field::locate(f, ray.at(s.t));
    if (s.corners.inside) {
      s.raw_sigma = field::interpolate(f.density, s.corners);
      s.sigma = field::softplus(s.raw_sigma);
      if (opt.luminance) {
        s.raw_lum = field::interpolate(f.luminance, s.corners);
        s.lum = field::sigmoid(s.raw_lum);
      }
    }
    const double att = std::exp(-s.sigma * s.delta);
    s.trans = trans;
    s.weight = trans * (1.0 - att);
    trans *= att;
    rec.L += s.weight * s.lum;
  }
  rec.trans_end = trans;
  if (opt.color) add_color(f, rec);
  return rec;
}

/// Coarse stratified pass, importance-sampled fine pass, then integration over the merged
/// depths. jitter holds coarse + fine uniforms in [0, 1).
inline RayRecord render_ray(const field::FieldParams& f, const Ray& ray, const RenderOptions& opt,
                            std::span<const double> jitter) {
  if (opt.coarse < 1 || opt.fine < 0) throw std::invalid_argument("render_ray: invalid sample counts");
  if (static_cast<int>(jitter.size()) != opt.coarse + opt.fine)
    throw std::invalid_argument("render_ray: jitter size must equal coarse + fine");
  auto t = stratified_sample(ray, opt.coarse, jitter.first(static_cast<std::size_t>(opt.coarse)));
  if (opt.fine > 0) {
    const auto w = detail::density_weights(f, ray, t);
    std::vector<double> q(static_cast<std::size_t>(opt.fine));
    for (int i = 0; i < opt.fine; ++i)
      q[static_cast<std::size_t>(i)] = (i + jitter[static_cast<std::size_t>(opt.coarse + i)]) / opt.fine;
    const auto fine = importance_sample(ray, t, w, q);
    t.insert(t.end(), fine.begin(), fine.end());
    std::sort(t.begin(), t.end());
  }
  return render_ray_at(f, ray, t, opt);
}

template <std::uniform_random_bit_generator Rng>
RayRecord render_ray(const field::FieldParams& f, const Ray& ray, const RenderOptions& opt, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> jitter(static_cast<std::size_t>(opt.coarse + opt.fine));
  for (auto& j : jitter) j = u(rng);
  return render_ray(f, ray, opt, jitter);
}

struct RayUpstream {
  double d_L = 0.0;
  std::span<const double> d_dist;  // empty or Q entries
};

struct GradMask {
  bool density = true;
  bool luminance = true;
  bool logits = true;
};

/// Exact gradient of the forward quadrature with respect to every raw grid value it read,
/// with sample depths held fixed.
inline void render_backward(const field::FieldParams& f, const RayRecord& rec, const RayUpstream& up,
                            field::GradBuffer& grads, const GradMask& mask = {}) {
  const auto& opt = rec.options;
  const auto Q = static_cast<std::size_t>(f.Q);
  const std::size_t M = rec.samples.size();
  const bool with_color = opt.color && !up.d_dist.empty();
  if (with_color && up.d_dist.size() != Q) throw std::invalid_argument("render_backward: d_dist size != Q");

  // s_m = d(loss)/d(w_m), the sensitivity to each quadrature weight.
  std::vector<double> s(M, 0.0);
  for (std::size_t m = 0; m < M; ++m) s[m] = up.d_L * rec.samples[m].lum;

  std::vector<double> g_z;
  if (with_color && opt.color_mode == ColorMode::render_then_normalize) {
    // Softmax Jacobian: dz = p * (g - p . g).
    double pg = 0.0;
    for (std::size_t q = 0; q < Q; ++q) pg += rec.dist[q] * up.d_dist[q];
    g_z.resize(Q);
    for (std::size_t q = 0; q < Q; ++q) g_z[q] = rec.dist[q] * (up.d_dist[q] - pg);
    if (mask.logits) {
      for (const auto& [v, coef] : rec.footprint) {
        grads.touch(v);
        auto g = grads.logits_at(v);
        for (std::size_t q = 0; q < Q; ++q) g[q] += coef * g_z[q];
      }
    }
    if (mask.density) {
      for (std::size_t m = 0; m < M; ++m) {
        const auto& smp = rec.samples[m];
        if (!detail::in_color_integral(smp, opt.color_weight_cutoff)) continue;
        double dot = 0.0;
        for (int k = 0; k < 8; ++k) {
          const auto z = f.logits_at(smp.corners.voxel[k]);
          double zk = 0.0;
          for (std::size_t q = 0; q < Q; ++q) zk += z[q] * g_z[q];
          dot += smp.corners.weight[k] * zk;
        }
        s[m] += dot;
      }
    }
  } else if (with_color) {
    std::vector<double> z(Q), p(Q), dz(Q);
    double g_mean = 0.0;
    for (std::size_t q = 0; q < Q; ++q) g_mean += up.d_dist[q];
    g_mean /= static_cast<double>(Q);
    for (std::size_t m = 0; m < M; ++m) {
      const auto& smp = rec.samples[m];
      if (!detail::in_color_integral(smp, opt.color_weight_cutoff)) continue;
      detail::sample_logits(f, smp.corners, z);
      softmax(z, p);
      double pg = 0.0;
      for (std::size_t q = 0; q < Q; ++q) pg += p[q] * up.d_dist[q];
      // Included samples carry p_m; their weight is removed from the uniform remainder.
      s[m] += pg - g_mean;
      if (mask.logits) {
        for (std::size_t q = 0; q < Q; ++q) dz[q] = smp.weight * p[q] * (up.d_dist[q] - pg);
        for (int k = 0; k < 8; ++k) {
          const int v = smp.corners.voxel[k];
          grads.touch(v);
          auto g = grads.logits_at(v);
          for (std::size_t q = 0; q < Q; ++q) g[q] += smp.corners.weight[k] * dz[q];
        }
      }
    }
  }

  if (mask.luminance && opt.luminance && up.d_L != 0.0) {
    for (const auto& smp : rec.samples) {
      if (!smp.corners.inside) continue;
      const double d_raw = up.d_L * smp.weight * smp.lum * (1.0 - smp.lum);
      for (int k = 0; k < 8; ++k) {
        const int v = smp.corners.voxel[k];
        grads.touch(v);
        grads.luminance(v) += smp.corners.weight[k] * d_raw;
      }
    }
  }

  if (mask.density) {
    // With s_m = d(loss)/d(w_m): d(loss)/d(sigma_k) = delta_k * (T_{k+1} s_k - sum_{m>k} w_m s_m).
    double after = 0.0;
    for (std::size_t i = M; i-- > 0;) {
      const auto& smp = rec.samples[i];
      const double trans_next = smp.trans * std::exp(-smp.sigma * smp.delta);
      const double d_sigma = smp.delta * (trans_next * s[i] - after);
      after += smp.weight * s[i];
      if (!smp.corners.inside || d_sigma == 0.0) continue;
      const double d_raw = d_sigma * field::sigmoid(smp.raw_sigma);
      for (int k = 0; k < 8; ++k) {
        const int v = smp.corners.voxel[k];
        grads.touch(v);
        grads.density(v) += smp.corners.weight[k] * d_raw;
      }
    }
  }
}

struct RenderedPatch {
  int K = 0;
  int Q = 0;
  std::vector<double> L;     // K*K
  std::vector<double> dist;  // K*K*Q, empty without color
  std::vector<RayRecord> records;
};

/// Jitter is drawn from rng sequentially in ray order before rays are rendered concurrently,
/// so results do not depend on the worker count.
template <std::uniform_random_bit_generator Rng>
RenderedPatch render_patch(const field::FieldParams& f, const PatchRays& rays, const RenderOptions& opt, Rng& rng,
                           int workers = 1) {
  const std::size_t n = rays.rays.size();
  const std::size_t per_ray = static_cast<std::size_t>(opt.coarse + opt.fine);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> jitter(n * per_ray);
  for (auto& j : jitter) j = u(rng);

  RenderedPatch out;
  out.K = rays.K;
  out.Q = f.Q;
  out.records.resize(n);
  parallel_for(n, workers, [&](std::size_t i) {
    out.records[i] = render_ray(f, rays.rays[i], opt, std::span<const double>(jitter).subspan(i * per_ray, per_ray));
  });
  out.L.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.L[i] = out.records[i].L;
  if (opt.color) {
    out.dist.reserve(n * static_cast<std::size_t>(f.Q));
    for (const auto& r : out.records) out.dist.insert(out.dist.end(), r.dist.begin(), r.dist.end());
  }
  return out;
}

/// Adds the color distributions to a patch rendered without them, at the same sample depths.
inline void add_patch_color(const field::FieldParams& f, RenderedPatch& patch, RenderOptions opt, int workers = 1) {
  opt.color = true;
  parallel_for(patch.records.size(), workers, [&](std::size_t i) {
    patch.records[i].options = opt;
    add_color(f, patch.records[i]);
  });
  patch.Q = f.Q;
  patch.dist.clear();
  patch.dist.reserve(patch.records.size() * static_cast<std::size_t>(f.Q));
  for (const auto& r : patch.records) patch.dist.insert(patch.dist.end(), r.dist.begin(), r.dist.end());
}

struct RenderedImage {
  ImageF L;    // lightness in [0, 1]
  ImageF ab;   // decoded chroma, 2 channels
  ImageF rgb;  // sRGB in [0, 1]
};

/// Renders every pixel, decodes the most probable ab bin, joins it with L and converts to sRGB.
/// Chroma that does not fit at the rendered lightness is pulled toward gray.
inline RenderedImage render_image(const field::FieldParams& f, const color::AbBinTable& table, const Camera& cam,
                                  RenderOptions opt, std::uint64_t seed, int workers = 1) {
  cam.validate();
  if (table.size() != f.Q) throw std::invalid_argument("render_image: table size does not match field Q");
  opt.luminance = true;
  opt.color = true;
  RenderedImage img{ImageF(cam.width, cam.height, 1), ImageF(cam.width, cam.height, 2),
                    ImageF(cam.width, cam.height, 3)};
  parallel_for(static_cast<std::size_t>(cam.height), workers, [&](std::size_t row) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(row)};
    std::mt19937_64 rng(seq);
    const int y = static_cast<int>(row);
    for (int x = 0; x < cam.width; ++x) {
      const auto rec = render_ray(f, make_ray(cam, x, y, f.bbox), opt, rng);
      const auto ab = color::decode_argmax(rec.dist, table);
      const double L = std::clamp(rec.L, 0.0, 1.0);
      const auto lab = color::fit_chroma_to_gamut({L * color::kLabLScale, ab.a, ab.b});
      const auto rgb = color::lab_to_rgb(lab, true);
      img.L.at(x, y) = static_cast<float>(L);
      img.ab.at(x, y, 0) = static_cast<float>(ab.a);
      img.ab.at(x, y, 1) = static_cast<float>(ab.b);
      img.rgb.at(x, y, 0) = static_cast<float>(rgb.r);
      img.rgb.at(x, y, 1) = static_cast<float>(rgb.g);
      img.rgb.at(x, y, 2) = static_cast<float>(rgb.b);
    }
  });
  return img;
}

} // namespace colornerf::render
