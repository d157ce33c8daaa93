// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#pragma once

// Pinhole cameras, rays and scaled patch sampling.

#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "colornerf/geometry.hpp"

namespace colornerf::render {

/// Pinhole camera. Camera frame is x right, y down, z forward; pose is world-from-camera.
/// Pixel (i, j) has its center at image-plane coordinate (i + 0.5, j + 0.5).
struct Camera {
  double focal = 1.0;  // pixels
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  Mat3 rotation;
  Vec3 translation;

  Vec3 center() const { return translation; }

  void validate() const {
    if (!(focal > 0.0)) throw std::invalid_argument("Camera: focal must be positive");
    if (width < 1 || height < 1) throw std::invalid_argument("Camera: empty image size");
    if (orthonormality_error(rotation) > 1e-6) throw std::invalid_argument("Camera: rotation not orthonormal");
  }

  /// World-space unit direction through a continuous pixel-index coordinate.
  Vec3 direction(double px, double py) const {
    const Vec3 d_cam{(px + 0.5 - cx) / focal, (py + 0.5 - cy) / focal, 1.0};
    return normalized(rotation * d_cam);
  }

  static Camera look_at(Vec3 eye, Vec3 target, Vec3 up, double focal, int width, int height) {
    const Vec3 forward = normalized(target - eye);
    const Vec3 right = normalized(cross(forward, up));
    const Vec3 down = cross(forward, right);
    Camera c;
    c.focal = focal;
    c.width = width;
    c.height = height;
    c.cx = 0.5 * width;
    c.cy = 0.5 * height;
    c.rotation = Mat3::from_columns(right, down, forward);
    c.translation = eye;
    return c;
  }

  friend bool operator==(const Camera&, const Camera&) = default;
};

struct Ray {
  Vec3 origin;
  Vec3 dir;
  double t_near = 0.0;
  double t_far = 1.0;

  Vec3 at(double t) const { return origin + dir * t; }
};

/// Ray clipped to the box. Rays that miss it keep the bounding-sphere depth range and
/// only ever sample empty space.
inline Ray make_ray(const Camera& cam, double px, double py, const Aabb& bbox) {
  Ray r;
  r.origin = cam.center();
  r.dir = cam.direction(px, py);
  if (auto hit = intersect(bbox, r.origin, r.dir)) {
    r.t_near = hit->first;
    r.t_far = hit->second;
  } else {
    const double dist = norm(bbox.center() - r.origin);
    const double radius = 0.5 * norm(bbox.extent());
    r.t_near = std::fmax(0.0, dist - radius);
    r.t_far = std::fmax(r.t_near + 1e-3, dist + radius);
  }
  return r;
}

/// Scaled K x K patch: pixel (s*x + u, s*y + v) for x, y in [-K/2, K/2 - 1].
struct PatchSpec {
  double u = 0.0, v = 0.0;
  double s = 1.0;
  int K = 2;

  void validate() const {
    if (K < 2 || K % 2 != 0) throw std::invalid_argument("PatchSpec: K must be even and >= 2");
    if (!(s > 0.0)) throw std::invalid_argument("PatchSpec: scale must be positive");
  }
};

struct PatchRays {
  int K = 0;
  std::vector<Ray> rays;                         // row-major, y outer
  std::vector<std::array<double, 2>> pixels;     // continuous pixel-index coordinates
};

/// Range of valid patch centers along one axis for an image of `size` pixels.
inline std::array<double, 2> patch_center_range(int size, double s, int K) {
  return {s * (K / 2), (size - 1) - s * (K / 2 - 1)};
}

inline PatchRays sample_patch_rays(const Camera& cam, const PatchSpec& spec, const Aabb& bbox) {
  spec.validate();
  const int h = spec.K / 2;
  const double x_lo = spec.s * -h + spec.u, x_hi = spec.s * (h - 1) + spec.u;
  const double y_lo = spec.s * -h + spec.v, y_hi = spec.s * (h - 1) + spec.v;
  constexpr double eps = 1e-9;
  if (x_lo < -eps || y_lo < -eps || x_hi > cam.width - 1 + eps || y_hi > cam.height - 1 + eps) {
    std::ostringstream os;
    os << "patch (u=" << spec.u << ", v=" << spec.v << ", s=" << spec.s << ", K=" << spec.K
       << ") extends outside the " << cam.width << "x" << cam.height << " image";
    throw std::out_of_range(os.str());
  }
  PatchRays out;
  out.K = spec.K;
  out.rays.reserve(static_cast<std::size_t>(spec.K * spec.K));
  out.pixels.reserve(static_cast<std::size_t>(spec.K * spec.K));
  for (int y = -h; y < h; ++y) {
    for (int x = -h; x < h; ++x) {
      const double px = spec.s * x + spec.u, py = spec.s * y + spec.v;
      out.pixels.push_back({px, py});
      out.rays.push_back(make_ray(cam, px, py, bbox));
    }
  }
  return out;
}

} // namespace colornerf::render
