// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#pragma once

// Synthetic blob scenes, posed multi-view datasets and their on-disk layout:
//   cameras.json, view_%03d.png, view_%03d.L.f32, view_%03d.ab.f32 (+ optional view_%03d.alpha.f32)

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"

#include "colornerf/camera.hpp"
#include "colornerf/color_space.hpp"
#include "colornerf/errors.hpp"
#include "colornerf/image.hpp"
#include "colornerf/image_io.hpp"
#include "colornerf/parallel.hpp"

namespace colornerf::scene {

enum class Falloff { gaussian, hard };

struct Blob {
  Vec3 center;
  double radius = 0.5;
  double density_peak = 20.0;  // per world unit
  color::RgbPixel rgb;
  Falloff falloff = Falloff::gaussian;
};

struct SyntheticScene {
  std::vector<Blob> blobs;
  Aabb bbox;

  void validate() const {
    for (const auto& b : blobs) {
      if (!(b.radius > 0.0)) throw std::invalid_argument("SyntheticScene: blob radius must be positive");
      if (!bbox.contains(b.center)) throw std::invalid_argument("SyntheticScene: blob center outside bbox");
    }
  }
};

struct AnalyticSample {
  double sigma = 0.0;
  color::RgbPixel rgb;
};

/// Sum of blob densities; color is the density-weighted mix (black where empty).
/// Gaussian blobs use standard deviation radius / 2.
inline AnalyticSample analytic_field(const SyntheticScene& scene, Vec3 x) {
  AnalyticSample out;
  double r = 0.0, g = 0.0, b = 0.0;
  for (const auto& blob : scene.blobs) {
    const Vec3 d = x - blob.center;
    const double d2 = dot(d, d);
    double s = 0.0;
    if (blob.falloff == Falloff::gaussian) {
      const double sd = 0.5 * blob.radius;
      s = blob.density_peak * std::exp(-d2 / (2.0 * sd * sd));
    } else if (d2 <= blob.radius * blob.radius) {
      s = blob.density_peak;
    }
    out.sigma += s;
    r += s * blob.rgb.r;
    g += s * blob.rgb.g;
    b += s * blob.rgb.b;
  }
  if (out.sigma > 0.0) out.rgb = {r / out.sigma, g / out.sigma, b / out.sigma};
  return out;
}

struct OrbitConfig {
  double radius = 3.5;
  double elevation_deg = 25.0;
  double fov_deg = 40.0;
  double azimuth_offset_deg = 0.0;
};

/// Evenly spaced azimuths around the box center, alternating elevation between
/// +elevation and -elevation / 2, all looking at the center with +z up.
inline std::vector<render::Camera> orbit_cameras(const Aabb& bbox, int n_views, const OrbitConfig& orbit, int width,
                                                 int height) {
  std::vector<render::Camera> cams;
  const double focal = 0.5 * width / std::tan(0.5 * orbit.fov_deg * std::numbers::pi / 180.0);
  const Vec3 target = bbox.center();
  for (int i = 0; i < n_views; ++i) {
    const double az = 2.0 * std::numbers::pi * i / n_views + orbit.azimuth_offset_deg * std::numbers::pi / 180.0;
    const double el = (i % 2 == 0 ? 1.0 : -0.5) * orbit.elevation_deg * std::numbers::pi / 180.0;
    const Vec3 eye = target + Vec3{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)} * orbit.radius;
    cams.push_back(render::Camera::look_at(eye, target, {0, 0, 1}, focal, width, height));
  }
  return cams;
}

struct View {
  render::Camera camera;
  ImageF rgb;    // 3 channels in [0, 1]
  ImageF L;      // Lab lightness / 100
  ImageF ab;     // 2 channels
  ImageF alpha;  // accumulated opacity; empty when unknown
};

struct MultiViewDataset {
  Aabb bbox;
  std::vector<View> views;
};

/// Fills L and ab from rgb.
inline void derive_lab(View& v) {
  v.L = ImageF(v.rgb.width(), v.rgb.height(), 1);
  v.ab = ImageF(v.rgb.width(), v.rgb.height(), 2);
  for (int y = 0; y < v.rgb.height(); ++y)
    for (int x = 0; x < v.rgb.width(); ++x) {
      const auto lab = color::rgb_to_lab({v.rgb.at(x, y, 0), v.rgb.at(x, y, 1), v.rgb.at(x, y, 2)});
      v.L.at(x, y) = static_cast<float>(lab.L / color::kLabLScale);
      v.ab.at(x, y, 0) = static_cast<float>(lab.a);
      v.ab.at(x, y, 1) = static_cast<float>(lab.b);
    }
}

/// Midpoint quadrature of the analytic field along one pixel ray.
inline std::pair<color::RgbPixel, double> render_analytic_pixel(const SyntheticScene& scene, const render::Camera& cam,
                                                                double px, double py, int samples) {
  const auto ray = render::make_ray(cam, px, py, scene.bbox);
  const double dt = (ray.t_far - ray.t_near) / samples;
  double trans = 1.0, r = 0.0, g = 0.0, b = 0.0;
  for (int m = 0; m < samples; ++m) {
    const auto s = analytic_field(scene, ray.at(ray.t_near + (m + 0.5) * dt));
    const double att = std::exp(-s.sigma * dt);
    const double w = trans * (1.0 - att);
    r += w * s.rgb.r;
    g += w * s.rgb.g;
    b += w * s.rgb.b;
    trans *= att;
  }
  return {{std::clamp(r, 0.0, 1.0), std::clamp(g, 0.0, 1.0), std::clamp(b, 0.0, 1.0)}, 1.0 - trans};
}

inline MultiViewDataset render_views(const SyntheticScene& scene, const std::vector<render::Camera>& cameras,
                                     int samples_per_ray = 256, int workers = 1) {
  scene.validate();
  MultiViewDataset ds;
  ds.bbox = scene.bbox;
  ds.views.resize(cameras.size());
  parallel_for(cameras.size(), workers, [&](std::size_t i) {
    View& v = ds.views[i];
    v.camera = cameras[i];
    v.rgb = ImageF(v.camera.width, v.camera.height, 3);
    v.alpha = ImageF(v.camera.width, v.camera.height, 1);
    for (int y = 0; y < v.camera.height; ++y)
      for (int x = 0; x < v.camera.width; ++x) {
        const auto [rgb, alpha] = render_analytic_pixel(scene, v.camera, x, y, samples_per_ray);
        v.rgb.at(x, y, 0) = static_cast<float>(rgb.r);
        v.rgb.at(x, y, 1) = static_cast<float>(rgb.g);
        v.rgb.at(x, y, 2) = static_cast<float>(rgb.b);
        v.alpha.at(x, y) = static_cast<float>(alpha);
      }
    derive_lab(v);
  });
  return ds;
}

inline MultiViewDataset generate_views(const SyntheticScene& scene, int n_views, const OrbitConfig& orbit, int width,
                                       int height, int samples_per_ray = 256, int workers = 1) {
  if (n_views < 2) throw std::invalid_argument("generate_views: need at least 2 views");
  return render_views(scene, orbit_cameras(scene.bbox, n_views, orbit, width, height), samples_per_ray, workers);
}

inline std::string view_stem(const std::filesystem::path& dir, std::size_t i) {
  char name[32];
  std::snprintf(name, sizeof(name), "view_%03zu", i);
  return (dir / name).string();
}

using nlohmann::json;

inline json cameras_to_json(const MultiViewDataset& ds) {
  if (ds.views.empty()) throw IoError("dataset has no views");
  const auto& c0 = ds.views.front().camera;
  json poses = json::array();
  for (const auto& v : ds.views) {
    const auto& c = v.camera;
    if (c.width != c0.width || c.height != c0.height || c.focal != c0.focal)
      throw IoError("dataset views do not share camera intrinsics");
    json m = json::array();
    for (int r = 0; r < 3; ++r) m.push_back({c.rotation(r, 0), c.rotation(r, 1), c.rotation(r, 2), c.translation[r]});
    poses.push_back(m);
  }
  return {{"focal", c0.focal},
          {"width", c0.width},
          {"height", c0.height},
          {"bbox", {ds.bbox.lo.x, ds.bbox.lo.y, ds.bbox.lo.z, ds.bbox.hi.x, ds.bbox.hi.y, ds.bbox.hi.z}},
          {"poses", poses}};
}

/// Cameras plus bbox from a cameras.json document.
inline std::pair<Aabb, std::vector<render::Camera>> cameras_from_json(const json& j) {
  try {
    const double focal = j.at("focal").get<double>();
    const int width = j.at("width").get<int>();
    const int height = j.at("height").get<int>();
    Aabb box;
    if (j.contains("bbox")) {
      const auto b = j.at("bbox").get<std::vector<double>>();
      if (b.size() != 6) throw IoError("cameras.json: bbox needs 6 numbers");
      box = {{b[0], b[1], b[2]}, {b[3], b[4], b[5]}};
    }
    std::vector<render::Camera> cams;
    for (const auto& pose : j.at("poses")) {
      render::Camera c;
      c.focal = focal;
      c.width = width;
      c.height = height;
      c.cx = 0.5 * width;
      c.cy = 0.5 * height;
      if (pose.size() != 3) throw IoError("cameras.json: pose must be 3x4");
      for (int r = 0; r < 3; ++r) {
        const auto row = pose.at(static_cast<std::size_t>(r)).get<std::vector<double>>();
        if (row.size() != 4) throw IoError("cameras.json: pose must be 3x4");
        for (int k = 0; k < 3; ++k) c.rotation(r, k) = row[static_cast<std::size_t>(k)];
        c.translation[r] = row[3];
      }
      c.validate();
      cams.push_back(c);
    }
    return {box, cams};
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed cameras.json: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("invalid camera in cameras.json: ") + e.what());
  }
}

inline void save_dataset(const MultiViewDataset& ds, const std::string& directory) {
  if (ds.views.empty()) throw IoError("save_dataset: no views");
  const auto& v0 = ds.views.front();
  for (const auto& v : ds.views) {
    if (v.rgb.width() != v0.rgb.width() || v.rgb.height() != v0.rgb.height() || v.rgb.channels() != 3 ||
        v.L.width() != v.rgb.width() || v.L.height() != v.rgb.height() || v.ab.width() != v.rgb.width() ||
        v.ab.height() != v.rgb.height() || v.rgb.width() != v.camera.width || v.rgb.height() != v.camera.height)
      throw IoError("save_dataset: image dimensions differ between views");
  }
  const std::filesystem::path dir(directory);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + directory + ": " + ec.message());
  {
    std::ofstream out(dir / "cameras.json");
    if (!out) throw IoError("cannot write cameras.json in " + directory);
    out << cameras_to_json(ds).dump(2) << '\n';
  }
  for (std::size_t i = 0; i < ds.views.size(); ++i) {
    const auto stem = view_stem(dir, i);
    const auto& v = ds.views[i];
    io::write_png(stem + ".png", v.rgb);
    io::write_f32(stem + ".L.f32", v.L);
    io::write_f32(stem + ".ab.f32", v.ab);
    if (!v.alpha.empty()) io::write_f32(stem + ".alpha.f32", v.alpha);
  }
}

inline MultiViewDataset load_dataset(const std::string& directory) {
  const std::filesystem::path dir(directory);
  std::ifstream in(dir / "cameras.json");
  if (!in) throw IoError("missing cameras.json in " + directory);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed cameras.json: ") + e.what());
  }
  auto [box, cams] = cameras_from_json(j);
  MultiViewDataset ds;
  ds.bbox = box;
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const auto stem = view_stem(dir, i);
    View v;
    v.camera = cams[i];
    v.rgb = io::read_png_rgb(stem + ".png");
    if (v.rgb.width() != v.camera.width || v.rgb.height() != v.camera.height)
      throw IoError(stem + ".png does not match the camera image size");
    if (std::filesystem::exists(stem + ".L.f32") && std::filesystem::exists(stem + ".ab.f32")) {
      v.L = io::read_f32(stem + ".L.f32", v.camera.width, v.camera.height, 1);
      v.ab = io::read_f32(stem + ".ab.f32", v.camera.width, v.camera.height, 2);
    } else {
      derive_lab(v);
    }
    if (std::filesystem::exists(stem + ".alpha.f32"))
      v.alpha = io::read_f32(stem + ".alpha.f32", v.camera.width, v.camera.height, 1);
    ds.views.push_back(std::move(v));
  }
  if (ds.views.empty()) throw IoError("cameras.json lists no poses");
  return ds;
}

/// Scene spec JSON: {"bbox": [6], "blobs": [{"center": [3], "radius", "density_peak",
/// "rgb": [3], "falloff": "gaussian" | "hard"}]}.
inline SyntheticScene scene_from_json(const json& j) {
  try {
    SyntheticScene s;
    if (j.contains("bbox")) {
      const auto b = j.at("bbox").get<std::vector<double>>();
      if (b.size() != 6) throw std::invalid_argument("bbox needs 6 numbers");
      s.bbox = {{b[0], b[1], b[2]}, {b[3], b[4], b[5]}};
    }
    for (const auto& jb : j.at("blobs")) {
      Blob b;
      const auto c = jb.at("center").get<std::vector<double>>();
      const auto rgb = jb.at("rgb").get<std::vector<double>>();
      if (c.size() != 3 || rgb.size() != 3) throw std::invalid_argument("center and rgb need 3 numbers");
      b.center = {c[0], c[1], c[2]};
      b.rgb = {rgb[0], rgb[1], rgb[2]};
      b.radius = jb.at("radius").get<double>();
      b.density_peak = jb.value("density_peak", 20.0);
      const auto falloff = jb.value("falloff", std::string("gaussian"));
      if (falloff == "gaussian")
        b.falloff = Falloff::gaussian;
      else if (falloff == "hard")
        b.falloff = Falloff::hard;
      else
        throw std::invalid_argument("unknown falloff '" + falloff + "'");
      s.blobs.push_back(b);
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("invalid scene spec: ") + e.what());
  }
}

/// Red, green and blue gaussian blobs stacked along z; the reference test scene.
inline SyntheticScene three_blob_scene() {
  SyntheticScene s;
  s.bbox = {{-1, -1, -1}, {1, 1, 1}};
  s.blobs = {
      {{0.0, 0.0, -0.6}, 0.45, 30.0, {0.85, 0.2, 0.15}, Falloff::gaussian},
      {{0.05, -0.05, 0.0}, 0.45, 30.0, {0.2, 0.7, 0.25}, Falloff::gaussian},
      {{-0.05, 0.05, 0.6}, 0.45, 30.0, {0.2, 0.3, 0.85}, Falloff::gaussian},
  };
  return s;
}

} // namespace colornerf::scene
