// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "colornerf/rendering.hpp"

using namespace colornerf;
using namespace colornerf::render;

namespace {

const Aabb kBox{{-1, -1, -1}, {1, 1, 1}};

Camera front_camera(int w = 32, int h = 32) {
  return Camera::look_at({0, -4, 0}, {0, 0, 0}, {0, 0, 1}, 40.0, w, h);
}

field::FieldParams constant_field(double sigma, double lum, int Q = 4, field::GridResolution res = {4, 4, 4}) {
  return field::init_field(kBox, res, Q, {sigma, lum});
}

Ray axis_ray(double t_near = 0.0, double t_far = 2.0) {
  Ray r;
  r.origin = {0, 0, -1};
  r.dir = {0, 0, 1};
  r.t_near = t_near;
  r.t_far = t_far;
  return r;
}

RenderOptions lum_only() {
  RenderOptions o;
  o.color = false;
  return o;
}

} // namespace

TEST(Camera, LookAtIsOrthonormalAndCentered) {
  const auto cam = front_camera(33, 33);
  EXPECT_NO_THROW(cam.validate());
  EXPECT_LT(orthonormality_error(cam.rotation), 1e-12);
  // Pixel-index coordinate 16 is the image center for odd sizes.
  const Vec3 d = cam.direction(16.0, 16.0);
  EXPECT_NEAR(d.x, 0.0, 1e-12);
  EXPECT_NEAR(d.y, 1.0, 1e-12);
  EXPECT_NEAR(d.z, 0.0, 1e-12);
  // Image y grows downward, x to the right.
  EXPECT_GT(cam.direction(16.0, 0.0).z, 0.0);
  EXPECT_GT(cam.direction(32.0, 16.0).x, 0.0);
}

TEST(Camera, RejectsInvalid) {
  auto cam = front_camera();
  cam.focal = 0.0;
  EXPECT_THROW(cam.validate(), std::invalid_argument);
  cam = front_camera();
  cam.rotation(0, 0) = 2.0;
  EXPECT_THROW(cam.validate(), std::invalid_argument);
}

TEST(MakeRay, ClipsToBoxAndIsUnit) {
  const auto cam = front_camera();
  const auto r = make_ray(cam, 15.5, 15.5, kBox);
  EXPECT_NEAR(norm(r.dir), 1.0, 1e-9);
  EXPECT_NEAR(r.t_near, 3.0, 1e-9);
  EXPECT_NEAR(r.t_far, 5.0, 1e-9);
  const auto miss = make_ray(cam, 0, 0, {{-0.1, -0.1, -0.1}, {0.1, 0.1, 0.1}});
  EXPECT_LT(miss.t_near, miss.t_far);
}

TEST(PatchRays, TwoByTwoUnitScale) {
  const auto cam = front_camera();
  const auto pr = sample_patch_rays(cam, {10, 10, 1.0, 2}, kBox);
  ASSERT_EQ(pr.pixels.size(), 4u);
  const std::array<std::array<double, 2>, 4> want{{{9, 9}, {10, 9}, {9, 10}, {10, 10}}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(pr.pixels[i][0], want[i][0]);
    EXPECT_EQ(pr.pixels[i][1], want[i][1]);
  }
}

TEST(PatchRays, HalfScaleOffsets) {
  const auto pr = sample_patch_rays(front_camera(), {10, 10, 0.5, 2}, kBox);
  for (const auto& px : pr.pixels) {
    EXPECT_TRUE(px[0] == 9.5 || px[0] == 10.0);
    EXPECT_TRUE(px[1] == 9.5 || px[1] == 10.0);
  }
}

TEST(PatchRays, RejectsOutOfImageAndBadSpecs) {
  const auto cam = front_camera();
  EXPECT_THROW(sample_patch_rays(cam, {0.5, 10, 1.0, 2}, kBox), std::out_of_range);
  EXPECT_THROW(sample_patch_rays(cam, {31.5, 10, 1.0, 2}, kBox), std::out_of_range);
  EXPECT_THROW(sample_patch_rays(cam, {10, 10, 1.0, 3}, kBox), std::invalid_argument);
  EXPECT_THROW(sample_patch_rays(cam, {10, 10, 0.0, 2}, kBox), std::invalid_argument);
}

TEST(PatchRays, CenterRangeEndpointsFit) {
  const auto cam = front_camera(64, 48);
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> us(0.3, 1.0);
  for (int i = 0; i < 100; ++i) {
    const double s = us(rng);
    const auto xr = patch_center_range(cam.width, s, 16), yr = patch_center_range(cam.height, s, 16);
    for (double u : {xr[0], xr[1]})
      for (double v : {yr[0], yr[1]}) EXPECT_NO_THROW(sample_patch_rays(cam, {u, v, s, 16}, kBox));
  }
}

TEST(Stratified, MidpointsAndOrdering) {
  const auto r = axis_ray(0.0, 2.0);
  const std::vector<double> half(4, 0.5);
  const auto t = stratified_sample(r, 4, half);
  const std::vector<double> want{0.25, 0.75, 1.25, 1.75};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(t[static_cast<std::size_t>(i)], want[static_cast<std::size_t>(i)], 1e-12);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = stratified_sample(r, 16, rng);
    for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s[i - 1], s[i]);
    EXPECT_GE(s.front(), r.t_near);
    EXPECT_LE(s.back(), r.t_far);
  }
  const auto one = stratified_sample(r, 1, rng);
  EXPECT_GE(one[0], 0.0);
  EXPECT_LE(one[0], 2.0);
  EXPECT_THROW(stratified_sample(r, 0, rng), std::invalid_argument);
}

TEST(Importance, HandInvertedCdf) {
  const auto r = axis_ray(0.0, 2.0);
  const std::vector<double> t{0.0, 1.0}, w{1.0, 3.0}, q{0.125, 0.5, 0.875};
  const auto s = importance_sample(r, t, w, q);
  // CDF is x/4 on [0,1) and 1/4 + 3(x-1)/4 on [1,2).
  EXPECT_NEAR(s[0], 0.5, 1e-9);
  EXPECT_NEAR(s[1], 4.0 / 3.0, 1e-9);
  EXPECT_NEAR(s[2], 11.0 / 6.0, 1e-9);
}

TEST(Importance, ZeroWeightsFallBackToUniform) {
  const auto r = axis_ray(0.5, 2.5);
  const std::vector<double> t{0.5, 1.5}, w{0.0, 0.0}, q{0.0, 0.5, 1.0};
  const auto s = importance_sample(r, t, w, q);
  EXPECT_NEAR(s[0], 0.5, 1e-12);
  EXPECT_NEAR(s[1], 1.5, 1e-12);
  EXPECT_NEAR(s[2], 2.5, 1e-12);
}

TEST(Importance, SingleIntervalCapturesAllSamples) {
  const auto r = axis_ray(0.0, 4.0);
  const std::vector<double> t{0.0, 1.0, 2.0, 3.0}, w{0.0, 0.0, 2.0, 0.0};
  std::mt19937_64 rng(3);
  const auto s = importance_sample(r, t, w, 64, rng);
  for (double x : s) {
    EXPECT_GE(x, 2.0);
    EXPECT_LE(x, 3.0);
  }
  EXPECT_THROW(importance_sample(r, t, std::vector<double>{1.0}, 4, rng), std::invalid_argument);
}

TEST(RenderRay, EmptySpaceIsBlack) {
  auto f = constant_field(0.1, 0.7);
  std::fill(f.density.begin(), f.density.end(), -800.0);  // softplus underflows to exactly 0
  const std::vector<double> t{0.2, 0.9, 1.4};
  const auto rec = render_ray_at(f, axis_ray(), t, lum_only());
  EXPECT_EQ(rec.L, 0.0);
  for (const auto& s : rec.samples) {
    EXPECT_EQ(s.weight, 0.0);
    EXPECT_EQ(s.trans, 1.0);
  }
  EXPECT_EQ(rec.trans_end, 1.0);
}

TEST(RenderRay, LnTwoClosedForm) {
  // sigma = ln 2 per unit, two unit intervals, lum -> 1.
  auto f = constant_field(std::numbers::ln2, 0.5);
  std::fill(f.luminance.begin(), f.luminance.end(), 800.0);
  const std::vector<double> t{0.0, 1.0};
  const auto rec = render_ray_at(f, axis_ray(0.0, 2.0), t, lum_only());
  EXPECT_NEAR(rec.samples[0].weight, 0.5, 1e-12);
  EXPECT_NEAR(rec.samples[1].weight, 0.25, 1e-12);
  EXPECT_NEAR(rec.L, 0.75, 1e-9);
}

TEST(RenderRay, OpaqueFirstSampleWins) {
  auto f = constant_field(0.1, 0.5, 3, {2, 2, 3});
  // Front layer (z = -1) is opaque with lum 0.2; the rest is bright.
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      for (int z = 0; z < 3; ++z) f.luminance[static_cast<std::size_t>(f.voxel_index(x, y, z))] = field::logit(0.9);
      f.density[static_cast<std::size_t>(f.voxel_index(x, y, 0))] = 1e6;
      f.luminance[static_cast<std::size_t>(f.voxel_index(x, y, 0))] = field::logit(0.2);
    }
  const std::vector<double> t{0.0, 0.5, 1.2};
  const auto rec = render_ray_at(f, axis_ray(), t, lum_only());
  EXPECT_NEAR(rec.samples[0].weight, 1.0, 1e-12);
  EXPECT_NEAR(rec.L, 0.2, 1e-9);
}

TEST(RenderRay, WeightsAndTransmittanceInvariants) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto f = constant_field(0.1, 0.5, 5);
    for (auto& v : f.density) v = n(rng);
    for (auto& v : f.logits) v = n(rng);
    RenderOptions opt;
    opt.coarse = 8;
    opt.fine = 8;
    opt.color_mode = trial % 2 ? ColorMode::normalize_then_render : ColorMode::render_then_normalize;
    const auto cam = front_camera();
    const auto rec = render_ray(f, make_ray(cam, 16, 16, kBox), opt, rng);
    double prev = 1.0, sum = 0.0;
    for (const auto& s : rec.samples) {
      EXPECT_LE(s.trans, prev + 1e-15);
      EXPECT_GE(s.weight, 0.0);
      prev = s.trans;
      sum += s.weight;
    }
    EXPECT_LE(sum, 1.0 + 1e-6);
    EXPECT_NEAR(sum + rec.trans_end, 1.0, 1e-9);
    double total = 0.0;
    for (double p : rec.dist) total += p;
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(RenderRay, QuadratureConvergesUnderRefinement) {
  auto f = constant_field(0.1, 0.5, 2, {5, 5, 5});
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(-2.0, 3.0);
  for (auto& v : f.density) v = u(rng);
  for (auto& v : f.luminance) v = u(rng);
  const auto ray = make_ray(front_camera(), 13.3, 17.8, kBox);
  auto render_uniform = [&](int M) {
    std::vector<double> t(static_cast<std::size_t>(M));
    for (int i = 0; i < M; ++i) t[static_cast<std::size_t>(i)] = ray.t_near + (ray.t_far - ray.t_near) * i / M;
    return render_ray_at(f, ray, t, lum_only()).L;
  };
  double prev_change = std::fabs(render_uniform(16) - render_uniform(8));
  for (int M = 32; M <= 512; M *= 2) {
    const double change = std::fabs(render_uniform(M) - render_uniform(M / 2));
    EXPECT_LT(change, prev_change);
    prev_change = change;
  }
}

TEST(RenderRay, OpaqueSlabConvergesToItsLuminance) {
  // Density high everywhere in the box, luminance 0.8: the slab facing the camera.
  const auto f = constant_field(50.0, 0.8, 2);
  const auto cam = front_camera(33, 33);
  RenderOptions opt = lum_only();
  opt.coarse = 64;
  opt.fine = 64;
  std::mt19937_64 rng(4);
  EXPECT_NEAR(render_ray(f, make_ray(cam, 16, 16, kBox), opt, rng).L, 0.8, 0.02);
}

TEST(RenderRay, JitterSizeMustMatch) {
  const auto f = constant_field(0.1, 0.5);
  RenderOptions opt;
  opt.coarse = 4;
  opt.fine = 4;
  EXPECT_THROW(render_ray(f, axis_ray(), opt, std::vector<double>(3, 0.5)), std::invalid_argument);
}

TEST(RenderBackward, ZeroUpstreamTouchesNothing) {
  const auto f = constant_field(0.5, 0.5);
  std::mt19937_64 rng(1);
  const auto rec = render_ray(f, make_ray(front_camera(), 16, 16, kBox), RenderOptions{}, rng);
  field::GradBuffer g(f);
  const std::vector<double> zeros(static_cast<std::size_t>(f.Q), 0.0);
  render_backward(f, rec, {0.0, zeros}, g);
  for (double v : g.density()) EXPECT_EQ(v, 0.0);
  for (double v : g.luminance()) EXPECT_EQ(v, 0.0);
  for (double v : g.logits()) EXPECT_EQ(v, 0.0);
}

TEST(RenderBackward, SingleSampleLuminanceChainRule) {
  auto f = constant_field(0.7, 0.5, 2, {2, 2, 2});
  f.luminance = {0.3, -0.2, 0.1, 0.5, -0.4, 0.2, 0.0, 0.6};
  const std::vector<double> t{0.7};
  const auto rec = render_ray_at(f, axis_ray(), t, lum_only());
  field::GradBuffer g(f);
  render_backward(f, rec, {1.0, {}}, g);
  const auto& s = rec.samples[0];
  for (int k = 0; k < 8; ++k) {
    const double want = s.weight * s.lum * (1.0 - s.lum) * s.corners.weight[k];
    EXPECT_NEAR(g.luminance()[static_cast<std::size_t>(s.corners.voxel[k])], want, 1e-15);
  }
}

TEST(RenderPatch, WorkerCountDoesNotChangeResults) {
  auto f = constant_field(0.1, 0.5, 6);
  std::mt19937 init(2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : f.density) v = n(init);
  for (auto& v : f.logits) v = n(init);
  const auto rays = sample_patch_rays(front_camera(), {16, 16, 0.7, 8}, kBox);
  std::mt19937_64 a(7), b(7);
  const auto p1 = render_patch(f, rays, RenderOptions{}, a, 1);
  const auto p4 = render_patch(f, rays, RenderOptions{}, b, 4);
  EXPECT_EQ(p1.L, p4.L);
  EXPECT_EQ(p1.dist, p4.dist);
}

TEST(RenderPatch, DeferredColorMatchesDirectColor) {
  auto f = constant_field(0.1, 0.5, 6);
  std::mt19937 init(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : f.density) v = n(init);
  for (auto& v : f.logits) v = n(init);
  const auto rays = sample_patch_rays(front_camera(), {16, 16, 0.5, 4}, kBox);
  RenderOptions with_color, without;
  without.color = false;
  std::mt19937_64 a(11), b(11);
  const auto direct = render_patch(f, rays, with_color, a);
  auto deferred = render_patch(f, rays, without, b);
  EXPECT_TRUE(deferred.dist.empty());
  add_patch_color(f, deferred, with_color);
  EXPECT_EQ(direct.dist, deferred.dist);
}

TEST(RenderImage, ZeroDensityIsBlackWithLowestBinChroma) {
  auto f = constant_field(0.1, 0.5, 3);
  std::fill(f.density.begin(), f.density.end(), -800.0);
  const color::AbBinTable table(10.0, {{-10, 0}, {0, 0}, {10, 0}});
  RenderOptions opt;
  opt.coarse = 4;
  opt.fine = 4;
  const auto img = render_image(f, table, front_camera(12, 12), opt, 1);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) {
      EXPECT_EQ(img.L.at(x, y), 0.0f);
      EXPECT_EQ(img.ab.at(x, y, 0), -10.0f);
      for (int c = 0; c < 3; ++c) EXPECT_NEAR(img.rgb.at(x, y, c), 0.0f, 1e-6);
    }
}

TEST(RenderImage, UniformLogitsDecodeToFirstBin) {
  const auto f = constant_field(0.5, 0.6, 3);
  const color::AbBinTable table(10.0, {{-10, 0}, {0, 10}, {10, 0}});
  RenderOptions opt;
  opt.coarse = 4;
  opt.fine = 4;
  const auto img = render_image(f, table, front_camera(12, 12), opt, 1);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) {
      EXPECT_EQ(img.ab.at(x, y, 0), -10.0f);
      EXPECT_EQ(img.ab.at(x, y, 1), 0.0f);
    }
  EXPECT_THROW(render_image(f, color::AbBinTable(10.0, {{0, 0}}), front_camera(), opt, 1), std::invalid_argument);
}

TEST(RenderImage, SeedAndWorkersReproducible) {
  auto f = constant_field(0.3, 0.5, 3);
  std::mt19937 init(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : f.density) v = n(init);
  for (auto& v : f.logits) v = n(init);
  const color::AbBinTable table(10.0, {{-10, 0}, {0, 10}, {10, 0}});
  const auto a = render_image(f, table, front_camera(10, 10), RenderOptions{}, 42, 1);
  const auto b = render_image(f, table, front_camera(10, 10), RenderOptions{}, 42, 3);
  EXPECT_EQ(std::vector<float>(a.rgb.data().begin(), a.rgb.data().end()),
            std::vector<float>(b.rgb.data().begin(), b.rgb.data().end()));
}

TEST(RenderRay, CutoffDropsFaintSamplesFromColor) {
  auto f = constant_field(0.1, 0.5, 2, {2, 2, 3});
  // Faint first layer favors bin 1, dense back layer favors bin 0.
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      const auto front = static_cast<std::size_t>(f.voxel_index(x, y, 0));
      const auto back = static_cast<std::size_t>(f.voxel_index(x, y, 2));
      f.density[front] = -10.0;
      f.density[back] = 10.0;
      f.logits_at(static_cast<int>(front))[1] = 1e6;
      f.logits_at(static_cast<int>(back))[0] = 20.0;
    }
  const std::vector<double> t{0.0, 1.9};
  RenderOptions keep, drop;
  keep.color_weight_cutoff = 0.0;
  drop.color_weight_cutoff = 1e-3;
  const auto a = render_ray_at(f, axis_ray(), t, keep);
  const auto b = render_ray_at(f, axis_ray(), t, drop);
  EXPECT_LT(a.samples[0].weight, 1e-3);
  EXPECT_GT(a.dist[1], a.dist[0]);
  EXPECT_GT(b.dist[0], 0.99);
}
