// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "colornerf/metrics.hpp"

using namespace colornerf;
using namespace colornerf::metrics;

namespace {

ImageF constant_image(int w, int h, std::vector<float> value) {
  ImageF img(w, h, static_cast<int>(value.size()));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels(); ++c) img.at(x, y, c) = value[static_cast<std::size_t>(c)];
  return img;
}

ImageF random_image(std::mt19937& rng, int w, int h, int channels) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImageF img(w, h, channels);
  for (auto& v : img.data()) v = u(rng);
  return img;
}

ImageF add_noise(const ImageF& img, double amplitude, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  ImageF out = img;
  for (auto& v : out.data()) v = static_cast<float>(v + amplitude * n(rng));
  return out;
}

// Direct two-pass evaluation of the colorfulness formula.
double reference_colorfulness(const ImageF& img) {
  std::vector<double> rg, yb;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const double r = 255.0 * img.at(x, y, 0), g = 255.0 * img.at(x, y, 1), b = 255.0 * img.at(x, y, 2);
      rg.push_back(r - g);
      yb.push_back(0.5 * (r + g) - b);
    }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto var = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
  };
  return std::sqrt(var(rg) + var(yb)) + 0.3 * std::hypot(mean(rg), mean(yb));
}

} // namespace

TEST(Psnr, IdenticalIsInfinite) {
  std::mt19937 rng(1);
  const auto img = random_image(rng, 8, 8, 3);
  EXPECT_EQ(psnr(img, img), kPsnrIdentical);
  EXPECT_TRUE(std::isinf(psnr(img, img)));
}

TEST(Psnr, AnalyticValues) {
  const auto a = constant_image(4, 4, {0.5f, 0.5f, 0.5f});
  // Offsets of 0.1 and 0.01 give MSE 1e-2 and 1e-4 up to float rounding.
  EXPECT_NEAR(psnr(constant_image(4, 4, {0.6f, 0.6f, 0.6f}), a), 20.0, 1e-4);
  EXPECT_NEAR(psnr(constant_image(4, 4, {0.51f, 0.51f, 0.51f}), a), 40.0, 1e-3);
  EXPECT_THROW(psnr(a, constant_image(4, 5, {0.5f, 0.5f, 0.5f})), std::invalid_argument);
}

TEST(Psnr, StrictlyDecreasesWithNoise) {
  std::mt19937 rng(2);
  const auto img = random_image(rng, 32, 32, 3);
  const double p1 = psnr(add_noise(img, 0.01, 5), img);
  const double p2 = psnr(add_noise(img, 0.05, 5), img);
  const double p3 = psnr(add_noise(img, 0.2, 5), img);
  EXPECT_GT(p1, p2);
  EXPECT_GT(p2, p3);
}

TEST(Ssim, IdentityAndConstants) {
  std::mt19937 rng(3);
  const auto img = random_image(rng, 20, 16, 1);
  EXPECT_NEAR(ssim(img, img), 1.0, 1e-12);
  EXPECT_NEAR(ssim(constant_image(12, 12, {0.5f}), constant_image(12, 12, {0.5f})), 1.0, 1e-12);
  // Constant 1 against constant 0: only the stabilizing constants remain, C1 / (1 + C1).
  const double c1 = 1e-4;
  EXPECT_NEAR(ssim(constant_image(12, 12, {1.0f}), constant_image(12, 12, {0.0f})), c1 / (1.0 + c1), 1e-12);
}

TEST(Ssim, SymmetricBoundedAndRejectsSmallImages) {
  std::mt19937 rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto a = random_image(rng, 14, 13, 1), b = random_image(rng, 14, 13, 1);
    const double s = ssim(a, b);
    EXPECT_NEAR(s, ssim(b, a), 1e-12);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
    EXPECT_LT(s, ssim(a, add_noise(a, 0.01, 9)));
  }
  EXPECT_THROW(ssim(constant_image(10, 12, {0.f}), constant_image(10, 12, {0.f})), std::invalid_argument);
  EXPECT_THROW(ssim(constant_image(12, 12, {0.f}), constant_image(13, 12, {0.f})), std::invalid_argument);
}

TEST(Ssim, WindowIsNormalizedGaussian) {
  const auto w = ssim_window(1.5);
  double total = 0.0;
  for (double v : w) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(w[5 * 11 + 5] / w[5 * 11 + 6], std::exp(1.0 / (2 * 1.5 * 1.5)), 1e-12);
}

TEST(Colorfulness, GrayIsZero) {
  for (float g : {0.0f, 0.3f, 1.0f}) EXPECT_EQ(colorfulness(constant_image(5, 7, {g, g, g})), 0.0);
}

TEST(Colorfulness, ConstantRed) {
  // 0.3 * sqrt(255^2 + 127.5^2) = 85.5296.
  const double want = 0.3 * std::hypot(255.0, 127.5);
  EXPECT_NEAR(want, 85.5296, 1e-4);
  EXPECT_NEAR(colorfulness(constant_image(9, 9, {1.0f, 0.0f, 0.0f})), want, 1e-9);
}

TEST(Colorfulness, HalfRedHalfGreen) {
  ImageF img(4, 4, 3);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      img.at(x, y, 0) = y < 2 ? 1.0f : 0.0f;
      img.at(x, y, 1) = y < 2 ? 0.0f : 1.0f;
    }
  EXPECT_NEAR(colorfulness(img), 293.25, 1e-9);
}

TEST(Colorfulness, MatchesReferenceAndIgnoresPixelOrder) {
  std::mt19937 rng(5);
  for (int t = 0; t < 30; ++t) {
    const auto img = random_image(rng, 9, 6, 3);
    EXPECT_NEAR(colorfulness(img), reference_colorfulness(img), 1e-8);
    // Reverse the pixel order.
    ImageF rev(9, 6, 3);
    for (int i = 0; i < 54; ++i)
      for (int c = 0; c < 3; ++c) rev.at(i % 9, i / 9, c) = img.at((53 - i) % 9, (53 - i) / 9, c);
    EXPECT_NEAR(colorfulness(rev), colorfulness(img), 1e-9);
  }
}

TEST(Evaluate, IdenticalViews) {
  std::mt19937 rng(6);
  const std::vector<ImageF> views{random_image(rng, 16, 16, 3), random_image(rng, 16, 16, 3)};
  const auto ev = evaluate(views, views);
  EXPECT_TRUE(std::isinf(ev.mean.psnr));
  EXPECT_NEAR(ev.mean.ssim, 1.0, 1e-12);
  EXPECT_EQ(ev.mean.delta_colorful, 0.0);
  EXPECT_THROW(evaluate(views, {views[0]}), std::invalid_argument);
  EXPECT_THROW(evaluate({}, {}), std::invalid_argument);
}

TEST(Evaluate, SingleViewMeanEqualsView) {
  std::mt19937 rng(7);
  const std::vector<ImageF> pred{random_image(rng, 12, 12, 3)}, gt{random_image(rng, 12, 12, 3)};
  const auto ev = evaluate(pred, gt);
  EXPECT_EQ(ev.mean.psnr, ev.views[0].psnr);
  EXPECT_EQ(ev.mean.ssim, ev.views[0].ssim);
  EXPECT_EQ(ev.mean.delta_colorful, std::fabs(ev.views[0].colorful_pred - ev.views[0].colorful_gt));
}

TEST(Evaluate, ReportsAreReproducible) {
  std::mt19937 rng(8);
  const std::vector<ImageF> pred{random_image(rng, 12, 12, 3)}, gt{random_image(rng, 12, 12, 3)};
  std::ostringstream a, b;
  write_tsv(a, evaluate(pred, gt));
  write_tsv(b, evaluate(pred, gt));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "view\tpsnr\tssim\tcolorful_pred\tcolorful_gt\tdelta_colorful");
  EXPECT_EQ(to_json(evaluate(pred, gt)).dump(), to_json(evaluate(pred, gt)).dump());
  EXPECT_EQ(to_json(evaluate(pred, pred))["mean"]["psnr"], "inf");
}
