// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "colornerf/color_space.hpp"
#include "colornerf/rendering.hpp"

using namespace colornerf;
using namespace colornerf::color;

namespace {

// Textbook sRGB -> Lab with the published IEC matrix and tabulated D65 white.
LabPixel reference_lab(double r, double g, double b) {
  auto lin = [](double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); };
  const double R = lin(r), G = lin(g), B = lin(b);
  const double X = 0.4124564 * R + 0.3575761 * G + 0.1804375 * B;
  const double Y = 0.2126729 * R + 0.7151522 * G + 0.0721750 * B;
  const double Z = 0.0193339 * R + 0.1191920 * G + 0.9503041 * B;
  auto f = [](double t) { return t > 216.0 / 24389.0 ? std::cbrt(t) : (24389.0 / 27.0 * t + 16.0) / 116.0; };
  const double fx = f(X / 0.95047), fy = f(Y / 1.0), fz = f(Z / 1.08883);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

std::vector<AbPoint> brute_force_sorted(const AbBinTable& t, AbPoint p) {
  std::vector<std::pair<double, int>> d;
  for (int q = 0; q < t.size(); ++q) d.push_back({std::pow(p.a - t[q].a, 2) + std::pow(p.b - t[q].b, 2), q});
  std::sort(d.begin(), d.end());
  std::vector<AbPoint> out;
  for (auto& [_, q] : d) out.push_back(t[q]);
  return out;
}

const AbBinTable& table() {
  static const AbBinTable t = build_ab_bin_table();
  return t;
}

} // namespace

TEST(RgbToLab, MatchesReferenceImplementation) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const double r = u(rng), g = u(rng), b = u(rng);
    const auto got = rgb_to_lab({r, g, b});
    const auto ref = reference_lab(r, g, b);
    EXPECT_NEAR(got.L, ref.L, 2e-3);
    EXPECT_NEAR(got.a, ref.a, 5e-3);
    EXPECT_NEAR(got.b, ref.b, 5e-3);
  }
}

TEST(RgbToLab, WhiteAndGray) {
  const auto white = rgb_to_lab({1, 1, 1});
  EXPECT_NEAR(white.L, 100.0, 1e-9);
  EXPECT_NEAR(white.a, 0.0, 1e-9);
  EXPECT_NEAR(white.b, 0.0, 1e-9);
  const auto gray = rgb_to_lab({0.5, 0.5, 0.5});
  EXPECT_NEAR(gray.L, 53.389, 1e-3);
  EXPECT_NEAR(gray.a, 0.0, 1e-9);
  EXPECT_NEAR(gray.b, 0.0, 1e-9);
  EXPECT_NEAR(rgb_to_lab({0, 0, 0}).L, 0.0, 1e-12);
}

TEST(RgbToLab, PrimaryRed) {
  const auto red = rgb_to_lab({1, 0, 0});
  EXPECT_NEAR(red.L, 53.24, 0.01);
  EXPECT_NEAR(red.a, 80.09, 0.02);
  EXPECT_NEAR(red.b, 67.20, 0.02);
}

TEST(LabToRgb, RoundTripRandomSamples) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const RgbPixel p{u(rng), u(rng), u(rng)};
    const auto back = lab_to_rgb(rgb_to_lab(p), false);
    EXPECT_NEAR(back.r, p.r, 1e-4);
    EXPECT_NEAR(back.g, p.g, 1e-4);
    EXPECT_NEAR(back.b, p.b, 1e-4);
  }
}

TEST(LabToRgb, OutOfGamutThrowsUnlessClamped) {
  const LabPixel vivid{50.0, 120.0, -120.0};
  EXPECT_FALSE(in_gamut(vivid));
  EXPECT_THROW(lab_to_rgb(vivid, false), OutOfGamutError);
  const auto c = lab_to_rgb(vivid, true);
  for (double v : {c.r, c.g, c.b}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(FitChroma, KeepsInGamutAndHue) {
  const auto fitted = fit_chroma_to_gamut({50.0, 120.0, -120.0});
  EXPECT_TRUE(in_gamut(fitted));
  EXPECT_NEAR(fitted.a, -fitted.b, 1e-9);
  EXPECT_LT(fitted.a, 120.0);
  const LabPixel ok{50.0, 10.0, 10.0};
  const auto same = fit_chroma_to_gamut(ok);
  EXPECT_EQ(same.a, ok.a);
  EXPECT_EQ(same.b, ok.b);
}

TEST(BinTable, CountsAndPinnedSize) {
  const auto& t = table();
  EXPECT_GE(t.size(), 305);
  EXPECT_LE(t.size(), 325);
  EXPECT_EQ(t.size(), 313);
  const auto all = build_ab_bin_table(10.0, 110.0, {});
  EXPECT_TRUE(all.empty());
  const auto single = build_ab_bin_table(10.0, 0.0);
  ASSERT_EQ(single.size(), 1);
  EXPECT_EQ(single[0].a, 0.0);
  EXPECT_EQ(single[0].b, 0.0);
}

TEST(BinTable, RejectsBadArguments) {
  EXPECT_THROW(build_ab_bin_table(0.0, 110.0), std::invalid_argument);
  EXPECT_THROW(build_ab_bin_table(10.0, 105.0), std::invalid_argument);
  EXPECT_THROW(AbBinTable(10.0, {{10, 0}, {0, 0}}), std::invalid_argument);
  EXPECT_THROW(AbBinTable(10.0, {{0, 0}, {3, 0}}), std::invalid_argument);
}

TEST(BinTable, EveryCenterHasDecodableNeighborhood) {
  const double reach = table().grid_step() * std::sqrt(2.0);
  for (const auto& c : table().centers()) {
    bool ok = false;
    for (double da = -reach; da <= reach && !ok; da += 0.625)
      for (double db = -reach; db <= reach && !ok; db += 0.625) {
        if (da * da + db * db > reach * reach + 1e-9) continue;
        for (double L : default_l_sweep())
          if (in_gamut({L, c.a + da, c.b + db})) {
            ok = true;
            break;
          }
      }
    EXPECT_TRUE(ok) << c.a << "," << c.b;
  }
}

TEST(BinTable, NearestMatchesBruteForce) {
  const auto& t = table();
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-140.0, 140.0);
  for (int i = 0; i < 400; ++i) {
    const AbPoint p{u(rng), u(rng)};
    const auto ref = brute_force_sorted(t, p);
    const auto got = t.nearest(p, 7);
    ASSERT_EQ(got.size(), 7u);
    for (int j = 0; j < 7; ++j) {
      const auto& c = t[got[static_cast<std::size_t>(j)].index];
      const double dg = std::hypot(c.a - p.a, c.b - p.b), dr = std::hypot(ref[j].a - p.a, ref[j].b - p.b);
      EXPECT_NEAR(dg, dr, 1e-12);
    }
  }
}

TEST(BinTable, QuantizationErrorBound) {
  const auto& t = table();
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const auto lab = rgb_to_lab({u(rng), u(rng), u(rng)});
    const auto n = t.nearest({lab.a, lab.b}, 1).front();
    EXPECT_LE(std::sqrt(n.dist2), t.grid_step() * std::sqrt(2.0) / 2.0 + 1e-9);
  }
}

TEST(BinTable, SaveLoadRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "colornerf_table_test.txt";
  save_ab_table(table(), path.string());
  const auto back = load_ab_table(path.string());
  ASSERT_EQ(back.size(), table().size());
  for (int q = 0; q < back.size(); ++q) {
    EXPECT_EQ(back[q].a, table()[q].a);
    EXPECT_EQ(back[q].b, table()[q].b);
  }
  std::filesystem::remove(path);
  EXPECT_THROW(load_ab_table(path.string()), IoError);
}

TEST(SoftLabel, HandEvaluatedWeights) {
  const AbBinTable t(10.0, {{0, 0}, {10, 0}});
  const auto l = soft_label({2, 0}, t, 2, 5.0);
  ASSERT_EQ(l.entries.size(), 2u);
  const double e0 = std::exp(-4.0 / 50.0), e1 = std::exp(-64.0 / 50.0);
  EXPECT_EQ(l.entries[0].bin, 0);
  EXPECT_NEAR(l.entries[0].weight, e0 / (e0 + e1), 1e-12);
  EXPECT_NEAR(l.entries[0].weight, 0.768, 1e-3);
  EXPECT_NEAR(l.entries[1].weight, 0.232, 1e-3);
}

TEST(SoftLabel, EquidistantCentersShareWeight) {
  const AbBinTable t(10.0, {{0, 0}, {10, 0}});
  const auto l = soft_label({5, 0}, t, 2, 5.0);
  EXPECT_DOUBLE_EQ(l.entries[0].weight, l.entries[1].weight);
  EXPECT_EQ(l.entries[0].bin, 0);
}

TEST(SoftLabel, ExactCenterCarriesMaximum) {
  const auto& t = table();
  for (int q = 0; q < t.size(); q += 17) {
    const auto l = soft_label(t[q], t);
    EXPECT_EQ(l.entries.front().bin, q);
    for (const auto& e : l.entries) EXPECT_LE(e.weight, l.entries.front().weight);
  }
}

TEST(SoftLabel, ProbabilityVectorWithNearestArgmax) {
  const auto& t = table();
  std::mt19937 rng(21);
  std::uniform_real_distribution<double> u(-120.0, 120.0);
  for (int i = 0; i < 1000; ++i) {
    const AbPoint p{u(rng), u(rng)};
    const auto l = soft_label(p, t);
    ASSERT_EQ(l.entries.size(), 5u);
    double sum = 0.0;
    int arg = -1;
    double best = -1.0;
    for (const auto& e : l.entries) {
      EXPECT_GE(e.weight, 0.0);
      sum += e.weight;
      if (e.weight > best) best = e.weight, arg = e.bin;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    const auto nearest = brute_force_sorted(t, p).front();
    EXPECT_NEAR(std::hypot(t[arg].a - p.a, t[arg].b - p.b), std::hypot(nearest.a - p.a, nearest.b - p.b), 1e-12);
  }
}

TEST(SoftLabel, RejectsBadParameters) {
  EXPECT_THROW(soft_label({0, 0}, table(), 0), std::invalid_argument);
  EXPECT_THROW(soft_label({0, 0}, table(), table().size() + 1), std::invalid_argument);
  EXPECT_THROW(soft_label({0, 0}, table(), 5, 0.0), std::invalid_argument);
}

TEST(DecodeArgmax, OneHotUniformAndTies) {
  const auto& t = table();
  std::vector<double> d(static_cast<std::size_t>(t.size()), 0.0);
  d[42] = 1.0;
  EXPECT_EQ(decode_argmax(d, t).a, t[42].a);
  std::fill(d.begin(), d.end(), 1.0 / t.size());
  EXPECT_EQ(decode_argmax(d, t).a, t[0].a);
  EXPECT_EQ(decode_argmax(d, t).b, t[0].b);
  std::fill(d.begin(), d.end(), 0.0);
  EXPECT_THROW(decode_argmax(d, t), std::invalid_argument);
  EXPECT_THROW(decode_argmax(std::vector<double>(3, 1.0), t), std::invalid_argument);
}

TEST(DecodeArgmax, SoftmaxOfLogitsPreservesArgmax) {
  const auto& t = table();
  std::vector<double> z(static_cast<std::size_t>(t.size()), 0.0), p(z.size());
  z[3] = 1.0;
  render::softmax(z, p);
  EXPECT_EQ(decode_argmax(p, t).a, t[3].a);
  EXPECT_EQ(decode_argmax(p, t).b, t[3].b);
}

TEST(DecodeArgmax, InvariantUnderMonotoneTransform) {
  const auto& t = table();
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> d(static_cast<std::size_t>(t.size())), g(d.size());
    for (auto& v : d) v = u(rng);
    for (std::size_t q = 0; q < d.size(); ++q) g[q] = std::exp(3.0 * d[q]) + 2.0;
    const auto a = decode_argmax(d, t), b = decode_argmax(g, t);
    EXPECT_EQ(a.a, b.a);
    EXPECT_EQ(a.b, b.b);
  }
}
