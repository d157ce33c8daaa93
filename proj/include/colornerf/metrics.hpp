// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#pragma once

#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "colornerf/color_space.hpp"
#include "colornerf/image.hpp"
#include "json.hpp"

namespace colornerf::metrics {

/// Returned for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

inline void require_same_shape(const ImageF& a, const ImageF& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

inline double psnr(const ImageF& pred, const ImageF& gt) {
  require_same_shape(pred, gt, "psnr");
  const auto p = pred.data(), g = gt.data();
  if (p.empty()) throw std::invalid_argument("psnr: empty image");
  double sse = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = static_cast<double>(p[i]) - g[i];
    sse += e * e;
  }
  if (sse == 0.0) return kPsnrIdentical;
  return -10.0 * std::log10(sse / static_cast<double>(p.size()));
}

/// Lab lightness / 100 of an RGB image.
inline ImageF luminance_plane(const ImageF& rgb) {
  if (rgb.channels() != 3) throw std::invalid_argument("luminance_plane: expected 3 channels");
  ImageF out(rgb.width(), rgb.height(), 1);
  for (int y = 0; y < rgb.height(); ++y)
    for (int x = 0; x < rgb.width(); ++x)
      out.at(x, y) = static_cast<float>(
          color::rgb_to_lab({rgb.at(x, y, 0), rgb.at(x, y, 1), rgb.at(x, y, 2)}).L / color::kLabLScale);
  return out;
}

inline constexpr int kSsimWindow = 11;

inline std::array<double, kSsimWindow * kSsimWindow> ssim_window(double sigma = 1.5) {
  std::array<double, kSsimWindow * kSsimWindow> w{};
  double total = 0.0;
  const int h = kSsimWindow / 2;
  for (int y = -h; y <= h; ++y)
    for (int x = -h; x <= h; ++x)
      total += w[static_cast<std::size_t>((y + h) * kSsimWindow + x + h)] = std::exp(-(x * x + y * y) / (2 * sigma * sigma));
  for (double& v : w) v /= total;
  return w;
}

/// Mean local SSIM of two single-channel images with data range 1, over all window
/// positions that fit inside the image.
inline double ssim(const ImageF& pred, const ImageF& gt) {
  require_same_shape(pred, gt, "ssim");
  if (pred.channels() != 1) throw std::invalid_argument("ssim: expected single-channel images");
  if (pred.width() < kSsimWindow || pred.height() < kSsimWindow)
    throw std::invalid_argument("ssim: images must be at least 11x11");
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  static const auto w = ssim_window();
  double sum = 0.0;
  std::size_t count = 0;
  for (int y0 = 0; y0 + kSsimWindow <= pred.height(); ++y0)
    for (int x0 = 0; x0 + kSsimWindow <= pred.width(); ++x0) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int j = 0; j < kSsimWindow; ++j)
        for (int i = 0; i < kSsimWindow; ++i) {
          const double wk = w[static_cast<std::size_t>(j * kSsimWindow + i)];
          const double a = pred.at(x0 + i, y0 + j), b = gt.at(x0 + i, y0 + j);
          mx += wk * a;
          my += wk * b;
          sxx += wk * a * a;
          syy += wk * b * b;
          sxy += wk * a * b;
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      sum += ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
      ++count;
    }
  return sum / static_cast<double>(count);
}

/// Hasler-Suesstrunk colorfulness on the 0..255 scale, population statistics.
inline double colorfulness(const ImageF& rgb) {
  if (rgb.channels() != 3) throw std::invalid_argument("colorfulness: expected 3 channels");
  const std::size_t n = rgb.pixel_count();
  if (n == 0) throw std::invalid_argument("colorfulness: empty image");
  double s_rg = 0, s_yb = 0, q_rg = 0, q_yb = 0;
  for (int y = 0; y < rgb.height(); ++y)
    for (int x = 0; x < rgb.width(); ++x) {
      const double r = 255.0 * rgb.at(x, y, 0), g = 255.0 * rgb.at(x, y, 1), b = 255.0 * rgb.at(x, y, 2);
      const double rg = r - g, yb = 0.5 * (r + g) - b;
      s_rg += rg;
      s_yb += yb;
      q_rg += rg * rg;
      q_yb += yb * yb;
    }
  const double m_rg = s_rg / n, m_yb = s_yb / n;
  const double v_rg = std::fmax(0.0, q_rg / n - m_rg * m_rg), v_yb = std::fmax(0.0, q_yb / n - m_yb * m_yb);
  return std::sqrt(v_rg + v_yb) + 0.3 * std::sqrt(m_rg * m_rg + m_yb * m_yb);
}

struct MetricReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double colorful_pred = 0.0;
  double colorful_gt = 0.0;
  double delta_colorful = 0.0;
};

struct Evaluation {
  std::vector<MetricReport> views;
  MetricReport mean;
};

inline MetricReport evaluate_view(const ImageF& pred_rgb, const ImageF& gt_rgb) {
  require_same_shape(pred_rgb, gt_rgb, "evaluate");
  MetricReport r;
  r.psnr = psnr(pred_rgb, gt_rgb);
  r.ssim = ssim(luminance_plane(pred_rgb), luminance_plane(gt_rgb));
  r.colorful_pred = colorfulness(pred_rgb);
  r.colorful_gt = colorfulness(gt_rgb);
  r.delta_colorful = std::fabs(r.colorful_pred - r.colorful_gt);
  return r;
}

inline Evaluation evaluate(const std::vector<ImageF>& pred, const std::vector<ImageF>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("evaluate: unpaired views");
  if (pred.empty()) throw std::invalid_argument("evaluate: no views");
  Evaluation ev;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ev.views.push_back(evaluate_view(pred[i], gt[i]));
    const auto& r = ev.views.back();
    ev.mean.psnr += r.psnr;
    ev.mean.ssim += r.ssim;
    ev.mean.colorful_pred += r.colorful_pred;
    ev.mean.colorful_gt += r.colorful_gt;
    ev.mean.delta_colorful += r.delta_colorful;
  }
  const double n = static_cast<double>(pred.size());
  ev.mean.psnr /= n;
  ev.mean.ssim /= n;
  ev.mean.colorful_pred /= n;
  ev.mean.colorful_gt /= n;
  ev.mean.delta_colorful /= n;
  return ev;
}

inline std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline void write_tsv(std::ostream& os, const Evaluation& ev) {
  os << "view\tpsnr\tssim\tcolorful_pred\tcolorful_gt\tdelta_colorful\n";
  auto row = [&](const std::string& name, const MetricReport& r) {
    os << name << '\t' << format_number(r.psnr) << '\t' << format_number(r.ssim) << '\t'
       << format_number(r.colorful_pred) << '\t' << format_number(r.colorful_gt) << '\t'
       << format_number(r.delta_colorful) << '\n';
  };
  for (std::size_t i = 0; i < ev.views.size(); ++i) row(std::to_string(i), ev.views[i]);
  row("mean", ev.mean);
}

inline nlohmann::json to_json(const Evaluation& ev) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
  };
  auto obj = [&](const MetricReport& r) {
    return nlohmann::json{{"psnr", num(r.psnr)},
                          {"ssim", num(r.ssim)},
                          {"colorful_pred", num(r.colorful_pred)},
                          {"colorful_gt", num(r.colorful_gt)},
                          {"delta_colorful", num(r.delta_colorful)}};
  };
  nlohmann::json j;
  j["mean"] = obj(ev.mean);
  j["views"] = nlohmann::json::array();
  for (const auto& r : ev.views) j["views"].push_back(obj(r));
  return j;
}

} // namespace colornerf::metrics
