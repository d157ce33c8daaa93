// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#pragma once

// Two-stage training: luminance and density from monochrome patches, then color logits from
// colorized, purified patches with the first-stage grids frozen.

#include <array>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "colornerf/color_space.hpp"
#include "colornerf/colorize.hpp"
#include "colornerf/field.hpp"
#include "colornerf/losses.hpp"
#include "colornerf/optimizer.hpp"
#include "colornerf/rendering.hpp"
#include "colornerf/scene.hpp"

namespace colornerf::train {

struct TrainConfig {
  int epochs = 30;
  int patches_per_epoch = 256;
  int K = 32;
  std::array<double, 2> lum_s_range{0.5, 1.0};
  std::array<double, 2> color_s_range{0.3, 0.7};
  double lr_lum = 5e-2;
  double lr_color = 1e-1;
  AdamConfig adam;
  std::uint64_t seed = 0;
  field::GridResolution resolution{32, 32, 32};
  field::FieldInit init;
  render::RenderOptions render;
  int base_count = 5;
  double base_scale = 0.7;
  double threshold = 0.80;
  int hist_bins = 32;
  int soft_k = 5;
  double soft_sigma = 5.0;
  int max_consecutive_failures = 20;
  int workers = 1;
  std::string checkpoint_path;  // empty: no periodic checkpoints
  int checkpoint_every = 0;     // epochs

  void validate() const {
    auto check_range = [](const std::array<double, 2>& r, const char* what) {
      if (!(r[0] > 0.0 && r[0] <= r[1] && r[1] <= 1.0))
        throw std::invalid_argument(std::string("TrainConfig: ") + what + " must satisfy 0 < min <= max <= 1");
    };
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (patches_per_epoch < 1) throw std::invalid_argument("TrainConfig: patches_per_epoch must be >= 1");
    if (K < 2 || K % 2 != 0) throw std::invalid_argument("TrainConfig: K must be even and >= 2");
    check_range(lum_s_range, "lum_s_range");
    check_range(color_s_range, "color_s_range");
    check_range({base_scale, base_scale}, "base_scale");
    if (!(lr_lum > 0.0) || !(lr_color > 0.0)) throw std::invalid_argument("TrainConfig: learning rates must be positive");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0))
      throw std::invalid_argument("TrainConfig: invalid Adam coefficients");
    if (base_count < 1) throw std::invalid_argument("TrainConfig: base_count must be >= 1");
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("TrainConfig: threshold must be in (0, 1)");
    if (hist_bins < 2) throw std::invalid_argument("TrainConfig: hist_bins must be >= 2");
    if (soft_k < 1 || !(soft_sigma > 0.0)) throw std::invalid_argument("TrainConfig: invalid soft-label parameters");
    if (render.coarse < 1 || render.fine < 0) throw std::invalid_argument("TrainConfig: invalid sample counts");
    if (max_consecutive_failures < 1) throw std::invalid_argument("TrainConfig: max_consecutive_failures must be >= 1");
  }
};

struct EpochStats {
  int epoch = 0;
  std::int64_t step = 0;
  double loss = 0.0;  // mean over kept patches
  int kept = 0;
  int rejected = 0;   // purification rejections plus failed queries
  int failed = 0;
};

struct TrainResult {
  field::FieldParams params;
  std::vector<EpochStats> epochs;
};

inline void write_log_header(std::ostream& os) { os << "epoch,step,loss,kept,rejected\n"; }

inline void write_log_line(std::ostream& os, const EpochStats& e) {
  os << e.epoch << ',' << e.step << ',' << e.loss << ',' << e.kept << ',' << e.rejected << '\n' << std::flush;
}

namespace detail {

inline void validate_dataset(const scene::MultiViewDataset& ds) {
  if (ds.views.size() < 2) throw std::invalid_argument("training needs at least 2 posed views");
  for (const auto& v : ds.views) {
    v.camera.validate();
    if (v.L.width() != v.camera.width || v.L.height() != v.camera.height)
      throw std::invalid_argument("training: view images do not match their camera");
  }
}

template <std::uniform_random_bit_generator Rng>
std::pair<int, render::PatchRays> draw_patch(const scene::MultiViewDataset& ds, const field::FieldParams& f, int K,
                                             const std::array<double, 2>& s_range, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(ds.views.size()) - 1);
  std::uniform_real_distribution<double> us(s_range[0], s_range[1]);
  const int view = pick(rng);
  const double s = us(rng);
  const auto& cam = ds.views[static_cast<std::size_t>(view)].camera;
  return {view, render::sample_patch_rays(cam, colorize::random_patch(cam, K, s, rng), f.bbox)};
}

inline void maybe_checkpoint(const TrainConfig& cfg, const field::FieldParams& f, int epoch) {
  if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
    field::save_field(f, cfg.checkpoint_path);
}

} // namespace detail

/// Fits density and luminance to the dataset's L planes, starting from `params`.
inline TrainResult train_luminance(field::FieldParams params, const scene::MultiViewDataset& ds,
                                   const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  detail::validate_dataset(ds);
  std::mt19937_64 rng(cfg.seed);
  FieldOptimizer opt(params, cfg.adam);
  field::GradBuffer grads(params);
  auto ropt = cfg.render;
  ropt.luminance = true;
  ropt.color = false;
  const std::array groups{ParamGroup::density, ParamGroup::luminance};
  const render::GradMask mask{true, true, false};

  TrainResult result;
  if (log) write_log_header(*log);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats stats{epoch};
    double total = 0.0;
    for (int i = 0; i < cfg.patches_per_epoch; ++i) {
      const auto [view, rays] = detail::draw_patch(ds, params, cfg.K, cfg.lum_s_range, rng);
      const auto patch = render::render_patch(params, rays, ropt, rng, cfg.workers);
      const auto& gt_img = ds.views[static_cast<std::size_t>(view)].L;
      std::vector<double> gt(rays.pixels.size());
      for (std::size_t p = 0; p < gt.size(); ++p) gt[p] = gt_img.bilinear(rays.pixels[p][0], rays.pixels[p][1], 0);
      const auto loss = loss_photometric(patch.L, gt);
      for (std::size_t p = 0; p < patch.records.size(); ++p)
        render::render_backward(params, patch.records[p], {loss.grad[p], {}}, grads, mask);
      opt.step(params, grads, cfg.lr_lum, groups);
      grads.zero();
      total += loss.loss;
      ++stats.kept;
    }
    stats.step = opt.step_count();
    stats.loss = total / stats.kept;
    if (log) write_log_line(*log, stats);
    result.epochs.push_back(stats);
    detail::maybe_checkpoint(cfg, params, epoch);
  }
  result.params = std::move(params);
  return result;
}

inline TrainResult train_luminance(const scene::MultiViewDataset& ds, int Q, const TrainConfig& cfg,
                                   std::ostream* log = nullptr) {
  return train_luminance(field::init_field(ds.bbox, cfg.resolution, Q, cfg.init), ds, cfg, log);
}

/// Trains only the color logits on top of a first-stage field. Density and luminance grids
/// are returned bitwise unchanged.
inline TrainResult train_color(field::FieldParams params, const color::AbBinTable& table,
                               const scene::MultiViewDataset& ds, colorize::Colorizer& colorizer,
                               const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  detail::validate_dataset(ds);
  if (table.size() != params.Q) throw std::invalid_argument("train_color: table size does not match field Q");
  if (cfg.soft_k > table.size()) throw std::invalid_argument("train_color: soft_k exceeds the table size");
  const auto frozen_density = params.density;
  const auto frozen_luminance = params.luminance;

  std::mt19937_64 rng(cfg.seed);
  FieldOptimizer opt(params, cfg.adam);
  field::GradBuffer grads(params);
  auto ropt = cfg.render;
  ropt.luminance = true;
  ropt.color = false;
  const std::array groups{ParamGroup::logits};
  const render::GradMask mask{false, false, true};

  TrainResult result;
  if (log) write_log_header(*log);
  if (cfg.epochs == 0) {
    result.params = std::move(params);
    return result;
  }

  colorize::BaseSetConfig bcfg;
  bcfg.count = cfg.base_count;
  bcfg.scale = cfg.base_scale;
  bcfg.threshold = cfg.threshold;
  bcfg.bins = cfg.hist_bins;
  bcfg.K = cfg.K;
  const auto base = colorize::build_base_set(params, colorizer, ds, bcfg, ropt, rng, cfg.workers);

  int query = cfg.base_count;
  int consecutive_failures = 0;
  std::vector<color::SoftLabel> labels;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochStats stats{epoch};
    double total = 0.0;
    for (int i = 0; i < cfg.patches_per_epoch; ++i) {
      const auto [view, rays] = detail::draw_patch(ds, params, cfg.K, cfg.color_s_range, rng);
      // Color is integrated only for patches that survive purification.
      auto patch = render::render_patch(params, rays, ropt, rng, cfg.workers);
      std::optional<colorize::AbPatch> colored;
      try {
        colored = colorizer.colorize({cfg.K, cfg.K, patch.L, view, rays.pixels, query++});
        consecutive_failures = 0;
      } catch (const ColorizerError& e) {
        ++stats.failed;
        ++stats.rejected;
        if (++consecutive_failures >= cfg.max_consecutive_failures)
          throw ColorizerUnavailable(std::string("colorizer failed ") + std::to_string(consecutive_failures) +
                                     " times in a row; last error: " + e.what());
        continue;
      }
      const auto kept = colorize::purify(std::move(*colored), base);
      if (!kept) {
        ++stats.rejected;
        continue;
      }
      render::add_patch_color(params, patch, ropt, cfg.workers);
      labels.resize(kept->pixel_count());
      for (std::size_t p = 0; p < labels.size(); ++p)
        labels[p] = color::soft_label(kept->at(p), table, cfg.soft_k, cfg.soft_sigma);
      const auto loss = loss_classification(patch.dist, labels, params.Q);
      const auto Q = static_cast<std::size_t>(params.Q);
      for (std::size_t p = 0; p < patch.records.size(); ++p) {
        const std::span<const double> d_dist(loss.grad.data() + p * Q, Q);
        render::render_backward(params, patch.records[p], {0.0, d_dist}, grads, mask);
      }
      opt.step(params, grads, cfg.lr_color, groups);
      grads.zero();
      total += loss.loss;
      ++stats.kept;
    }
    stats.step = opt.step_count();
    stats.loss = stats.kept > 0 ? total / stats.kept : 0.0;
    if (log) write_log_line(*log, stats);
    result.epochs.push_back(stats);
    detail::maybe_checkpoint(cfg, params, epoch);
  }
  if (params.density != frozen_density || params.luminance != frozen_luminance)
    throw std::logic_error("train_color modified a frozen grid");
  result.params = std::move(params);
  return result;
}

} // namespace colornerf::train
