// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#pragma once

// Adam with lazy (sparse) updates: entries whose gradient is exactly zero this step keep
// their parameter and moment values. Bias correction uses the global step count.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "colornerf/errors.hpp"
#include "colornerf/field.hpp"

namespace colornerf::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments for one parameter array.
struct AdamMoments {
  std::vector<double> m, v;

  explicit AdamMoments(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
  std::size_t size() const { return m.size(); }
};

/// Updates params[i] for every i with a nonzero gradient. `step` is the 1-based global step.
inline void adam_update(std::span<double> params, std::span<const double> grads, AdamMoments& mom, double lr,
                        std::int64_t step, const AdamConfig& cfg = {}) {
  if (params.size() != grads.size() || params.size() != mom.size())
    throw std::invalid_argument("adam_update: shape mismatch");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    if (g == 0.0) continue;
    double& m = mom.m[i];
    double& v = mom.v[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    params[i] -= lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
  }
}

enum class ParamGroup { density, luminance, logits };

/// Optimizer state for the grids of one FieldParams.
class FieldOptimizer {
public:
  FieldOptimizer(const field::FieldParams& p, AdamConfig cfg = {})
      : cfg_(cfg), Q_(p.Q), density_(p.voxels()), luminance_(p.voxels()), logits_(p.logits.size()) {}

  std::int64_t step_count() const { return step_; }
  const AdamMoments& moments(ParamGroup g) const {
    return g == ParamGroup::density ? density_ : g == ParamGroup::luminance ? luminance_ : logits_;
  }

  /// One Adam step on the selected groups using the voxels touched in `grads`. Rejects the
  /// whole step, leaving everything unchanged, when any selected gradient is non-finite.
  void step(field::FieldParams& p, const field::GradBuffer& grads, double lr, std::span<const ParamGroup> groups) {
    if (!grads.compatible(p) || density_.size() != p.voxels() || logits_.size() != p.logits.size() || Q_ != p.Q)
      throw std::invalid_argument("FieldOptimizer: shape mismatch");
    const auto touched = grads.touched();
    const std::size_t Q = static_cast<std::size_t>(Q_);
    auto selected = [&](ParamGroup g) {
      for (auto s : groups)
        if (s == g) return true;
      return false;
    };
    for (int vi : touched) {
      const auto v = static_cast<std::size_t>(vi);
      bool ok = true;
      if (selected(ParamGroup::density)) ok = ok && std::isfinite(grads.density()[v]);
      if (selected(ParamGroup::luminance)) ok = ok && std::isfinite(grads.luminance()[v]);
      if (selected(ParamGroup::logits))
        for (std::size_t q = 0; q < Q; ++q) ok = ok && std::isfinite(grads.logits()[v * Q + q]);
      if (!ok) throw NonFiniteGradient("non-finite gradient at voxel " + std::to_string(vi) + "; step skipped");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    auto update = [&](double& param, double g, double& m, double& v) {
      if (g == 0.0) return;
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
      param -= lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps);
    };
    for (int vi : touched) {
      const auto v = static_cast<std::size_t>(vi);
      if (selected(ParamGroup::density)) update(p.density[v], grads.density()[v], density_.m[v], density_.v[v]);
      if (selected(ParamGroup::luminance))
        update(p.luminance[v], grads.luminance()[v], luminance_.m[v], luminance_.v[v]);
      if (selected(ParamGroup::logits))
        for (std::size_t q = v * Q; q < (v + 1) * Q; ++q)
          update(p.logits[q], grads.logits()[q], logits_.m[q], logits_.v[q]);
    }
  }

private:
  AdamConfig cfg_;
  int Q_ = 0;
  AdamMoments density_, luminance_, logits_;
  std::int64_t step_ = 0;
};

} // namespace colornerf::train
