// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "colornerf/color_space.hpp"

namespace colornerf::train {

/// Floor applied to predicted probabilities inside the log.
inline constexpr double kProbFloor = 1e-8;

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // same layout as the prediction
};

/// Sum of squared errors over the patch.
inline LossResult loss_photometric(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("loss_photometric: shape mismatch");
  LossResult r{0.0, std::vector<double>(pred.size())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - gt[i];
    r.loss += e * e;
    r.grad[i] = 2.0 * e;
  }
  return r;
}

/// KL(Z || Zhat) summed over pixels. `pred` is pixel-major with Q entries per pixel; only
/// bins in each label's support contribute.
inline LossResult loss_classification(std::span<const double> pred, std::span<const color::SoftLabel> labels, int Q) {
  if (Q < 1 || pred.size() != labels.size() * static_cast<std::size_t>(Q))
    throw std::invalid_argument("loss_classification: shape mismatch");
  LossResult r{0.0, std::vector<double>(pred.size(), 0.0)};
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const std::size_t base = p * static_cast<std::size_t>(Q);
    for (const auto& e : labels[p].entries) {
      if (e.bin < 0 || e.bin >= Q) throw std::invalid_argument("loss_classification: label bin out of range");
      if (e.weight <= 0.0) continue;
      const double zhat = pred[base + static_cast<std::size_t>(e.bin)];
      const double clamped = std::fmax(zhat, kProbFloor);
      r.loss += e.weight * (std::log(e.weight) - std::log(clamped));
      if (zhat > kProbFloor) r.grad[base + static_cast<std::size_t>(e.bin)] -= e.weight / zhat;
    }
  }
  return r;
}

} // namespace colornerf::train
