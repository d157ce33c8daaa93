// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#pragma once

// Depth sampling along rays: stratified coarse samples and inverse-CDF fine samples.

#include <algorithm>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "colornerf/camera.hpp"

namespace colornerf::render {

/// One depth per equal stratum of [t_near, t_far]; jitter[i] in [0, 1) places it inside stratum i.
inline std::vector<double> stratified_sample(const Ray& ray, int M, std::span<const double> jitter) {
  if (M < 1) throw std::invalid_argument("stratified_sample: M must be >= 1");
  if (static_cast<int>(jitter.size()) != M) throw std::invalid_argument("stratified_sample: jitter size != M");
  const double span = (ray.t_far - ray.t_near) / M;
  std::vector<double> t(static_cast<std::size_t>(M));
  for (int i = 0; i < M; ++i) t[static_cast<std::size_t>(i)] = ray.t_near + (i + jitter[static_cast<std::size_t>(i)]) * span;
  return t;
}

template <std::uniform_random_bit_generator Rng>
std::vector<double> stratified_sample(const Ray& ray, int M, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> jitter(static_cast<std::size_t>(std::max(M, 0)));
  for (auto& j : jitter) j = u(rng);
  return stratified_sample(ray, M, jitter);
}

/// Inverse-CDF sampling of the piecewise-constant density that puts mass weights[i] on
/// [coarse_t[i], coarse_t[i+1]) (the last interval ends at ray.t_far). quantiles in [0, 1].
/// All-zero weights fall back to uniform placement over [t_near, t_far].
inline std::vector<double> importance_sample(const Ray& ray, std::span<const double> coarse_t,
                                             std::span<const double> weights,
                                             std::span<const double> quantiles) {
  if (coarse_t.size() != weights.size()) throw std::invalid_argument("importance_sample: misaligned weights");
  const std::size_t n = weights.size();
  std::vector<double> edges(coarse_t.begin(), coarse_t.end());
  edges.push_back(ray.t_far);
  std::vector<double> cdf(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] < 0.0) throw std::invalid_argument("importance_sample: negative weight");
    cdf[i + 1] = cdf[i] + weights[i];
  }
  const double total = cdf[n];
  std::vector<double> out;
  out.reserve(quantiles.size());
  if (!(total > 0.0)) {
    for (double q : quantiles) out.push_back(ray.t_near + q * (ray.t_far - ray.t_near));
    return out;
  }
  for (double q : quantiles) {
    const double target = std::clamp(q, 0.0, 1.0) * total;
    // First interval whose cumulative upper bound exceeds the target; skips zero-mass intervals.
    auto it = std::upper_bound(cdf.begin() + 1, cdf.end(), target);
    std::size_t i = (it == cdf.end()) ? n - 1 : static_cast<std::size_t>(it - cdf.begin()) - 1;
    while (weights[i] <= 0.0 && i > 0) --i;  // q == 1 lands on the last non-empty interval
    const double frac = std::clamp((target - cdf[i]) / weights[i], 0.0, 1.0);
    out.push_back(edges[i] + frac * (edges[i + 1] - edges[i]));
  }
  return out;
}

/// Stratified quantiles (i + U) / M, so fine samples come out sorted.
template <std::uniform_random_bit_generator Rng>
std::vector<double> importance_sample(const Ray& ray, std::span<const double> coarse_t,
                                      std::span<const double> weights, int M_fine, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> q(static_cast<std::size_t>(std::max(M_fine, 0)));
  for (int i = 0; i < M_fine; ++i) q[static_cast<std::size_t>(i)] = (i + u(rng)) / M_fine;
  return importance_sample(ray, coarse_t, weights, q);
}

} // namespace colornerf::render
