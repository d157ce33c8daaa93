// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace colornerf {

/// Interleaved multi-channel raster, row-major.
template <typename T>
class Image {
public:
  Image() = default;
  Image(int width, int height, int channels, T fill = T{})
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {
    if (width < 0 || height < 0 || channels < 1)
      throw std::invalid_argument("Image: invalid dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  T& at(int x, int y, int c = 0) {
    assert(x >= 0 && x < width_ && y >= 0 && y < height_ && c >= 0 && c < channels_);
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  const T& at(int x, int y, int c = 0) const {
    assert(x >= 0 && x < width_ && y >= 0 && y < height_ && c >= 0 && c < channels_);
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  bool same_shape(const Image& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  /// Bilinear lookup with integer coordinates at pixel centers; clamps at the border.
  double bilinear(double x, double y, int c = 0) const {
    x = std::clamp(x, 0.0, static_cast<double>(width_ - 1));
    y = std::clamp(y, 0.0, static_cast<double>(height_ - 1));
    const int x0 = std::min(static_cast<int>(std::floor(x)), std::max(width_ - 2, 0));
    const int y0 = std::min(static_cast<int>(std::floor(y)), std::max(height_ - 2, 0));
    const int x1 = std::min(x0 + 1, width_ - 1);
    const int y1 = std::min(y0 + 1, height_ - 1);
    const double fx = x - x0, fy = y - y0;
    const double top = (1 - fx) * at(x0, y0, c) + fx * at(x1, y0, c);
    const double bottom = (1 - fx) * at(x0, y1, c) + fx * at(x1, y1, c);
    return (1 - fy) * top + fy * bottom;
  }

  friend bool operator==(const Image&, const Image&) = default;

private:
  int width_ = 0, height_ = 0, channels_ = 1;
  std::vector<T> data_;
};

using ImageF = Image<float>;

} // namespace colornerf
