// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

#pragma once

// 8-bit PNG and raw little-endian float32 plane I/O.

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "colornerf/errors.hpp"
#include "colornerf/image.hpp"

namespace colornerf::io {

/// Writes a 1- or 3-channel image in [0, 1] as 8-bit PNG (values rounded, clamped).
inline void write_png(const std::string& path, const ImageF& img) {
  if (img.channels() != 1 && img.channels() != 3) throw IoError("write_png: need 1 or 3 channels");
  std::vector<std::uint8_t> bytes(img.data().size());
  std::transform(img.data().begin(), img.data().end(), bytes.begin(), [](float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0));
  });
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path + ": " + image.message);
}

/// Reads any PNG as 3-channel RGB in [0, 1].
inline ImageF read_png_rgb(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot read PNG " + path + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path + ": " + image.message);
  }
  ImageF img(static_cast<int>(image.width), static_cast<int>(image.height), 3);
  std::transform(bytes.begin(), bytes.end(), img.data().begin(),
                 [](std::uint8_t b) { return static_cast<float>(b / 255.0); });
  return img;
}

/// Raw little-endian float32, row-major, channels interleaved.
inline void write_f32(const std::string& path, const ImageF& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (float v : img.data()) {
    auto bytes = std::bit_cast<std::array<char, 4>>(v);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), 4);
  }
  if (!out) throw IoError("write failed: " + path);
}

inline ImageF read_f32(const std::string& path, int width, int height, int channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ImageF img(width, height, channels);
  if (bytes.size() != img.data().size() * 4) throw IoError("unexpected size for float plane " + path);
  for (std::size_t i = 0; i < img.data().size(); ++i) {
    std::array<char, 4> b;
    std::memcpy(b.data(), bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    img.data()[i] = std::bit_cast<float>(b);
  }
  return img;
}

} // namespace colornerf::io
