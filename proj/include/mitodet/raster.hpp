// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mitodet {

/// 8-bit RGB image, row-major, channels interleaved.
class Raster {
 public:
  static constexpr int kChannels = 3;

  Raster() = default;
  Raster(int width, int height, std::uint8_t fill = 0);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }

  std::uint8_t& at(int x, int y, int c) {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }

  std::vector<std::uint8_t>& pixels() { return pixels_; }
  const std::vector<std::uint8_t>& pixels() const { return pixels_; }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Reflect an out-of-range index back into [0, n) without repeating the
/// edge sample (… 2 1 | 0 1 2 … n-1 | n-2 …). Works for any overrun.
int reflect_index(long i, int n);

/// Copy of the w×h window whose top-left corner is (x0, y0). Pixels outside
/// the source are mirror-reflected.
Raster crop_reflect(const Raster& src, long x0, long y0, int w, int h);

/// Writes `patch` into `dst` with its top-left corner at (x0, y0). Parts
/// falling outside `dst` are dropped.
void paste(Raster& dst, const Raster& patch, long x0, long y0);

/// Top-bottom mirror.
Raster flip_vertical(const Raster& src);
/// Left-right mirror.
Raster flip_horizontal(const Raster& src);
/// Counter-clockwise rotation by quarter_turns × 90°.
Raster rotate90(const Raster& src, int quarter_turns);

/// Rec. 601 luma in [0, 255].
double luminance(const Raster& r, int x, int y);

/// Bilinear resampling (pixel-center aligned).
Raster resize_bilinear(const Raster& src, int width, int height);

Raster read_image(const std::filesystem::path& path);
/// Writes PNG (or binary PPM when the extension is .ppm).
void write_image(const Raster& r, const std::filesystem::path& path);

}  // namespace mitodet
