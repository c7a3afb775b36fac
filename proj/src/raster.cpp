// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mitodet/raster.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>

namespace mitodet {

Raster::Raster(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw std::invalid_argument("Raster: negative dimensions");
  pixels_.assign(static_cast<std::size_t>(width) * height * kChannels, fill);
}

int reflect_index(long i, int n) {
  if (n <= 0) throw std::invalid_argument("reflect_index: empty axis");
  if (n == 1) return 0;
  const long period = 2L * (n - 1);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<int>(m < n ? m : period - m);
}

Raster crop_reflect(const Raster& src, long x0, long y0, int w, int h) {
  if (src.empty()) throw std::invalid_argument("crop_reflect: empty source raster");
  Raster out(w, h);
  for (int y = 0; y < h; ++y) {
    const int sy = reflect_index(y0 + y, src.height());
    for (int x = 0; x < w; ++x) {
      const int sx = reflect_index(x0 + x, src.width());
      for (int c = 0; c < Raster::kChannels; ++c) out.at(x, y, c) = src.at(sx, sy, c);
    }
  }
  return out;
}

void paste(Raster& dst, const Raster& patch, long x0, long y0) {
  for (int y = 0; y < patch.height(); ++y) {
    const long dy = y0 + y;
    if (dy < 0 || dy >= dst.height()) continue;
    for (int x = 0; x < patch.width(); ++x) {
      const long dx = x0 + x;
      if (dx < 0 || dx >= dst.width()) continue;
      for (int c = 0; c < Raster::kChannels; ++c)
        dst.at(static_cast<int>(dx), static_cast<int>(dy), c) = patch.at(x, y, c);
    }
  }
}

Raster flip_vertical(const Raster& src) {
  Raster out(src.width(), src.height());
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int c = 0; c < Raster::kChannels; ++c)
        out.at(x, y, c) = src.at(x, src.height() - 1 - y, c);
  return out;
}

Raster flip_horizontal(const Raster& src) {
  Raster out(src.width(), src.height());
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int c = 0; c < Raster::kChannels; ++c)
        out.at(x, y, c) = src.at(src.width() - 1 - x, y, c);
  return out;
}

Raster rotate90(const Raster& src, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return src;
  const int w = src.width();
  const int h = src.height();
  Raster out = (k == 2) ? Raster(w, h) : Raster(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int ox = 0;
      int oy = 0;
      switch (k) {
        case 1: ox = y; oy = w - 1 - x; break;
        case 2: ox = w - 1 - x; oy = h - 1 - y; break;
        default: ox = h - 1 - y; oy = x; break;
      }
      for (int c = 0; c < Raster::kChannels; ++c) out.at(ox, oy, c) = src.at(x, y, c);
    }
  }
  return out;
}

double luminance(const Raster& r, int x, int y) {
  return 0.299 * r.at(x, y, 0) + 0.587 * r.at(x, y, 1) + 0.114 * r.at(x, y, 2);
}

Raster resize_bilinear(const Raster& src, int width, int height) {
  if (src.empty() || width <= 0 || height <= 0) throw std::invalid_argument("resize_bilinear: empty geometry");
  if (width == src.width() && height == src.height()) return src;
  Raster out(width, height);
  const double sx = static_cast<double>(src.width()) / width;
  const double sy = static_cast<double>(src.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double tx = fx - x0;
      for (int c = 0; c < Raster::kChannels; ++c) {
        const double v = (1 - ty) * ((1 - tx) * src.at(x0, y0, c) + tx * src.at(x1, y0, c)) +
                         ty * ((1 - tx) * src.at(x0, y1, c) + tx * src.at(x1, y1, c));
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

bool has_ppm_extension(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ppm";
}

Raster read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) {
    throw std::runtime_error("unsupported PPM (need binary P6, maxval 255): " + path.string());
  }
  in.get();
  Raster r(w, h);
  in.read(reinterpret_cast<char*>(r.pixels().data()), static_cast<std::streamsize>(r.pixels().size()));
  if (!in) throw std::runtime_error("truncated PPM: " + path.string());
  return r;
}

void write_ppm(const Raster& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path.string());
  out << "P6\n" << r.width() << ' ' << r.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.pixels().data()), static_cast<std::streamsize>(r.pixels().size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

Raster read_image(const std::filesystem::path& path) {
  if (has_ppm_extension(path)) return read_ppm(path);

  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  Raster r(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, r.pixels().data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return r;
}

void write_image(const Raster& r, const std::filesystem::path& path) {
  if (has_ppm_extension(path)) {
    write_ppm(r, path);
    return;
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(r.width());
  image.height = static_cast<png_uint_32>(r.height());
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, r.pixels().data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + image.message);
  }
}

}  // namespace mitodet
