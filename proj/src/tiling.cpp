// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mitodet/tiling.hpp"

#include <stdexcept>
#include <string>

namespace mitodet {

std::vector<long> axis_positions(long extent, int tile_size, int stride) {
  if (extent <= 0) throw std::invalid_argument("tiling: extent must be positive");
  if (tile_size <= 0) throw std::invalid_argument("tiling: tile size must be positive");
  if (stride <= 0 || stride > tile_size) {
    throw std::invalid_argument("tiling: stride must satisfy 0 < stride <= tile size, got " +
                                std::to_string(stride));
  }
  if (extent < tile_size) return {-((tile_size - extent) / 2)};
  std::vector<long> pos;
  for (long p = 0; p + tile_size < extent; p += stride) pos.push_back(p);
  const long last = extent - tile_size;
  if (pos.empty() || pos.back() != last) pos.push_back(last);
  return pos;
}

TileGrid build_grid(Extent extent, int tile_size, int stride) {
  const auto xs = axis_positions(extent.width, tile_size, stride);
  const auto ys = axis_positions(extent.height, tile_size, stride);
  TileGrid grid{extent, tile_size, stride, {}};
  grid.tiles.reserve(xs.size() * ys.size());
  for (long y : ys)
    for (long x : xs) grid.tiles.push_back(TileSpec{{x, y}, tile_size, 0});
  return grid;
}

namespace {

bool axis_ok(long origin, int size, long extent) {
  if (extent >= size) return origin >= 0 && origin + size <= extent;
  return origin <= 0 && origin + size >= extent;
}

}  // namespace

bool tile_within_padded_extent(const TileSpec& spec, Extent extent) {
  return spec.size > 0 && axis_ok(spec.origin.x, spec.size, extent.width) &&
         axis_ok(spec.origin.y, spec.size, extent.height);
}

Raster extract_tile(const Raster& image, const TileSpec& spec) {
  const Extent extent{image.width(), image.height()};
  if (image.empty() || !tile_within_padded_extent(spec, extent)) {
    throw std::out_of_range("extract_tile: tile at (" + std::to_string(spec.origin.x) + "," +
                            std::to_string(spec.origin.y) + ") size " + std::to_string(spec.size) +
                            " lies outside the padded " + std::to_string(extent.width) + "x" +
                            std::to_string(extent.height) + " slide");
  }
  return crop_reflect(image, spec.origin.x, spec.origin.y, spec.size, spec.size);
}

double tissue_fraction(const Raster& tile, double background_level) {
  if (tile.empty()) throw std::invalid_argument("tissue_fraction: empty tile");
  const double cutoff = background_level * 255.0;
  std::size_t dark = 0;
  for (int y = 0; y < tile.height(); ++y)
    for (int x = 0; x < tile.width(); ++x)
      if (luminance(tile, x, y) < cutoff) ++dark;
  return static_cast<double>(dark) / (static_cast<double>(tile.width()) * tile.height());
}

std::vector<TileSpec> split_to_detection_tiles(const TileSpec& parent, int det_tile, int det_stride) {
  if (det_tile > parent.size) throw std::invalid_argument("split_to_detection_tiles: child tile larger than parent");
  const auto local = build_grid({parent.size, parent.size}, det_tile, det_stride);
  std::vector<TileSpec> children;
  children.reserve(local.tiles.size());
  for (const auto& t : local.tiles) {
    children.push_back(TileSpec{{parent.origin.x + t.origin.x, parent.origin.y + t.origin.y}, det_tile, parent.level});
  }
  return children;
}

}  // namespace mitodet
