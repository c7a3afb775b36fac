// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "mitodet/geometry.hpp"
#include "mitodet/raster.hpp"

namespace mitodet {

struct Extent {
  long width = 0;
  long height = 0;

  friend bool operator==(const Extent&, const Extent&) = default;
};

/// A square patch placed in slide coordinates (pyramid level 0).
///
/// `origin` is the slide-frame position of the tile's top-left pixel. It is
/// negative only on an axis where the slide is smaller than the tile; the
/// tile then straddles the slide centrally and the overhang is mirror-filled.
struct TileSpec {
  PixelIndex origin;
  int size = 0;
  int level = 0;

  /// Tile frame -> slide frame.
  FrameTransform transform() const { return {{static_cast<double>(origin.x), static_cast<double>(origin.y)}, 1.0}; }

  friend bool operator==(const TileSpec&, const TileSpec&) = default;
};

struct TileGrid {
  Extent slide_extent;
  int tile_size = 0;
  int stride = 0;
  std::vector<TileSpec> tiles;  // row-major
};

/// Positions along one axis: stride steps, with the final tile shifted inward
/// so that it ends exactly at the extent. When extent < tile the single tile
/// is centred on the axis (negative origin, mirror-padded on extraction).
std::vector<long> axis_positions(long extent, int tile_size, int stride);

/// Throws std::invalid_argument on non-positive extent/tile/stride or on
/// stride > tile_size (which would leave gaps).
TileGrid build_grid(Extent extent, int tile_size, int stride);

/// True when the tile lies inside the padded slide extent for its size.
bool tile_within_padded_extent(const TileSpec& spec, Extent extent);

/// Exact pixel copy of the tile. Mirror padding only fills the overhang of a
/// tile that is larger than the slide. Throws std::out_of_range for a tile
/// outside the padded extent.
Raster extract_tile(const Raster& image, const TileSpec& spec);

/// Fraction of pixels darker than `background_level` × 255 in luma.
double tissue_fraction(const Raster& tile, double background_level = 0.85);

/// Children of `parent` (slide frame), laid out over the parent with the
/// same inward-shift rule.
std::vector<TileSpec> split_to_detection_tiles(const TileSpec& parent, int det_tile, int det_stride);

}  // namespace mitodet
