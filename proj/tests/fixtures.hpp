// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mitodet/classification.hpp"
#include "mitodet/config.hpp"
#include "mitodet/data_io.hpp"
#include "mitodet/detection.hpp"
#include "mitodet/pipeline.hpp"

namespace mitodet::fixture {

/// Unique scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct Domains {
  std::vector<Raster> a;  // XR / S360 / CS2 regimes
  std::vector<Raster> b;  // GT450 regime
};

/// `per_domain` square patches per domain, one mitosis each.
Domains two_domains(int per_domain, int size, std::uint64_t seed);

struct BlobTiles {
  std::vector<DetectorSample> samples;
  std::vector<std::vector<Point>> centers;  // tile frame, per sample
};

/// `count` tiles of `size`², each with 0-2 mitosis blobs (no rings).
BlobTiles blob_tiles(int count, int size, std::uint64_t seed);

/// Dark-blob (mitosis) and ring (non-mitosis) crops, alternating labels.
std::vector<LabeledCrop> blob_ring_crops(int count, int crop_size, std::uint64_t seed);

std::vector<Annotation> annotations_for(const std::string& slide_id, const std::vector<SynthObject>& objects);

struct TrainedModels {
  PipelineConfig config;
  PipelineModels models;
};

/// Trains all three stages at desk scale on freshly rendered slides:
/// translation on A/B patches, then detector and classifier on the
/// translated training slides.
TrainedModels train_models(std::uint64_t seed, int translation_epochs = 5);

}  // namespace mitodet::fixture
