// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mitodet/nn/layers.hpp"

namespace mitodet {

enum class Stage : std::uint32_t {
  kTranslation = 1,
  kDetector = 2,
  kClassifier = 3,
};

const char* stage_name(Stage s);

/// Column-named numeric table; one row per epoch or iteration.
struct TrainingHistory {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const;
  std::vector<double> series(const std::string& name) const;

  friend bool operator==(const TrainingHistory&, const TrainingHistory&) = default;
};

struct NamedTensor {
  std::string name;
  nn::Shape shape;
  std::vector<double> values;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Model parameters plus the metadata that must travel with them.
struct Checkpoint {
  Stage stage = Stage::kTranslation;
  std::string config_json;  // echo of the stage config, thresholds included
  std::uint64_t epoch = 0;
  TrainingHistory history;
  std::vector<NamedTensor> tensors;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kIo, kMagic, kChecksum, kVersion, kStage, kFormat };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container, little-endian host layout:
///   "MTDTCKPT" | u32 version | u32 stage | u64 epoch | str config |
///   history (u32 ncols, str*, u32 nrows, f64*) |
///   u32 ntensors, (str name, i32 c, i32 h, i32 w, f64*)* | u32 crc32
/// where str = u32 length + bytes and the CRC covers every preceding byte.
/// Written to a temporary file and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Verifies magic, checksum, version and (when given) the stage tag.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path, Stage expected);

std::vector<NamedTensor> export_params(const nn::ParamList& params);
/// Copies tensors into params by name; every param must be present with a
/// matching shape.
void import_params(const nn::ParamList& params, const std::vector<NamedTensor>& tensors);

/// 64-bit FNV-1a over parameter bytes; used for cache keys.
std::uint64_t params_fingerprint(const nn::ParamList& params);

}  // namespace mitodet
