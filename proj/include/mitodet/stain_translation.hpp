// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "mitodet/checkpoint.hpp"
#include "mitodet/nn/layers.hpp"
#include "mitodet/random.hpp"
#include "mitodet/raster.hpp"

namespace mitodet {

/// Hyperparameters of the unpaired A -> B stain translation.
///
/// Defaults are the full-scale values: 1024 px patches, 200 epochs, Adam at
/// 2e-4 with beta1 0.5, cycle weight 10, pool of 50, and the reference
/// generator/discriminator widths. Desk-scale runs shrink the architecture.
struct TranslationConfig {
  int patch_size = 1024;
  int train_downscale = 1;  // 1 = train on full-size patches
  int epochs = 200;
  double learning_rate = 0.0002;
  double adam_beta1 = 0.5;
  double cycle_weight = 10.0;
  int image_pool_size = 50;
  int generator_channels = 64;
  int generator_downsamplings = 2;
  int generator_res_blocks = 9;
  int discriminator_channels = 64;
  int discriminator_layers = 3;
  bool identity_init = false;
  std::uint64_t seed = 0;

  void validate() const;
  int downsampling_factor() const { return 1 << generator_downsamplings; }
};

/// Residual encoder-decoder generator with a global skip:
///   G(x) = x + pointwise(x) + decoder(res_blocks(encoder(x)))
/// Output is unbounded; translate() clamps to [-1, 1]. With identity_init
/// the pointwise path, the decoder output layer and the second convolution
/// of every residual block start at zero, so G is exactly the identity.
class Generator {
 public:
  Generator() = default;
  Generator(const TranslationConfig& cfg, Rng& rng);

  nn::Var forward(const nn::Var& x) const;
  void collect(nn::ParamList& out, const std::string& prefix) const;
  int downsampling_factor() const { return 1 << static_cast<int>(down_.size()); }

 private:
  nn::Conv2d pointwise_;
  nn::Conv2d stem_;
  std::vector<nn::Conv2d> down_;
  std::vector<std::pair<nn::Conv2d, nn::Conv2d>> res_;
  std::vector<nn::Conv2d> up_;
  nn::Conv2d head_;
};

/// Patch discriminator: stride-2 LeakyReLU stack ending in a 1-channel map.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const TranslationConfig& cfg, Rng& rng);

  nn::Var forward(const nn::Var& x) const;
  void collect(nn::ParamList& out, const std::string& prefix) const;

 private:
  std::vector<nn::Conv2d> layers_;
  nn::Conv2d out_;
};

struct TranslationModel {
  TranslationConfig config;
  Generator g_ab;
  Generator g_ba;
  Discriminator d_a;
  Discriminator d_b;

  static TranslationModel create(const TranslationConfig& cfg);

  nn::ParamList generator_params() const;
  nn::ParamList discriminator_params() const;
  nn::ParamList all_params() const;

  Checkpoint to_checkpoint(const TrainingHistory& history, std::uint64_t epoch) const;
  static TranslationModel from_checkpoint(const Checkpoint& ckpt);
};

enum class Direction { kAtoB, kBtoA };

/// History of discriminator inputs. Once full, each query returns the new
/// image or (with probability 1/2) swaps it for a stored one. Capacity 0 or
/// 1 is a passthrough.
class ImagePool {
 public:
  explicit ImagePool(int capacity) : capacity_(capacity) {}
  std::vector<double> query(const std::vector<double>& image, Rng& rng);
  std::size_t size() const { return images_.size(); }

 private:
  int capacity_;
  std::vector<std::vector<double>> images_;
};

/// Planar [-1, 1] tensor from an 8-bit RGB raster and back.
std::vector<double> raster_to_planar(const Raster& r);
Raster planar_to_raster(std::span<const double> planar, int width, int height);

struct TranslationResult {
  TranslationModel model;
  /// Row 0 is measured before the first update; row k is the mean over epoch k.
  TrainingHistory history;
};

/// Columns: epoch, g_adv_ab, g_adv_ba, cycle, d_a, d_b.
TranslationResult train_translation(std::span<const Raster> domain_a, std::span<const Raster> domain_b,
                                    const TranslationConfig& cfg);

/// Inference. Throws std::invalid_argument naming the required divisor when
/// the patch dimensions are incompatible with the generator.
Raster translate(const Raster& patch, const TranslationModel& model, Direction direction = Direction::kAtoB);

/// Unclamped generator output on planar [-1, 1] values.
std::vector<double> translate_planar(std::span<const double> planar, int width, int height, const Generator& g);

/// mean over a of |G_ba(G_ab(a)) - a| plus mean over b of |G_ab(G_ba(b)) - b|,
/// each term the per-pixel mean absolute error, computed on raw (unclamped)
/// generator outputs.
double cycle_loss(std::span<const Raster> a_batch, std::span<const Raster> b_batch, const TranslationModel& model);

}  // namespace mitodet
