// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mitodet/stain_translation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mitodet/config.hpp"
#include "mitodet/nn/optim.hpp"

namespace mitodet {

using nn::Conv2d;
using nn::ConvSpec;
using nn::Init;
using nn::Var;

void TranslationConfig::validate() const {
  if (patch_size <= 0 || epochs <= 0 || image_pool_size < 0 || train_downscale <= 0) {
    throw std::invalid_argument("TranslationConfig: counts must be positive");
  }
  if (!(learning_rate > 0)) throw std::invalid_argument("TranslationConfig: learning_rate must be positive");
  if (cycle_weight < 0) throw std::invalid_argument("TranslationConfig: cycle_weight must be non-negative");
  if (generator_channels <= 0 || generator_downsamplings < 0 || generator_res_blocks < 0 ||
      discriminator_channels <= 0 || discriminator_layers <= 0) {
    throw std::invalid_argument("TranslationConfig: invalid architecture");
  }
  if ((patch_size / train_downscale) % downsampling_factor() != 0) {
    throw std::invalid_argument("TranslationConfig: training patch size must be divisible by " +
                                std::to_string(downsampling_factor()));
  }
}

Generator::Generator(const TranslationConfig& cfg, Rng& rng) {
  const bool ident = cfg.identity_init;
  const Init relu_init = Init::kHeUniform;
  // Small output layers start G near (not at) the identity. With He-scaled
  // outputs the first fakes are noise, the discriminators saturate within a
  // few epochs and G settles on a cycle-consistent colour encoding instead.
  const Init last_init = ident ? Init::kZero : Init::kNormal002;
  const int c0 = cfg.generator_channels;
  pointwise_ = Conv2d(3, 3, ConvSpec{1, 1, 0}, rng, last_init);
  stem_ = Conv2d(3, c0, ConvSpec{3, 1, 0}, rng, relu_init);
  int c = c0;
  for (int i = 0; i < cfg.generator_downsamplings; ++i) {
    down_.emplace_back(c, 2 * c, ConvSpec{3, 2, 1}, rng, relu_init);
    c *= 2;
  }
  for (int i = 0; i < cfg.generator_res_blocks; ++i) {
    Conv2d a(c, c, ConvSpec{3, 1, 0}, rng, relu_init);
    Conv2d b(c, c, ConvSpec{3, 1, 0}, rng, ident ? Init::kZero : Init::kSmall);
    res_.emplace_back(std::move(a), std::move(b));
  }
  for (int i = 0; i < cfg.generator_downsamplings; ++i) {
    up_.emplace_back(c, c / 2, ConvSpec{3, 1, 0}, rng, relu_init);
    c /= 2;
  }
  head_ = Conv2d(c, 3, ConvSpec{3, 1, 0}, rng, last_init);
}

namespace {

// Stride-1 generator convolutions see mirrored borders, which keeps
// independently translated tiles from developing bright edge seams.
Var padded(const nn::Conv2d& conv, const Var& x) { return conv(nn::reflect_pad(x, 1)); }

}  // namespace

Var Generator::forward(const Var& x) const {
  Var h = nn::relu(padded(stem_, x));
  for (const auto& d : down_) h = nn::relu(d(h));
  for (const auto& [a, b] : res_) h = nn::add(h, padded(b, nn::relu(padded(a, h))));
  for (const auto& u : up_) h = nn::relu(padded(u, nn::upsample2x(h)));
  return nn::add(nn::add(x, pointwise_(x)), padded(head_, h));
}

void Generator::collect(nn::ParamList& out, const std::string& prefix) const {
  pointwise_.collect(out, prefix + ".pointwise");
  stem_.collect(out, prefix + ".stem");
  for (std::size_t i = 0; i < down_.size(); ++i) down_[i].collect(out, prefix + ".down" + std::to_string(i));
  for (std::size_t i = 0; i < res_.size(); ++i) {
    res_[i].first.collect(out, prefix + ".res" + std::to_string(i) + ".a");
    res_[i].second.collect(out, prefix + ".res" + std::to_string(i) + ".b");
  }
  for (std::size_t i = 0; i < up_.size(); ++i) up_[i].collect(out, prefix + ".up" + std::to_string(i));
  head_.collect(out, prefix + ".head");
}

Discriminator::Discriminator(const TranslationConfig& cfg, Rng& rng) {
  int in = 3;
  int c = cfg.discriminator_channels;
  for (int i = 0; i < cfg.discriminator_layers; ++i) {
    layers_.emplace_back(in, c, ConvSpec{3, 2, 1}, rng, Init::kNormal002);
    in = c;
    c *= 2;
  }
  out_ = Conv2d(in, 1, ConvSpec{3, 1, 1}, rng, Init::kNormal002);
}

Var Discriminator::forward(const Var& x) const {
  Var h = x;
  for (const auto& l : layers_) h = nn::leaky_relu(l(h), 0.2);
  return out_(h);
}

void Discriminator::collect(nn::ParamList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + ".conv" + std::to_string(i));
  out_.collect(out, prefix + ".out");
}

TranslationModel TranslationModel::create(const TranslationConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  TranslationModel m;
  m.config = cfg;
  m.g_ab = Generator(cfg, rng);
  m.g_ba = Generator(cfg, rng);
  m.d_a = Discriminator(cfg, rng);
  m.d_b = Discriminator(cfg, rng);
  return m;
}

nn::ParamList TranslationModel::generator_params() const {
  nn::ParamList p;
  g_ab.collect(p, "g_ab");
  g_ba.collect(p, "g_ba");
  return p;
}

nn::ParamList TranslationModel::discriminator_params() const {
  nn::ParamList p;
  d_a.collect(p, "d_a");
  d_b.collect(p, "d_b");
  return p;
}

nn::ParamList TranslationModel::all_params() const {
  auto p = generator_params();
  auto d = discriminator_params();
  p.insert(p.end(), d.begin(), d.end());
  return p;
}

Checkpoint TranslationModel::to_checkpoint(const TrainingHistory& history, std::uint64_t epoch) const {
  Checkpoint ck;
  ck.stage = Stage::kTranslation;
  ck.config_json = to_json_string(config);
  ck.epoch = epoch;
  ck.history = history;
  ck.tensors = export_params(all_params());
  return ck;
}

TranslationModel TranslationModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.stage != Stage::kTranslation) {
    throw CheckpointError(CheckpointError::Kind::kStage, "expected a translation checkpoint");
  }
  auto m = create(translation_config_from_json(ckpt.config_json));
  import_params(m.all_params(), ckpt.tensors);
  return m;
}

std::vector<double> ImagePool::query(const std::vector<double>& image, Rng& rng) {
  if (capacity_ <= 1) return image;
  if (static_cast<int>(images_.size()) < capacity_) {
    images_.push_back(image);
    return image;
  }
  if (rng.uniform() > 0.5) {
    const auto idx = static_cast<std::size_t>(rng.below(images_.size()));
    auto old = std::move(images_[idx]);
    images_[idx] = image;
    return old;
  }
  return image;
}

std::vector<double> raster_to_planar(const Raster& r) {
  const std::size_t plane = static_cast<std::size_t>(r.width()) * r.height();
  std::vector<double> out(plane * 3);
  for (int y = 0; y < r.height(); ++y)
    for (int x = 0; x < r.width(); ++x)
      for (int c = 0; c < 3; ++c)
        out[c * plane + static_cast<std::size_t>(y) * r.width() + x] = r.at(x, y, c) / 127.5 - 1.0;
  return out;
}

Raster planar_to_raster(std::span<const double> planar, int width, int height) {
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  if (planar.size() != plane * 3) throw std::invalid_argument("planar_to_raster: size mismatch");
  Raster r(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(planar[c * plane + static_cast<std::size_t>(y) * width + x], -1.0, 1.0);
        r.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor((v + 1.0) * 127.5 + 0.5), 0.0, 255.0));
      }
  return r;
}

namespace {

Var planar_var(const std::vector<double>& planar, int w, int h) {
  return nn::constant({3, h, w}, planar);
}

void check_divisible(int width, int height, int divisor) {
  if (width <= 0 || height <= 0 || width % divisor != 0 || height % divisor != 0) {
    throw std::invalid_argument("translate: patch " + std::to_string(width) + "x" + std::to_string(height) +
                                " must have both sides divisible by " + std::to_string(divisor));
  }
}

struct PreparedDomain {
  std::vector<std::vector<double>> planes;
  int size = 0;
};

PreparedDomain prepare(std::span<const Raster> patches, const TranslationConfig& cfg, const char* name) {
  if (patches.empty()) throw std::invalid_argument(std::string("train_translation: domain ") + name + " is empty");
  PreparedDomain d;
  d.size = cfg.patch_size / cfg.train_downscale;
  for (const auto& p : patches) {
    if (p.width() != cfg.patch_size || p.height() != cfg.patch_size) {
      throw std::invalid_argument(std::string("train_translation: domain ") + name + " patch is " +
                                  std::to_string(p.width()) + "x" + std::to_string(p.height()) + ", expected " +
                                  std::to_string(cfg.patch_size));
    }
    d.planes.push_back(raster_to_planar(cfg.train_downscale == 1 ? p : resize_bilinear(p, d.size, d.size)));
  }
  return d;
}

}  // namespace

std::vector<double> translate_planar(std::span<const double> planar, int width, int height, const Generator& g) {
  check_divisible(width, height, g.downsampling_factor());
  nn::NoGradGuard guard;
  auto x = nn::constant({3, height, width}, std::vector<double>(planar.begin(), planar.end()));
  return g.forward(x)->value;
}

Raster translate(const Raster& patch, const TranslationModel& model, Direction direction) {
  const Generator& g = direction == Direction::kAtoB ? model.g_ab : model.g_ba;
  check_divisible(patch.width(), patch.height(), g.downsampling_factor());
  const auto out = translate_planar(raster_to_planar(patch), patch.width(), patch.height(), g);
  return planar_to_raster(out, patch.width(), patch.height());
}

double cycle_loss(std::span<const Raster> a_batch, std::span<const Raster> b_batch, const TranslationModel& model) {
  if (a_batch.empty() || b_batch.empty()) throw std::invalid_argument("cycle_loss: batches must be non-empty");
  nn::NoGradGuard guard;
  auto term = [](std::span<const Raster> batch, const Generator& fwd, const Generator& back) {
    double acc = 0.0;
    for (const auto& r : batch) {
      check_divisible(r.width(), r.height(), fwd.downsampling_factor());
      auto x = planar_var(raster_to_planar(r), r.width(), r.height());
      acc += nn::l1_mean(back.forward(fwd.forward(x)), x)->item();
    }
    return acc / static_cast<double>(batch.size());
  };
  return term(a_batch, model.g_ab, model.g_ba) + term(b_batch, model.g_ba, model.g_ab);
}

TranslationResult train_translation(std::span<const Raster> domain_a, std::span<const Raster> domain_b,
                                    const TranslationConfig& cfg) {
  cfg.validate();
  const auto a = prepare(domain_a, cfg, "A");
  const auto b = prepare(domain_b, cfg, "B");
  const int s = a.size;

  TranslationResult result{TranslationModel::create(cfg), {}};
  auto& model = result.model;
  auto& hist = result.history;
  hist.columns = {"epoch", "g_adv_ab", "g_adv_ba", "cycle", "d_a", "d_b"};

  Rng rng(cfg.seed ^ 0x5DEECE66DULL);
  ImagePool pool_a(cfg.image_pool_size);
  ImagePool pool_b(cfg.image_pool_size);

  const auto gen_params = model.generator_params();
  const auto disc_params = model.discriminator_params();
  nn::Adam opt_g(gen_params, cfg.learning_rate, cfg.adam_beta1);
  nn::Adam opt_d(disc_params, cfg.learning_rate, cfg.adam_beta1);

  // Pre-training reference row over the whole dataset.
  {
    nn::NoGradGuard guard;
    double adv_ab = 0, adv_ba = 0, cyc_a = 0, cyc_b = 0;
    double da_real = 0, da_fake = 0, db_real = 0, db_fake = 0;
    for (const auto& p : a.planes) {
      auto x = planar_var(p, s, s);
      auto fake_b = model.g_ab.forward(x);
      adv_ab += nn::mse_to(model.d_b.forward(fake_b), 1.0)->item();
      cyc_a += nn::l1_mean(model.g_ba.forward(fake_b), x)->item();
      da_real += nn::mse_to(model.d_a.forward(x), 1.0)->item();
      db_fake += nn::mse_to(model.d_b.forward(fake_b), 0.0)->item();
    }
    for (const auto& p : b.planes) {
      auto y = planar_var(p, s, s);
      auto fake_a = model.g_ba.forward(y);
      adv_ba += nn::mse_to(model.d_a.forward(fake_a), 1.0)->item();
      cyc_b += nn::l1_mean(model.g_ab.forward(fake_a), y)->item();
      db_real += nn::mse_to(model.d_b.forward(y), 1.0)->item();
      da_fake += nn::mse_to(model.d_a.forward(fake_a), 0.0)->item();
    }
    const double na = static_cast<double>(a.planes.size());
    const double nb = static_cast<double>(b.planes.size());
    hist.rows.push_back({0.0, adv_ab / na, adv_ba / nb, cyc_a / na + cyc_b / nb,
                         0.5 * (da_real / na + da_fake / nb), 0.5 * (db_real / nb + db_fake / na)});
  }

  const std::size_t steps = std::max(a.planes.size(), b.planes.size());
  std::vector<std::size_t> order_a(a.planes.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order_a.begin(), order_a.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order_a));
    double sum_ab = 0, sum_ba = 0, sum_cyc = 0, sum_da = 0, sum_db = 0;
    for (std::size_t step = 0; step < steps; ++step) {
      const auto& pa = a.planes[order_a[step % order_a.size()]];
      const auto& pb = b.planes[static_cast<std::size_t>(rng.below(b.planes.size()))];
      auto real_a = planar_var(pa, s, s);
      auto real_b = planar_var(pb, s, s);

      // Generator update.
      auto fake_b = model.g_ab.forward(real_a);
      auto rec_a = model.g_ba.forward(fake_b);
      auto fake_a = model.g_ba.forward(real_b);
      auto rec_b = model.g_ab.forward(fake_a);
      auto adv_ab = nn::mse_to(model.d_b.forward(fake_b), 1.0);
      auto adv_ba = nn::mse_to(model.d_a.forward(fake_a), 1.0);
      auto cyc = nn::add(nn::l1_mean(rec_a, real_a), nn::l1_mean(rec_b, real_b));
      auto loss_g = nn::add(nn::add(adv_ab, adv_ba), nn::scale(cyc, cfg.cycle_weight));
      nn::backward(loss_g);
      opt_g.step();
      opt_d.zero_grad();

      // Discriminator update on pooled (detached) fakes.
      const auto pooled_b = pool_b.query(fake_b->value, rng);
      const auto pooled_a = pool_a.query(fake_a->value, rng);
      auto loss_db = nn::scale(nn::add(nn::mse_to(model.d_b.forward(real_b), 1.0),
                                       nn::mse_to(model.d_b.forward(planar_var(pooled_b, s, s)), 0.0)),
                               0.5);
      auto loss_da = nn::scale(nn::add(nn::mse_to(model.d_a.forward(real_a), 1.0),
                                       nn::mse_to(model.d_a.forward(planar_var(pooled_a, s, s)), 0.0)),
                               0.5);
      nn::backward(nn::add(loss_da, loss_db));
      opt_d.step();

      sum_ab += adv_ab->item();
      sum_ba += adv_ba->item();
      sum_cyc += cyc->item();
      sum_da += loss_da->item();
      sum_db += loss_db->item();
    }
    const double n = static_cast<double>(steps);
    hist.rows.push_back({static_cast<double>(epoch), sum_ab / n, sum_ba / n, sum_cyc / n, sum_da / n, sum_db / n});
  }
  return result;
}

}  // namespace mitodet
