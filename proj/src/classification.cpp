// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mitodet/classification.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mitodet/config.hpp"
#include "mitodet/nn/optim.hpp"
#include "mitodet/random.hpp"
#include "mitodet/stain_translation.hpp"

namespace mitodet {

void ClassifierConfig::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (crop_size <= 0 || network_input <= 0 || epochs <= 0 || batch_size <= 0 || width <= 0 || depth < 0) {
    throw std::invalid_argument("ClassifierConfig: sizes and counts must be positive");
  }
  if (early_stop_patience < 0) throw std::invalid_argument("ClassifierConfig: patience must be non-negative");
  if (!unit(confidence_threshold) || !unit(validation_fraction) || !unit(online_max_shift)) {
    throw std::invalid_argument("ClassifierConfig: thresholds must lie in [0, 1]");
  }
  if (!(learning_rate > 0)) throw std::invalid_argument("ClassifierConfig: learning_rate must be positive");
  if (offline_rotations < 0 || offline_rotations > 3) {
    throw std::invalid_argument("ClassifierConfig: offline_rotations must be in 0..3");
  }
}

namespace {

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_number(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::runtime_error(where + ": bad number '" + s + "'");
  return v;
}

}  // namespace

Raster make_crop(const Raster& image, const Point& center, int crop_size) {
  if (crop_size <= 0) throw std::invalid_argument("make_crop: crop size must be positive");
  if (!(center.x >= 0 && center.y >= 0 && center.x < image.width() && center.y < image.height())) {
    throw std::out_of_range("make_crop: center (" + std::to_string(center.x) + ", " + std::to_string(center.y) +
                            ") lies outside the " + std::to_string(image.width()) + "x" +
                            std::to_string(image.height()) + " image");
  }
  const long x0 = round_half_up(center.x - crop_size / 2.0);
  const long y0 = round_half_up(center.y - crop_size / 2.0);
  return crop_reflect(image, x0, y0, crop_size, crop_size);
}

std::vector<LabeledCrop> augment_offline(const LabeledCrop& crop, int rotations, std::uint64_t seed) {
  if (rotations < 0 || rotations > 3) throw std::invalid_argument("augment_offline: rotations must be in 0..3");
  std::vector<LabeledCrop> out;
  out.push_back(crop);
  LabeledCrop flipped = crop;
  flipped.pixels = flip_vertical(crop.pixels);
  out.push_back(std::move(flipped));
  std::array<int, 3> turns{1, 2, 3};
  Rng rng(seed);
  rng.shuffle(std::span<int>(turns));
  for (int i = 0; i < rotations; ++i) {
    LabeledCrop r = crop;
    r.pixels = rotate90(crop.pixels, turns[static_cast<std::size_t>(i)]);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<LabeledCrop> augment_online(std::span<const LabeledCrop> batch, const OnlineAugment& aug,
                                        std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledCrop> out;
  out.reserve(batch.size());
  for (const auto& c : batch) {
    LabeledCrop a = c;
    const int w = c.pixels.width();
    const int h = c.pixels.height();
    const long mx = static_cast<long>(std::floor(aug.max_shift * w));
    const long my = static_cast<long>(std::floor(aug.max_shift * h));
    const long dx = rng.range(-mx, mx);
    const long dy = rng.range(-my, my);
    const bool hf = rng.coin();
    const bool vf = rng.coin();
    if (dx != 0 || dy != 0) a.pixels = crop_reflect(c.pixels, -dx, -dy, w, h);
    if (aug.hflip && hf) a.pixels = flip_horizontal(a.pixels);
    if (aug.vflip && vf) a.pixels = flip_vertical(a.pixels);
    out.push_back(std::move(a));
  }
  return out;
}

ClassifierModel ClassifierModel::create(const ClassifierConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  ClassifierModel m;
  m.config_ = cfg;
  int c = cfg.width;
  m.convs_.emplace_back(3, c, nn::ConvSpec{3, 1, 1}, rng);
  for (int d = 0; d < cfg.depth; ++d) {
    m.convs_.emplace_back(c, 2 * c, nn::ConvSpec{3, 2, 1}, rng);
    c *= 2;
  }
  m.fc_ = nn::Linear(c, 2, rng, nn::Init::kSmall);
  return m;
}

nn::Var ClassifierModel::forward(const nn::Var& x) const {
  nn::Var h = x;
  for (const auto& l : convs_) h = nn::relu(l(h));
  return fc_(nn::global_avg_pool(h));
}

nn::ParamList ClassifierModel::params() const {
  nn::ParamList p;
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(p, "conv" + std::to_string(i));
  fc_.collect(p, "fc");
  return p;
}

Checkpoint ClassifierModel::to_checkpoint(const TrainingHistory& history, std::uint64_t epoch) const {
  Checkpoint ck;
  ck.stage = Stage::kClassifier;
  ck.config_json = to_json_string(config_);
  ck.epoch = epoch;
  ck.history = history;
  ck.tensors = export_params(params());
  return ck;
}

ClassifierModel ClassifierModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.stage != Stage::kClassifier) {
    throw CheckpointError(CheckpointError::Kind::kStage, "expected a classifier checkpoint");
  }
  auto m = create(classifier_config_from_json(ckpt.config_json));
  import_params(m.params(), ckpt.tensors);
  return m;
}

std::vector<double> classifier_input(const Raster& crop, const ClassifierConfig& cfg) {
  return raster_to_planar(resize_bilinear(crop, cfg.network_input, cfg.network_input));
}

namespace {

int label_index(CropLabel l) { return l == CropLabel::kMitosis ? 1 : 0; }

nn::Var input_var(const Raster& crop, const ClassifierConfig& cfg) {
  return nn::constant({3, cfg.network_input, cfg.network_input}, classifier_input(crop, cfg));
}

}  // namespace

std::pair<double, double> evaluate_classifier(std::span<const LabeledCrop> crops, const ClassifierModel& model) {
  if (crops.empty()) return {0.0, 0.0};
  nn::NoGradGuard guard;
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& c : crops) {
    auto logits = model.forward(input_var(c.pixels, model.config()));
    const int y = label_index(c.label);
    loss += nn::softmax_cross_entropy(logits, y)->item();
    const int pred = logits->value[1] > logits->value[0] ? 1 : 0;
    if (pred == y) ++correct;
  }
  const double n = static_cast<double>(crops.size());
  return {loss / n, static_cast<double>(correct) / n};
}

ClassifierTrainResult train_classifier(std::span<const LabeledCrop> crops, const ClassifierConfig& cfg) {
  cfg.validate();
  bool has[2] = {false, false};
  for (const auto& c : crops) {
    if (c.pixels.width() != cfg.crop_size || c.pixels.height() != cfg.crop_size) {
      throw std::invalid_argument("train_classifier: crop is not " + std::to_string(cfg.crop_size) + "x" +
                                  std::to_string(cfg.crop_size));
    }
    has[label_index(c.label)] = true;
  }
  if (!has[0] || !has[1]) throw std::invalid_argument("train_classifier: training data must contain both labels");

  // Stratified train/validation split.
  Rng rng(cfg.seed ^ 0xA0761D6478BD642FULL);
  std::vector<LabeledCrop> train, val;
  std::vector<std::size_t> val_idx;
  for (int label = 0; label < 2; ++label) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < crops.size(); ++i)
      if (label_index(crops[i].label) == label) idx.push_back(i);
    rng.shuffle(std::span<std::size_t>(idx));
    const auto n_val = static_cast<std::size_t>(round_half_up(cfg.validation_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (k < n_val) {
        val.push_back(crops[idx[k]]);
        val_idx.push_back(idx[k]);
      } else {
        train.push_back(crops[idx[k]]);
      }
    }
  }
  if (train.empty()) throw std::invalid_argument("train_classifier: validation split leaves no training data");

  ClassifierTrainResult result{ClassifierModel::create(cfg), {}, 0, std::numeric_limits<double>::infinity(), val_idx};
  result.history.columns = {"epoch", "train_loss", "val_loss", "val_accuracy"};
  const auto params = result.model.params();
  nn::Adam opt(params, cfg.learning_rate);
  const OnlineAugment aug{cfg.online_max_shift, cfg.online_hflip, cfg.online_vflip};
  auto best = nn::snapshot(params);
  int waited = 0;

  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    double train_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<LabeledCrop> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(train[order[k]]);
      const auto augmented = augment_online(batch, aug, rng.next());
      const double inv = 1.0 / static_cast<double>(augmented.size());
      for (const auto& c : augmented) {
        auto loss = nn::scale(nn::softmax_cross_entropy(result.model.forward(input_var(c.pixels, cfg)),
                                                        label_index(c.label)),
                              inv);
        nn::backward(loss);
        train_loss += loss->item() * static_cast<double>(augmented.size());
      }
      opt.step();
    }
    train_loss /= static_cast<double>(train.size());

    const auto [val_loss, val_acc] = val.empty() ? std::pair{train_loss, 0.0} : evaluate_classifier(val, result.model);
    result.history.rows.push_back({static_cast<double>(epoch), train_loss, val_loss, val_acc});
    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      best = nn::snapshot(params);
      waited = 0;
    } else if (++waited >= std::max(cfg.early_stop_patience, 1)) {
      break;
    }
  }
  nn::restore(params, best);
  return result;
}

void write_crop_dataset(std::span<const LabeledCrop> crops, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "crops");
  std::ofstream index(dir / "index.csv", std::ios::trunc);
  if (!index) throw std::runtime_error("cannot write crop index in " + dir.string());
  index << "path,label,slide_id,x,y\n";
  char name[32];
  for (std::size_t i = 0; i < crops.size(); ++i) {
    const auto& c = crops[i];
    if (c.slide_id.find_first_of(",\n") != std::string::npos) {
      throw std::invalid_argument("slide id contains a separator: " + c.slide_id);
    }
    std::snprintf(name, sizeof(name), "crops/%06zu.png", i);
    write_image(c.pixels, dir / name);
    index << name << ',' << (c.label == CropLabel::kMitosis ? "mitosis" : "non_mitosis") << ',' << c.slide_id << ','
          << format_number(c.center.x) << ',' << format_number(c.center.y) << '\n';
  }
  if (!index) throw std::runtime_error("error writing crop index in " + dir.string());
}

std::vector<LabeledCrop> read_crop_dataset(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.csv");
  if (!index) throw std::runtime_error("cannot open crop index in " + dir.string());
  std::string line;
  if (!std::getline(index, line) || line != "path,label,slide_id,x,y") {
    throw std::runtime_error("crop index has no 'path,label,slide_id,x,y' header");
  }
  std::vector<LabeledCrop> out;
  std::size_t n = 1;
  while (std::getline(index, line)) {
    ++n;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    const std::string where = "crop index line " + std::to_string(n);
    if (f.size() != 5) throw std::runtime_error(where + ": expected 5 fields");
    LabeledCrop c;
    if (f[1] == "mitosis") {
      c.label = CropLabel::kMitosis;
    } else if (f[1] == "non_mitosis") {
      c.label = CropLabel::kNonMitosis;
    } else {
      throw std::runtime_error(where + ": unknown label '" + f[1] + "'");
    }
    c.slide_id = f[2];
    c.center = {parse_number(f[3], where), parse_number(f[4], where)};
    c.pixels = read_image(dir / f[0]);
    out.push_back(std::move(c));
  }
  return out;
}

Classification classify(const Raster& crop, const ClassifierModel& model) {
  return classify(crop, model, model.config().confidence_threshold);
}

Classification classify(const Raster& crop, const ClassifierModel& model, double confidence_threshold) {
  const auto& cfg = model.config();
  if (crop.width() != cfg.crop_size || crop.height() != cfg.crop_size) {
    throw std::invalid_argument("classify: crop is " + std::to_string(crop.width()) + "x" +
                                std::to_string(crop.height()) + ", expected " + std::to_string(cfg.crop_size) + "x" +
                                std::to_string(cfg.crop_size));
  }
  nn::NoGradGuard guard;
  const auto logits = model.forward(input_var(crop, cfg));
  const auto p = nn::softmax(logits->value);
  Classification c;
  c.probabilities[0] = p[0];
  c.probabilities[1] = p[1];
  c.probability = p[1];
  c.is_mitosis = passes_confidence(c.probability, confidence_threshold);
  return c;
}

std::vector<Classification> classify_batch(std::span<const Raster> crops, const ClassifierModel& model) {
  std::vector<Classification> out;
  out.reserve(crops.size());
  for (const auto& c : crops) out.push_back(classify(c, model));
  return out;
}

}  // namespace mitodet
