// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mitodet/checkpoint.hpp"
#include "mitodet/config.hpp"
#include "mitodet/data_io.hpp"
#include "mitodet/evaluation.hpp"
#include "mitodet/pipeline.hpp"

using namespace mitodet;
using nlohmann::json;

namespace {

struct Common {
  std::string manifest;
  std::string config;
  bool desk = false;
  std::string split;
  std::string partition = "train";
};

PipelineConfig pipeline_config(const Common& c) {
  if (!c.config.empty()) return load_pipeline_config(c.config);
  return c.desk ? desk_scale_config() : PipelineConfig{};
}

DataSplit load_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open split file " + path);
  const json doc = json::parse(in);
  DataSplit s;
  s.train = doc.at("train").get<std::vector<std::string>>();
  s.validation = doc.at("validation").get<std::vector<std::string>>();
  s.test = doc.at("test").get<std::vector<std::string>>();
  return s;
}

// Slides of the manifest restricted to one split partition (all when no split).
std::vector<SlideRecord> select_slides(const DatasetManifest& m, const Common& c) {
  if (c.split.empty()) return m.slides;
  const auto s = load_split(c.split);
  const auto& ids = c.partition == "test" ? s.test : c.partition == "validation" ? s.validation : s.train;
  std::vector<SlideRecord> out;
  for (const auto& r : m.slides)
    if (std::find(ids.begin(), ids.end(), r.slide_id) != ids.end() || is_target_domain(r.scanner)) out.push_back(r);
  return out;
}

void add_common(CLI::App* app, Common& c, bool with_split = true) {
  app->add_option("--manifest", c.manifest, "dataset manifest (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option("--config", c.config, "pipeline config (JSON)")->check(CLI::ExistingFile);
  app->add_flag("--desk", c.desk, "use the desk-scale preset when no config is given");
  if (with_split) {
    app->add_option("--split", c.split, "split file written by `split`")->check(CLI::ExistingFile);
    app->add_option("--partition", c.partition, "split partition to use")
        ->check(CLI::IsMember({"train", "validation", "test"}));
  }
}

TranslationModel load_translation(const std::string& path) {
  return TranslationModel::from_checkpoint(load_checkpoint(path, Stage::kTranslation));
}

void log(const std::string& msg) { std::cerr << msg << '\n'; }

void print_last(const TrainingHistory& h) {
  if (h.rows.empty()) return;
  std::string line;
  for (std::size_t i = 0; i < h.columns.size(); ++i)
    line += (i ? "  " : "") + h.columns[i] + "=" + std::to_string(h.rows.back()[i]);
  log(line);
}

int cmd_translate_train(const Common& c, const std::string& out) {
  const auto cfg = pipeline_config(c);
  const auto m = load_manifest(c.manifest);
  std::vector<Raster> a, b;
  for (const auto& s : select_slides(m, c)) {
    auto patches = translation_patches(read_image(m.image_path(s)), cfg.translation.patch_size, cfg.tiling);
    auto& dst = is_target_domain(s.scanner) ? b : a;
    for (auto& p : patches) dst.push_back(std::move(p));
  }
  log("translation: " + std::to_string(a.size()) + " A patches, " + std::to_string(b.size()) + " B patches");
  const auto r = train_translation(a, b, cfg.translation);
  print_last(r.history);
  save_checkpoint(r.model.to_checkpoint(r.history, static_cast<std::uint64_t>(cfg.translation.epochs)), out);
  return 0;
}

int cmd_detect_train(const Common& c, const std::string& translation, const std::string& out) {
  const auto cfg = pipeline_config(c);
  const auto m = load_manifest(c.manifest);
  const auto tm = load_translation(translation);
  std::vector<DetectorSample> samples;
  for (const auto& s : select_slides(m, c)) {
    if (is_target_domain(s.scanner)) continue;
    const auto canvas = translate_slide(read_image(m.image_path(s)), tm, cfg.tiling).canvas;
    const auto anns = m.annotations_for(s.slide_id);
    for (auto& d : detector_samples(canvas, anns, cfg.detector.tile_size, cfg.tiling.detection_stride))
      samples.push_back(std::move(d));
  }
  log("detector: " + std::to_string(samples.size()) + " tiles");
  const auto r = train_detector(samples, cfg.detector);
  print_last(r.history);
  save_checkpoint(r.model.to_checkpoint(r.history, static_cast<std::uint64_t>(cfg.detector.train_iterations)), out);
  return 0;
}

int cmd_classify_train(const Common& c, const std::string& translation, const std::string& out,
                       const std::string& crops_dir) {
  const auto cfg = pipeline_config(c);
  const auto m = load_manifest(c.manifest);
  const auto tm = load_translation(translation);
  std::vector<LabeledCrop> crops;
  for (const auto& s : select_slides(m, c)) {
    if (is_target_domain(s.scanner)) continue;
    const auto image = read_image(m.image_path(s));
    const auto source = cfg.crops_from_translated ? translate_slide(image, tm, cfg.tiling).canvas : image;
    const auto anns = m.annotations_for(s.slide_id);
    for (auto& crop : classifier_crops(source, s.slide_id, anns, cfg.classifier)) crops.push_back(std::move(crop));
  }
  if (!crops_dir.empty()) write_crop_dataset(crops, crops_dir);
  log("classifier: " + std::to_string(crops.size()) + " crops");
  const auto r = train_classifier(crops, cfg.classifier);
  print_last(r.history);
  log("best epoch " + std::to_string(r.best_epoch) + ", validation loss " + std::to_string(r.best_val_loss));
  save_checkpoint(r.model.to_checkpoint(r.history, static_cast<std::uint64_t>(r.best_epoch)), out);
  return 0;
}

int cmd_run(const Common& c, const std::string& translation, const std::string& detector,
            const std::string& classifier, const std::string& out) {
  const auto cfg = pipeline_config(c);
  const auto m = load_manifest(c.manifest);
  PipelineModels models{load_translation(translation),
                        DetectorModel::from_checkpoint(load_checkpoint(detector, Stage::kDetector)),
                        ClassifierModel::from_checkpoint(load_checkpoint(classifier, Stage::kClassifier))};
  write_results({}, out);
  PipelineCache cache;
  int failures = 0;
  for (const auto& s : select_slides(m, c)) {
    if (is_target_domain(s.scanner) && !c.split.empty()) continue;
    try {
      const auto r = run_slide(s.slide_id, read_image(m.image_path(s)), models, cfg, &cache);
      emit_results(r, out);
      log(s.slide_id + ": " + std::to_string(r.tiles_kept) + "/" + std::to_string(r.tiles_total) + " tiles, " +
          std::to_string(r.candidates.size()) + " candidates, " + std::to_string(r.mitoses.size()) + " mitoses");
    } catch (const StageError& e) {
      ++failures;
      log(s.slide_id + ": failed in " + e.what());
    }
  }
  return failures == 0 ? 0 : 2;
}

int cmd_evaluate(const Common& c, const std::string& results, double radius, const std::string& csv_out) {
  const auto cfg = pipeline_config(c);
  const auto m = load_manifest(c.manifest);
  EvalConfig ec = cfg.evaluation;
  if (radius > 0) ec.match_radius = radius;
  std::map<std::string, std::vector<Point>> truths;
  for (const auto& s : select_slides(m, c)) {
    if (is_target_domain(s.scanner)) continue;
    auto& t = truths[s.slide_id];
    for (const auto& a : m.annotations_for(s.slide_id))
      if (a.label == AnnotationLabel::kMitosis) t.push_back(box_center(a.box));
  }
  std::map<std::string, std::vector<ScoredPoint>> dets;
  for (const auto& r : read_results(results)) dets[r.slide_id].push_back({{r.x, r.y}, r.probability});
  const auto report = evaluate_dataset(dets, truths, ec);
  write_report_table(report, std::cout);
  if (!csv_out.empty()) {
    std::ofstream f(csv_out);
    write_report_csv(report, f);
  }
  return 0;
}

int cmd_split(const std::string& manifest, std::uint64_t seed, bool stratify, const std::string& out) {
  const auto m = load_manifest(manifest);
  std::vector<std::string> ids, strata;
  for (const auto& s : m.slides) {
    if (is_target_domain(s.scanner)) continue;
    ids.push_back(s.slide_id);
    strata.push_back(scanner_name(s.scanner));
  }
  const auto split = stratify ? make_split(ids, seed, {}, strata) : make_split(ids, seed);
  const json doc{{"seed", seed}, {"train", split.train}, {"validation", split.validation}, {"test", split.test}};
  std::ofstream(out) << doc.dump(2) << '\n';
  log("train " + std::to_string(split.train.size()) + ", validation " + std::to_string(split.validation.size()) +
      ", test " + std::to_string(split.test.size()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mitotic figure detection: stain translation, detection and classification"};
  app.require_subcommand(1);

  Common common;
  std::string out, translation, detector, classifier, crops_dir, results, csv_out;
  double radius = 0.0;
  std::uint64_t seed = 0;
  bool stratify = false;

  auto* config = app.add_subcommand("config", "print a pipeline config as JSON");
  config->add_flag("--desk", common.desk, "desk-scale preset instead of full-scale defaults");
  config->add_option("--from", common.config, "validate and re-emit an existing config")->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth-data", "write a synthetic dataset (images + manifest)");
  SynthSpec spec;
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--seed", seed, "random seed");
  synth->add_option("--slides", spec.annotated_slides, "annotated slides");
  synth->add_option("--targets", spec.target_slides, "unannotated GT450 slides");
  synth->add_option("--width", spec.width);
  synth->add_option("--height", spec.height);
  synth->add_option("--mitoses", spec.mitoses_per_slide, "mitoses per slide");
  synth->add_option("--negatives", spec.hard_negatives_per_slide, "hard negatives per slide");

  auto* split = app.add_subcommand("split", "seeded slide-level train/validation/test split");
  split->add_option("--manifest", common.manifest)->required()->check(CLI::ExistingFile);
  split->add_option("--seed", seed, "random seed");
  split->add_flag("--stratify", stratify, "balance scanners across partitions");
  split->add_option("--out", out, "split JSON")->required();

  auto* ttrain = app.add_subcommand("translate-train", "train the stain translation model");
  add_common(ttrain, common);
  ttrain->add_option("--out", out, "checkpoint path")->required();

  auto* dtrain = app.add_subcommand("detect-train", "train the detector on translated slides");
  add_common(dtrain, common);
  dtrain->add_option("--translation", translation, "translation checkpoint")->required();
  dtrain->add_option("--out", out, "checkpoint path")->required();

  auto* ctrain = app.add_subcommand("classify-train", "train the crop classifier");
  add_common(ctrain, common);
  ctrain->add_option("--translation", translation, "translation checkpoint")->required();
  ctrain->add_option("--out", out, "checkpoint path")->required();
  ctrain->add_option("--crops-dir", crops_dir, "also export the crop dataset here");

  auto* run = app.add_subcommand("run", "run the full pipeline and write slide_id,x,y,prob");
  add_common(run, common);
  run->add_option("--translation", translation)->required();
  run->add_option("--detector", detector)->required();
  run->add_option("--classifier", classifier)->required();
  run->add_option("--out", out, "results CSV")->required();

  auto* eval = app.add_subcommand("evaluate", "match results against mitosis annotations");
  add_common(eval, common);
  eval->add_option("--results", results, "results CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--radius", radius, "match radius in px (default from config)");
  eval->add_option("--csv", csv_out, "also write the report as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (config->parsed()) {
      std::cout << to_json_string(pipeline_config(common)) << '\n';
      return 0;
    }
    if (synth->parsed()) {
      const auto m = synth_dataset(spec, seed, out);
      log(std::to_string(m.slides.size()) + " slides, " + std::to_string(m.annotations.size()) + " annotations");
      return 0;
    }
    if (split->parsed()) return cmd_split(common.manifest, seed, stratify, out);
    if (ttrain->parsed()) return cmd_translate_train(common, out);
    if (dtrain->parsed()) return cmd_detect_train(common, translation, out);
    if (ctrain->parsed()) return cmd_classify_train(common, translation, out, crops_dir);
    if (run->parsed()) return cmd_run(common, translation, detector, classifier, out);
    if (eval->parsed()) return cmd_evaluate(common, results, radius, csv_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
