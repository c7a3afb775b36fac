// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mitodet/geometry.hpp"
#include "mitodet/random.hpp"
#include "mitodet/raster.hpp"
#include "mitodet/tiling.hpp"

namespace mitodet {

/// XR = Hamamatsu XR NanoZoomer 2.0, S360 = Hamamatsu S360,
/// CS2 = Aperio ScanScope CS2, GT450 = Leica GT450 (unannotated target).
enum class Scanner { kXR, kS360, kCS2, kGT450 };

const char* scanner_name(Scanner s);
Scanner parse_scanner(const std::string& name);
/// Translation domain: GT450 is domain B, the other scanners domain A.
inline bool is_target_domain(Scanner s) { return s == Scanner::kGT450; }

enum class AnnotationLabel { kMitosis, kHardNegative };
const char* label_name(AnnotationLabel l);

struct SlideRecord {
  std::string slide_id;
  Scanner scanner = Scanner::kXR;
  std::string image;  // relative to the manifest directory unless absolute
  Extent extent;

  friend bool operator==(const SlideRecord&, const SlideRecord&) = default;
};

struct Annotation {
  std::string slide_id;
  BoundingBox box;  // slide frame
  AnnotationLabel label = AnnotationLabel::kMitosis;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct DatasetManifest {
  std::vector<SlideRecord> slides;
  std::vector<Annotation> annotations;
  std::filesystem::path root;  // directory used to resolve image paths; not serialized

  const SlideRecord& slide(const std::string& id) const;
  std::vector<Annotation> annotations_for(const std::string& id) const;
  std::filesystem::path image_path(const SlideRecord& s) const;
};

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Side of the box a point annotation expands to.
inline constexpr double kPointBoxSize = 50.0;

/// Checks ids, scanner/annotation rules and box bounds. Throws ManifestError
/// naming the offending record ("slides[3]", "annotations[17]").
void validate_manifest(const DatasetManifest& m);

/// JSON manifest. Point annotations ("point": [x, y]) become kPointBoxSize
/// boxes clipped to the slide.
DatasetManifest parse_manifest(const std::string& json_text, const std::filesystem::path& root = {});
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string manifest_to_json(const DatasetManifest& m);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic fixtures

/// Global affine color transform applied to canonically rendered tissue:
/// out = matrix * rgb + offset, clamped to [0, 255].
struct StainRegime {
  std::array<std::array<double, 3>, 3> matrix{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  std::array<double, 3> offset{0, 0, 0};
};

StainRegime scanner_regime(Scanner s);

struct SynthStyle {
  double blob_radius_min = 6.0;
  double blob_radius_max = 9.0;
  double ring_thickness = 2.0;
  double blob_darkness = 150.0;   // luma drop of a mitosis relative to background
  double background_noise = 6.0;
  int nuclei_per_10k_px = 4;      // faint round distractors
};

struct SynthObject {
  Point center;
  double radius_x = 0.0;
  double radius_y = 0.0;
  double angle = 0.0;
  AnnotationLabel label = AnnotationLabel::kMitosis;

  /// Tight axis-aligned bounds of the rendered ellipse.
  BoundingBox box() const;
};

struct SynthSlide {
  Raster image;
  std::vector<SynthObject> objects;
};

/// Renders background texture and the given objects, then applies the
/// scanner's stain regime.
SynthSlide render_slide(int width, int height, const std::vector<SynthObject>& objects, Scanner scanner,
                        const SynthStyle& style, std::uint64_t seed);

/// Randomly placed, non-overlapping objects at least `margin` px from the edge.
std::vector<SynthObject> place_objects(int width, int height, int mitoses, int hard_negatives, const SynthStyle& style,
                                       int margin, Rng& rng);

struct SynthSpec {
  int annotated_slides = 4;   // cycled over XR, S360, CS2
  int target_slides = 0;      // GT450, rendered with objects but unannotated
  int width = 256;
  int height = 256;
  int mitoses_per_slide = 5;
  int hard_negatives_per_slide = 5;
  int margin = 12;
  SynthStyle style;
};

/// Writes images/<slide_id>.png and manifest.json under `out_dir`.
DatasetManifest synth_dataset(const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace mitodet
