// Copyright 2026 The mitodet Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mitodet/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mitodet {

using nlohmann::json;

const char* scanner_name(Scanner s) {
  switch (s) {
    case Scanner::kXR: return "XR";
    case Scanner::kS360: return "S360";
    case Scanner::kCS2: return "CS2";
    case Scanner::kGT450: return "GT450";
  }
  return "?";
}

Scanner parse_scanner(const std::string& name) {
  if (name == "XR") return Scanner::kXR;
  if (name == "S360") return Scanner::kS360;
  if (name == "CS2") return Scanner::kCS2;
  if (name == "GT450") return Scanner::kGT450;
  throw ManifestError("unknown scanner '" + name + "' (expected XR, S360, CS2 or GT450)");
}

const char* label_name(AnnotationLabel l) { return l == AnnotationLabel::kMitosis ? "mitosis" : "hard_negative"; }

namespace {

AnnotationLabel parse_label(const std::string& s) {
  if (s == "mitosis") return AnnotationLabel::kMitosis;
  if (s == "hard_negative") return AnnotationLabel::kHardNegative;
  throw ManifestError("unknown label '" + s + "' (expected mitosis or hard_negative)");
}

void require_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ManifestError(where + ": expected an object");
  for (const auto& [k, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      throw ManifestError(where + ": unknown field '" + k + "'");
    }
  }
}

template <typename T>
T get_field(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ManifestError(where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ManifestError(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

const SlideRecord& DatasetManifest::slide(const std::string& id) const {
  for (const auto& s : slides)
    if (s.slide_id == id) return s;
  throw std::out_of_range("manifest has no slide '" + id + "'");
}

std::vector<Annotation> DatasetManifest::annotations_for(const std::string& id) const {
  std::vector<Annotation> out;
  for (const auto& a : annotations)
    if (a.slide_id == id) out.push_back(a);
  return out;
}

std::filesystem::path DatasetManifest::image_path(const SlideRecord& s) const {
  std::filesystem::path p(s.image);
  return p.is_absolute() || root.empty() ? p : root / p;
}

void validate_manifest(const DatasetManifest& m) {
  std::set<std::string> ids;
  for (std::size_t i = 0; i < m.slides.size(); ++i) {
    const auto& s = m.slides[i];
    const std::string where = "slides[" + std::to_string(i) + "]";
    if (s.slide_id.empty()) throw ManifestError(where + ": empty slide_id");
    if (!ids.insert(s.slide_id).second) throw ManifestError(where + ": duplicate slide_id '" + s.slide_id + "'");
    if (s.extent.width <= 0 || s.extent.height <= 0) throw ManifestError(where + ": extent must be positive");
  }
  for (std::size_t i = 0; i < m.annotations.size(); ++i) {
    const auto& a = m.annotations[i];
    const std::string where = "annotations[" + std::to_string(i) + "]";
    if (!ids.contains(a.slide_id)) throw ManifestError(where + ": unknown slide_id '" + a.slide_id + "'");
    const auto& s = m.slide(a.slide_id);
    if (is_target_domain(s.scanner)) {
      throw ManifestError(where + ": slide '" + a.slide_id + "' is a GT450 slide, which must carry no annotations");
    }
    if (!a.box.valid()) throw ManifestError(where + ": invalid box");
    if (a.box.x_min < 0 || a.box.y_min < 0 || a.box.x_max > static_cast<double>(s.extent.width) ||
        a.box.y_max > static_cast<double>(s.extent.height)) {
      throw ManifestError(where + ": box lies outside the slide extent");
    }
  }
}

DatasetManifest parse_manifest(const std::string& json_text, const std::filesystem::path& root) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ManifestError(std::string("manifest is not valid JSON: ") + e.what());
  }
  require_keys(doc, "manifest", {"version", "slides", "annotations"});
  if (doc.contains("version") && doc.at("version") != 1) throw ManifestError("manifest: unsupported version");

  DatasetManifest m;
  m.root = root;
  const auto slides = doc.value("slides", json::array());
  if (!slides.is_array()) throw ManifestError("manifest: 'slides' must be an array");
  for (std::size_t i = 0; i < slides.size(); ++i) {
    const auto& r = slides[i];
    const std::string where = "slides[" + std::to_string(i) + "]";
    require_keys(r, where, {"slide_id", "scanner", "image", "width", "height"});
    SlideRecord s;
    s.slide_id = get_field<std::string>(r, "slide_id", where);
    try {
      s.scanner = parse_scanner(get_field<std::string>(r, "scanner", where));
    } catch (const ManifestError& e) {
      throw ManifestError(where + ": " + e.what());
    }
    s.image = get_field<std::string>(r, "image", where);
    s.extent = {get_field<long>(r, "width", where), get_field<long>(r, "height", where)};
    m.slides.push_back(std::move(s));
  }
  // Slide lookups below need unique ids; validate that part early.
  {
    DatasetManifest only_slides;
    only_slides.slides = m.slides;
    validate_manifest(only_slides);
  }

  const auto anns = doc.value("annotations", json::array());
  if (!anns.is_array()) throw ManifestError("manifest: 'annotations' must be an array");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const auto& r = anns[i];
    const std::string where = "annotations[" + std::to_string(i) + "]";
    require_keys(r, where, {"slide_id", "label", "box", "point"});
    Annotation a;
    a.slide_id = get_field<std::string>(r, "slide_id", where);
    try {
      a.label = parse_label(get_field<std::string>(r, "label", where));
    } catch (const ManifestError& e) {
      throw ManifestError(where + ": " + e.what());
    }
    const bool has_box = r.contains("box");
    const bool has_point = r.contains("point");
    if (has_box == has_point) throw ManifestError(where + ": exactly one of 'box' or 'point' is required");
    if (has_box) {
      const auto v = get_field<std::vector<double>>(r, "box", where);
      if (v.size() != 4) throw ManifestError(where + ": 'box' needs 4 numbers");
      a.box = {v[0], v[1], v[2], v[3]};
    } else {
      const auto v = get_field<std::vector<double>>(r, "point", where);
      if (v.size() != 2) throw ManifestError(where + ": 'point' needs 2 numbers");
      const SlideRecord* slide = nullptr;
      for (const auto& s : m.slides)
        if (s.slide_id == a.slide_id) slide = &s;
      if (!slide) throw ManifestError(where + ": unknown slide_id '" + a.slide_id + "'");
      a.box = clip_box(box_around({v[0], v[1]}, kPointBoxSize), static_cast<double>(slide->extent.width),
                       static_cast<double>(slide->extent.height));
    }
    m.annotations.push_back(std::move(a));
  }
  validate_manifest(m);
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

std::string manifest_to_json(const DatasetManifest& m) {
  json doc;
  doc["version"] = 1;
  doc["slides"] = json::array();
  for (const auto& s : m.slides) {
    doc["slides"].push_back({{"slide_id", s.slide_id},
                             {"scanner", scanner_name(s.scanner)},
                             {"image", s.image},
                             {"width", s.extent.width},
                             {"height", s.extent.height}});
  }
  doc["annotations"] = json::array();
  for (const auto& a : m.annotations) {
    doc["annotations"].push_back({{"slide_id", a.slide_id},
                                  {"label", label_name(a.label)},
                                  {"box", {a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max}}});
  }
  return doc.dump(2);
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  validate_manifest(m);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ManifestError("cannot write manifest: " + tmp.string());
    out << manifest_to_json(m) << '\n';
    if (!out) throw ManifestError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------

StainRegime scanner_regime(Scanner s) {
  StainRegime r;
  switch (s) {
    case Scanner::kXR:
      break;
    case Scanner::kS360:
      r.matrix = {{{1.0, 0.0, 0.0}, {0.0, 0.96, 0.0}, {0.0, 0.0, 1.02}}};
      r.offset = {-4.0, 2.0, 4.0};
      break;
    case Scanner::kCS2:
      r.matrix = {{{0.97, 0.02, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.02, 0.97}}};
      r.offset = {6.0, -4.0, 0.0};
      break;
    case Scanner::kGT450:
      r.matrix = {{{0.72, 0.08, 0.05}, {0.05, 0.78, 0.05}, {0.02, 0.08, 0.90}}};
      r.offset = {-8.0, 6.0, 30.0};
      break;
  }
  return r;
}

BoundingBox SynthObject::box() const {
  const double c = std::cos(angle), s = std::sin(angle);
  const double ex = std::sqrt(radius_x * radius_x * c * c + radius_y * radius_y * s * s);
  const double ey = std::sqrt(radius_x * radius_x * s * s + radius_y * radius_y * c * c);
  return {center.x - ex, center.y - ey, center.x + ex, center.y + ey};
}

namespace {

constexpr std::array<double, 3> kBackground{232.0, 196.0, 214.0};
constexpr std::array<double, 3> kDarkWeights{0.95, 1.05, 0.7};
constexpr std::array<double, 3> kNucleus{205.0, 165.0, 205.0};

// Normalized elliptical radius of pixel center (x+0.5, y+0.5).
double ellipse_radius(const SynthObject& o, int x, int y) {
  const double dx = x + 0.5 - o.center.x;
  const double dy = y + 0.5 - o.center.y;
  const double c = std::cos(o.angle), s = std::sin(o.angle);
  const double u = (dx * c + dy * s) / o.radius_x;
  const double v = (-dx * s + dy * c) / o.radius_y;
  return std::sqrt(u * u + v * v);
}

}  // namespace

SynthSlide render_slide(int width, int height, const std::vector<SynthObject>& objects, Scanner scanner,
                        const SynthStyle& style, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> canvas(static_cast<std::size_t>(width) * height * 3);
  auto px = [&](int x, int y, int c) -> double& { return canvas[(static_cast<std::size_t>(y) * width + x) * 3 + c]; };

  // Low-frequency staining variation plus pixel noise.
  const double fx1 = rng.uniform(0.02, 0.06), fy1 = rng.uniform(0.02, 0.06);
  const double fx2 = rng.uniform(0.05, 0.12), fy2 = rng.uniform(0.05, 0.12);
  const double p1 = rng.uniform(0, 2 * M_PI), p2 = rng.uniform(0, 2 * M_PI);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double wave = 6.0 * std::sin(fx1 * x + fy1 * y + p1) + 4.0 * std::sin(fx2 * x - fy2 * y + p2);
      for (int c = 0; c < 3; ++c) px(x, y, c) = kBackground[c] + wave + style.background_noise * rng.normal();
    }
  }
  // Faint nuclei as texture.
  const long n_nuclei = static_cast<long>(style.nuclei_per_10k_px) * width * height / 10000;
  for (long k = 0; k < n_nuclei; ++k) {
    const double cx = rng.uniform(0, width), cy = rng.uniform(0, height), r = rng.uniform(2.5, 4.0);
    for (int y = std::max(0, static_cast<int>(cy - r - 1)); y < std::min(height, static_cast<int>(cy + r + 2)); ++y)
      for (int x = std::max(0, static_cast<int>(cx - r - 1)); x < std::min(width, static_cast<int>(cx + r + 2)); ++x)
        if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r)
          for (int c = 0; c < 3; ++c) px(x, y, c) = 0.5 * px(x, y, c) + 0.5 * kNucleus[c];
  }
  for (const auto& o : objects) {
    const auto b = o.box();
    const int x0 = std::max(0, static_cast<int>(std::floor(b.x_min)) - 1);
    const int y0 = std::max(0, static_cast<int>(std::floor(b.y_min)) - 1);
    const int x1 = std::min(width, static_cast<int>(std::ceil(b.x_max)) + 1);
    const int y1 = std::min(height, static_cast<int>(std::ceil(b.y_max)) + 1);
    const double inner = 1.0 - style.ring_thickness / std::min(o.radius_x, o.radius_y);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const double r = ellipse_radius(o, x, y);
        const bool dark = o.label == AnnotationLabel::kMitosis ? r <= 1.0 : (r <= 1.0 && r >= inner);
        if (!dark) continue;
        for (int c = 0; c < 3; ++c) px(x, y, c) = kBackground[c] - style.blob_darkness * kDarkWeights[c] + 4.0 * rng.normal();
      }
    }
  }

  const auto regime = scanner_regime(scanner);
  SynthSlide out{Raster(width, height), objects};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = regime.offset[c];
        for (int k = 0; k < 3; ++k) v += regime.matrix[c][k] * px(x, y, k);
        out.image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

std::vector<SynthObject> place_objects(int width, int height, int mitoses, int hard_negatives, const SynthStyle& style,
                                       int margin, Rng& rng) {
  std::vector<SynthObject> objs;
  const double min_sep = 3.0 * style.blob_radius_max + 2.0 * style.ring_thickness;
  const int total = mitoses + hard_negatives;
  for (int k = 0; k < total; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      SynthObject o;
      o.label = k < mitoses ? AnnotationLabel::kMitosis : AnnotationLabel::kHardNegative;
      o.radius_x = rng.uniform(style.blob_radius_min, style.blob_radius_max);
      o.radius_y = o.label == AnnotationLabel::kMitosis ? rng.uniform(0.7, 1.0) * o.radius_x : o.radius_x * rng.uniform(0.85, 1.0);
      o.angle = rng.uniform(0.0, M_PI);
      const double lo = margin + style.blob_radius_max;
      if (width - 2 * lo <= 0 || height - 2 * lo <= 0) break;
      o.center = {rng.uniform(lo, width - lo), rng.uniform(lo, height - lo)};
      placed = std::all_of(objs.begin(), objs.end(), [&](const SynthObject& p) { return distance(p.center, o.center) >= min_sep; });
      if (placed) objs.push_back(o);
    }
    if (!placed) throw std::runtime_error("place_objects: slide too small for the requested objects");
  }
  return objs;
}

DatasetManifest synth_dataset(const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir) {
  if (spec.annotated_slides < 0 || spec.target_slides < 0 || spec.annotated_slides + spec.target_slides == 0 ||
      spec.width <= 0 || spec.height <= 0 || spec.mitoses_per_slide < 0 || spec.hard_negatives_per_slide < 0) {
    throw std::invalid_argument("synth_dataset: counts must be positive");
  }
  std::filesystem::create_directories(out_dir / "images");
  static constexpr Scanner kAnnotated[] = {Scanner::kXR, Scanner::kS360, Scanner::kCS2};

  Rng master(seed);
  DatasetManifest m;
  m.root = out_dir;
  const int total = spec.annotated_slides + spec.target_slides;
  for (int i = 0; i < total; ++i) {
    const bool target = i >= spec.annotated_slides;
    const Scanner scanner = target ? Scanner::kGT450 : kAnnotated[i % 3];
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%03d", i);
    Rng slide_rng = master.split();
    const auto objects = place_objects(spec.width, spec.height, spec.mitoses_per_slide, spec.hard_negatives_per_slide,
                                       spec.style, spec.margin, slide_rng);
    const auto slide = render_slide(spec.width, spec.height, objects, scanner, spec.style, slide_rng.next());
    const std::string rel = std::string("images/") + id + ".png";
    write_image(slide.image, out_dir / rel);
    m.slides.push_back({id, scanner, rel, {spec.width, spec.height}});
    if (!target) {
      for (const auto& o : objects) m.annotations.push_back({id, o.box(), o.label});
    }
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace mitodet
