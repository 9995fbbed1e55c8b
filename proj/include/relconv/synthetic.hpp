#pragma once

// Desk-scale relational image dataset. Patients carry persistent findings;
// each of a patient's images shows each finding only with some probability,
// so an image's label is partly visible only through its relatives. A finding
// shows as a textured square in its class's quadrant.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relconv/dataio.hpp"
#include "relconv/error.hpp"
#include "relconv/image.hpp"
#include "relconv/rng.hpp"

namespace relconv {

struct SyntheticConfig {
  std::size_t patients = 200;
  std::size_t min_images = 3;
  std::size_t max_images = 6;
  std::size_t image_size = 64;
  std::size_t classes = 4;
  /// Probability that a patient carries a given finding.
  double persistence = 0.3;
  /// Probability that one image of a carrier shows the finding.
  double expression = 0.5;
  double intensity = 0.4;
  double noise = 0.05;
  double background = 0.3;
  int min_age = 20;
  int max_age = 80;
  /// Extra years a follow-up image may add to the patient's age.
  int age_drift = 2;
  double pa_fraction = 0.6;
  std::array<double, 3> split_ratio{0.7, 0.2, 0.1};

  void validate() const {
    if (patients == 0) throw ConfigError("patients must be positive");
    if (min_images == 0 || max_images < min_images) throw ConfigError("images-per-patient range is empty");
    if (classes == 0) throw ConfigError("classes must be positive");
    if (min_age < 0 || max_age < min_age || age_drift < 0) throw ConfigError("invalid age range");
    for (double p : {persistence, expression, pa_fraction})
      if (p < 0 || p > 1) throw ConfigError("probabilities must lie in [0, 1]");
    if (noise < 0) throw ConfigError("noise must be non-negative");
    if (image_size < 16 || blob_max() + 2 * margin() > image_size / 2)
      throw ConfigError("image size " + std::to_string(image_size) + " is too small to place blobs");
  }

  /// Border kept clear so blobs survive the center crop.
  std::size_t margin() const { return image_size / 16 + 1; }
  std::size_t blob_min() const { return std::max<std::size_t>(2, image_size / 8); }
  std::size_t blob_max() const { return std::max<std::size_t>(blob_min(), image_size / 5); }

  nlohmann::json to_json() const {
    return {{"patients", patients},       {"min_images", min_images}, {"max_images", max_images},
            {"image_size", image_size},   {"classes", classes},       {"persistence", persistence},
            {"expression", expression},   {"intensity", intensity},   {"noise", noise},
            {"background", background},   {"min_age", min_age},       {"max_age", max_age},
            {"age_drift", age_drift},     {"pa_fraction", pa_fraction}, {"split_ratio", split_ratio}};
  }
};

struct SyntheticDataset {
  DatasetManifest manifest;
  std::vector<GroundTruthBox> boxes;
  std::vector<Image> images;
};

inline std::vector<std::string> synthetic_class_names(std::size_t classes) {
  const auto& base = chestxray14_classes();
  std::vector<std::string> out;
  for (std::size_t c = 0; c < classes; ++c) out.push_back(c < base.size() ? base[c] : "Finding_" + std::to_string(c));
  return out;
}

/// Texture in {-1, 0, 1} at blob offset (u, v): flat, horizontal
/// stripes, vertical stripes, checker or diagonal stripes, 2 px wide, by class.
inline int blob_texture(std::size_t c, std::size_t u, std::size_t v) {
  const auto sign = [](std::size_t k) { return (k / 2) % 2 ? -1 : 1; };
  switch (c % 5) {
    case 1: return sign(v);
    case 2: return sign(u);
    case 3: return sign(u) * sign(v);
    case 4: return sign(u + v);
    default: return 0;
  }
}

/// Blob anchor region for class c: quadrant c mod 4, inside the margin.
inline Bbox blob_region(const SyntheticConfig& cfg, std::size_t c) {
  const std::size_t half = cfg.image_size / 2, q = c % 4;
  const double x0 = static_cast<double>((q % 2) * half + cfg.margin());
  const double y0 = static_cast<double>((q / 2) * half + cfg.margin());
  const double span = static_cast<double>(half - 2 * cfg.margin());
  return {x0, y0, x0 + span, y0 + span};
}

inline SyntheticDataset generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SyntheticDataset ds;
  auto& m = ds.manifest;
  m.image_dir = "images";
  m.image_size = cfg.image_size;
  m.channels = 1;
  m.class_names = synthetic_class_names(cfg.classes);
  const std::size_t s = cfg.image_size;

  for (std::size_t p = 0; p < cfg.patients; ++p) {
    SplitMix64 prng{seed, 0x70617469656e74ULL, p};
    const std::string patient_id = std::to_string(p + 1);
    const Gender gender = prng.bernoulli(0.5) ? Gender::F : Gender::M;
    const int base_age = static_cast<int>(prng.between(cfg.min_age, cfg.max_age));
    const std::size_t count = static_cast<std::size_t>(
        prng.between(static_cast<std::int64_t>(cfg.min_images), static_cast<std::int64_t>(cfg.max_images)));
    std::vector<std::uint8_t> carries(cfg.classes);
    for (auto& b : carries) b = prng.bernoulli(cfg.persistence);

    std::vector<std::uint8_t> shown_any(cfg.classes, 0);
    const std::size_t first = m.records.size();
    for (std::size_t k = 0; k < count; ++k) {
      SplitMix64 irng{seed, 0x696d616765ULL, p, k};
      char name[64];
      std::snprintf(name, sizeof name, "%08zu_%03zu.pgm", p + 1, k);
      ImageRecord r;
      r.image_id = name;
      r.patient_id = patient_id;
      r.gender = gender;
      r.age = base_age + static_cast<int>(irng.between(0, cfg.age_drift));
      r.view = irng.bernoulli(cfg.pa_fraction) ? View::PA : View::AP;

      Image img(s, s, 1);
      const double level = cfg.background + irng.uniform(-0.05, 0.05);
      for (double& v : img.pixels) v = level + cfg.noise * irng.normal();
      for (std::size_t c = 0; c < cfg.classes; ++c) {
        if (!carries[c] || !irng.bernoulli(cfg.expression)) continue;
        shown_any[c] = 1;
        const Bbox region = blob_region(cfg, c);
        const auto side = static_cast<std::size_t>(
            irng.between(static_cast<std::int64_t>(cfg.blob_min()), static_cast<std::int64_t>(cfg.blob_max())));
        const auto room = static_cast<std::size_t>(region.width()) - side;
        const std::size_t x = static_cast<std::size_t>(region.x_min) + static_cast<std::size_t>(irng.below(room + 1));
        const std::size_t y = static_cast<std::size_t>(region.y_min) + static_cast<std::size_t>(irng.below(room + 1));
        double bias = 0;
        for (std::size_t v = 0; v < side; ++v)
          for (std::size_t u = 0; u < side; ++u) bias += blob_texture(c, u, v);
        bias /= static_cast<double>(side * side);
        for (std::size_t v = 0; v < side; ++v)
          for (std::size_t u = 0; u < side; ++u)
            img.at(x + u, y + v) += cfg.intensity * (1.0 + 0.5 * (blob_texture(c, u, v) - bias));
        ds.boxes.push_back({r.image_id, c,
                            Bbox::from_xywh(static_cast<double>(x), static_cast<double>(y), static_cast<double>(side),
                                            static_cast<double>(side))});
      }
      for (double& v : img.pixels) v = static_cast<double>(quantize(v)) / 255.0;
      m.records.push_back(std::move(r));
      ds.images.push_back(std::move(img));
    }
    // a finding is labeled for every image of the patient once any image shows it
    for (std::size_t i = first; i < m.records.size(); ++i) {
      m.records[i].labels.assign(cfg.classes, 0);
      for (std::size_t c = 0; c < cfg.classes; ++c) m.records[i].labels[c] = carries[c] && shown_any[c];
    }
  }

  std::vector<std::string> ids;
  for (const auto& r : m.records) ids.push_back(r.image_id);
  const auto split = split_by_ratio(ids, cfg.split_ratio, seed);
  for (auto& r : m.records) r.split = split.at(r.image_id);
  return ds;
}

/// Writes images/, manifest.json, metadata.csv, splits.csv and gt_boxes.csv under `dir`.
inline void write_synthetic(const std::filesystem::path& dir, const SyntheticDataset& ds) {
  std::filesystem::create_directories(dir / "images");
  DatasetManifest m = ds.manifest;
  m.image_dir = dir / "images";
  for (std::size_t i = 0; i < m.records.size(); ++i) write_pnm(m.image_path(m.records[i]), ds.images[i]);
  save_manifest(dir / "manifest.json", m);
  write_metadata_csv(dir / "metadata.csv", m.records, m.class_names);
  write_gt_boxes(dir / "gt_boxes.csv", ds.boxes, m.class_names);
  std::ofstream out(dir / "splits.csv");
  if (!out) throw IoError("cannot write " + (dir / "splits.csv").string());
  out << "image_id,split\n";
  for (const auto& r : m.records) out << csv_field(r.image_id) << ',' << to_string(r.split) << '\n';
}

}  // namespace relconv
