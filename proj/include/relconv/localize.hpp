#pragma once

// Class activation heatmaps from the self-connection head, threshold
// segmentation and box extraction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relconv/dataio.hpp"
#include "relconv/error.hpp"
#include "relconv/image.hpp"
#include "relconv/metrics.hpp"
#include "relconv/model.hpp"
#include "relconv/tensor.hpp"

namespace relconv {

struct Heatmap {
  std::string image_id;
  std::size_t class_index = 0;
  std::size_t side = 0;
  /// Row-major side x side values in [0, 255].
  std::vector<std::uint8_t> values;

  std::uint8_t at(std::size_t x, std::size_t y) const { return values[y * side + x]; }
};

/// CAM for class c: sum_d head[c, d] * maps[d] on the s x s grid, bilinearly
/// upsampled to side x side, min-max scaled to [0, 255] and rounded. A
/// constant map gives all zeros.
template <typename T>
Heatmap cam_heatmap(const Tensor<T>& head, const Tensor<T>& maps, std::size_t c, std::size_t side) {
  if (head.rank() != 2 || maps.rank() != 3 || head.shape()[1] != maps.shape()[0])
    throw ShapeError("cam_heatmap: head " + shape_string(head.shape()) + " does not match maps " +
                     shape_string(maps.shape()));
  if (c >= head.shape()[0]) throw ConfigError("cam_heatmap: class " + std::to_string(c) + " out of range");
  const std::size_t d = maps.shape()[0], h = maps.shape()[1], w = maps.shape()[2];
  Image raw(w, h, 1);
  for (std::size_t k = 0; k < d; ++k) {
    const double wk = static_cast<double>(head(c, k));
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) raw.at(x, y) += wk * static_cast<double>(maps(k, y, x));
  }
  const Image up = resize_bilinear(raw, side, side);
  const auto [lo, hi] = std::minmax_element(up.pixels.begin(), up.pixels.end());
  Heatmap hm{"", c, side, std::vector<std::uint8_t>(side * side, 0)};
  if (*hi > *lo) {
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < up.pixels.size(); ++i)
      hm.values[i] = static_cast<std::uint8_t>(std::lround((up.pixels[i] - *lo) / range * 255.0));
  }
  return hm;
}

/// One box per 8-connected component of {value > threshold}, half-open pixel
/// coordinates, components below min_area pixels dropped, largest box first.
/// With single_box the surviving components are covered by one box.
inline std::vector<Bbox> threshold_and_boxes(const Heatmap& hm, int threshold = 180, std::size_t min_area = 1,
                                             bool single_box = false) {
  const std::size_t n = hm.side;
  std::vector<char> seen(n * n, 0);
  std::vector<Bbox> boxes;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < n * n; ++start) {
    if (seen[start] || hm.values[start] <= threshold) continue;
    seen[start] = 1;
    stack.assign(1, start);
    std::size_t x0 = n, y0 = n, x1 = 0, y1 = 0, area = 0;
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      const std::size_t x = v % n, y = v / n;
      ++area;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x + 1);
      y1 = std::max(y1, y + 1);
      for (std::size_t ny = y == 0 ? 0 : y - 1; ny <= std::min(n - 1, y + 1); ++ny)
        for (std::size_t nx = x == 0 ? 0 : x - 1; nx <= std::min(n - 1, x + 1); ++nx) {
          const std::size_t u = ny * n + nx;
          if (!seen[u] && hm.values[u] > threshold) {
            seen[u] = 1;
            stack.push_back(u);
          }
        }
    }
    if (area >= min_area)
      boxes.push_back({static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1), static_cast<double>(y1)});
  }
  if (single_box && !boxes.empty()) {
    Bbox all = boxes.front();
    for (const auto& b : boxes) {
      all.x_min = std::min(all.x_min, b.x_min);
      all.y_min = std::min(all.y_min, b.y_min);
      all.x_max = std::max(all.x_max, b.x_max);
      all.y_max = std::max(all.y_max, b.y_max);
    }
    return {all};
  }
  std::stable_sort(boxes.begin(), boxes.end(), [](const Bbox& a, const Bbox& b) { return a.area() > b.area(); });
  return boxes;
}

/// Mean heatmap value inside a box.
inline double box_score(const Heatmap& hm, const Bbox& b) {
  double sum = 0;
  std::size_t count = 0;
  for (auto y = static_cast<std::size_t>(b.y_min); y < static_cast<std::size_t>(b.y_max); ++y)
    for (auto x = static_cast<std::size_t>(b.x_min); x < static_cast<std::size_t>(b.x_max); ++x) {
      sum += hm.at(x, y);
      ++count;
    }
  return count ? sum / static_cast<double>(count) : 0.0;
}

inline void write_heatmap_pgm(const std::filesystem::path& path, const Heatmap& hm) {
  write_pgm_u8(path, hm.side, hm.side, hm.values);
}

struct PredictedBox {
  std::string image_id;
  std::size_t class_index = 0;
  Bbox box;
  double score = 0;
};

inline void write_predicted_boxes(const std::filesystem::path& path, const std::vector<PredictedBox>& boxes,
                                  const std::vector<std::string>& class_names) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "image_id,class,x,y,w,h,score\n";
  for (const auto& b : boxes)
    out << csv_field(b.image_id) << ',' << csv_field(class_names.at(b.class_index)) << ',' << b.box.x_min << ','
        << b.box.y_min << ',' << b.box.width() << ',' << b.box.height() << ',' << b.score << '\n';
}

struct LocalizeOptions {
  int threshold = 180;
  std::size_t min_area = 1;
  bool single_box = false;
  /// Images per trunk forward.
  std::size_t chunk = 32;
};

struct LocalizationOutput {
  std::vector<Heatmap> heatmaps;
  std::vector<PredictedBox> boxes;
  std::map<LocalizationKey, std::vector<Bbox>> predictions;
  /// Ground truth mapped into preprocessed coordinates.
  std::vector<LabeledBox> ground_truth;
};

/// Heatmaps and boxes for every (image, class) pair that has ground truth.
/// Ground-truth boxes are mapped through the preprocessing transform of
/// their image so they share the heatmap's coordinates.
template <typename T>
LocalizationOutput localize(ImageGCNModel<T>& model, const DatasetManifest& manifest,
                            const std::vector<GroundTruthBox>& ground_truth, const LocalizeOptions& opt) {
  if (model.config().layers != 1) throw ConfigError("localization needs a one-layer model");
  std::map<std::string, const ImageRecord*> records;
  for (const auto& r : manifest.records) records.emplace(r.image_id, &r);
  std::map<std::string, std::vector<const GroundTruthBox*>> by_image;
  for (const auto& g : ground_truth) {
    if (!records.count(g.image_id)) throw ConfigError("ground-truth box for unknown image '" + g.image_id + "'");
    if (g.class_index >= model.config().classes) throw ConfigError("ground-truth class out of range");
    by_image[g.image_id].push_back(&g);
  }
  std::vector<std::string> ids;
  for (const auto& [id, boxes] : by_image) ids.push_back(id);

  const std::size_t side = manifest.image_size;
  const std::size_t trunk = model.trunk_index(0);
  const Tensor<T>& head = model.self_head();
  LocalizationOutput out;
  for (std::size_t start = 0; start < ids.size(); start += opt.chunk) {
    const std::size_t len = std::min(opt.chunk, ids.size() - start);
    Tensor<T> batch({len, 3, side, side});
    const std::size_t per = 3 * side * side;
    std::vector<std::pair<std::size_t, std::size_t>> dims(len);
    for (std::size_t i = 0; i < len; ++i) {
      const Image img = read_pnm(manifest.image_path(*records.at(ids[start + i])));
      dims[i] = {img.width, img.height};
      const Tensor<T> pre = preprocess_image<T>(img, side);
      std::copy(pre.ptr(), pre.ptr() + per, batch.ptr() + i * per);
    }
    Tape<T> tape;
    const auto mpu = mpu_forward(model, tape, tape.constant(std::move(batch)), false);
    const Tensor<T>& maps = mpu.maps[trunk].value();
    const std::size_t d = maps.shape()[1], s = maps.shape()[2];
    for (std::size_t i = 0; i < len; ++i) {
      const std::string& id = ids[start + i];
      Tensor<T> m({d, s, s});
      std::copy_n(maps.ptr() + i * d * s * s, d * s * s, m.ptr());
      std::vector<std::size_t> classes;
      for (const auto* g : by_image.at(id)) {
        if (auto b = map_box_to_preprocessed(g->box, dims[i].first, dims[i].second, side))
          out.ground_truth.push_back({id, g->class_index, *b});
        if (std::find(classes.begin(), classes.end(), g->class_index) == classes.end()) classes.push_back(g->class_index);
      }
      std::sort(classes.begin(), classes.end());
      for (std::size_t c : classes) {
        Heatmap hm = cam_heatmap(head, m, c, side);
        hm.image_id = id;
        auto& preds = out.predictions[{id, c}];
        for (const auto& b : threshold_and_boxes(hm, opt.threshold, opt.min_area, opt.single_box)) {
          preds.push_back(b);
          out.boxes.push_back({id, c, b, box_score(hm, b)});
        }
        out.heatmaps.push_back(std::move(hm));
      }
    }
  }
  return out;
}

}  // namespace relconv
