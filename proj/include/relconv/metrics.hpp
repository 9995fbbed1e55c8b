#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "relconv/error.hpp"

namespace relconv {

/// Axis-aligned box over half-open pixel intervals [x_min, x_max) x [y_min, y_max).
struct Bbox {
  double x_min = 0;
  double y_min = 0;
  double x_max = 0;
  double y_max = 0;

  static Bbox from_xywh(double x, double y, double w, double h) { return {x, y, x + w, y + h}; }

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_max > x_min && y_max > y_min; }

  bool operator==(const Bbox&) const = default;
};

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counted as one half.
/// Returns nullopt when either class is absent.
inline std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw Error("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Walk tie groups in ascending score order. Each positive beats every
  // negative below its group and ties with those inside it.
  double correct = 0.0;
  std::size_t negatives_below = 0, positives = 0, negatives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? pos : neg) += 1;
      ++j;
    }
    correct += static_cast<double>(pos) * (static_cast<double>(negatives_below) + 0.5 * static_cast<double>(neg));
    negatives_below += neg;
    positives += pos;
    negatives += neg;
    i = j;
  }
  if (positives == 0 || negatives == 0) return std::nullopt;
  return correct / (static_cast<double>(positives) * static_cast<double>(negatives));
}

inline double iou(const Bbox& a, const Bbox& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

struct ClassAuc {
  std::vector<std::optional<double>> per_class;
  /// Mean over the classes whose AUC is defined; nullopt if none is.
  std::optional<double> mean;
};

/// Per-class AUC over an (N x C) row-major probability matrix.
inline ClassAuc class_auc(std::span<const double> probs, std::span<const std::uint8_t> labels, std::size_t classes) {
  if (classes == 0 || probs.size() != labels.size() || probs.size() % classes != 0) {
    throw Error("class_auc: inconsistent probability/label sizes");
  }
  const std::size_t n = probs.size() / classes;
  ClassAuc out;
  double sum = 0.0;
  std::size_t defined = 0;
  std::vector<double> s(n);
  std::vector<std::uint8_t> y(n);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = probs[i * classes + c];
      y[i] = labels[i * classes + c];
    }
    auto a = auc(s, y);
    out.per_class.push_back(a);
    if (a) {
      sum += *a;
      ++defined;
    }
  }
  if (defined) out.mean = sum / static_cast<double>(defined);
  return out;
}

struct LocalizationKey {
  std::string image_id;
  std::size_t class_index = 0;
  auto operator<=>(const LocalizationKey&) const = default;
};

struct LabeledBox {
  std::string image_id;
  std::size_t class_index = 0;
  Bbox box;
};

struct LocalizationResult {
  /// Indexed by class; nullopt for classes without ground truth.
  std::vector<std::optional<double>> accuracy;
  std::vector<std::optional<double>> avg_false_positive;
  std::vector<std::size_t> evaluated_images;
  std::vector<std::size_t> ground_truth_boxes;
};

/// Localization accuracy and average false positives at IoU threshold `t`.
///
/// Only (image, class) pairs that carry ground truth are evaluated. Acc_c is
/// the fraction of class-c ground-truth boxes overlapped (IoU > t) by some
/// prediction for that image and class. AFP_c counts predictions on evaluated
/// images that overlap no ground-truth box of their pair, divided by the number
/// of evaluated images for class c.
inline LocalizationResult localization_metrics(const std::map<LocalizationKey, std::vector<Bbox>>& predictions,
                                               std::span<const LabeledBox> ground_truth, std::size_t classes,
                                               double t) {
  std::map<LocalizationKey, std::vector<Bbox>> gt_by_pair;
  for (const auto& g : ground_truth) {
    if (g.class_index >= classes) throw Error("localization_metrics: class index out of range");
    gt_by_pair[{g.image_id, g.class_index}].push_back(g.box);
  }
  LocalizationResult res;
  res.accuracy.assign(classes, std::nullopt);
  res.avg_false_positive.assign(classes, std::nullopt);
  res.evaluated_images.assign(classes, 0);
  res.ground_truth_boxes.assign(classes, 0);
  std::vector<std::size_t> hits(classes, 0), false_pos(classes, 0);

  for (const auto& [key, gts] : gt_by_pair) {
    const std::size_t c = key.class_index;
    res.evaluated_images[c] += 1;
    res.ground_truth_boxes[c] += gts.size();
    auto it = predictions.find(key);
    const std::vector<Bbox> empty;
    const auto& preds = it == predictions.end() ? empty : it->second;
    for (const Bbox& g : gts) {
      if (std::any_of(preds.begin(), preds.end(), [&](const Bbox& p) { return iou(p, g) > t; })) ++hits[c];
    }
    for (const Bbox& p : preds) {
      if (std::none_of(gts.begin(), gts.end(), [&](const Bbox& g) { return iou(p, g) > t; })) ++false_pos[c];
    }
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (res.evaluated_images[c] == 0) continue;
    res.accuracy[c] = static_cast<double>(hits[c]) / static_cast<double>(res.ground_truth_boxes[c]);
    res.avg_false_positive[c] = static_cast<double>(false_pos[c]) / static_cast<double>(res.evaluated_images[c]);
  }
  return res;
}

}  // namespace relconv
