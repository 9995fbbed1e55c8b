#pragma once

// JSON and plain-text renderings of classification and localization metrics.

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "relconv/metrics.hpp"

namespace relconv {

namespace detail {

inline std::string cell(const std::optional<double>& v, int width, int precision) {
  char buf[64];
  if (v)
    std::snprintf(buf, sizeof buf, "%*.*f", width, precision, *v);
  else
    std::snprintf(buf, sizeof buf, "%*s", width, "-");
  return buf;
}

inline std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace detail

/// One row per class plus the mean; undefined entries print as '-'.
inline std::string auc_table(const std::map<std::string, ClassAuc>& columns, const std::vector<std::string>& class_names) {
  std::size_t w0 = 5;
  for (const auto& n : class_names) w0 = std::max(w0, n.size());
  std::string out = detail::pad("class", w0);
  for (const auto& [name, _] : columns) out += "  " + std::string(name.size() < 10 ? 10 - name.size() : 0, ' ') + name;
  out += '\n';
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    out += detail::pad(class_names[c], w0);
    for (const auto& [_, a] : columns) out += "  " + detail::cell(a.per_class.at(c), 10, 4);
    out += '\n';
  }
  out += detail::pad("mean", w0);
  for (const auto& [_, a] : columns) out += "  " + detail::cell(a.mean, 10, 4);
  out += '\n';
  return out;
}

/// Acc and AFP per class, one block of rows per IoU threshold.
inline std::string localization_table(const std::map<double, LocalizationResult>& by_threshold,
                                      const std::vector<std::string>& class_names) {
  std::size_t w = 6;
  for (const auto& n : class_names) w = std::max(w, n.size());
  std::string out = "T(IoU)  metric";
  for (const auto& n : class_names) out += "  " + std::string(w - n.size(), ' ') + n;
  out += '\n';
  for (const auto& [t, r] : by_threshold) {
    char head[32];
    std::snprintf(head, sizeof head, "%6.2f", t);
    out += std::string(head) + "  Acc   ";
    for (const auto& a : r.accuracy) out += "  " + detail::cell(a, static_cast<int>(w), 3);
    out += '\n' + std::string(6, ' ') + "  AFP   ";
    for (const auto& a : r.avg_false_positive) out += "  " + detail::cell(a, static_cast<int>(w), 3);
    out += '\n';
  }
  return out;
}

inline nlohmann::json localization_to_json(const std::map<double, LocalizationResult>& by_threshold,
                                           const std::vector<std::string>& class_names) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [t, r] : by_threshold) {
    nlohmann::json per = nlohmann::json::object();
    for (std::size_t c = 0; c < class_names.size(); ++c)
      per[class_names[c]] = {{"accuracy", detail::opt_json(r.accuracy.at(c))},
                             {"avg_false_positive", detail::opt_json(r.avg_false_positive.at(c))},
                             {"evaluated_images", r.evaluated_images.at(c)},
                             {"ground_truth_boxes", r.ground_truth_boxes.at(c)}};
    out.push_back({{"iou_threshold", t}, {"per_class", per}});
  }
  return out;
}

}  // namespace relconv
