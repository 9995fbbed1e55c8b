#pragma once

// Brute-force references that share no code with the library.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "relconv/metrics.hpp"

namespace oracle {

/// Dense D^-1/2 A D^-1/2 of the same-cluster adjacency (no self loops).
inline std::vector<std::vector<double>> dense_normalized(const std::vector<std::size_t>& part) {
  const std::size_t n = part.size();
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && part[i] == part[j]) {
        a[i][j] = 1.0;
        deg[i] += 1.0;
      }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double di = deg[i] > 0 ? 1.0 / std::sqrt(deg[i]) : 0.0;
      const double dj = deg[j] > 0 ? 1.0 / std::sqrt(deg[j]) : 0.0;
      a[i][j] *= di * dj;
    }
  return a;
}

/// O(P * N) pairwise enumeration.
inline double auc_by_pairs(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double credit = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[i] || y[j]) continue;
      ++pairs;
      credit += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return credit / static_cast<double>(pairs);
}

/// IoU of integer-cornered boxes by counting pixels on a grid covering both.
inline double iou_by_pixels(const relconv::Bbox& a, const relconv::Bbox& b, int extent) {
  long inter = 0, uni = 0;
  for (int y = 0; y < extent; ++y)
    for (int x = 0; x < extent; ++x) {
      const bool in_a = x >= a.x_min && x < a.x_max && y >= a.y_min && y < a.y_max;
      const bool in_b = x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace oracle
