#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "relconv/autograd.hpp"
#include "relconv/error.hpp"
#include "relconv/tensor.hpp"

namespace relconv {

inline constexpr double kProbabilityClamp = 1e-7;

/// Class-imbalance weighted binary cross entropy for multi-label targets.
///
/// For a batch of probabilities p (B x C) and binary labels y (B x C), with
/// N_p ones and N_n zeros counted over the whole label matrix:
///
///   l_b = -( sum_{y=1} (N_n / N_p) log p  +  sum_{y=0} log(1 - p) )
///
/// and the returned loss is the mean of l_b over the B rows. When the batch has
/// no positive label the ratio is taken as 1. Probabilities are clamped to
/// [eps, 1 - eps]; the gradient is zero where the clamp is active.
template <typename T>
Var<T> weighted_bce(Var<T> p, const Tensor<T>& y, double eps = kProbabilityClamp) {
  if (p.shape().size() != 2 || p.shape() != y.shape()) {
    throw ShapeError("weighted_bce: probabilities " + shape_string(p.shape()) + " vs labels " +
                     shape_string(y.shape()));
  }
  const std::size_t rows = p.shape()[0];
  if (rows == 0) throw ShapeError("weighted_bce on empty batch");
  std::size_t positives = 0;
  for (T v : y.data()) {
    if (v != T{0} && v != T{1}) throw ShapeError("weighted_bce: labels must be 0 or 1");
    if (v == T{1}) ++positives;
  }
  const std::size_t negatives = y.size() - positives;
  const T ratio = positives > 0 ? static_cast<T>(negatives) / static_cast<T>(positives) : T{1};
  const T lo = static_cast<T>(eps), hi = T{1} - static_cast<T>(eps);

  T total{0};
  const auto& pv = p.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T pc = std::clamp(pv[i], lo, hi);
    total -= y[i] == T{1} ? ratio * std::log(pc) : std::log(T{1} - pc);
  }
  const T b = static_cast<T>(rows);
  return p.tape().record(Tensor<T>::scalar(total / b), p.requires_grad(),
                         [p, y, ratio, lo, hi, b](Tape<T>& tape, const Tensor<T>& g) {
    Tensor<T> gp(p.shape());
    const auto& pv = p.value();
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (pv[i] < lo || pv[i] > hi) continue;
      gp[i] = (y[i] == T{1} ? -ratio / pv[i] : T{1} / (T{1} - pv[i])) * g.item() / b;
    }
    tape.accumulate(p, gp);
  });
}

}  // namespace relconv
