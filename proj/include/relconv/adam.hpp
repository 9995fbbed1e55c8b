#pragma once

#include <cmath>
#include <span>

#include "relconv/autograd.hpp"
#include "relconv/error.hpp"

namespace relconv {

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// One bias-corrected Adam update on each parameter. Weight decay is added to
/// the gradient (L2 form). Gradients are left in place.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const AdamConfig& cfg) {
  for (Parameter<T>* p : params) {
    if (!p->grad) throw Error("adam_step: parameter '" + p->name + "' has no gradient");
  }
  for (Parameter<T>* p : params) {
    AdamState<T>& st = p->adam;
    if (st.m.shape() != p->value.shape() || st.m.size() != p->value.size()) {
      st.m = Tensor<T>(p->value.shape());
      st.v = Tensor<T>(p->value.shape());
    }
    ++st.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    const auto& g = *p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double gi = static_cast<double>(g[i]) + cfg.weight_decay * static_cast<double>(p->value[i]);
      const double m = cfg.beta1 * static_cast<double>(st.m[i]) + (1.0 - cfg.beta1) * gi;
      const double v = cfg.beta2 * static_cast<double>(st.v[i]) + (1.0 - cfg.beta2) * gi * gi;
      st.m[i] = static_cast<T>(m);
      st.v[i] = static_cast<T>(v);
      const double update = cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
      p->value[i] = static_cast<T>(static_cast<double>(p->value[i]) - update);
    }
  }
}

}  // namespace relconv
