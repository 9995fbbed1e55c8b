#pragma once

// Message passing units and the multi-relational propagation rule.
//
// Each MPU is a convolutional trunk f (conv-bn-relu stages, a 3x3 transition
// layer, global average pooling) followed by a bias-free linear head g_r.
// One layer computes, for every node i of the subgraph,
//
//   logit_i = g_r0(f_r0(x_i)) + sum_r sum_j a^r_ij g_r(f_r(x_j)) + b
//
// where a^r is the normalized adjacency of relation r and b a single output
// bias added after aggregation. Relations are summed in name order so the
// declaration order of relations does not affect the result.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "relconv/autograd.hpp"
#include "relconv/error.hpp"
#include "relconv/ops.hpp"
#include "relconv/rng.hpp"
#include "relconv/sparse.hpp"
#include "relconv/tensor.hpp"

namespace relconv {

enum class SharingMode { Independent, PPS, APS, Baseline };

inline std::string to_string(SharingMode m) {
  switch (m) {
    case SharingMode::Independent: return "independent";
    case SharingMode::PPS: return "pps";
    case SharingMode::APS: return "aps";
    case SharingMode::Baseline: return "baseline";
  }
  return "pps";
}

inline SharingMode parse_sharing_mode(const std::string& s) {
  if (s == "independent") return SharingMode::Independent;
  if (s == "pps") return SharingMode::PPS;
  if (s == "aps") return SharingMode::APS;
  if (s == "baseline") return SharingMode::Baseline;
  throw ConfigError("unknown sharing mode '" + s + "' (expected independent, pps, aps or baseline)");
}

struct MpuConfig {
  std::size_t in_channels = 3;
  /// Output channels of the 3x3 stride-2 conv-bn-relu stages.
  std::vector<std::size_t> stages{8, 16, 32};
  /// Filters of the 3x3 transition layer (feature dimension D).
  std::size_t transition_channels = 64;
  std::size_t classes = 4;
  /// Number of propagation layers K. Layers after the first act on vectors.
  std::size_t layers = 1;

  void validate() const {
    if (in_channels == 0 || transition_channels == 0 || classes == 0) throw ConfigError("MPU sizes must be positive");
    if (layers == 0) throw ConfigError("model needs at least one layer");
    for (auto c : stages)
      if (c == 0) throw ConfigError("trunk stage with zero channels");
  }

  /// Side of the transition maps for an input of side `image_side`.
  std::size_t map_side(std::size_t image_side) const {
    std::size_t s = image_side;
    for (std::size_t i = 0; i < stages.size(); ++i) s = (s - 1) / 2 + 1;
    return s;
  }

  nlohmann::json to_json() const {
    return {{"in_channels", in_channels},
            {"stages", stages},
            {"transition_channels", transition_channels},
            {"classes", classes},
            {"layers", layers}};
  }

  static MpuConfig from_json(const nlohmann::json& j) {
    MpuConfig c;
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.stages = j.at("stages").get<std::vector<std::size_t>>();
    c.transition_channels = j.at("transition_channels").get<std::size_t>();
    c.classes = j.at("classes").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    return c;
  }
};

namespace detail {

/// He-uniform: U(-b, b) with b = sqrt(6 / fan_in).
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, SplitMix64& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace detail

template <typename T>
struct ConvBlock {
  Parameter<T> weight;
  Parameter<T> gamma;
  Parameter<T> beta;
  ops::BatchNormBuffers<T> bn;
  std::size_t stride = 1;
  std::size_t padding = 1;
};

/// Shared part of an MPU: conv-bn-relu stages, transition layer, pooling.
template <typename T>
struct Trunk {
  std::vector<ConvBlock<T>> blocks;  // last block is the transition layer

  struct Output {
    Var<T> features;  // (N, D)
    Var<T> maps;      // (N, D, s, s)
  };

  static Trunk make(const MpuConfig& cfg, const std::string& prefix, SplitMix64& rng) {
    Trunk t;
    std::size_t in = cfg.in_channels;
    auto add = [&](const std::string& name, std::size_t out, std::size_t stride) {
      ConvBlock<T> b;
      b.weight = Parameter<T>(prefix + name + ".weight", detail::kaiming_uniform<T>({out, in, 3, 3}, in * 9, rng));
      b.gamma = Parameter<T>(prefix + name + ".bn.gamma", Tensor<T>({out}, T{1}));
      b.beta = Parameter<T>(prefix + name + ".bn.beta", Tensor<T>({out}, T{0}));
      b.bn = ops::BatchNormBuffers<T>(out);
      b.stride = stride;
      t.blocks.push_back(std::move(b));
      in = out;
    };
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) add("stage" + std::to_string(i), cfg.stages[i], 2);
    add("transition", cfg.transition_channels, 1);
    return t;
  }

  Output forward(Tape<T>& tape, Var<T> x, bool train) {
    for (auto& b : blocks) {
      x = ops::conv2d(x, tape.leaf(b.weight), ops::Conv2dAttrs{b.stride, b.padding});
      x = ops::batchnorm2d(x, tape.leaf(b.gamma), tape.leaf(b.beta), b.bn, ops::BatchNormAttrs{train, 0.1, 1e-5});
      x = ops::relu(x);
    }
    return {ops::global_avg_pool(x), x};
  }
};

/// Heads of one propagation layer plus its output bias.
template <typename T>
struct PropagationLayer {
  std::vector<Parameter<T>> heads;  // (out, in) each
  Parameter<T> bias;                // (out)
};

template <typename T>
class ImageGCNModel {
 public:
  ImageGCNModel() = default;

  ImageGCNModel(MpuConfig cfg, SharingMode mode, std::vector<std::string> relations, std::uint64_t seed)
      : cfg_(std::move(cfg)), mode_(mode), relations_(std::move(relations)) {
    cfg_.validate();
    std::vector<std::string> sorted = relations_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ConfigError("duplicate relation name");
    for (const auto& r : relations_)
      if (r == "self") throw ConfigError("relation name 'self' is reserved");

    SplitMix64 rng{seed, 0x6d6f64656cULL};
    const std::size_t trunk_count = mode_ == SharingMode::Independent ? relations_.size() + 1 : 1;
    for (std::size_t t = 0; t < trunk_count; ++t)
      trunks_.push_back(Trunk<T>::make(cfg_, "trunk." + slot_name(t) + ".", rng));

    const std::size_t d = cfg_.transition_channels;
    for (std::size_t k = 0; k < cfg_.layers; ++k) {
      const std::size_t out = k + 1 == cfg_.layers ? cfg_.classes : d;
      PropagationLayer<T> layer;
      const std::string prefix = "layer" + std::to_string(k) + ".";
      for (std::size_t h = 0; h < head_count(); ++h) {
        const std::string name = mode_ == SharingMode::APS ? "shared" : slot_name(h);
        layer.heads.emplace_back(prefix + "head." + name + ".weight", detail::kaiming_uniform<T>({out, d}, d, rng));
      }
      layer.bias = Parameter<T>(prefix + "bias", Tensor<T>({out}));
      layers_.push_back(std::move(layer));
    }
  }

  const MpuConfig& config() const { return cfg_; }
  SharingMode mode() const { return mode_; }
  const std::vector<std::string>& relations() const { return relations_; }
  std::size_t relation_count() const { return relations_.size(); }

  std::vector<Trunk<T>>& trunks() { return trunks_; }
  const std::vector<Trunk<T>>& trunks() const { return trunks_; }
  std::vector<PropagationLayer<T>>& layers() { return layers_; }
  const std::vector<PropagationLayer<T>>& layers() const { return layers_; }

  /// Slot 0 is the self connection, slot r + 1 relation r.
  std::string slot_name(std::size_t slot) const { return slot == 0 ? "self" : relations_.at(slot - 1); }

  std::size_t head_count() const {
    switch (mode_) {
      case SharingMode::APS:
      case SharingMode::Baseline: return 1;
      default: return relations_.size() + 1;
    }
  }

  /// Head used for slot s (0 = self).
  std::size_t head_index(std::size_t slot) const { return head_count() == 1 ? 0 : slot; }
  std::size_t trunk_index(std::size_t slot) const { return trunks_.size() == 1 ? 0 : slot; }

  /// Weight of the self-connection head of the last layer, (C, D).
  const Tensor<T>& self_head() const { return layers_.back().heads[0].value; }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& t : trunks_)
      for (auto& b : t.blocks) out.insert(out.end(), {&b.weight, &b.gamma, &b.beta});
    for (auto& l : layers_) {
      for (auto& h : l.heads) out.push_back(&h);
      out.push_back(&l.bias);
    }
    return out;
  }

  /// Running batch-norm statistics, named like their parameters.
  std::vector<std::pair<std::string, Tensor<T>*>> buffers() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto& t : trunks_)
      for (auto& b : t.blocks) {
        const std::string stem = b.gamma.name.substr(0, b.gamma.name.size() - std::string("gamma").size());
        out.emplace_back(stem + "running_mean", &b.bn.running_mean);
        out.emplace_back(stem + "running_var", &b.bn.running_var);
      }
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  nlohmann::json architecture() const {
    return {{"mpu", cfg_.to_json()}, {"sharing_mode", to_string(mode_)}, {"relations", relations_}};
  }

  /// Reorders per-relation matrices given under `names` into model order.
  std::vector<SparseMatrix> align(const std::vector<std::string>& names, const std::vector<SparseMatrix>& mats) const {
    if (names.size() != mats.size() || names.size() != relations_.size())
      throw GraphError("relation count mismatch: model has " + std::to_string(relations_.size()) + ", got " +
                       std::to_string(mats.size()));
    std::vector<SparseMatrix> out;
    for (const auto& r : relations_) {
      auto it = std::find(names.begin(), names.end(), r);
      if (it == names.end()) throw GraphError("graph lacks relation '" + r + "'");
      out.push_back(mats[static_cast<std::size_t>(it - names.begin())]);
    }
    return out;
  }

  /// Relation indices in summation (name) order.
  std::vector<std::size_t> summation_order() const {
    std::vector<std::size_t> order(relations_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return relations_[a] < relations_[b]; });
    return order;
  }

 private:
  MpuConfig cfg_;
  SharingMode mode_ = SharingMode::PPS;
  std::vector<std::string> relations_;
  std::vector<Trunk<T>> trunks_;
  std::vector<PropagationLayer<T>> layers_;
};

/// BASELINE model keeping only the self-connection path of `model`: its
/// self trunk, self (or shared) head and output bias per layer.
template <typename T>
ImageGCNModel<T> relation_free(const ImageGCNModel<T>& model) {
  ImageGCNModel<T> out(model.config(), SharingMode::Baseline, model.relations(), 0);
  out.trunks()[0] = model.trunks()[0];
  for (std::size_t k = 0; k < out.layers().size(); ++k) {
    const auto& src = model.layers()[k];
    auto& dst = out.layers()[k];
    dst.heads[0].value = src.heads[model.head_index(0)].value;
    dst.bias.value = src.bias.value;
  }
  return out;
}

/// Trunk outputs per trunk (one entry unless INDEPENDENT).
template <typename T>
struct MpuOutput {
  std::vector<Var<T>> features;
  std::vector<Var<T>> maps;
};

template <typename T>
MpuOutput<T> mpu_forward(ImageGCNModel<T>& model, Tape<T>& tape, Var<T> images, bool train) {
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != model.config().in_channels)
    throw ShapeError("mpu_forward: expected images (N, " + std::to_string(model.config().in_channels) +
                     ", S, S), got " + shape_string(s));
  MpuOutput<T> out;
  for (auto& trunk : model.trunks()) {
    auto o = trunk.forward(tape, images, train);
    out.features.push_back(o.features);
    out.maps.push_back(o.maps);
  }
  return out;
}

/// Matrix form of the propagation rule. `features` holds one (N, D) input per
/// trunk; `adjacency` holds one (N, N) matrix per relation in model order.
/// Returns logits for all N rows.
template <typename T>
Var<T> propagate(ImageGCNModel<T>& model, const std::vector<SparseMatrix>& adjacency, std::vector<Var<T>> features) {
  if (features.size() != model.trunks().size())
    throw ShapeError("propagate: expected " + std::to_string(model.trunks().size()) + " feature inputs, got " +
                     std::to_string(features.size()));
  const bool baseline = model.mode() == SharingMode::Baseline;
  if (!baseline && adjacency.size() != model.relation_count())
    throw GraphError("relation count mismatch: model has " + std::to_string(model.relation_count()) +
                     " relations, got " + std::to_string(adjacency.size()) + " adjacency matrices");
  Tape<T>& tape = features.front().tape();
  const auto order = model.summation_order();
  auto feature_of = [&](std::size_t slot) { return features[features.size() == 1 ? 0 : slot]; };

  Var<T> h;
  for (std::size_t k = 0; k < model.layers().size(); ++k) {
    auto& layer = model.layers()[k];
    auto input = [&](std::size_t slot) { return k == 0 ? feature_of(slot) : h; };
    Var<T> out = ops::linear(input(0), tape.leaf(layer.heads[model.head_index(0)]));
    if (!baseline) {
      for (std::size_t r : order) {
        const std::size_t slot = r + 1;
        const Var<T> msg = ops::linear(input(slot), tape.leaf(layer.heads[model.head_index(slot)]));
        out = ops::add(out, ops::spmm(adjacency[r], msg));
      }
    }
    out = ops::add_bias(out, tape.leaf(layer.bias));
    h = k + 1 == model.layers().size() ? out : ops::relu(out);
  }
  return h;
}

/// Node form of the propagation rule, evaluated with explicit per-node loops
/// on plain tensors. Agrees with propagate() up to rounding.
template <typename T>
Tensor<T> propagate_node_form(const ImageGCNModel<T>& model, const std::vector<SparseMatrix>& adjacency,
                              const std::vector<Tensor<T>>& features) {
  const bool baseline = model.mode() == SharingMode::Baseline;
  if (!baseline && adjacency.size() != model.relation_count()) throw GraphError("relation count mismatch");
  const auto order = model.summation_order();
  const std::size_t n = features.front().dim(0);
  auto feature_of = [&](std::size_t slot) -> const Tensor<T>& { return features[features.size() == 1 ? 0 : slot]; };

  // message g(h_j) for one head: W h_j
  auto message = [](const Tensor<T>& w, const Tensor<T>& h, std::size_t j) {
    const std::size_t out = w.dim(0), in = w.dim(1);
    std::vector<T> m(out, T{0});
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t d = 0; d < in; ++d) m[o] += w(o, d) * h(j, d);
    return m;
  };

  Tensor<T> h;
  for (std::size_t k = 0; k < model.layers().size(); ++k) {
    const auto& layer = model.layers()[k];
    const std::size_t out_dim = layer.bias.value.size();
    Tensor<T> next({n, out_dim});
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<T> acc = message(layer.heads[model.head_index(0)].value, k == 0 ? feature_of(0) : h, i);
      if (!baseline) {
        for (std::size_t r : order) {
          const Tensor<T>& w = layer.heads[model.head_index(r + 1)].value;
          const Tensor<T>& src = k == 0 ? feature_of(r + 1) : h;
          for (const Triplet& e : adjacency[r].row(i)) {
            const auto m = message(w, src, e.col);
            for (std::size_t o = 0; o < out_dim; ++o) acc[o] += static_cast<T>(e.value) * m[o];
          }
        }
      }
      for (std::size_t o = 0; o < out_dim; ++o) {
        T v = acc[o] + layer.bias.value[o];
        next(i, o) = (k + 1 == model.layers().size() || v > T{0}) ? v : T{0};
      }
    }
    h = std::move(next);
  }
  return h;
}

/// Dense single-relation GCN layer ReLU(D^-1/2 A D^-1/2 H W), where `a_tilde`
/// already contains the self loops and D is its degree matrix.
template <typename T>
Tensor<T> original_gcn_layer(const Tensor<T>& a_tilde, const Tensor<T>& h, const Tensor<T>& w) {
  const std::size_t n = a_tilde.dim(0), d = h.dim(1), o = w.dim(1);
  if (a_tilde.dim(1) != n || h.dim(0) != n || w.dim(0) != d)
    throw ShapeError("original_gcn_layer: shapes " + shape_string(a_tilde.shape()) + ", " + shape_string(h.shape()) +
                     ", " + shape_string(w.shape()));
  std::vector<T> inv_sqrt(n, T{0});
  for (std::size_t i = 0; i < n; ++i) {
    T deg{0};
    for (std::size_t j = 0; j < n; ++j) deg += a_tilde(i, j);
    if (deg > T{0}) inv_sqrt[i] = T{1} / std::sqrt(deg);
  }
  Tensor<T> hw({n, o});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < o; ++c)
      for (std::size_t k = 0; k < d; ++k) hw(i, c) += h(i, k) * w(k, c);
  Tensor<T> out({n, o});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < o; ++c) {
      T acc{0};
      for (std::size_t j = 0; j < n; ++j) acc += inv_sqrt[i] * a_tilde(i, j) * inv_sqrt[j] * hw(j, c);
      out(i, c) = std::max(acc, T{0});
    }
  return out;
}

/// Relation matrix that makes one engine layer reproduce a GCN layer on
/// `a_tilde`: the engine always adds the node's own message with weight 1,
/// so the relation carries D^-1/2 A D^-1/2 - I.
inline SparseMatrix gcn_relation_matrix(const std::vector<std::vector<double>>& a_tilde) {
  const std::size_t n = a_tilde.size();
  std::vector<double> inv_sqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0;
    for (double v : a_tilde[i]) deg += v;
    if (deg > 0) inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  std::vector<Triplet> t;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double v = inv_sqrt[i] * a_tilde[i][j] * inv_sqrt[j] - (i == j ? 1.0 : 0.0);
      if (v != 0.0) t.push_back({i, j, v});
    }
  return SparseMatrix(n, n, std::move(t));
}

}  // namespace relconv
