#pragma once

// Neighbor-sampled training loop, split evaluation and validation-based
// checkpoint selection.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "relconv/adam.hpp"
#include "relconv/dataio.hpp"
#include "relconv/error.hpp"
#include "relconv/image.hpp"
#include "relconv/loss.hpp"
#include "relconv/metrics.hpp"
#include "relconv/model.hpp"
#include "relconv/ops.hpp"
#include "relconv/parallel.hpp"
#include "relconv/relgraph.hpp"
#include "relconv/rng.hpp"
#include "relconv/sampler.hpp"

namespace relconv {

struct TrainConfig {
  std::size_t batch_size = 16;
  /// Neighbors sampled per node and relation.
  std::size_t neighbors = 1;
  std::size_t epochs = 10;
  AdamConfig adam;
  std::uint64_t seed = 0;
  SharingMode mode = SharingMode::PPS;
  /// Extra validation every this many steps; 0 validates once per epoch only.
  std::size_t eval_every = 0;
  bool exhaustive_eval = false;
  /// Join validation nodes to each other as well as to training nodes.
  bool link_eval_nodes = false;
  std::size_t eval_batch_size = 16;
  MpuConfig mpu;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch size must be at least 1");
    if (epochs == 0) throw ConfigError("epochs must be at least 1");
    if (eval_batch_size == 0) throw ConfigError("eval batch size must be at least 1");
    if (!(adam.lr > 0) || adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1 || adam.eps <= 0)
      throw ConfigError("invalid Adam settings");
    mpu.validate();
  }

  nlohmann::json to_json() const {
    return {{"batch_size", batch_size},
            {"neighbors", neighbors},
            {"epochs", epochs},
            {"lr", adam.lr},
            {"beta1", adam.beta1},
            {"beta2", adam.beta2},
            {"eps", adam.eps},
            {"weight_decay", adam.weight_decay},
            {"seed", seed},
            {"mode", to_string(mode)},
            {"eval_every", eval_every},
            {"exhaustive_eval", exhaustive_eval},
            {"link_eval_nodes", link_eval_nodes},
            {"eval_batch_size", eval_batch_size},
            {"mpu", mpu.to_json()}};
  }
};

struct EvalOptions {
  std::size_t neighbors = 1;
  bool exhaustive = false;
  bool link_new_nodes = false;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  /// Images per eval-mode trunk forward.
  std::size_t chunk = 64;

  static EvalOptions from(const TrainConfig& cfg) {
    return {cfg.neighbors, cfg.exhaustive_eval, cfg.link_eval_nodes, cfg.eval_batch_size, cfg.seed, 64};
  }
};

/// Loads and preprocesses the images of graph nodes on demand.
template <typename T>
class ImageLoader {
 public:
  explicit ImageLoader(const DatasetManifest& manifest) : manifest_(&manifest) {
    for (std::size_t i = 0; i < manifest.records.size(); ++i) index_.emplace(manifest.records[i].image_id, i);
  }

  const ImageRecord& record(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw GraphError("image '" + id + "' is not in the manifest");
    return manifest_->records[it->second];
  }

  /// (N, 3, S, S) batch for the given graph nodes, in order.
  Tensor<T> images(const RelationGraph& g, std::span<const std::size_t> nodes) const {
    const std::size_t s = manifest_->image_size, per = 3 * s * s;
    Tensor<T> out({nodes.size(), 3, s, s});
    std::vector<std::string> errors(nodes.size());
    parallel_for(nodes.size(), [&](std::size_t i) {
      try {
        const Tensor<T> img = preprocess_image<T>(read_pnm(manifest_->image_path(record(g.node_ids()[nodes[i]]))), s);
        std::copy(img.ptr(), img.ptr() + per, out.ptr() + i * per);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    });
    for (const auto& e : errors)
      if (!e.empty()) throw IoError(e);
    return out;
  }

  /// (N, C) label matrix.
  Tensor<T> labels(const RelationGraph& g, std::span<const std::size_t> nodes) const {
    const std::size_t c = manifest_->class_count();
    Tensor<T> y({nodes.size(), c});
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& r = record(g.node_ids()[nodes[i]]);
      for (std::size_t k = 0; k < c; ++k) y(i, k) = static_cast<T>(r.labels[k]);
    }
    return y;
  }

 private:
  const DatasetManifest* manifest_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::vector<std::string> relation_names(const RelationGraph& g) {
  std::vector<std::string> out;
  for (const auto& r : g.relations()) out.push_back(r.spec.name);
  return out;
}

struct EvalResult {
  std::vector<std::string> image_ids;
  /// (N, C) row-major probabilities and labels.
  std::vector<double> probabilities;
  std::vector<std::uint8_t> labels;
  std::size_t classes = 0;
  ClassAuc auc;
};

inline nlohmann::json auc_to_json(const ClassAuc& a, const std::vector<std::string>& class_names) {
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t c = 0; c < a.per_class.size(); ++c)
    per[class_names.at(c)] = a.per_class[c] ? nlohmann::json(*a.per_class[c]) : nlohmann::json(nullptr);
  return {{"per_class", per}, {"mean", a.mean ? nlohmann::json(*a.mean) : nlohmann::json(nullptr)}};
}

/// Probabilities for every node of `eval_graph` at index >= first, computed
/// batch by batch on sampled (or exhaustive) subgraphs. Trunk features are
/// computed once per node in eval mode and shared across batches.
template <typename T>
EvalResult evaluate_nodes(ImageGCNModel<T>& model, const DatasetManifest& manifest, const RelationGraph& eval_graph,
                          std::size_t first, const EvalOptions& opt) {
  const ImageLoader<T> loader(manifest);
  const std::size_t depth = model.config().layers;
  const bool baseline = model.mode() == SharingMode::Baseline;
  const auto names = relation_names(eval_graph);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t v = first; v < eval_graph.node_count(); v += opt.batch_size) {
    std::vector<std::size_t> b;
    for (std::size_t u = v; u < std::min(eval_graph.node_count(), v + opt.batch_size); ++u) b.push_back(u);
    batches.push_back(std::move(b));
  }
  std::vector<Subgraph> subgraphs;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    if (baseline) {
      subgraphs.push_back(expand_batch(eval_graph, batches[b], depth, 0, 0));
    } else if (opt.exhaustive) {
      subgraphs.push_back(exhaustive_batch(eval_graph, batches[b], depth));
    } else {
      subgraphs.push_back(expand_batch(eval_graph, batches[b], depth, opt.neighbors, hash_key({opt.seed, 0x6576616cULL, b})));
    }
  }

  // eval-mode trunk features for every node any subgraph needs
  std::vector<std::size_t> needed;
  {
    std::vector<char> seen(eval_graph.node_count(), 0);
    for (const auto& sg : subgraphs)
      for (std::size_t v : sg.nodes()) seen[v] = 1;
    for (std::size_t v = 0; v < seen.size(); ++v)
      if (seen[v]) needed.push_back(v);
  }
  std::vector<std::size_t> row_of(eval_graph.node_count(), 0);
  for (std::size_t i = 0; i < needed.size(); ++i) row_of[needed[i]] = i;
  const std::size_t d = model.config().transition_channels;
  std::vector<Tensor<T>> feats(model.trunks().size(), Tensor<T>({needed.size(), d}));
  for (std::size_t start = 0; start < needed.size(); start += opt.chunk) {
    const std::size_t len = std::min(opt.chunk, needed.size() - start);
    const std::span<const std::size_t> chunk(needed.data() + start, len);
    Tape<T> tape;
    auto out = mpu_forward(model, tape, tape.constant(loader.images(eval_graph, chunk)), false);
    for (std::size_t t = 0; t < feats.size(); ++t)
      std::copy_n(out.features[t].value().ptr(), len * d, feats[t].ptr() + start * d);
  }

  EvalResult res;
  res.classes = model.config().classes;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const Subgraph& sg = subgraphs[b];
    Tape<T> tape;
    std::vector<Var<T>> fv;
    for (const auto& f : feats) {
      Tensor<T> sub({sg.nodes().size(), d});
      for (std::size_t i = 0; i < sg.nodes().size(); ++i)
        std::copy_n(f.ptr() + row_of[sg.nodes()[i]] * d, d, sub.ptr() + i * d);
      fv.push_back(tape.constant(std::move(sub)));
    }
    const auto adjacency = baseline ? std::vector<SparseMatrix>{} : model.align(names, sg.adjacency);
    Var<T> logits = propagate(model, adjacency, fv);
    const Tensor<T>& lv = logits.value();
    const Tensor<T> y = loader.labels(eval_graph, sg.batch());
    for (std::size_t i = 0; i < sg.batch().size(); ++i) {
      res.image_ids.push_back(eval_graph.node_ids()[sg.batch()[i]]);
      for (std::size_t c = 0; c < res.classes; ++c) {
        res.probabilities.push_back(static_cast<double>(ops::sigmoid_scalar(lv(i, c))));
        res.labels.push_back(static_cast<std::uint8_t>(y(i, c)));
      }
    }
  }
  res.auc = class_auc(res.probabilities, res.labels, res.classes);
  return res;
}

/// Extends the training graph with the records of `split` and evaluates them.
template <typename T>
EvalResult evaluate_classification(ImageGCNModel<T>& model, const DatasetManifest& manifest,
                                   const RelationGraph& train_graph, Split split, const EvalOptions& opt) {
  const auto records = records_in(manifest.records, split);
  if (records.empty()) throw ConfigError(std::string("split '") + std::string(to_string(split)) + "' is empty");
  const RelationGraph g = extend_graph(train_graph, records, opt.link_new_nodes);
  return evaluate_nodes(model, manifest, g, train_graph.node_count(), opt);
}

/// Graph over the training records of a manifest with the default relations.
inline RelationGraph training_graph(const DatasetManifest& manifest) {
  const auto train = records_in(manifest.records, Split::Train);
  if (train.empty()) throw ConfigError("training split is empty");
  const auto specs = default_relations();
  return build_relation_graph(train, specs);
}

template <typename T>
struct TrainResult {
  ImageGCNModel<T> best;
  ImageGCNModel<T> last;
  std::size_t best_epoch = 0;
  std::size_t best_step = 0;
  std::optional<double> best_auc;
  std::vector<nlohmann::json> log;
};

/// Trains a model on the training nodes of `graph` and keeps the parameters
/// with the highest mean validation AUC (earliest on ties).
template <typename T>
TrainResult<T> train(const TrainConfig& cfg, const DatasetManifest& manifest, const RelationGraph& graph,
                     const std::function<void(const nlohmann::json&)>& on_log = {}) {
  cfg.validate();
  if (cfg.mpu.classes != manifest.class_count())
    throw ConfigError("model has " + std::to_string(cfg.mpu.classes) + " classes, dataset has " +
                      std::to_string(manifest.class_count()));
  const ImageLoader<T> loader(manifest);
  for (const auto& id : graph.node_ids())
    if (loader.record(id).split != Split::Train) throw ConfigError("graph node '" + id + "' is not a training image");
  const auto val_records = records_in(manifest.records, Split::Val);
  if (val_records.empty()) throw ConfigError("validation split is empty");
  const RelationGraph val_graph = extend_graph(graph, val_records, cfg.link_eval_nodes);

  const auto names = relation_names(graph);
  TrainResult<T> res;
  ImageGCNModel<T> model(cfg.mpu, cfg.mode, names, cfg.seed);
  auto params = model.parameters();
  const std::size_t depth = cfg.mpu.layers;
  const std::size_t n = cfg.mode == SharingMode::Baseline ? 0 : cfg.neighbors;
  const EvalOptions eval_opt = EvalOptions::from(cfg);

  auto emit = [&](nlohmann::json j) {
    if (on_log) on_log(j);
    res.log.push_back(std::move(j));
  };
  double best = -std::numeric_limits<double>::infinity();
  bool have_best = false;
  auto validate = [&](std::size_t epoch, std::size_t step) {
    const EvalResult ev = evaluate_nodes(model, manifest, val_graph, graph.node_count(), eval_opt);
    nlohmann::json j = auc_to_json(ev.auc, manifest.class_names);
    j["event"] = "validation";
    j["epoch"] = epoch;
    j["step"] = step;
    emit(std::move(j));
    const double score = ev.auc.mean ? *ev.auc.mean : -std::numeric_limits<double>::infinity();
    if (!have_best || score > best) {
      have_best = true;
      best = score;
      res.best = model;
      res.best_epoch = epoch;
      res.best_step = step;
      res.best_auc = ev.auc.mean;
    }
  };

  std::vector<std::size_t> order(graph.node_count());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 shuffler{cfg.seed, 0x65706f6368ULL, epoch};
    shuffle(order, shuffler);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      ++step;
      const Subgraph sg = expand_batch(graph, batch, depth, n, hash_key({cfg.seed, 0x73746570ULL, step}));
      Tape<T> tape;
      auto mpu = mpu_forward(model, tape, tape.constant(loader.images(graph, sg.nodes())), true);
      const auto adjacency = cfg.mode == SharingMode::Baseline ? std::vector<SparseMatrix>{} : model.align(names, sg.adjacency);
      Var<T> logits = propagate(model, adjacency, mpu.features);
      std::vector<std::size_t> rows(batch.size());
      std::iota(rows.begin(), rows.end(), std::size_t{0});
      Var<T> probs = ops::sigmoid(ops::gather_rows(logits, std::span<const std::size_t>(rows)));
      Var<T> loss = weighted_bce(probs, loader.labels(graph, sg.batch()));
      const double lv = static_cast<double>(loss.value().item());
      if (!std::isfinite(lv)) {
        std::string ids;
        for (std::size_t v : batch) ids += (ids.empty() ? "" : ", ") + graph.node_ids()[v];
        throw NonFiniteLossError("non-finite loss at step " + std::to_string(step) + " (epoch " +
                                 std::to_string(epoch) + "), batch: " + ids);
      }
      model.zero_grad();
      tape.backward(loss);
      adam_step<T>(params, cfg.adam);
      emit({{"event", "step"}, {"epoch", epoch}, {"step", step}, {"loss", lv}, {"batch", batch.size()},
            {"subgraph_nodes", sg.nodes().size()}});
      if (cfg.eval_every > 0 && step % cfg.eval_every == 0) validate(epoch, step);
    }
    if (cfg.eval_every == 0 || step % cfg.eval_every != 0) validate(epoch, step);
  }
  res.last = model;
  return res;
}

}  // namespace relconv
