// relconv: command-line front end.
//
// Exit codes: 0 ok, 1 missing or unreadable file, 2 usage or configuration
// error, 3 non-finite training loss.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <relconv/checkpoint.hpp>
#include <relconv/dataio.hpp>
#include <relconv/graph_io.hpp>
#include <relconv/localize.hpp>
#include <relconv/report.hpp>
#include <relconv/sampler.hpp>
#include <relconv/synthetic.hpp>
#include <relconv/trainer.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace relconv;

namespace {

// Flags bound to variables. After parsing, values missing from the command
// line are taken from the JSON config file; the merged set is the resolved
// config written next to the outputs.
class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_file_, "JSON config file; flags override its values");
  }

  template <typename V>
  CLI::Option* add(const std::string& flag, V& target, const std::string& help) {
    CLI::Option* opt = app_->add_option("--" + flag, target, help)->capture_default_str();
    entries_.push_back({key(flag), opt, [&target](const json& j) { target = j.get<V>(); }, [&target] { return json(target); }});
    return opt;
  }

  CLI::Option* add_flag(const std::string& flag, bool& target, const std::string& help) {
    CLI::Option* opt = app_->add_flag("--" + flag, target, help);
    entries_.push_back({key(flag), opt, [&target](const json& j) { target = j.get<bool>(); }, [&target] { return json(target); }});
    return opt;
  }

  json resolve() {
    json file = json::object();
    if (!config_file_.empty()) {
      std::ifstream in(config_file_);
      if (!in) throw IoError("cannot read config file " + config_file_);
      try {
        file = json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError("malformed config file " + config_file_ + ": " + e.what());
      }
      if (!file.is_object()) throw ConfigError("config file " + config_file_ + " must hold a JSON object");
    }
    for (const auto& [k, v] : file.items()) {
      bool known = false;
      for (const auto& e : entries_) known |= e.key == k;
      if (!known) throw ConfigError("unknown config key '" + k + "'");
    }
    json resolved = json::object();
    for (auto& e : entries_) {
      if (e.option->count() == 0 && file.contains(e.key)) {
        try {
          e.read(file[e.key]);
        } catch (const json::exception&) {
          throw ConfigError("config key '" + e.key + "' has the wrong type");
        }
      }
      resolved[e.key] = e.write();
    }
    return resolved;
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* option;
    std::function<void(const json&)> read;
    std::function<json()> write;
  };
  static std::string key(std::string flag) {
    for (char& c : flag)
      if (c == '-') c = '_';
    return flag;
  }

  CLI::App* app_;
  std::string config_file_;
  std::vector<Entry> entries_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path prepare_out(const std::string& out, const json& resolved, const std::string& command) {
  if (out.empty()) throw ConfigError("--out is required");
  fs::create_directories(out);
  json cfg = resolved;
  cfg["command"] = command;
  write_json(fs::path(out) / "config.json", cfg);
  return out;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError("--" + what + " is required");
  if (!fs::exists(path)) throw IoError(what + " not found: " + path);
}

Split parse_split_name(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

RelationGraph graph_for(const DatasetManifest& m, const std::string& graph_dir) {
  if (graph_dir.empty()) return training_graph(m);
  require_file(graph_dir, "graph");
  return load_graph(graph_dir);
}

// ---------------------------------------------------------------- commands

struct GenSynthetic {
  SyntheticConfig cfg;
  std::uint64_t seed = 1;
  std::string out;

  void attach(Options& o) {
    o.add("patients", cfg.patients, "Number of patients");
    o.add("classes", cfg.classes, "Number of finding classes");
    o.add("size", cfg.image_size, "Image side in pixels");
    o.add("min-images", cfg.min_images, "Fewest images per patient");
    o.add("max-images", cfg.max_images, "Most images per patient");
    o.add("persistence", cfg.persistence, "Probability a patient carries a finding");
    o.add("expression", cfg.expression, "Probability an image of a carrier shows the finding");
    o.add("intensity", cfg.intensity, "Blob brightness over background");
    o.add("noise", cfg.noise, "Pixel noise standard deviation");
    o.add("seed", seed, "Generator seed");
    o.add("out", out, "Output directory");
  }

  int run(const json& resolved) {
    cfg.validate();
    const fs::path dir = prepare_out(out, resolved, "gen-synthetic");
    const auto ds = generate_synthetic(cfg, seed);
    write_synthetic(dir, ds);
    std::printf("wrote %zu images of %zu patients to %s\n", ds.manifest.records.size(), cfg.patients, dir.c_str());
    return 0;
  }
};

struct BuildGraph {
  std::string manifest, out;

  void attach(Options& o) {
    o.add("manifest", manifest, "Dataset manifest.json");
    o.add("out", out, "Output directory");
  }

  int run(const json& resolved) {
    require_file(manifest, "manifest");
    const auto m = load_manifest(manifest);
    const fs::path dir = prepare_out(out, resolved, "build-graph");
    const auto g = training_graph(m);
    save_graph(dir / "graph", g);
    json summary = {{"nodes", g.node_count()}, {"relations", json::array()}};
    for (const auto& r : g.relations()) {
      std::size_t clusters = 0;
      for (std::size_t p : r.partition) clusters = std::max(clusters, p + 1);
      summary["relations"].push_back({{"name", r.spec.name}, {"clusters", clusters}, {"nnz", r.adjacency.nnz()}});
    }
    write_json(dir / "graph_summary.json", summary);
    std::printf("graph over %zu training images written to %s\n", g.node_count(), (dir / "graph").c_str());
    return 0;
  }
};

struct Train {
  TrainConfig cfg;
  std::string manifest, graph, out, mode = "pps", dtype = "f64";

  void attach(Options& o) {
    o.add("manifest", manifest, "Dataset manifest.json");
    o.add("graph", graph, "Graph directory from build-graph (built from the manifest when omitted)");
    o.add("out", out, "Output directory");
    o.add("mode", mode, "Sharing mode: independent, pps, aps or baseline");
    o.add("batch-size", cfg.batch_size, "Images per batch");
    o.add("neighbors", cfg.neighbors, "Neighbors sampled per image and relation");
    o.add("epochs", cfg.epochs, "Training epochs");
    o.add("lr", cfg.adam.lr, "Adam learning rate");
    o.add("beta1", cfg.adam.beta1, "Adam beta1");
    o.add("beta2", cfg.adam.beta2, "Adam beta2");
    o.add("eps", cfg.adam.eps, "Adam epsilon");
    o.add("weight-decay", cfg.adam.weight_decay, "Adam weight decay");
    o.add("seed", cfg.seed, "Seed for initialization, shuffling and sampling");
    o.add("eval-every", cfg.eval_every, "Extra validation every N steps (0: once per epoch)");
    o.add_flag("exhaustive-eval", cfg.exhaustive_eval, "Use every neighbor when validating");
    o.add_flag("link-eval-nodes", cfg.link_eval_nodes, "Relate validation images to each other as well");
    o.add("eval-batch-size", cfg.eval_batch_size, "Images per validation batch");
    o.add("layers", cfg.mpu.layers, "Propagation layers");
    o.add("stages", cfg.mpu.stages, "Trunk stage widths");
    o.add("features", cfg.mpu.transition_channels, "Transition filters (feature dimension)");
    o.add("dtype", dtype, "Storage precision: f64 or f32");
  }

  template <typename T>
  int run_typed(const DatasetManifest& m, const RelationGraph& g, const fs::path& dir) {
    std::ofstream log(dir / "train_log.jsonl");
    if (!log) throw IoError("cannot write " + (dir / "train_log.jsonl").string());
    auto res = train<T>(cfg, m, g, [&](const json& j) {
      log << j.dump() << '\n';
      if (j["event"] == "validation")
        std::printf("epoch %zu step %zu  val mean AUC %s\n", j["epoch"].get<std::size_t>(), j["step"].get<std::size_t>(),
                    j["mean"].dump().c_str());
    });
    const json meta = {{"epoch", res.best_epoch}, {"step", res.best_step},
                       {"val_mean_auc", res.best_auc ? json(*res.best_auc) : json(nullptr)}, {"train", cfg.to_json()}};
    save_checkpoint(dir / "checkpoint.json", res.best, meta);
    save_checkpoint(dir / "last.json", res.last, {{"train", cfg.to_json()}});
    write_json(dir / "summary.json", meta);
    std::printf("best epoch %zu, checkpoint %s\n", res.best_epoch, (dir / "checkpoint.json").c_str());
    return 0;
  }

  int run(const json& resolved) {
    require_file(manifest, "manifest");
    cfg.mode = parse_sharing_mode(mode);
    if (dtype != "f64" && dtype != "f32") throw ConfigError("dtype must be f64 or f32");
    const auto m = load_manifest(manifest);
    cfg.mpu.classes = m.class_count();
    cfg.validate();
    const auto g = graph_for(m, graph);
    const fs::path dir = prepare_out(out, resolved, "train");
    return dtype == "f64" ? run_typed<double>(m, g, dir) : run_typed<float>(m, g, dir);
  }
};

struct Eval {
  std::string manifest, checkpoint, graph, out, split = "test", mode;
  EvalOptions opt;

  void attach(Options& o) {
    o.add("manifest", manifest, "Dataset manifest.json");
    o.add("checkpoint", checkpoint, "Checkpoint manifest written by train");
    o.add("graph", graph, "Training graph directory (built from the manifest when omitted)");
    o.add("out", out, "Output directory");
    o.add("split", split, "Split to evaluate: val or test");
    o.add("mode", mode, "Evaluate as this sharing mode; baseline drops the relation terms");
    o.add("neighbors", opt.neighbors, "Neighbors sampled per image and relation");
    o.add_flag("exhaustive", opt.exhaustive, "Use every neighbor");
    o.add_flag("link-new-nodes", opt.link_new_nodes, "Relate evaluated images to each other as well");
    o.add("batch-size", opt.batch_size, "Images per batch");
    o.add("seed", opt.seed, "Neighbor sampling seed");
  }

  int run(const json& resolved) {
    require_file(manifest, "manifest");
    require_file(checkpoint, "checkpoint");
    const Split s = parse_split_name(split);
    const auto m = load_manifest(manifest);
    auto model = load_checkpoint<double>(checkpoint);
    if (!mode.empty()) {
      const SharingMode want = parse_sharing_mode(mode);
      if (want == SharingMode::Baseline)
        model = relation_free(model);
      else if (want != model.mode())
        throw ConfigError("checkpoint was trained as " + to_string(model.mode()) + ", cannot evaluate as " + mode);
    }
    const auto g = graph_for(m, graph);
    const fs::path dir = prepare_out(out, resolved, "eval");
    const auto res = evaluate_classification(model, m, g, s, opt);

    for (std::size_t c = 0; c < res.auc.per_class.size(); ++c)
      if (!res.auc.per_class[c])
        std::fprintf(stderr, "warning: AUC undefined for class %s (one label value only)\n", m.class_names[c].c_str());
    json metrics = auc_to_json(res.auc, m.class_names);
    metrics["split"] = split;
    metrics["mode"] = to_string(model.mode());
    metrics["images"] = res.image_ids.size();
    write_json(dir / "metrics.json", metrics);
    const std::string table = auc_table({{to_string(model.mode()), res.auc}}, m.class_names);
    write_text(dir / "auc_table.txt", table);
    std::ofstream pred(dir / "predictions.csv");
    pred << "image_id";
    for (const auto& n : m.class_names) pred << ',' << csv_field(n);
    pred << '\n';
    char buf[32];
    for (std::size_t i = 0; i < res.image_ids.size(); ++i) {
      pred << csv_field(res.image_ids[i]);
      for (std::size_t c = 0; c < res.classes; ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", res.probabilities[i * res.classes + c]);
        pred << ',' << buf;
      }
      pred << '\n';
    }
    std::fputs(table.c_str(), stdout);
    return 0;
  }
};

struct Localize {
  std::string manifest, checkpoint, boxes, out, split = "test";
  LocalizeOptions opt;
  std::vector<double> iou_thresholds{0.1, 0.5};
  bool no_heatmaps = false;

  void attach(Options& o) {
    o.add("manifest", manifest, "Dataset manifest.json");
    o.add("checkpoint", checkpoint, "Checkpoint manifest written by train");
    o.add("gt-boxes", boxes, "Ground-truth box CSV (gt_boxes.csv next to the manifest when omitted)");
    o.add("out", out, "Output directory");
    o.add("split", split, "Split whose boxes are evaluated: train, val, test or all");
    o.add("threshold", opt.threshold, "Heatmap threshold (strictly greater is activated)");
    o.add("min-area", opt.min_area, "Smallest component kept, in pixels");
    o.add_flag("single-box", opt.single_box, "Cover all activated regions with one box");
    o.add("iou-threshold", iou_thresholds, "IoU threshold T; repeat for several")->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    o.add_flag("no-heatmaps", no_heatmaps, "Skip writing heatmap images");
  }

  int run(const json& resolved) {
    require_file(manifest, "manifest");
    require_file(checkpoint, "checkpoint");
    if (opt.threshold < 0 || opt.threshold > 255) throw ConfigError("threshold must lie in [0, 255]");
    if (iou_thresholds.empty()) throw ConfigError("at least one IoU threshold is needed");
    const auto m = load_manifest(manifest);
    const std::string box_path = boxes.empty() ? (fs::path(manifest).parent_path() / "gt_boxes.csv").string() : boxes;
    require_file(box_path, "gt-boxes");
    auto gt = read_gt_boxes(box_path, m.class_names);
    if (split != "all") {
      const Split s = parse_split_name(split);
      std::map<std::string, Split> split_of;
      for (const auto& r : m.records) split_of[r.image_id] = r.split;
      std::erase_if(gt, [&](const GroundTruthBox& b) {
        auto it = split_of.find(b.image_id);
        return it == split_of.end() || it->second != s;
      });
    }
    auto model = load_checkpoint<double>(checkpoint);
    const fs::path dir = prepare_out(out, resolved, "localize");
    const auto res = localize(model, m, gt, opt);

    if (!no_heatmaps) {
      fs::create_directories(dir / "heatmaps");
      for (const auto& h : res.heatmaps)
        write_heatmap_pgm(dir / "heatmaps" / (fs::path(h.image_id).stem().string() + "_" + m.class_names[h.class_index] + ".pgm"), h);
    }
    write_predicted_boxes(dir / "boxes.csv", res.boxes, m.class_names);
    std::map<double, LocalizationResult> by_t;
    for (double t : iou_thresholds) by_t[t] = localization_metrics(res.predictions, res.ground_truth, m.class_count(), t);
    json metrics = {{"split", split}, {"threshold", opt.threshold}, {"single_box", opt.single_box},
                    {"results", localization_to_json(by_t, m.class_names)}};
    write_json(dir / "localization.json", metrics);
    const std::string table = localization_table(by_t, m.class_names);
    write_text(dir / "localization_table.txt", table);
    std::fputs(table.c_str(), stdout);
    return 0;
  }
};

struct SampleDebug {
  std::string manifest, graph, out;
  std::vector<std::string> batch;
  std::size_t depth = 1, neighbors = 1;
  std::uint64_t seed = 0;
  bool exhaustive = false;

  void attach(Options& o) {
    o.add("manifest", manifest, "Dataset manifest.json (used when --graph is omitted)");
    o.add("graph", graph, "Graph directory from build-graph");
    o.add("out", out, "Output directory");
    o.add("batch", batch, "Image id of a batch node; repeat for several")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    o.add("depth", depth, "Expansion depth (layers)");
    o.add("neighbors", neighbors, "Neighbors sampled per node and relation");
    o.add("seed", seed, "Sampling seed");
    o.add_flag("exhaustive", exhaustive, "Take every neighbor");
  }

  int run(const json& resolved) {
    RelationGraph g;
    if (!graph.empty()) {
      require_file(graph, "graph");
      g = load_graph(graph);
    } else {
      require_file(manifest, "manifest");
      g = training_graph(load_manifest(manifest));
    }
    if (batch.empty()) throw ConfigError("--batch is required");
    std::vector<std::size_t> nodes;
    for (const auto& id : batch) {
      const auto& ids = g.node_ids();
      auto it = std::find(ids.begin(), ids.end(), id);
      if (it == ids.end()) throw ConfigError("image '" + id + "' is not a graph node");
      nodes.push_back(static_cast<std::size_t>(it - ids.begin()));
    }
    const fs::path dir = prepare_out(out, resolved, "sample-debug");
    const Subgraph sg = exhaustive ? exhaustive_batch(g, nodes, depth) : expand_batch(g, nodes, depth, neighbors, seed);
    write_json(dir / "subgraph.json", subgraph_to_json(g, sg));
    std::printf("subgraph with %zu nodes written to %s\n", sg.nodes().size(), (dir / "subgraph.json").c_str());
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-relational graph convolution over images"};
  app.require_subcommand(1);

  GenSynthetic gen;
  BuildGraph build;
  Train tr;
  Eval ev;
  Localize loc;
  SampleDebug dbg;
  std::vector<std::pair<CLI::App*, std::function<int()>>> commands;
  std::vector<std::unique_ptr<Options>> options;
  auto add = [&](const char* name, const char* help, auto& cmd) {
    CLI::App* sub = app.add_subcommand(name, help);
    options.push_back(std::make_unique<Options>(sub));
    cmd.attach(*options.back());
    Options* o = options.back().get();
    commands.emplace_back(sub, [&cmd, o] { return cmd.run(o->resolve()); });
  };
  add("gen-synthetic", "Write a synthetic relational image dataset", gen);
  add("build-graph", "Build the relation graph over the training split", build);
  add("train", "Train a model with neighbor-sampled batches", tr);
  add("eval", "Per-class AUC of a checkpoint on a split", ev);
  add("localize", "CAM heatmaps, boxes and localization metrics", loc);
  add("sample-debug", "Dump the subgraph sampled for a batch", dbg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    for (auto& [sub, fn] : commands)
      if (sub->parsed()) return fn();
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const NonFiniteLossError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
