#include <gtest/gtest.h>

#include <numeric>

#include <relconv/checkpoint.hpp>
#include <relconv/synthetic.hpp>
#include <relconv/trainer.hpp>

#include "tempdir.hpp"

using namespace relconv;

namespace {

DatasetManifest small_dataset(const TempDir& dir, std::size_t patients = 40, std::uint64_t seed = 1) {
  SyntheticConfig cfg;
  cfg.patients = patients;
  cfg.image_size = 32;
  write_synthetic(dir.path(), generate_synthetic(cfg, seed));
  return load_manifest(dir / "manifest.json");
}

TrainConfig small_train(SharingMode mode) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.mpu.stages = {4, 8};
  cfg.mpu.transition_channels = 8;
  cfg.mpu.classes = 4;
  cfg.adam.lr = 1e-3;
  cfg.epochs = 1;
  cfg.seed = 7;
  return cfg;
}

double mean_loss(const std::vector<double>& l, std::size_t from, std::size_t to) {
  return std::accumulate(l.begin() + static_cast<std::ptrdiff_t>(from), l.begin() + static_cast<std::ptrdiff_t>(to), 0.0) /
         static_cast<double>(to - from);
}

}  // namespace

TEST(TrainConfig, PublishedDefaults) {
  TrainConfig cfg;
  EXPECT_EQ(cfg.batch_size, 16u);
  EXPECT_EQ(cfg.neighbors, 1u);
  EXPECT_EQ(cfg.epochs, 10u);
  EXPECT_EQ(cfg.adam.lr, 1e-5);
  EXPECT_EQ(cfg.adam.beta1, 0.9);
  EXPECT_EQ(cfg.adam.beta2, 0.999);
  EXPECT_EQ(cfg.adam.eps, 1e-8);
  EXPECT_EQ(cfg.adam.weight_decay, 0.0);
}

TEST(TrainConfig, RejectsEmptyBudgets) {
  TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Trainer, LossDecreasesOverTwoHundredSteps) {
  TempDir dir;
  const auto manifest = small_dataset(dir, 60);
  const auto graph = training_graph(manifest);
  auto cfg = small_train(SharingMode::PPS);
  cfg.batch_size = 8;
  const std::size_t per_epoch = (graph.node_count() + cfg.batch_size - 1) / cfg.batch_size;
  cfg.epochs = (200 + per_epoch - 1) / per_epoch;
  const auto res = train<double>(cfg, manifest, graph);
  std::vector<double> losses;
  for (const auto& j : res.log)
    if (j["event"] == "step") losses.push_back(j["loss"]);
  ASSERT_GE(losses.size(), 200u);
  losses.resize(200);
  EXPECT_LT(mean_loss(losses, 180, 200), mean_loss(losses, 0, 20));
}

TEST(Trainer, LogsEveryStepAndOneValidationPerEpoch) {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  const auto graph = training_graph(manifest);
  auto cfg = small_train(SharingMode::APS);
  cfg.epochs = 2;
  const auto res = train<double>(cfg, manifest, graph);
  const std::size_t per_epoch = (graph.node_count() + 15) / 16;
  std::size_t steps = 0, vals = 0;
  for (const auto& j : res.log) {
    if (j["event"] == "step") ++steps;
    if (j["event"] == "validation") {
      ++vals;
      EXPECT_EQ(j["per_class"].size(), 4u);
    }
  }
  EXPECT_EQ(steps, 2 * per_epoch);
  EXPECT_EQ(vals, 2u);
  EXPECT_GE(res.best_epoch, 1u);
}

TEST(Trainer, BestCheckpointIsEarliestMaximum) {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  const auto graph = training_graph(manifest);
  auto cfg = small_train(SharingMode::PPS);
  cfg.epochs = 3;
  const auto res = train<double>(cfg, manifest, graph);
  double best = -1;
  std::size_t epoch = 0;
  for (const auto& j : res.log)
    if (j["event"] == "validation" && !j["mean"].is_null() && j["mean"].get<double>() > best) {
      best = j["mean"];
      epoch = j["epoch"];
    }
  EXPECT_EQ(res.best_epoch, epoch);
  ASSERT_TRUE(res.best_auc);
  EXPECT_EQ(*res.best_auc, best);
}

TEST(Trainer, SelectedModelReproducesItsValidationScore) {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  const auto graph = training_graph(manifest);
  auto cfg = small_train(SharingMode::PPS);
  cfg.epochs = 2;
  auto res = train<double>(cfg, manifest, graph);
  const auto ev = evaluate_classification(res.best, manifest, graph, Split::Val, EvalOptions::from(cfg));
  ASSERT_TRUE(ev.auc.mean);
  EXPECT_EQ(*ev.auc.mean, *res.best_auc);
}

TEST(Trainer, RerunsAreBitIdentical) {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  const auto graph = training_graph(manifest);
  auto cfg = small_train(SharingMode::PPS);
  cfg.epochs = 2;
  auto a = train<double>(cfg, manifest, graph);
  auto b = train<double>(cfg, manifest, graph);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].dump(), b.log[i].dump());
  save_checkpoint(dir / "a.json", a.best);
  save_checkpoint(dir / "b.json", b.best);
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
  EXPECT_EQ(slurp(dir / "a.json").size(), slurp(dir / "b.json").size());
}

TEST(Trainer, NoValidationLabelReachesTheGradient) {
  // flipping every validation label changes the validation scores but not
  // a single training step
  TempDir dir;
  auto manifest = small_dataset(dir);
  const auto graph = training_graph(manifest);
  auto cfg = small_train(SharingMode::PPS);
  auto a = train<double>(cfg, manifest, graph);
  for (auto& r : manifest.records)
    if (r.split != Split::Train)
      for (auto& l : r.labels) l = !l;
  auto b = train<double>(cfg, manifest, graph);
  for (std::size_t i = 0; i < a.log.size(); ++i)
    if (a.log[i]["event"] == "step") EXPECT_EQ(a.log[i].dump(), b.log[i].dump());
  auto pa = a.last.parameters(), pb = b.last.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(values(pa[i]->value), values(pb[i]->value));
}

TEST(Trainer, RejectsGraphWithNonTrainingNodes) {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  const auto specs = default_relations();
  const auto graph = build_relation_graph(manifest.records, specs);
  EXPECT_THROW(train<double>(small_train(SharingMode::PPS), manifest, graph), ConfigError);
}

TEST(Trainer, ClassCountMustMatchDataset) {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  auto cfg = small_train(SharingMode::PPS);
  cfg.mpu.classes = 3;
  EXPECT_THROW(train<double>(cfg, manifest, training_graph(manifest)), ConfigError);
}

TEST(Trainer, NonFiniteLossNamesStepAndBatch) {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  auto cfg = small_train(SharingMode::PPS);
  cfg.adam.lr = std::numeric_limits<double>::infinity();
  try {
    train<double>(cfg, manifest, training_graph(manifest));
    FAIL() << "expected NonFiniteLossError";
  } catch (const NonFiniteLossError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("step 2"), std::string::npos) << what;
    EXPECT_NE(what.find(".pgm"), std::string::npos) << what;
  }
}

TEST(Evaluate, ExhaustiveAndSampledAgreeWithoutNeighbors) {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  const auto graph = training_graph(manifest);
  ImageGCNModel<double> m(small_train(SharingMode::Baseline).mpu, SharingMode::Baseline, relation_names(graph), 2);
  EvalOptions sampled, exhaustive;
  exhaustive.exhaustive = true;
  const auto a = evaluate_classification(m, manifest, graph, Split::Test, sampled);
  const auto b = evaluate_classification(m, manifest, graph, Split::Test, exhaustive);
  EXPECT_EQ(a.probabilities, b.probabilities);
  EXPECT_EQ(a.image_ids.size(), records_in(manifest.records, Split::Test).size());
}

TEST(Evaluate, EvalBatchSizeDoesNotChangeExhaustiveScores) {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  const auto graph = training_graph(manifest);
  ImageGCNModel<double> m(small_train(SharingMode::PPS).mpu, SharingMode::PPS, relation_names(graph), 2);
  EvalOptions a, b;
  a.exhaustive = b.exhaustive = true;
  a.batch_size = 3;
  b.batch_size = 50;
  const auto ea = evaluate_classification(m, manifest, graph, Split::Val, a);
  const auto eb = evaluate_classification(m, manifest, graph, Split::Val, b);
  ASSERT_EQ(ea.probabilities.size(), eb.probabilities.size());
  for (std::size_t i = 0; i < ea.probabilities.size(); ++i) EXPECT_NEAR(ea.probabilities[i], eb.probabilities[i], 1e-12);
}
