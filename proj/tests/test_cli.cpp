#include <gtest/gtest.h>

#include <cstdlib>
#include <string>

#include <json.hpp>
#include <relconv/dataio.hpp>

#include "tempdir.hpp"

namespace {

int run(const std::string& args, const TempDir& dir) {
  const std::string cmd = "cd '" + dir.path().string() + "' && '" RELCONV_CLI "' " + args + " > log.txt 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json read_json(const std::filesystem::path& p) { return nlohmann::json::parse(slurp(p)); }

const std::string kSmallData = "gen-synthetic --patients 16 --size 32 --seed 4 --out data";
const std::string kSmallModel = " --stages 4 --stages 8 --features 8";

}  // namespace

TEST(Cli, GenSyntheticWritesDatasetAndConfig) {
  TempDir dir;
  ASSERT_EQ(run("gen-synthetic --patients 20 --classes 4 --size 64 --seed 1 --out data", dir), 0);
  for (const char* f : {"manifest.json", "metadata.csv", "gt_boxes.csv", "splits.csv", "config.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / "data" / f)) << f;
  const auto cfg = read_json(dir / "data" / "config.json");
  EXPECT_EQ(cfg["patients"], 20);
  EXPECT_EQ(cfg["seed"], 1);
  EXPECT_EQ(relconv::load_manifest(dir / "data" / "manifest.json").class_count(), 4u);
}

TEST(Cli, GenSyntheticRerunIsByteIdentical) {
  TempDir dir;
  ASSERT_EQ(run("gen-synthetic --patients 10 --size 32 --seed 2 --out a", dir), 0);
  ASSERT_EQ(run("gen-synthetic --patients 10 --size 32 --seed 2 --out b", dir), 0);
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "config.json") continue;
    const auto rel = std::filesystem::relative(e.path(), dir / "a");
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / rel)) << rel;
  }
  // the stored config differs only in --out
  auto ca = read_json(dir / "a" / "config.json"), cb = read_json(dir / "b" / "config.json");
  ca.erase("out");
  cb.erase("out");
  EXPECT_EQ(ca, cb);
}

TEST(Cli, MissingOutIsUsageError) {
  TempDir dir;
  EXPECT_EQ(run("gen-synthetic --patients 5", dir), 2);
  EXPECT_EQ(run("", dir), 2);
  EXPECT_EQ(run("gen-synthetic --size 8 --out x", dir), 2);
  EXPECT_EQ(run("gen-synthetic --no-such-flag 1 --out x", dir), 2);
}

TEST(Cli, MissingFilesExitOne) {
  TempDir dir;
  EXPECT_EQ(run("train --manifest nowhere/manifest.json --out t", dir), 1);
  EXPECT_EQ(run("build-graph --manifest nowhere.json --out g", dir), 1);
  ASSERT_EQ(run(kSmallData, dir), 0);
  EXPECT_EQ(run("eval --manifest data/manifest.json --checkpoint none.json --out e", dir), 1);
  EXPECT_EQ(run("localize --manifest data/manifest.json --checkpoint none.json --out l", dir), 1);
  EXPECT_NE(slurp(dir / "log.txt").find("none.json"), std::string::npos);
}

TEST(Cli, NonFiniteLossExitsThree) {
  TempDir dir;
  ASSERT_EQ(run(kSmallData, dir), 0);
  EXPECT_EQ(run("train --manifest data/manifest.json --out t --epochs 1 --lr inf" + kSmallModel, dir), 3);
  EXPECT_NE(slurp(dir / "log.txt").find("step"), std::string::npos);
}

TEST(Cli, ConfigFileIsOverriddenByFlags) {
  TempDir dir;
  ASSERT_EQ(run(kSmallData, dir), 0);
  spit(dir / "cfg.json", R"({"epochs": 3, "batch_size": 8, "lr": 0.002, "seed": 5})");
  ASSERT_EQ(run("train --config cfg.json --epochs 1 --manifest data/manifest.json --out t" + kSmallModel, dir), 0);
  const auto cfg = read_json(dir / "t" / "config.json");
  EXPECT_EQ(cfg["epochs"], 1);
  EXPECT_EQ(cfg["batch_size"], 8);
  EXPECT_EQ(cfg["lr"], 0.002);
  EXPECT_EQ(cfg["seed"], 5);
  EXPECT_EQ(cfg["neighbors"], 1);
  spit(dir / "bad.json", R"({"epoch": 3})");
  EXPECT_EQ(run("train --config bad.json --manifest data/manifest.json --out t2", dir), 2);
}

TEST(Cli, TrainDefaultsShownInHelp) {
  TempDir dir;
  ASSERT_EQ(run("train --help", dir), 0);
  const std::string help = slurp(dir / "log.txt");
  EXPECT_NE(help.find("--batch-size UINT [16]"), std::string::npos) << help;
  EXPECT_NE(help.find("--neighbors UINT [1]"), std::string::npos);
  EXPECT_NE(help.find("--epochs UINT [10]"), std::string::npos);
  EXPECT_NE(help.find("--lr FLOAT [1e-05]"), std::string::npos);
  EXPECT_NE(help.find("--mode TEXT [pps]"), std::string::npos);
}

TEST(Cli, PipelineEndToEnd) {
  TempDir dir;
  ASSERT_EQ(run(kSmallData, dir), 0);
  ASSERT_EQ(run("build-graph --manifest data/manifest.json --out g", dir), 0);
  ASSERT_EQ(run("train --manifest data/manifest.json --graph g/graph --out t --epochs 2 --lr 0.003" + kSmallModel, dir), 0);
  for (const char* f : {"checkpoint.json", "checkpoint.bin", "train_log.jsonl", "config.json", "summary.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / "t" / f)) << f;

  ASSERT_EQ(run("eval --manifest data/manifest.json --checkpoint t/checkpoint.json --split val --out e", dir), 0);
  const auto metrics = read_json(dir / "e" / "metrics.json");
  EXPECT_EQ(metrics["mode"], "pps");
  // the selected checkpoint reproduces its validation score
  EXPECT_EQ(metrics["mean"], read_json(dir / "t" / "summary.json")["val_mean_auc"]);
  EXPECT_TRUE(std::filesystem::exists(dir / "e" / "auc_table.txt"));

  ASSERT_EQ(run("eval --mode baseline --manifest data/manifest.json --checkpoint t/checkpoint.json --out eb", dir), 0);
  EXPECT_EQ(read_json(dir / "eb" / "metrics.json")["mode"], "baseline");
  EXPECT_EQ(run("eval --mode aps --manifest data/manifest.json --checkpoint t/checkpoint.json --out ea", dir), 2);

  ASSERT_EQ(run("localize --manifest data/manifest.json --checkpoint t/checkpoint.json --out l", dir), 0);
  const auto loc = read_json(dir / "l" / "localization.json");
  EXPECT_EQ(loc["threshold"], 180);
  ASSERT_EQ(loc["results"].size(), 2u);
  EXPECT_EQ(loc["results"][0]["iou_threshold"], 0.1);
  EXPECT_EQ(loc["results"][1]["iou_threshold"], 0.5);
  EXPECT_TRUE(std::filesystem::exists(dir / "l" / "boxes.csv"));
  EXPECT_FALSE(std::filesystem::is_empty(dir / "l" / "heatmaps"));
  ASSERT_EQ(run("localize --manifest data/manifest.json --checkpoint t/checkpoint.json --out l3 --iou-threshold 0.3 --single-box", dir), 0);
  EXPECT_EQ(read_json(dir / "l3" / "localization.json")["results"].size(), 1u);

  const auto graph = read_json(dir / "g" / "graph" / "graph.json");
  const std::string id = graph["node_ids"][0];
  ASSERT_EQ(run("sample-debug --graph g/graph --batch " + id + " --seed 3 --out s", dir), 0);
  const auto sg = read_json(dir / "s" / "subgraph.json");
  EXPECT_EQ(sg["batch"][0], id);
}

TEST(Cli, TrainRerunIsByteIdentical) {
  TempDir dir;
  ASSERT_EQ(run(kSmallData, dir), 0);
  ASSERT_EQ(run("train --manifest data/manifest.json --out a --epochs 1 --seed 3" + kSmallModel, dir), 0);
  ASSERT_EQ(run("train --manifest data/manifest.json --out b --epochs 1 --seed 3" + kSmallModel, dir), 0);
  for (const char* f : {"checkpoint.json", "checkpoint.bin", "last.bin", "train_log.jsonl", "summary.json"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
}
