#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "relconv/metrics.hpp"

using namespace relconv;

TEST(Auc, FourScoreExample) {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<std::uint8_t> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(*auc(s, y), 0.75);
}

TEST(Auc, PerfectSeparationAndAllTies) {
  const std::vector<std::uint8_t> y{0, 1, 0, 1};
  EXPECT_DOUBLE_EQ(*auc(std::vector<double>{0.1, 0.9, 0.2, 0.8}, y), 1.0);
  EXPECT_DOUBLE_EQ(*auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, y), 0.5);
}

TEST(Auc, SingleClassIsUndefined) {
  EXPECT_FALSE(auc(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{1, 1}).has_value());
  EXPECT_FALSE(auc(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{0, 0}).has_value());
}

TEST(Auc, MatchesPairwiseEnumerationWithTies) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 40)(rng);
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::uniform_int_distribution<int>(0, 9)(rng) / 10.0;  // coarse grid forces ties
      y[i] = std::uniform_int_distribution<int>(0, 1)(rng);
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_NEAR(*auc(s, y), oracle::auc_by_pairs(s, y), 1e-12);
  }
}

TEST(Auc, InvariantUnderIncreasingTransform) {
  std::mt19937_64 rng(4);
  std::vector<double> s(50), s2(50);
  std::vector<std::uint8_t> y(50);
  for (std::size_t i = 0; i < 50; ++i) {
    s[i] = std::uniform_real_distribution<double>(-2, 2)(rng);
    s2[i] = std::exp(3 * s[i]) + 7;
    y[i] = i % 3 == 0;
  }
  EXPECT_DOUBLE_EQ(*auc(s, y), *auc(s2, y));
}

TEST(ClassAuc, UndefinedClassesExcludedFromMean) {
  // two rows, two classes; class 1 is all-positive
  const std::vector<double> p{0.9, 0.4, 0.1, 0.6};
  const std::vector<std::uint8_t> y{1, 1, 0, 1};
  auto r = class_auc(p, y, 2);
  EXPECT_DOUBLE_EQ(*r.per_class[0], 1.0);
  EXPECT_FALSE(r.per_class[1].has_value());
  EXPECT_DOUBLE_EQ(*r.mean, 1.0);
}

TEST(Iou, HalfOverlap) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {5, 0, 15, 10}), 50.0 / 150.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {10, 0, 20, 10}), 0.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 1, 1}, {5, 5, 6, 6}), 0.0);
}

TEST(Iou, MatchesPixelCountingOnRandomBoxes) {
  std::mt19937_64 rng(8);
  auto coord = std::uniform_int_distribution<int>(0, 20);
  auto random_box = [&] {
    int x0 = coord(rng), x1 = coord(rng), y0 = coord(rng), y1 = coord(rng);
    if (x0 == x1) ++x1;
    if (y0 == y1) ++y1;
    return Bbox{double(std::min(x0, x1)), double(std::min(y0, y1)), double(std::max(x0, x1)), double(std::max(y0, y1))};
  };
  for (int t = 0; t < 100; ++t) {
    const Bbox a = random_box(), b = random_box();
    EXPECT_EQ(iou(a, b), oracle::iou_by_pixels(a, b, 22));
    EXPECT_EQ(iou(a, b), iou(b, a));
    EXPECT_GE(iou(a, b), 0.0);
    EXPECT_LE(iou(a, b), 1.0);
  }
}

TEST(Localization, ExactPredictionsScorePerfectly) {
  std::vector<LabeledBox> gt{{"a", 0, {0, 0, 10, 10}}, {"b", 1, {5, 5, 9, 9}}};
  std::map<LocalizationKey, std::vector<Bbox>> pred{{{"a", 0}, {{0, 0, 10, 10}}}, {{"b", 1}, {{5, 5, 9, 9}}}};
  auto r = localization_metrics(pred, gt, 2, 0.5);
  EXPECT_DOUBLE_EQ(*r.accuracy[0], 1.0);
  EXPECT_DOUBLE_EQ(*r.accuracy[1], 1.0);
  EXPECT_DOUBLE_EQ(*r.avg_false_positive[0], 0.0);
  EXPECT_DOUBLE_EQ(*r.avg_false_positive[1], 0.0);
}

TEST(Localization, ExtraDisjointBoxIsOneFalsePositive) {
  std::vector<LabeledBox> gt{{"a", 0, {0, 0, 10, 10}}};
  std::map<LocalizationKey, std::vector<Bbox>> pred{{{"a", 0}, {{0, 0, 10, 10}, {30, 30, 40, 40}}}};
  auto r = localization_metrics(pred, gt, 1, 0.5);
  EXPECT_DOUBLE_EQ(*r.accuracy[0], 1.0);
  EXPECT_DOUBLE_EQ(*r.avg_false_positive[0], 1.0);
}

TEST(Localization, NoPredictionsAndPairsWithoutGroundTruth) {
  std::vector<LabeledBox> gt{{"a", 0, {0, 0, 10, 10}}};
  // prediction on an image/class without ground truth is not evaluated
  std::map<LocalizationKey, std::vector<Bbox>> pred{{{"z", 0}, {{0, 0, 4, 4}}}};
  auto r = localization_metrics(pred, gt, 2, 0.1);
  EXPECT_DOUBLE_EQ(*r.accuracy[0], 0.0);
  EXPECT_DOUBLE_EQ(*r.avg_false_positive[0], 0.0);
  EXPECT_FALSE(r.accuracy[1].has_value());
}

TEST(Localization, AccuracyFallsAndFalsePositivesRiseWithThreshold) {
  std::mt19937_64 rng(12);
  auto c = std::uniform_int_distribution<int>(0, 30);
  std::vector<LabeledBox> gt;
  std::map<LocalizationKey, std::vector<Bbox>> pred;
  for (int i = 0; i < 40; ++i) {
    const std::string id = "img" + std::to_string(i);
    const double x = c(rng), y = c(rng);
    gt.push_back({id, 0, {x, y, x + 10, y + 10}});
    for (int k = 0; k < 2; ++k) {
      const double px = c(rng), py = c(rng);
      pred[{id, 0}].push_back({px, py, px + 1 + c(rng) / 2, py + 1 + c(rng) / 2});
    }
  }
  double prev_acc = 2, prev_afp = -1;
  for (double t : {0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9}) {
    auto r = localization_metrics(pred, gt, 1, t);
    EXPECT_LE(*r.accuracy[0], prev_acc);
    EXPECT_GE(*r.avg_false_positive[0], prev_afp);
    prev_acc = *r.accuracy[0];
    prev_afp = *r.avg_false_positive[0];
  }
}
