#include "rangedam/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "rangedam/error.hpp"

namespace rangedam::metrics {
namespace {

using Labels = std::vector<std::uint16_t>;
using T = ad::Tensor<double>;

ConfusionMatrix tally(std::size_t k, const Labels& gt, const Labels& pred) {
  ConfusionMatrix cm(k);
  cm.accumulate(gt, pred);
  return cm;
}

std::pair<Labels, Labels> random_pair(std::mt19937_64& rng, std::size_t k) {
  const std::size_t n = rng() % 40;
  Labels gt(n), pred(n);
  for (std::size_t i = 0; i < n; ++i) {
    gt[i] = rng() % 6 == 0 ? kIgnoreLabel : static_cast<std::uint16_t>(rng() % k);
    pred[i] = static_cast<std::uint16_t>(rng() % k);
  }
  return {gt, pred};
}

TEST(ConfusionMatrix, Accumulate) {
  const auto cm = tally(3, {1, 1, 2}, {1, 1, 2});
  EXPECT_EQ(cm.at(1, 1), 2u);
  EXPECT_EQ(cm.at(2, 2), 1u);
  EXPECT_EQ(cm.total(), 3u);
  const auto swap = tally(2, {0, 1}, {1, 0});
  EXPECT_EQ(swap.at(0, 1), 1u);
  EXPECT_EQ(swap.at(1, 0), 1u);
  EXPECT_EQ(swap.at(0, 0), 0u);
}

TEST(ConfusionMatrix, IgnoredPointsLeaveCountsUnchanged) {
  const auto cm = tally(3, {kIgnoreLabel, kIgnoreLabel}, {0, 2});
  EXPECT_EQ(cm, ConfusionMatrix(3));
  EXPECT_THROW(cm.miou(), EvaluationError);
}

TEST(ConfusionMatrix, Errors) {
  ConfusionMatrix cm(2);
  EXPECT_THROW(cm.accumulate(Labels{0, 1}, Labels{0}), ShapeError);
  EXPECT_THROW(cm.accumulate(Labels{2}, Labels{0}), PreconditionError);
  EXPECT_THROW(cm.accumulate(Labels{0}, Labels{7}), PreconditionError);
  EXPECT_EQ(cm.total(), 0u);
  EXPECT_THROW(cm.merge(ConfusionMatrix(3)), ShapeError);
}

TEST(Iou, Examples) {
  const auto perfect = tally(3, {0, 1, 2, 2}, {0, 1, 2, 2});
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(perfect.iou(k), 1.0);
  EXPECT_EQ(perfect.miou(), 1.0);

  const auto disjoint = tally(2, {0, 0}, {1, 1});
  EXPECT_EQ(disjoint.iou(0), 0.0);

  const auto two = tally(2, {0, 0, 1, 1}, {0, 1, 1, 1});
  EXPECT_EQ(two.iou(0), 0.5);
  EXPECT_DOUBLE_EQ(*two.iou(1), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(two.miou(), 7.0 / 12.0);
  EXPECT_EQ(two.miou(), *oracle::miou_sets({0, 0, 1, 1}, {0, 1, 1, 1}, 2, kIgnoreLabel));
}

TEST(Iou, AbsentClassIsExcluded) {
  const auto cm = tally(4, {0, 0, 1}, {0, 0, 1});
  EXPECT_FALSE(cm.iou(2).has_value());
  EXPECT_FALSE(cm.iou(3).has_value());
  EXPECT_EQ(cm.miou(), 1.0);
}

TEST(Iou, MatchesSetCountingOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng() % 6;
    const auto [gt, pred] = random_pair(rng, k);
    const auto cm = tally(k, gt, pred);
    const auto expect = oracle::iou_sets(gt, pred, k, kIgnoreLabel);
    for (std::size_t c = 0; c < k; ++c) EXPECT_EQ(cm.iou(c), expect[c]);
    const auto m = oracle::miou_sets(gt, pred, k, kIgnoreLabel);
    if (m)
      EXPECT_EQ(cm.miou(), *m);
    else
      EXPECT_THROW(cm.miou(), EvaluationError);
  }
}

TEST(Iou, InvariantUnderClassRelabeling) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng() % 5;
    auto [gt, pred] = random_pair(rng, k);
    gt.push_back(0);
    pred.push_back(0);
    std::vector<std::uint16_t> perm(k);
    std::iota(perm.begin(), perm.end(), std::uint16_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Labels pg = gt, pp = pred;
    for (auto& v : pg)
      if (v != kIgnoreLabel) v = perm[v];
    for (auto& v : pp) v = perm[v];
    EXPECT_NEAR(tally(k, gt, pred).miou(), tally(k, pg, pp).miou(), 1e-15);
  }
}

TEST(ConfusionMatrix, OrderIndependentAndMergeable) {
  std::mt19937_64 rng(3);
  const auto [gt, pred] = random_pair(rng, 4);
  std::vector<std::size_t> idx(gt.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  Labels sg, sp;
  for (auto i : idx) {
    sg.push_back(gt[i]);
    sp.push_back(pred[i]);
  }
  const auto whole = tally(4, gt, pred);
  EXPECT_EQ(tally(4, sg, sp), whole);

  const std::size_t half = gt.size() / 2;
  ConfusionMatrix merged = tally(4, Labels(gt.begin(), gt.begin() + half), Labels(pred.begin(), pred.begin() + half));
  merged.merge(tally(4, Labels(gt.begin() + half, gt.end()), Labels(pred.begin() + half, pred.end())));
  EXPECT_EQ(merged, whole);
}

TEST(Report, CsvAndTable) {
  const auto report = evaluate(tally(3, {0, 0, 1, 1}, {0, 1, 1, 1}));
  const std::string csv = format_csv(report);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "class,name,iou");
  EXPECT_NE(csv.find("\n2,class_2,\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("mean,miou,"), std::string::npos);
  const std::vector<std::string> names{"ground", "near", "far"};
  const std::string table = format_table(report, names);
  EXPECT_NE(table.find("near"), std::string::npos);
  EXPECT_NE(table.find("58.33"), std::string::npos) << table;
}

TEST(CosineDistance, Examples) {
  EXPECT_EQ(channel_cosine_distance(T(ad::Shape{3, 1, 2}, {1, 2, 1, 2, 1, 2})), 0.0);
  EXPECT_EQ(channel_cosine_distance(T(ad::Shape{2, 1, 2}, {1, 0, 0, 1})), 0.25);
  EXPECT_THROW(channel_cosine_distance(T(ad::Shape{0, 1, 1})), PreconditionError);
}

TEST(CosineDistance, ZeroChannel) {
  // Every pair involving the zero channel contributes 1/2.
  const double d = channel_cosine_distance(T(ad::Shape{2, 1, 2}, {0, 0, 3, 4}));
  EXPECT_EQ(d, (0.5 + 0.5 + 0.5 + 0.0) / 4.0);
}

TEST(CosineDistance, MatchesDoubleLoopOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 1 + rng() % 8, h = 1 + rng() % 4, w = 1 + rng() % 4;
    T m = fixtures::random_tensor(ad::Shape{c, h, w}, rng);
    if (rng() % 4 == 0)
      for (std::size_t i = 0; i < h * w; ++i) m[i] = 0.0;
    const double d = channel_cosine_distance(m);
    EXPECT_NEAR(d, oracle::cosine_distance(m.data, c, h * w), 1e-12);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
  }
}

TEST(CosineDistance, ScaleAndPermutationInvariant) {
  std::mt19937_64 rng(5);
  const std::size_t c = 6, hw = 9;
  const T m = fixtures::random_tensor(ad::Shape{c, 3, 3}, rng);
  const double d = channel_cosine_distance(m);
  T scaled = m, permuted = m;
  std::uniform_real_distribution<double> factor(0.1, 10.0);
  for (std::size_t k = 0; k < c; ++k) {
    const double f = factor(rng);
    for (std::size_t i = 0; i < hw; ++i) scaled[k * hw + i] *= f;
  }
  std::vector<std::size_t> perm(c);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < hw; ++i) permuted[k * hw + i] = m[perm[k] * hw + i];
  EXPECT_NEAR(channel_cosine_distance(scaled), d, 1e-12);
  EXPECT_NEAR(channel_cosine_distance(permuted), d, 1e-12);
}

}  // namespace
}  // namespace rangedam::metrics
