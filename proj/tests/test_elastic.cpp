#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "emb/elastic/bounding.hpp"
#include "emb/heads/losses.hpp"

using namespace emb;

namespace {

std::vector<double> uniform_scores(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

IndexRange random_range(std::mt19937_64& rng, long length) {
  long a = long(rng() % std::uint64_t(length)), b = long(rng() % std::uint64_t(length));
  if (a > b) std::swap(a, b);
  return {a, b};
}

}  // namespace

TEST(TemporalIou, IdenticalAndDisjoint) {
  EXPECT_DOUBLE_EQ(temporal_iou(Interval{2, 6}, Interval{2, 6}), 1.0);
  EXPECT_DOUBLE_EQ(temporal_iou(Interval{0, 2}, Interval{3, 5}), 0.0);
  EXPECT_DOUBLE_EQ(temporal_iou(Interval{0, 2}, Interval{2, 5}), 0.0);
}

TEST(TemporalIou, OverlapOfTwoSixAndFourEight) {
  EXPECT_DOUBLE_EQ(temporal_iou(Interval{2, 6}, Interval{4, 8}), 1.0 / 3.0);
}

TEST(TemporalIou, UnitMismatchIsAnError) {
  EXPECT_THROW(temporal_iou(Interval{0, 1, Unit::seconds}, Interval{0, 1, Unit::frames}), Error);
  EXPECT_THROW(temporal_iou(Interval{2, 1}, Interval{0, 1}), Error);
}

TEST(TemporalIou, AdjacentSingleClipsDoNotOverlap) {
  EXPECT_DOUBLE_EQ(temporal_iou(IndexRange{3, 3}, IndexRange{4, 4}), 0.0);
  EXPECT_DOUBLE_EQ(temporal_iou(IndexRange{3, 3}, IndexRange{3, 3}), 1.0);
  EXPECT_DOUBLE_EQ(temporal_iou(IndexRange{0, 3}, IndexRange{2, 5}), 2.0 / 6.0);
}

TEST(TemporalIou, SymmetricBoundedAndOneOnlyWhenEqual) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const IndexRange a = random_range(rng, 20), b = random_range(rng, 20);
    const double ab = temporal_iou(a, b), ba = temporal_iou(b, a);
    ASSERT_EQ(ab, ba);
    ASSERT_GE(ab, 0.0);
    ASSERT_LE(ab, 1.0);
    ASSERT_EQ(ab == 1.0, a == b);
  }
}

TEST(PseudoBoundary, ZeroThresholdIsGlobalArgmax) {
  const std::vector<double> scores{0.2, 0.9, 0.95, 0.1}, alpha{0.0, 0.0, 0.1, 1.0};
  const std::vector<std::uint8_t> valid{1, 1, 0, 1};
  EXPECT_EQ(select_pseudo_boundary(scores, alpha, valid, 0.0), std::optional<std::size_t>(1));
}

TEST(PseudoBoundary, NoExactMatchAtOneGivesNone) {
  const std::vector<double> scores{0.5, 0.6}, alpha{0.99, 0.4};
  const std::vector<std::uint8_t> valid{1, 1};
  EXPECT_FALSE(select_pseudo_boundary(scores, alpha, valid, 1.0).has_value());
}

TEST(PseudoBoundary, TiesGoToTheSmallerSlot) {
  const std::vector<double> scores{0.3, 0.7, 0.7}, alpha{1, 1, 1};
  const std::vector<std::uint8_t> valid{1, 1, 1};
  EXPECT_EQ(*select_pseudo_boundary(scores, alpha, valid, 0.5), 1u);
}

TEST(PseudoBoundary, LengthMismatchIsAnError) {
  const std::vector<double> scores{0.3}, alpha{1, 1};
  const std::vector<std::uint8_t> valid{1, 1};
  EXPECT_THROW(select_pseudo_boundary(scores, alpha, valid, 0.5), Error);
}

TEST(PseudoBoundary, MatchesExhaustiveScanAtHalf) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t K = 1 + rng() % 40;
    const auto scores = uniform_scores(rng, K), alpha = uniform_scores(rng, K);
    std::vector<std::uint8_t> valid(K);
    for (auto& v : valid) v = rng() % 4 != 0;
    const auto got = select_pseudo_boundary(scores, alpha, valid, 0.5);
    long want = -1;
    double best = -1;
    for (std::size_t k = 0; k < K; ++k)
      if (valid[k] && alpha[k] >= 0.5 && scores[k] > best) {
        best = scores[k];
        want = long(k);
      }
    if (want < 0) {
      ASSERT_FALSE(got.has_value());
    } else {
      ASSERT_TRUE(got.has_value());
      ASSERT_EQ(long(*got), want);
    }
  }
}

TEST(BuildElastic, PseudoEqualToManualGivesSingletons) {
  const IndexRange m{4, 9};
  const auto b = build_elastic(m, m);
  EXPECT_EQ(b.start, (IndexRange{4, 4}));
  EXPECT_EQ(b.end, (IndexRange{9, 9}));
  EXPECT_EQ(build_elastic(m, std::nullopt), b);
}

TEST(BuildElastic, RangesSpanBothBoundaries) {
  const auto b = build_elastic({10, 20}, IndexRange{8, 23});
  EXPECT_EQ(b.start, (IndexRange{8, 10}));
  EXPECT_EQ(b.end, (IndexRange{20, 23}));
}

TEST(BuildElastic, BracketsBothInputsAndIsIdempotent) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 2000; ++i) {
    const IndexRange m = random_range(rng, 64), p = random_range(rng, 64);
    const auto b = build_elastic(m, p);
    ASSERT_TRUE(b.start.contains(m.first) && b.start.contains(p.first));
    ASSERT_TRUE(b.end.contains(m.last) && b.end.contains(p.last));
    ASSERT_LE(b.start.first, b.end.last);
    ASSERT_EQ(build_elastic(m, m), ElasticBoundary::singleton(m));
  }
}

TEST(Schedule, LinearRunsFromStartToEnd) {
  ThresholdSchedule s;
  s.scheme = ScheduleScheme::linear;
  EXPECT_DOUBLE_EQ(threshold_at(s, 0, 29), 1.0);
  EXPECT_DOUBLE_EQ(threshold_at(s, 29, 29), 0.5);
}

TEST(Schedule, SigmoidAtMidpointIsHalfway) {
  ThresholdSchedule s;
  EXPECT_DOUBLE_EQ(threshold_at(s, 5, 10), 0.75);
  EXPECT_NEAR(threshold_at(s, 0, 10), 1.0, 2e-3);
  EXPECT_NEAR(threshold_at(s, 10, 10), 0.5, 2e-3);
}

TEST(Schedule, ConstantHoldsTheEndValue) {
  ThresholdSchedule s;
  s.scheme = ScheduleScheme::constant;
  for (std::size_t e = 0; e <= 7; ++e) EXPECT_EQ(threshold_at(s, e, 7), 0.5);
}

TEST(Schedule, EverySchemeIsNonincreasing) {
  for (auto scheme : {ScheduleScheme::constant, ScheduleScheme::linear, ScheduleScheme::sigmoid})
    for (std::size_t total : {1u, 2u, 29u, 99u}) {
      ThresholdSchedule s;
      s.scheme = scheme;
      for (std::size_t e = 1; e <= total; ++e) ASSERT_LE(threshold_at(s, e, total), threshold_at(s, e - 1, total));
    }
}

TEST(Schedule, ParsesNamesAndRejectsOthers) {
  EXPECT_EQ(parse_schedule("sigmoid"), ScheduleScheme::sigmoid);
  EXPECT_EQ(schedule_name(parse_schedule("linear")), std::string("linear"));
  EXPECT_THROW(parse_schedule("cosine"), Error);
  EXPECT_THROW(threshold_at(ThresholdSchedule{}, 4, 3), Error);
}

TEST(InferDet, ConsistentArgmaxes) {
  std::vector<double> ps(10, 0.01), pe(10, 0.01);
  ps[3] = 0.9;
  pe[7] = 0.9;
  EXPECT_EQ(infer_det(ps, pe, 10), (IndexRange{3, 7}));
}

TEST(InferDet, SingleFrame) {
  const std::vector<double> p{1.0};
  EXPECT_EQ(infer_det(p, p, 1), (IndexRange{0, 0}));
}

TEST(InferDet, InvertedArgmaxesGiveBestOrderedPair) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t T = 1 + rng() % 20, valid = 1 + rng() % T;
    const auto ps = uniform_scores(rng, T), pe = uniform_scores(rng, T);
    const IndexRange got = infer_det(ps, pe, valid);
    ASSERT_LE(got.first, got.last);
    ASSERT_LT(got.last, long(valid));
    double best = -1;
    for (std::size_t i = 0; i < valid; ++i)
      for (std::size_t j = i; j < valid; ++j) best = std::max(best, ps[i] * pe[j]);
    ASSERT_EQ(ps[std::size_t(got.first)] * pe[std::size_t(got.last)], best);
  }
  std::vector<double> ps{0.1, 0.1, 0.8}, pe{0.7, 0.2, 0.1};
  EXPECT_EQ(infer_det(ps, pe, 3), (IndexRange{2, 2}));
}

TEST(InferEla, DetAndProposalCombine) {
  const auto b = infer_ela({3, 7}, {2, 9});
  EXPECT_EQ(b.start, (IndexRange{2, 3}));
  EXPECT_EQ(b.end, (IndexRange{7, 9}));
  EXPECT_EQ(infer_ela({3, 7}, {3, 7}), ElasticBoundary::singleton({3, 7}));
}

TEST(InferEla, AlwaysContainsTheDetPrediction) {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 1000; ++i) {
    const IndexRange det = random_range(rng, 30), prop = random_range(rng, 30);
    const auto b = infer_ela(det, prop);
    ASSERT_TRUE(b.start.contains(det.first));
    ASSERT_TRUE(b.end.contains(det.last));
  }
}

TEST(AlignmentTarget, ThresholdsAndMonotonicity) {
  const LossWeights w;
  EXPECT_EQ(alignment_target(0.8, w), 1.0);
  EXPECT_EQ(alignment_target(0.2, w), 0.0);
  EXPECT_EQ(alignment_target(0.5, w), 0.5);
  double prev = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double y = alignment_target(i / 1000.0, w);
    ASSERT_GE(y, prev);
    prev = y;
  }
}

TEST(AlignmentTarget, HalfTargetBceIsMinimisedAtHalf) {
  const LossWeights w;
  auto bce = [&](double logit) {
    return loss_align(Tensor<double>::from({1, 1}, {logit}), {0.5}, Mask{1}, 1, w).item();
  };
  EXPECT_LT(bce(0.0), bce(0.1));
  EXPECT_LT(bce(0.0), bce(-0.1));
  EXPECT_NEAR(bce(0.0), std::log(2.0), 1e-12);
}

TEST(LossBound, UniformStartOverTwoOfEight) {
  const auto p = Tensor<double>::from({1, 8}, std::vector<double>(8, 1.0 / 8));
  std::vector<double> end(8, 0.0);
  end[6] = 1.0;
  const auto pe = Tensor<double>::from({1, 8}, end);
  const auto l = loss_bound(p, pe, {{{2, 3}, {6, 6}}}, 8);
  EXPECT_NEAR(l.item(), std::log(4.0), 1e-12);
}

TEST(LossBound, FullMassInsideRangeGivesZero) {
  const auto p = Tensor<double>::from({1, 4}, {0.0, 0.5, 0.5, 0.0});
  EXPECT_NEAR(loss_bound(p, p, {{{1, 2}, {1, 2}}}, 4).item(), 0.0, 1e-15);
}

TEST(LossBound, FloorClampsAndCounts) {
  const auto p = Tensor<double>::from({1, 3}, {1.0, 0.0, 0.0});
  std::size_t clamped = 0;
  const auto l = loss_bound(p, p, {{{1, 1}, {0, 0}}}, 3, &clamped);
  EXPECT_EQ(clamped, 1u);
  EXPECT_NEAR(l.item(), -std::log(1e-12), 1e-6);
}

TEST(LossBound, SingletonRangeIsOneHotCrossEntropyBitwise) {
  std::mt19937_64 rng(29);
  for (int i = 0; i < 200; ++i) {
    const std::size_t T = 1 + rng() % 16;
    auto w = uniform_scores(rng, T), v = uniform_scores(rng, T);
    double zw = 0, zv = 0;
    for (double x : w) zw += x;
    for (double x : v) zv += x;
    for (auto& x : w) x /= zw;
    for (auto& x : v) x /= zv;
    const long s = long(rng() % T), e = long(rng() % T);
    const auto l = loss_bound(Tensor<double>::from({1, T}, w), Tensor<double>::from({1, T}, v),
                              {{{s, s}, {e, e}}}, T);
    const double ce = -std::log(w[std::size_t(s)]) + -std::log(v[std::size_t(e)]);
    ASSERT_EQ(l.item(), ce);
  }
}

TEST(LossBound, EnlargingARangeNeverIncreasesTheLoss) {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 2000; ++i) {
    const long T = 1 + long(rng() % 32);
    const auto w = uniform_scores(rng, std::size_t(T)), v = uniform_scores(rng, std::size_t(T));
    const auto pw = Tensor<double>::from({1, std::size_t(T)}, w), pv = Tensor<double>::from({1, std::size_t(T)}, v);
    const ElasticBoundary small{random_range(rng, T), random_range(rng, T)};
    ElasticBoundary big = small;
    big.start.first -= long(rng() % std::size_t(big.start.first + 1));
    big.end.last += long(rng() % std::size_t(T - big.end.last));
    ASSERT_LE(loss_bound(pw, pv, {big}, std::size_t(T)).item(), loss_bound(pw, pv, {small}, std::size_t(T)).item());
  }
}

TEST(HighlightTarget, IndicatorWithoutExtension) {
  const auto y = highlight_target({{2, 2}, {5, 5}}, 0.0, 8, 8);
  EXPECT_EQ(y, (std::vector<double>{0, 0, 1, 1, 1, 1, 0, 0}));
}

TEST(HighlightTarget, WholeVideoIsAllOnes) {
  EXPECT_EQ(highlight_target({{0, 0}, {5, 5}}, 0.1, 6, 6), std::vector<double>(6, 1.0));
}

TEST(HighlightTarget, QuarterExtensionOfFourFrames) {
  // Frames 5..8 (1-based) extended by 0.25 * 4 = 1 on each side gives 4..9.
  const auto y = highlight_target({{4, 4}, {7, 7}}, 0.25, 12, 12);
  for (std::size_t t = 0; t < 12; ++t) EXPECT_EQ(y[t], (t >= 3 && t <= 8) ? 1.0 : 0.0) << t;
}

TEST(HighlightTarget, NegativeRatioAndClipping) {
  EXPECT_THROW(highlight_target({{0, 0}, {1, 1}}, -0.1, 4, 4), Error);
  const auto y = highlight_target({{0, 0}, {3, 3}}, 0.5, 4, 6);
  EXPECT_EQ(y, (std::vector<double>{1, 1, 1, 1, 0, 0}));
}

TEST(TotalLoss, WeightsAndErrors) {
  const auto one = Tensor<double>::scalar(1.0), two = Tensor<double>::scalar(2.0), three = Tensor<double>::scalar(3.0);
  const LossWeights w;
  EXPECT_EQ(w.bound, 1.0);
  EXPECT_EQ(w.align, 1.0);
  EXPECT_EQ(w.highlight, 5.0);
  EXPECT_DOUBLE_EQ(total_loss(one, two, three, w).item(), 1 + 2 + 15);
  LossWeights zero{0, 0, 0, 0.7, 0.3};
  EXPECT_EQ(total_loss(one, two, three, zero).item(), 0.0);
  EXPECT_DOUBLE_EQ(total_loss(one, Tensor<double>{}, three, w).item(), 16.0);
}
