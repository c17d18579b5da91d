#include "vqalab/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace {

using namespace vqalab;
using ad::Graph;
using ad::NodeId;
using ad::Tensor;

double bce_of(std::vector<double> p, std::vector<double> y) {
  Graph g;
  const NodeId s = g.constant(Tensor::vector(std::move(p)));
  return g.value(bce_loss(g, s, y)).item();
}

double zero_out_of(std::vector<double> p, std::vector<double> y, double lambda) {
  Graph g;
  const NodeId s = g.constant(Tensor::vector(std::move(p)));
  return g.value(zero_out_loss(g, s, y, lambda)).item();
}

double hint_of(std::vector<double> sens, std::vector<double> cues) {
  Graph g;
  const NodeId s = g.constant(Tensor::vector(std::move(sens)));
  return g.value(hint_loss(g, s, cues)).item();
}

double scr1_of(std::vector<double> sens, std::vector<double> cues, std::size_t n) {
  Graph g;
  const NodeId s = g.constant(Tensor::vector(std::move(sens)));
  return g.value(scr_phase1_loss(g, s, cues, n)).item();
}

TEST(Bce, Midpoint) { EXPECT_NEAR(bce_of({0.5}, {1}), std::log(2.0), 1e-15); }
TEST(Bce, ConfidentCorrect) { EXPECT_NEAR(bce_of({0.9}, {1}), 0.105361, 1e-6); }
TEST(Bce, ConfidentWrong) { EXPECT_NEAR(bce_of({0.9}, {0}), 2.302585, 1e-6); }

TEST(Bce, MeanOverAnswers) {
  EXPECT_NEAR(bce_of({0.5, 0.9}, {1, 0}), 0.5 * (std::log(2.0) - std::log(0.1)), 1e-14);
}

TEST(Bce, ClampKeepsLossFinite) {
  EXPECT_NEAR(bce_of({0.0}, {1}), -std::log(1e-12), 1e-9);
  EXPECT_TRUE(std::isfinite(bce_of({1.0}, {0})));
}

TEST(Bce, LengthMismatchIsShapeError) {
  Graph g;
  const NodeId s = g.constant(Tensor::vector({0.5, 0.5}));
  const std::vector<double> y = {1};
  try {
    bce_loss(g, s, y);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
}

TEST(ZeroOut, LambdaZeroIsBce) {
  EXPECT_EQ(zero_out_of({0.3, 0.8}, {0, 1}, 0.0), bce_of({0.3, 0.8}, {0, 1}));
}

TEST(ZeroOut, MidpointWithLambdaOne) { EXPECT_NEAR(zero_out_of({0.5}, {1}, 1.0), 1.386294, 1e-6); }

TEST(ZeroOut, MinimizerIsOneHalf) {
  // Derivative of the lambda = 1 loss in p vanishes at 0.5 and the loss is
  // larger on either side.
  Graph g;
  const NodeId p = g.input(Tensor::vector({0.5}), true);
  const std::vector<double> y = {1};
  const NodeId l = zero_out_loss(g, p, y, 1.0);
  const NodeId wrt[] = {p};
  EXPECT_NEAR(g.gradient(l, wrt, false)[0].tensor[0], 0.0, 1e-12);
  const double at_half = g.value(l).item();
  for (double q : {0.2, 0.4, 0.6, 0.8}) EXPECT_GT(zero_out_of({q}, {1}, 1.0), at_half);
}

TEST(Hint, OrderingAgrees) { EXPECT_EQ(hint_of({2.0, 1.0}, {0.9, 0.1}), 0.0); }
TEST(Hint, OneViolatingPair) { EXPECT_DOUBLE_EQ(hint_of({1.0, 2.0}, {0.9, 0.1}), 1.0); }
TEST(Hint, EqualCuesGiveZero) { EXPECT_EQ(hint_of({1.0, 3.0, 2.0}, {0.5, 0.5, 0.5}), 0.0); }

TEST(Hint, NormalizedByPairCount) {
  // cues order 0 > 1 > 2; sens reversed: violations 1, 2, 1 over 3 pairs.
  EXPECT_DOUBLE_EQ(hint_of({0.0, 1.0, 2.0}, {0.9, 0.5, 0.1}), 4.0 / 3.0);
}

TEST(Hint, LengthMismatchIsShapeError) {
  Graph g;
  const NodeId s = g.constant(Tensor::vector({1, 2}));
  const std::vector<double> cues = {1, 2, 3};
  EXPECT_THROW(hint_loss(g, s, cues), Error);
}

TEST(Hint, RelevantAndIrrelevantPenalizeOppositeOrderings) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const double r0 = u(rng), r1 = u(rng);
    const std::vector<double> sens = {u(rng) - 0.5, u(rng) - 0.5};
    const double rel = hint_of(sens, {r0, r1});
    const double irr = hint_of(sens, {1 - r0, 1 - r1});
    if (sens[0] != sens[1] && r0 != r1) EXPECT_TRUE((rel > 0) != (irr > 0));
  }
}

TEST(ScrPhase1, InfluentialAlreadyDominant) {
  EXPECT_EQ(scr1_of({3.0, 2.5, 0.1, 0.2}, {0.9, 0.8, 0.1, 0.2}, 2), 0.0);
}

TEST(ScrPhase1, HandEvaluated) { EXPECT_DOUBLE_EQ(scr1_of({0.5, 1.0, 0.2}, {1, 0, 0}, 1), 0.25); }

TEST(ScrPhase1, TiesGoToLowerIndex) {
  // cues tie between regions 0 and 1; region 0 is influential.
  EXPECT_DOUBLE_EQ(scr1_of({0.0, 1.0, 0.0}, {0.5, 0.5, 0.1}, 1), 0.5);
}

TEST(ScrPhase1, InfluentialCountMustBeBelowK) {
  Graph g;
  const NodeId s = g.constant(Tensor::vector({1, 2}));
  const std::vector<double> cues = {1, 0};
  EXPECT_THROW(scr_phase1_loss(g, s, cues, 2), Error);
}

TEST(ScrPhase2, HingeInactive) {
  Graph g;
  std::map<AnswerId, NodeId> sens;
  sens[0] = g.constant(Tensor::vector({0.9, 0.1, 0.2}));
  sens[1] = g.constant(Tensor::vector({0.5, 3.0, 3.0}));
  const std::vector<double> cues = {1, 0, 0};
  const AnswerId comp[] = {1};
  EXPECT_EQ(g.value(scr_phase2_loss(g, sens, 0, cues, 1, comp)).item(), 0.0);
}

TEST(ScrPhase2, OneCompetitor) {
  Graph g;
  std::map<AnswerId, NodeId> sens;
  sens[0] = g.constant(Tensor::vector({0.3, 0.0, 0.0}));
  sens[1] = g.constant(Tensor::vector({0.8, 0.0, 0.0}));
  const std::vector<double> cues = {1, 0, 0};
  const AnswerId comp[] = {1};
  EXPECT_DOUBLE_EQ(g.value(scr_phase2_loss(g, sens, 0, cues, 1, comp)).item(), 0.5);
}

TEST(ScrPhase2, NoCompetitorsIsZero) {
  Graph g;
  std::map<AnswerId, NodeId> sens;
  sens[0] = g.constant(Tensor::vector({0.3, 0.0, 0.0}));
  const std::vector<double> cues = {1, 0, 0};
  EXPECT_EQ(g.value(scr_phase2_loss(g, sens, 0, cues, 1, {})).item(), 0.0);
  const std::vector<double> scores = {0.2, 0.9, 0.5};
  EXPECT_TRUE(scr_competitors(scores, 0, 0).empty());
}

TEST(ScrPhase2, AnchorIsMostSensitiveInfluentialRegion) {
  const std::vector<double> sens = {0.1, 0.7, 0.9, 0.3};
  const std::vector<double> cues = {0.9, 0.8, 0.1, 0.7};
  // Influential: 0, 1, 3. Region 2 is more sensitive but not influential.
  EXPECT_EQ(scr_anchor_region(sens, cues, 3), 1u);
}

TEST(ScrPhase2, CompetitorsAreTopScoringOthers) {
  const std::vector<double> scores = {0.9, 0.2, 0.7, 0.7, 0.1};
  const auto c = scr_competitors(scores, 0, 2);
  EXPECT_EQ(c, (std::vector<AnswerId>{2, 3}));
}

TEST(Properties, ShiftInvariance) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> sens(6), cues(6), shifted(6);
    for (auto& x : sens) x = u(rng);
    for (auto& x : cues) x = 0.5 + 0.5 * u(rng);
    const double c = 10.0 * u(rng);
    for (std::size_t i = 0; i < 6; ++i) shifted[i] = sens[i] + c;
    EXPECT_NEAR(hint_of(sens, cues), hint_of(shifted, cues), 1e-12);
    EXPECT_NEAR(scr1_of(sens, cues, 3), scr1_of(shifted, cues, 3), 1e-12);
  }
}

TEST(Properties, NonNegative) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> sens(5), cues(5), p(5), y(5, 0.0);
    for (auto& x : sens) x = u(rng) - 0.5;
    for (auto& x : cues) x = u(rng);
    for (auto& x : p) x = u(rng);
    y[trial % 5] = 1.0;
    EXPECT_GE(hint_of(sens, cues), 0.0);
    EXPECT_GE(scr1_of(sens, cues, 2), 0.0);
    EXPECT_GE(bce_of(p, y), 0.0);
    EXPECT_GE(zero_out_of(p, y, 1.0), 0.0);
  }
}

TEST(Config, Defaults) {
  EXPECT_EQ(LossConfig::defaults(Method::hint).loss_weight, 2.0);
  EXPECT_EQ(LossConfig::defaults(Method::scr).loss_weight, 3.0);
  EXPECT_EQ(LossConfig::defaults(Method::scr).phase2_weight, 1000.0);
  EXPECT_EQ(LossConfig::defaults(Method::zero_out).loss_weight, 2.0);
  EXPECT_EQ(LossConfig::defaults(Method::zero_out).lambda, 1.0);
  EXPECT_EQ(LossConfig::defaults(Method::hint).vqa_loss_weight, 1.0);
  EXPECT_EQ(LossConfig::defaults(Method::scr).n_influential, 3u);
  EXPECT_EQ(LossConfig::defaults(Method::scr).n_competitors, 5u);
}

TEST(Config, Validation) {
  auto c = LossConfig::defaults(Method::hint);
  c.loss_weight = -1;
  EXPECT_THROW(c.validate(8), Error);
  c = LossConfig::defaults(Method::scr);
  EXPECT_THROW(c.validate(3), Error);
  EXPECT_NO_THROW(c.validate(4));
}

}  // namespace
