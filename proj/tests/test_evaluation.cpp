// Copyright 2026 The tarot Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>

#include <gtest/gtest.h>

#include "tarot/evaluation.hpp"
#include "tarot/nn.hpp"
#include "tarot/synthdata.hpp"
#include "test_util.hpp"

namespace tarot {
namespace {

using testing::random_vec;

template <Scorer M>
struct Scaled {
  const M* base;
  double c;
  Vec logits(const Vec& x) const { return c * base->logits(x); }
  Vec input_grad(const Vec& x, const Vec& g) const { return c * base->input_grad(x, g); }
  int num_classes() const { return base->num_classes(); }
  Eigen::Index input_dim() const { return base->input_dim(); }
};

LinearScorer threshold(double t, double k = 100.0) { return LinearScorer(Mat{{0.0}, {k}}, Vec{{0.0, -k * t}}); }

DomainDataset world_dataset(const FiniteWorld& w, const std::vector<int>& labels) {
  DomainDataset d;
  d.name = "world";
  d.domain_tag = DomainTag::kTarget;
  d.num_classes = 2;
  d.inputs = w.points;
  d.labels = labels;
  return d;
}

TEST(StandardAccuracy, Examples) {
  const FiniteWorld w = make_finite_world(1, 50, 0.0, 0);
  std::vector<int> labels;
  for (std::size_t i = 0; i < w.size(); ++i) labels.push_back(w.points[i][0] > 0.5 ? 1 : 0);
  const DomainDataset d = world_dataset(w, labels);
  EXPECT_DOUBLE_EQ(standard_accuracy(threshold(0.5), d), 1.0);
  const LinearScorer constant(Mat::Zero(2, 1), Vec{{1.0, 0.0}});
  EXPECT_DOUBLE_EQ(standard_accuracy(constant, d), 0.5);
  DomainDataset wrong = d;
  for (int i = 0; i < 5; ++i) (*wrong.labels)[i] = 1;
  EXPECT_DOUBLE_EQ(standard_accuracy(threshold(0.5), wrong), 0.9);
  EXPECT_THROW(standard_accuracy(constant, d.unlabeled()), MissingLabelsError);
  DomainDataset empty = d;
  empty.inputs.clear();
  empty.labels->clear();
  EXPECT_THROW(standard_accuracy(constant, empty), ParameterError);
}

TEST(RobustAccuracy, ZeroEpsilonEqualsStandard) {
  const auto [s, t] = make_two_moons_shift(100, 30.0, 0.1, 1);
  const ComposedScorer f = ComposedScorer::init(2, 8, 2, 3);
  EXPECT_DOUBLE_EQ(robust_accuracy(f, t, parse_attack_spec("pgd:eps=0,steps=20"), 0), standard_accuracy(f, t));
}

TEST(RobustAccuracy, ThresholdNearBoundaryIsLost) {
  const double eps = 0.2;
  const FiniteWorld w = make_finite_world(1, 11, eps, 0);
  std::vector<int> labels;
  for (const Vec& p : w.points) labels.push_back(p[0] > 0.55 ? 1 : 0);
  const DomainDataset d = world_dataset(w, labels);
  const LinearScorer f = threshold(0.55);
  // Points 0.4, 0.5, 0.6, 0.7 are within 0.2 of the boundary.
  EXPECT_DOUBLE_EQ(robust_accuracy_exact(f, d, w), 7.0 / 11.0);
  const AttackSpec pgd20 = parse_attack_spec("pgd:eps=0.2,steps=20,rs=0", Box::unit(1));
  EXPECT_DOUBLE_EQ(robust_accuracy(f, d, pgd20, 0), 7.0 / 11.0);
}

// Boundaries sit midway between grid points and eps is a multiple of the grid
// spacing, so a continuous ball crosses the boundary exactly when a grid point
// in it does.
TEST(RobustAccuracy, PgdNeverBelowExact) {
  Rng rng(1);
  const int g = 21;
  for (int t = 0; t < 50; ++t) {
    const double eps = static_cast<double>(1 + rng.index(4)) / (g - 1);
    const FiniteWorld w = make_finite_world(1, g, eps, t);
    const double th = (static_cast<double>(rng.index(g - 1)) + 0.5) / (g - 1);
    std::vector<int> labels;
    for (std::size_t i = 0; i < w.size(); ++i) labels.push_back(static_cast<int>(rng.index(2)));
    const DomainDataset d = world_dataset(w, labels);
    const LinearScorer f = threshold(th, rng.uniform(1, 50) * (rng.index(2) ? 1 : -1));
    const AttackSpec pgd20 = parse_attack_spec("pgd:eps=" + std::to_string(eps) + ",steps=20", Box::unit(1));
    EXPECT_GE(robust_accuracy(f, d, pgd20, t), robust_accuracy_exact(f, d, w));
  }
}

TEST(RobustAccuracy, ExactNonincreasingInEpsilon) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const ComposedScorer f = ComposedScorer::init(2, 6, 2, rng.next());
    FiniteWorld w = make_finite_world(2, 7, 0.0, t);
    std::vector<int> labels;
    for (const Vec& p : w.points) labels.push_back(predict_class(f, p));
    const DomainDataset d = world_dataset(w, labels);
    double prev = 2.0;
    for (double eps : w.distance_spectrum()) {
      w.set_epsilon(eps);
      const double acc = robust_accuracy_exact(f, d, w);
      EXPECT_LE(acc, prev);
      prev = acc;
    }
  }
}

TEST(Lipschitz, LinearRowGivesL1Norm) {
  const LinearScorer f(Mat{{1.0, -2.0}}, Vec::Zero(1));
  const std::vector<Vec> xs{Vec{{0.5, 0.5}}, Vec{{0.3, 0.7}}, Vec{{0.6, 0.4}}};
  const LipschitzEstimate e = local_lipschitz_estimate(f, xs, 0.1);
  // The supremum is 3, attained on the ball corners along (1, -1). Signed
  // ascent with step eps/10 oscillates around that ridge, so it gets close
  // from below.
  for (double v : e.per_sample) {
    EXPECT_LE(v, 3.0 + 1e-12);
    EXPECT_GE(v, 2.7);
  }
  EXPECT_LE(e.value, 3.0 + 1e-12);
  EXPECT_EQ(e.skipped, 0u);
}

TEST(Lipschitz, ConstantScorerIsZero) {
  const LinearScorer f(Mat::Zero(2, 2), Vec{{1.0, -1.0}});
  EXPECT_DOUBLE_EQ(local_lipschitz_estimate(f, {Vec{{0.5, 0.5}}}, 0.1).value, 0.0);
}

TEST(Lipschitz, Homogeneous) {
  const ComposedScorer f = ComposedScorer::init(2, 8, 3, 4);
  Rng rng(3);
  std::vector<Vec> xs;
  for (int i = 0; i < 10; ++i) xs.push_back(random_vec(rng, 2, 0.2, 0.8));
  const double base = local_lipschitz_estimate(f, xs, 0.05).value;
  for (double c : {2.0, -3.0, 0.5}) {
    const Scaled<ComposedScorer> g{&f, c};
    EXPECT_NEAR(local_lipschitz_estimate(g, xs, 0.05).value, std::abs(c) * base, 1e-6 * std::abs(c) * base);
  }
}

TEST(Lipschitz, MoreSearchNeverSmaller) {
  const ComposedScorer f = ComposedScorer::init(2, 8, 3, 5);
  Rng rng(4);
  std::vector<Vec> xs;
  for (int i = 0; i < 10; ++i) xs.push_back(random_vec(rng, 2, 0.2, 0.8));
  LipschitzSearch small;
  small.steps = 5;
  small.restarts = 1;
  LipschitzSearch more_steps = small;
  more_steps.steps = 30;
  LipschitzSearch more_restarts = small;
  more_restarts.restarts = 4;
  const auto a = local_lipschitz_estimate(f, xs, 0.05, small);
  const auto b = local_lipschitz_estimate(f, xs, 0.05, more_steps);
  const auto c = local_lipschitz_estimate(f, xs, 0.05, more_restarts);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    EXPECT_GE(b.per_sample[i], a.per_sample[i]);
    EXPECT_GE(c.per_sample[i], a.per_sample[i]);
  }
}

TEST(Lipschitz, RejectsBadSearch) {
  const LinearScorer f(Mat{{1.0}}, Vec::Zero(1));
  EXPECT_THROW(local_lipschitz_estimate(f, {Vec{{0.5}}}, 0.0), ParameterError);
  LipschitzSearch s;
  s.steps = 0;
  EXPECT_THROW(local_lipschitz_estimate(f, {Vec{{0.5}}}, 0.1, s), ParameterError);
  EXPECT_THROW(local_lipschitz_estimate(f, {}, 0.1), ParameterError);
}

MetricsRecord record(int epoch, std::optional<double> target_robust) {
  MetricsRecord m;
  m.epoch = epoch;
  if (target_robust) m.robust_acc["target"] = *target_robust;
  return m;
}

TEST(SelectCheckpoint, Examples) {
  const std::vector<MetricsRecord> rising{record(1, 0.1), record(2, 0.2), record(3, 0.3)};
  EXPECT_EQ(select_checkpoint(rising, SelectionPolicy::kPgd20Target), 3);
  EXPECT_EQ(select_checkpoint({record(4, 0.5)}, SelectionPolicy::kPgd20Target), 4);
  const std::vector<MetricsRecord> peak{record(1, 0.1), record(2, 0.3), record(3, 0.6), record(4, 0.4), record(5, 0.2)};
  EXPECT_EQ(select_checkpoint(peak, SelectionPolicy::kPgd20Target), 3);
  EXPECT_EQ(select_checkpoint(peak, SelectionPolicy::kLast), 5);
  const std::vector<MetricsRecord> tie{record(1, 0.5), record(2, 0.5), record(3, 0.1)};
  EXPECT_EQ(select_checkpoint(tie, SelectionPolicy::kPgd20Target), 2);
}

TEST(SelectCheckpoint, Errors) {
  EXPECT_THROW(select_checkpoint({}, SelectionPolicy::kLast), PolicyError);
  EXPECT_THROW(select_checkpoint({record(1, 0.5), record(2, std::nullopt)}, SelectionPolicy::kPgd20Target),
               PolicyError);
  EXPECT_EQ(select_checkpoint({record(1, std::nullopt)}, SelectionPolicy::kLast), 1);
  EXPECT_THROW(selection_policy_from_string("best"), ParameterError);
  EXPECT_EQ(selection_policy_from_string("last"), SelectionPolicy::kLast);
}

TEST(EvalReport, JsonRoundTripAndTable) {
  const auto [s, t] = make_two_moons_shift(40, 30.0, 0.1, 1);
  const ComposedScorer f = ComposedScorer::init(2, 8, 2, 3);
  LipschitzSearch search;
  search.steps = 5;
  const EvalReport r =
      evaluate(f, t, {parse_attack_spec("pgd:eps=0.05,steps=20")}, 7, std::make_pair(0.05, search));
  EXPECT_EQ(r.domain_tag, "target");
  EXPECT_EQ(r.n_samples, 40u);
  ASSERT_TRUE(r.robust_acc.count("pgd20"));
  EXPECT_LE(r.robust_acc.at("pgd20"), r.standard_acc);
  ASSERT_TRUE(r.lipschitz.has_value());
  const EvalReport back = json(r).get<EvalReport>();
  EXPECT_EQ(back.robust_acc, r.robust_acc);
  EXPECT_EQ(back.lipschitz, r.lipschitz);
  const std::string table = format_report_table({{"target", r}});
  EXPECT_NE(table.find("pgd20"), std::string::npos);
  EXPECT_NE(table.find("target"), std::string::npos);
}

TEST(MetricsRecord, JsonRoundTrip) {
  MetricsRecord m = record(3, 0.25);
  m.losses["total"] = 1.5;
  m.standard_acc["target"] = 0.75;
  m.lipschitz = 2.0;
  const MetricsRecord back = json::parse(json(m).dump()).get<MetricsRecord>();
  EXPECT_EQ(back.epoch, 3);
  EXPECT_EQ(back.losses, m.losses);
  EXPECT_EQ(back.robust_acc, m.robust_acc);
  EXPECT_EQ(back.lipschitz, m.lipschitz);
}

}  // namespace
}  // namespace tarot
