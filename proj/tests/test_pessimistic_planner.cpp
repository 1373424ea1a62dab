// Copyright 2026 The tokenrl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include "tokenrl/generators.hpp"
#include "tokenrl/pessimistic_planner.hpp"

namespace tokenrl {
namespace {

ConfidenceSet random_set(Rng& rng, int d, double rho, double bound, double mle_scale) {
  Eigen::MatrixXd g(d + 3, d);
  std::normal_distribution<double> n01;
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n01(rng);
  auto sigma = std::make_shared<const CovarianceMatrix>(g.transpose() * g + Eigen::MatrixXd::Identity(d, d), 1.0);
  Eigen::VectorXd t0(d);
  for (int i = 0; i < d; ++i) t0(i) = n01(rng);
  t0 *= mle_scale * bound / t0.norm();
  return {t0, sigma, rho, bound};
}

// θ = θ₀ + ϱ L⁻ᵀ u with ‖u‖ ≤ 1 covers the ellipsoid; keep points in the ball.
double sampled_min(const Eigen::VectorXd& mu, const ConfidenceSet& set, Rng& rng, int samples) {
  const Eigen::LLT<Eigen::MatrixXd> llt(set.sigma->matrix());
  const int d = static_cast<int>(mu.size());
  std::normal_distribution<double> n01;
  double best = INFINITY;
  for (int k = 0; k < samples; ++k) {
    Eigen::VectorXd u(d);
    for (int i = 0; i < d; ++i) u(i) = n01(rng);
    u *= std::pow(uniform01(rng), 1.0 / d) / u.norm();
    const Eigen::VectorXd theta = set.theta_mle + set.rho * llt.matrixU().solve(u);
    if (theta.norm() <= set.param_bound) best = std::min(best, mu.dot(theta));
  }
  return best;
}

TEST(MinimizeLinear, ClosedFormWhenTheBallIsSlack) {
  Rng rng(1);
  for (int k = 0; k < 20; ++k) {
    const ConfidenceSet set = random_set(rng, 3, 0.05, 100.0, 0.01);
    Eigen::VectorXd mu = Eigen::VectorXd::Random(3);
    const InnerMin m = minimize_linear(mu, set);
    EXPECT_FALSE(m.ball_active);
    const double expect = mu.dot(set.theta_mle) - set.rho * std::sqrt(mu.dot(set.sigma->matrix().inverse() * mu));
    EXPECT_NEAR(m.linear_part, expect, 1e-12);
    EXPECT_NEAR(mu.dot(m.theta), expect, 1e-12);
    EXPECT_TRUE(set.contains(m.theta, 1e-9));
    EXPECT_LE(m.linear_part, sampled_min(mu, set, rng, 2000) + 1e-12);
  }
}

TEST(MinimizeLinear, BallConstraintAgreesWithSampling) {
  Rng rng(2);
  int active = 0;
  for (int k = 0; k < 20; ++k) {
    const ConfidenceSet set = random_set(rng, 2, 3.0, 1.0, 0.6);
    Eigen::VectorXd mu = Eigen::VectorXd::Random(2);
    const InnerMin m = minimize_linear(mu, set);
    active += m.ball_active;
    EXPECT_TRUE(set.contains(m.theta, 1e-9));
    const double s = sampled_min(mu, set, rng, 200000);
    EXPECT_LE(m.linear_part, s + 1e-12);
    EXPECT_GE(m.linear_part, s - 2e-2 * mu.norm());
  }
  EXPECT_GT(active, 0);
}

TEST(MinimizeLinear, ZeroDirectionReturnsTheCenter) {
  Rng rng(3);
  const ConfidenceSet set = random_set(rng, 3, 1.0, 1.0, 0.5);
  const InnerMin m = minimize_linear(Eigen::VectorXd::Zero(3), set);
  EXPECT_EQ(m.linear_part, 0.0);
  EXPECT_EQ(m.theta, set.theta_mle);
}

TEST(FeatureExpectation, MatchesEnumeration) {
  const TokenMdp mdp = make_token_mdp(2, 3, 1, Token{1});
  Rng rng(4);
  const LinearInstance lin = random_linear_instance(mdp.space(), 3, 1.0, 1.0, rng);
  const auto pi = random_policy(mdp.space(), rng);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(3);
  for_each_response(mdp, 0, [&](std::span<const Token> y) {
    mu += std::exp(pi.sequence_log_prob(0, y)) * lin.features->trajectory_sum(0, y);
  });
  EXPECT_LT((feature_expectation(visitation(mdp, pi), *lin.features) - mu).norm(), 1e-12);
}

struct Offline {
  TokenMdp mdp = make_token_mdp(2, 3);
  LinearInstance lin;
  AutoregressivePolicy ref;
  PreferenceDataset ds;
};

Offline make_offline(std::uint64_t seed, std::int64_t n) {
  Offline o;
  Rng rng(seed);
  o.lin = random_linear_instance(o.mdp.space(), 4, 1.0, 1.0, rng);
  o.ref = AutoregressivePolicy::uniform(o.mdp.space());
  o.ds = sample_dataset(o.mdp, o.lin.reward, o.ref, n, rng);
  return o;
}

TEST(OfflinePlan, ZeroRadiusPlansTheMleReward) {
  const Offline o = make_offline(5, 200);
  OfflinePlanConfig cfg;
  cfg.pessimism.horizon = 3;
  cfg.pessimism.dim = 4;
  cfg.rho_override = 0.0;
  const OfflinePlanResult res = offline_plan(o.mdp, o.ds, *o.lin.features, o.ref, 1.0, cfg);
  const Eigen::VectorXd rv = o.lin.features->rows() * res.theta_mle;
  const RewardTable r(o.mdp.space(), std::vector<double>(rv.data(), rv.data() + rv.size()));
  const PlanResult plan = soft_backward_induction(o.mdp, r, o.ref, 1.0);
  for (std::size_t i = 0; i < plan.policy.log_prob_table().size(); ++i) {
    EXPECT_NEAR(res.policy.log_prob_table()[i], plan.policy.log_prob_table()[i], 1e-12);
  }
}

TEST(OfflinePlan, BoundHoldsWhenTheTruthIsInTheSet) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Offline o = make_offline(100 + seed, 64);
    OfflinePlanConfig cfg;
    cfg.pessimism.horizon = 3;
    cfg.pessimism.dim = 4;
    const OfflinePlanResult pre = offline_plan(o.mdp, o.ds, *o.lin.features, o.ref, 1.0, cfg);
    // Smallest radius that still covers θ*.
    cfg.rho_override = pre.sigma->norm(pre.theta_mle - o.lin.theta_star) * (1 + 1e-9);
    const OfflinePlanResult res = offline_plan(o.mdp, o.ds, *o.lin.features, o.ref, 1.0, cfg);
    const PlanResult opt = soft_backward_induction(o.mdp, o.lin.reward, o.ref, 1.0);
    const double subopt = suboptimality(o.mdp, res.policy, o.lin.reward, o.ref, 1.0);
    const double rhs = pessimistic_bound(o.mdp, opt.policy, res.policy, *o.lin.features, *res.sigma, res.rho, 1.0);
    EXPECT_LE(subopt, rhs + 1e-12) << "seed " << seed;
    EXPECT_GE(subopt, -1e-12);
  }
}

TEST(PessimisticBound, ReducesToBonusWhenPoliciesMatch) {
  const Offline o = make_offline(6, 30);
  const CovarianceMatrix sigma = covariance(o.ds, *o.lin.features, 1.0);
  const double rhs = pessimistic_bound(o.mdp, o.ref, o.ref, *o.lin.features, sigma, 0.5, 1.0);
  double bonus = 0.0;
  for_each_response(o.mdp, 0, [&](std::span<const Token> y) {
    for_each_step(o.mdp.space(), 0, y, [&](const Node& n, Token a, int) {
      bonus += std::exp(o.ref.sequence_log_prob(0, y)) * sigma.inv_norm((*o.lin.features)(n, a).transpose());
    });
  });
  EXPECT_NEAR(rhs, 2 * 0.5 * bonus, 1e-12);
}

TEST(MaxMin, ImprovesOnReferenceAndPlugIn) {
  const Offline o = make_offline(7, 64);
  OfflinePlanConfig cfg;
  cfg.pessimism.horizon = 3;
  cfg.pessimism.dim = 4;
  cfg.rho_override = 2.0;
  const OfflinePlanResult plan = offline_plan(o.mdp, o.ds, *o.lin.features, o.ref, 1.0, cfg);
  const ConfidenceSet set = plan.confidence_set(1.0);
  const MaxMinResult mm = maxmin_plan(o.mdp, set, *o.lin.features, o.ref, 1.0);
  EXPECT_FALSE(mm.stalled);
  EXPECT_GE(mm.value, inner_min_value(o.mdp, o.ref, set, *o.lin.features, o.ref, 1.0).value - 1e-12);
  EXPECT_GE(mm.value, inner_min_value(o.mdp, plan.policy, set, *o.lin.features, o.ref, 1.0).value - 1e-9);
  EXPECT_NEAR(inner_min_value(o.mdp, mm.policy, set, *o.lin.features, o.ref, 1.0).value, mm.value, 1e-12);
  EXPECT_EQ(mm.trace.size(), static_cast<std::size_t>(mm.iterations + 1));
}

TEST(MaxMin, UnconstrainedSetRecoversSoftOptimum) {
  // ϱ = 0: the inner minimum is the true linear value, so the max is V*.
  const Offline o = make_offline(8, 10);
  const ConfidenceSet set{o.lin.theta_star,
                          std::make_shared<const CovarianceMatrix>(covariance(o.ds, *o.lin.features, 1.0)), 0.0, 1.0};
  const MaxMinResult mm = maxmin_plan(o.mdp, set, *o.lin.features, o.ref, 1.0);
  const double v_star = soft_backward_induction(o.mdp, o.lin.reward, o.ref, 1.0).values.value(o.mdp);
  EXPECT_NEAR(mm.value, v_star, 1e-8);
}

TEST(MaxMin, RejectsBadSettings) {
  const Offline o = make_offline(9, 10);
  const ConfidenceSet set{o.lin.theta_star,
                          std::make_shared<const CovarianceMatrix>(covariance(o.ds, *o.lin.features, 1.0)), 0.1, 1.0};
  EXPECT_THROW(maxmin_plan(o.mdp, set, *o.lin.features, o.ref, 0.0), UsageError);
  MaxMinConfig cfg;
  cfg.step = 1.5;
  EXPECT_THROW(maxmin_plan(o.mdp, set, *o.lin.features, o.ref, 1.0, cfg), UsageError);
}

}  // namespace
}  // namespace tokenrl
