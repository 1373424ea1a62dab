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

#include "test_util.hpp"
#include "tokenrl/generators.hpp"
#include "tokenrl/reward_model.hpp"

namespace tokenrl {
namespace {

struct Fixture {
  TokenMdp mdp;
  LinearInstance lin;
  PreferenceDataset ds;
};

Fixture make_fixture(std::uint64_t seed, int dim, std::int64_t n, int A = 2, int H = 3) {
  Rng rng(seed);
  TokenMdp mdp = make_token_mdp(A, H);
  LinearInstance lin = random_linear_instance(mdp.space(), dim, 1.0, 1.0, rng);
  PreferenceDataset ds = sample_dataset(mdp, lin.reward, AutoregressivePolicy::uniform(mdp.space()), n, rng);
  return {std::move(mdp), std::move(lin), std::move(ds)};
}

TEST(Mle, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  for (int k = 0; k < 10; ++k) {
    const Fixture f = make_fixture(100 + k, 4, 40);
    const PairFeatures pf = pair_features(f.ds, *f.lin.features);
    const Eigen::VectorXd theta = Eigen::VectorXd::Random(4) * 2.0;
    const Eigen::VectorXd num =
        testing::numeric_gradient([&](const Eigen::VectorXd& t) { return mle_log_likelihood(t, pf); }, theta);
    EXPECT_LT(testing::relative_error(mle_gradient(theta, pf), num), 1e-6);
  }
}

TEST(Mle, LogLikelihoodIsWeightedBradleyTerry) {
  const Fixture f = make_fixture(2, 3, 5);
  const Eigen::VectorXd theta = Eigen::VectorXd::Constant(3, 0.3);
  double ll = 0.0;
  for (const auto& p : f.ds.pairs) {
    const double rw = f.lin.features->trajectory_sum(0, p.winner).dot(theta);
    const double rl = f.lin.features->trajectory_sum(0, p.loser).dot(theta);
    ll += std::log(bt_prob(rw, rl));
  }
  EXPECT_NEAR(mle_log_likelihood(theta, f.ds, *f.lin.features), ll, 1e-12);
}

TEST(Mle, AgreesWithGridSearchInTwoDimensions) {
  const Fixture f = make_fixture(3, 2, 300);
  const double bound = 1.0;
  const MleResult res = mle_fit(f.ds, *f.lin.features, bound);
  ASSERT_TRUE(res.converged);
  const PairFeatures pf = pair_features(f.ds, *f.lin.features);
  double best = -INFINITY;
  Eigen::VectorXd arg(2);
  const int n = 400;
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) {
      Eigen::VectorXd t(2);
      t << -bound + 2.0 * bound * i / n, -bound + 2.0 * bound * j / n;
      if (t.norm() > bound) continue;
      const double v = mle_log_likelihood(t, pf);
      if (v > best) best = v, arg = t;
    }
  }
  EXPECT_GE(res.log_likelihood, best - 1e-9);
  EXPECT_LT((res.theta - arg).norm(), 2.0 * 2.0 * bound / n * std::sqrt(2.0) + 0.02);
}

TEST(Mle, RespectsTheParameterBall) {
  // Separable data: the unconstrained MLE diverges.
  const TokenMdp mdp = make_token_mdp(2, 1);
  const FeatureMap phi = FeatureMap::one_hot(mdp.space());
  PreferenceDataset ds;
  for (int i = 0; i < 10; ++i) ds.pairs.push_back({0, {1}, {0}, 1.0});
  const MleResult res = mle_fit(ds, phi, 2.0);
  EXPECT_TRUE(res.converged);
  EXPECT_NEAR(res.theta.norm(), 2.0, 1e-9);
  EXPECT_NEAR(res.theta(1) - res.theta(0), 2.0 * std::sqrt(2.0), 1e-6);
}

TEST(Mle, RecoversThetaWithLotsOfData) {
  const Fixture f = make_fixture(4, 3, 100000);
  const MleResult res = mle_fit(f.ds, *f.lin.features, 1.0);
  EXPECT_LT((res.theta - f.lin.theta_star).norm(), 0.1);
}

TEST(Covariance, MatchesOuterProductSum) {
  const Fixture f = make_fixture(5, 3, 25);
  const double lambda = 0.7;
  Eigen::MatrixXd expect = lambda * Eigen::MatrixXd::Identity(3, 3);
  for (const auto& p : f.ds.pairs) {
    const Eigen::VectorXd d =
        f.lin.features->trajectory_sum(0, p.winner) - f.lin.features->trajectory_sum(0, p.loser);
    expect += d * d.transpose();
  }
  const CovarianceMatrix sigma = covariance(f.ds, *f.lin.features, lambda);
  EXPECT_LT((sigma.matrix() - expect).norm(), 1e-10);
  const Eigen::VectorXd v = Eigen::VectorXd::Random(3);
  EXPECT_NEAR(sigma.inv_norm(v), std::sqrt(v.dot(expect.inverse() * v)), 1e-10);
  EXPECT_NEAR(sigma.norm(v), std::sqrt(v.dot(expect * v)), 1e-10);
  EXPECT_THROW(covariance(f.ds, *f.lin.features, 0.0), UsageError);
}

TEST(Pessimism, RadiusFormula) {
  PessimismConfig c;
  c.dim = 4;
  c.delta = 0.1;
  // 2HLB = 2, Υ = 1/(2 + e^-2 + e^2).
  const double upsilon = 1.0 / (2.0 + std::exp(-2.0) + std::exp(2.0));
  EXPECT_NEAR(c.upsilon(), upsilon, 1e-15);
  EXPECT_NEAR(c.rho(), std::sqrt(4.0 * std::log(10.0) / upsilon + 1.0), 1e-12);
  c.delta = 1.0;
  EXPECT_THROW(c.rho(), UsageError);
}

TEST(Pessimism, LowerBoundsEveryRewardInTheConfidenceSet) {
  const Fixture f = make_fixture(6, 4, 64);
  const MleResult mle = mle_fit(f.ds, *f.lin.features, 1.0);
  const CovarianceMatrix sigma = covariance(f.ds, *f.lin.features, 1.0);
  const double rho = 0.8;
  const RewardTable lo = pessimistic_reward(mle.theta, sigma, rho, *f.lin.features);
  const Eigen::LLT<Eigen::MatrixXd> llt(sigma.matrix());
  Rng rng(60);
  std::normal_distribution<double> g;
  for (int k = 0; k < 200; ++k) {
    Eigen::VectorXd u(4);
    for (int i = 0; i < 4; ++i) u(i) = g(rng);
    u *= rho * uniform01(rng) / u.norm();
    // θ with ‖θ − θ_MLE‖_Σ = ‖u‖.
    const Eigen::VectorXd theta = mle.theta + llt.matrixU().solve(u);
    ASSERT_NEAR(sigma.norm(theta - mle.theta), u.norm(), 1e-10);
    const Eigen::VectorXd r = f.lin.features->rows() * theta;
    for (Eigen::Index i = 0; i < r.size(); ++i) EXPECT_LE(lo.values()[i], r(i) + 1e-12);
  }
}

TEST(Pessimism, RejectsSingularCovariance) {
  const Fixture f = make_fixture(7, 2, 10);
  EXPECT_THROW(
      {
        const CovarianceMatrix sigma(Eigen::MatrixXd::Identity(2, 2) * 1e-20 + Eigen::MatrixXd::Ones(2, 2), 1e-20);
        pessimistic_reward(Eigen::VectorXd::Zero(2), sigma, 1.0, *f.lin.features);
      },
      NumericalError);
}

}  // namespace
}  // namespace tokenrl
