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
#include "tokenrl/dpo.hpp"
#include "tokenrl/generators.hpp"
#include "tokenrl/soft_planner.hpp"

namespace tokenrl {
namespace {

struct Fixture {
  TokenMdp mdp;
  RewardTable r;
  AutoregressivePolicy ref;
  PreferenceDataset ds;
};

Fixture make_fixture(std::uint64_t seed, int A, int H, std::int64_t n, std::optional<Token> eos = std::nullopt) {
  Rng rng(seed);
  TokenMdp mdp = make_token_mdp(A, H, 2, eos);
  RewardTable r = random_reward(mdp.space(), rng);
  AutoregressivePolicy ref = random_policy(mdp.space(), rng);
  PreferenceDataset ds = sample_dataset(mdp, r, ref, n, rng);
  return {std::move(mdp), std::move(r), std::move(ref), std::move(ds)};
}

Eigen::VectorXd to_vec(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

TEST(DpoLoss, TokenAndSentenceFormsAgree) {
  const Fixture f = make_fixture(1, 3, 3, 50, Token{0});
  Rng rng(10);
  for (int k = 0; k < 5; ++k) {
    const auto pi = random_policy(f.mdp.space(), rng);
    EXPECT_NEAR(dpo_loss(pi, f.ref, f.ds, 0.1), dpo_loss_sentence(pi, f.ref, f.ds, 0.1), 1e-12);
  }
}

TEST(DpoLoss, ReferencePolicyGivesLogTwo) {
  const Fixture f = make_fixture(2, 2, 3, 20);
  EXPECT_NEAR(dpo_loss(f.ref, f.ref, f.ds, 0.5), std::log(2.0), 1e-15);
}

TEST(DpoGradient, LogitsMatchFiniteDifferences) {
  const Fixture f = make_fixture(3, 3, 2, 40, Token{2});
  Rng rng(30);
  for (int k = 0; k < 5; ++k) {
    const auto pi = random_policy(f.mdp.space(), rng);
    const Eigen::VectorXd x = to_vec(pi.logits());
    auto loss = [&](const Eigen::VectorXd& l) {
      return dpo_loss(AutoregressivePolicy::from_logits(f.mdp.space(), std::vector<double>(l.data(), l.data() + l.size())),
                      f.ref, f.ds, 0.3);
    };
    const Eigen::VectorXd analytic = to_vec(dpo_logit_gradient(pi, f.ref, f.ds, 0.3));
    EXPECT_LT(testing::relative_error(analytic, testing::numeric_gradient(loss, x)), 1e-6);
  }
}

TEST(DpoGradient, LinearWeightsMatchFiniteDifferences) {
  const Fixture f = make_fixture(4, 2, 3, 40);
  Rng rng(40);
  auto phi = std::make_shared<const FeatureMap>(FeatureMap::random_gaussian(f.mdp.space(), 5, 1.0, rng));
  const std::vector<double> base(f.ref.log_prob_table().begin(), f.ref.log_prob_table().end());
  for (int k = 0; k < 5; ++k) {
    const Eigen::VectorXd w = Eigen::VectorXd::Random(5);
    auto loss = [&](const Eigen::VectorXd& x) {
      return dpo_loss(AutoregressivePolicy::linear_softmax(phi, x, base), f.ref, f.ds, 0.2);
    };
    const Eigen::VectorXd analytic = dpo_weight_gradient(AutoregressivePolicy::linear_softmax(phi, w, base), f.ref, f.ds, 0.2);
    EXPECT_LT(testing::relative_error(analytic, testing::numeric_gradient(loss, w)), 1e-6);
  }
  EXPECT_THROW(dpo_weight_gradient(f.ref, f.ref, f.ds, 0.2), UsageError);
}

TEST(ImplicitReward, SoftOptimalPolicyTelescopes) {
  // β log π*(y|x)/π_ref(y|x) = R(y) − V*(x) for every complete response.
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Fixture f = make_fixture(50 + seed, 3, 3, 1, seed % 2 ? std::optional<Token>(1) : std::nullopt);
    const double beta = 0.4;
    const PlanResult plan = soft_backward_induction(f.mdp, f.r, f.ref, beta);
    const RewardTable implicit = implicit_reward_table(f.mdp, plan.policy, f.ref, beta);
    for (int p = 0; p < 2; ++p) {
      const double v = plan.values.V(f.mdp.space().root(p));
      for_each_response(f.mdp, p, [&](std::span<const Token> y) {
        EXPECT_NEAR(trajectory_return(implicit, p, y), trajectory_return(f.r, p, y) - v, 1e-10);
      });
    }
  }
}

TEST(ImplicitReward, ZeroProbabilityIsAnError) {
  const TokenMdp mdp = make_token_mdp(2, 1);
  const auto ref = AutoregressivePolicy::uniform(mdp.space());
  const auto pi = AutoregressivePolicy::from_probs(mdp.space(), std::vector<double>{1.0, 0.0});
  EXPECT_THROW(implicit_token_reward(pi, ref, 0.1, mdp.space().root(0), 1), NumericalError);
  EXPECT_THROW(implicit_token_reward(ref, pi, 0.1, mdp.space().root(0), 1), NumericalError);
}

TEST(DpoFit, BanditRecoversRewardDifferences) {
  const TokenMdp mdp = make_token_mdp(4, 1);
  Rng rng(6);
  const RewardTable r = random_reward(mdp.space(), rng);
  const auto ref = random_policy(mdp.space(), rng);
  const double beta = 0.5;
  DpoConfig cfg;
  cfg.beta = beta;
  const DpoResult res = dpo_fit(population_dataset(mdp, r, ref), ref, cfg);
  const Node root = mdp.space().root(0);
  for (Token a = 1; a < 4; ++a) {
    const double got = implicit_token_reward(res.policy, ref, beta, root, a) - implicit_token_reward(res.policy, ref, beta, root, 0);
    EXPECT_NEAR(got, r(root, a) - r(root, 0), 1e-4);
  }
}

TEST(DpoFit, LowersTheLossAndIsDeterministic) {
  const Fixture f = make_fixture(7, 2, 2, 300);
  DpoConfig cfg;
  cfg.max_epochs = 500;
  const DpoResult a = dpo_fit(f.ds, f.ref, cfg);
  const DpoResult b = dpo_fit(f.ds, f.ref, cfg);
  EXPECT_LT(a.loss, dpo_loss(f.ref, f.ref, f.ds, cfg.beta));
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_TRUE(std::equal(a.policy.logits().begin(), a.policy.logits().end(), b.policy.logits().begin()));
}

TEST(DpoFit, LinearSoftmaxFits) {
  const Fixture f = make_fixture(8, 2, 2, 300);
  Rng rng(80);
  auto phi = std::make_shared<const FeatureMap>(FeatureMap::one_hot(f.mdp.space()));
  const auto init = AutoregressivePolicy::linear_softmax(
      phi, Eigen::VectorXd::Zero(phi->dim()),
      std::vector<double>(f.ref.log_prob_table().begin(), f.ref.log_prob_table().end()));
  DpoConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.max_epochs = 300;
  const DpoResult res = dpo_fit(f.ds, f.ref, cfg, &init);
  EXPECT_EQ(res.policy.kind(), AutoregressivePolicy::Kind::kLinearSoftmax);
  EXPECT_LT(res.loss, std::log(2.0));
}

TEST(DpoFit, RejectsBadArguments) {
  const Fixture f = make_fixture(9, 2, 2, 5);
  DpoConfig cfg;
  cfg.beta = 0.0;
  EXPECT_THROW(dpo_fit(f.ds, f.ref, cfg), UsageError);
  cfg.beta = 0.1;
  EXPECT_THROW(dpo_fit(PreferenceDataset{}, f.ref, cfg), UsageError);
}

}  // namespace
}  // namespace tokenrl
