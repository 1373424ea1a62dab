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


#include <cmath>

#include <gtest/gtest.h>

#include "tokenrl/io.hpp"
#include "tokenrl/soft_planner.hpp"

namespace tokenrl {
namespace {

TEST(MdpJson, TableReward) {
  const Json j = Json::parse(R"({"vocab_size": 2, "horizon": 2,
      "reward": {"kind": "table", "values": [1, 2, 3, 4, 5, 6]}})");
  const LoadedMdp m = mdp_from_json(j);
  ASSERT_TRUE(m.token);
  ASSERT_NE(m.token->reward(), nullptr);
  EXPECT_EQ(m.token->space().num_state_actions(), 6);
  const Node root = m.token->space().root(0);
  EXPECT_EQ((*m.token->reward())(root, 1), 2.0);
}

TEST(MdpJson, RandomRewardIsSeeded) {
  const Json j = Json::parse(R"({"vocab_size": 3, "horizon": 2, "reward": {"kind": "random", "seed": 4}})");
  const auto a = mdp_from_json(j).token->reward()->values();
  const auto b = mdp_from_json(j).token->reward()->values();
  EXPECT_EQ(std::vector<double>(a.begin(), a.end()), std::vector<double>(b.begin(), b.end()));
}

TEST(MdpJson, LinearRewardCarriesFeatures) {
  const LoadedMdp m = mdp_from_json(Json::parse(
      R"({"vocab_size": 2, "horizon": 3, "reward": {"kind": "linear", "dim": 3, "seed": 1}})"));
  ASSERT_TRUE(m.features);
  EXPECT_EQ(m.features->dim(), 3);
  EXPECT_EQ(m.theta_star.size(), 3);
  const Node root = m.token->space().root(0);
  EXPECT_NEAR((*m.token->reward())(root, 0), (*m.features)(root, 0).transpose().dot(m.theta_star), 1e-12);
}

TEST(MdpJson, ErrorsNameTheField) {
  auto message = [](const char* text) {
    try {
      mdp_from_json(Json::parse(text));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_EQ(message(R"({"vocab_size": 2, "horizon": 2, "colour": 1})"), "mdp.colour: unknown field");
  EXPECT_EQ(message(R"({"horizon": 2})"), "mdp.vocab_size: missing required field");
  EXPECT_EQ(message(R"({"vocab_size": "two", "horizon": 2})"), "mdp.vocab_size: wrong type");
  EXPECT_EQ(message(R"({"vocab_size": 2, "horizon": 2, "reward": {"kind": "table", "values": [1]}})"),
            "mdp.reward.values: expected 6 entries");
  EXPECT_EQ(message(R"({"vocab_size": 2, "horizon": 2, "reward": {"kind": "magic"}})"),
            "mdp.reward.kind: unknown reward kind 'magic'");
}

TEST(MdpJson, TabularKernel) {
  const LoadedMdp m = mdp_from_json(Json::parse(R"({
      "horizon": 1, "initial_dist": [1, 0],
      "transition": {"num_states": 2, "num_actions": 2,
                     "kernel": [[[[0, 1.0]], [[1, 1.0]]], [[[1, 1.0]], [[1, 1.0]]]],
                     "reward": [[0.0, 1.0], [0.0, 0.0]]}})"));
  ASSERT_TRUE(m.tabular);
  EXPECT_FALSE(m.token);
  EXPECT_EQ(markov_optimal_value(*m.tabular), 1.0);
  EXPECT_THROW(mdp_from_json(Json::parse(R"({"horizon": 1, "initial_dist": [1],
      "transition": {"num_states": 1, "num_actions": 1, "kernel": [[[[0, 0.5]]]], "reward": [[0]]}})")),
               ConfigError);
}

TEST(PolicyJson, RoundTrips) {
  const TokenMdp mdp = make_token_mdp(3, 3, 2, Token{1});
  Rng rng(2);
  const AutoregressivePolicy pi = random_policy(mdp.space(), rng);
  const Json j = Json::parse(policy_to_json(pi).dump());
  const AutoregressivePolicy back = policy_from_json(j);
  const auto a = pi.log_prob_table();
  const auto b = back.log_prob_table();
  ASSERT_EQ(a.size(), b.size());
  // Renormalization on load may move the last bit.
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(PolicyJson, ZeroProbabilityBecomesNull) {
  const TokenMdp mdp = make_token_mdp(2, 1);
  const AutoregressivePolicy pi = AutoregressivePolicy::from_logits(mdp.space(), {0.0, kNegInf});
  const OrderedJson j = policy_to_json(pi);
  EXPECT_TRUE(j["log_probs"][1].is_null());
  EXPECT_EQ(policy_from_json(Json::parse(j.dump())).log_prob(mdp.space().root(0), 1), kNegInf);
  Json bad = Json::parse(j.dump());
  bad["extra"] = 1;
  EXPECT_THROW(policy_from_json(bad), ConfigError);
}

TEST(RewardJson, RoundTrips) {
  const TokenMdp mdp = make_token_mdp(2, 3);
  Rng rng(3);
  const RewardTable r = random_reward(mdp.space(), rng);
  const RewardTable back = reward_from_json(Json::parse(reward_to_json(r).dump()));
  const auto a = r.values();
  const auto b = back.values();
  EXPECT_EQ(std::vector<double>(a.begin(), a.end()), std::vector<double>(b.begin(), b.end()));
}

TEST(FormatDouble, RoundTrips) {
  for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.125}) EXPECT_EQ(std::stod(format_double(x)), x);
}

}  // namespace
}  // namespace tokenrl
