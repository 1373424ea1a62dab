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

// Seeded random instances shared by tests, experiments and the CLI.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tokenrl/features.hpp"
#include "tokenrl/policy.hpp"
#include "tokenrl/token_mdp.hpp"

namespace tokenrl {

inline TokenMdp make_token_mdp(int vocab, int horizon, int num_prompts = 1, std::optional<Token> eos = std::nullopt) {
  std::vector<std::string> prompts;
  for (int p = 0; p < num_prompts; ++p) prompts.push_back("x" + std::to_string(p));
  return TokenMdp(vocab, horizon, std::move(prompts), std::vector<double>(num_prompts, 1.0 / num_prompts), eos);
}

// Rewards i.i.d. uniform on [−scale, scale].
inline RewardTable random_reward(const TreeSpace& space, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(space.num_state_actions());
  for (auto& x : v) x = u(rng);
  return RewardTable(space, std::move(v));
}

// Gaussian logits with standard deviation `temperature`.
inline AutoregressivePolicy random_policy(const TreeSpace& space, Rng& rng, double temperature = 1.0) {
  std::normal_distribution<double> g(0.0, temperature);
  std::vector<double> logits(space.num_state_actions());
  for (auto& x : logits) x = g(rng);
  return AutoregressivePolicy::from_logits(space, std::move(logits));
}

// Initial distribution drawn from a flat Dirichlet.
inline std::vector<double> random_simplex(int n, Rng& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& x : p) s += x = e(rng);
  for (auto& x : p) x /= s;
  return p;
}

struct LinearInstance {
  std::shared_ptr<const FeatureMap> features;
  Eigen::VectorXd theta_star;
  RewardTable reward;
};

// Gaussian features with ‖φ‖₂ = L and θ* uniform in direction with
// ‖θ*‖₂ = B · U(0.5, 1).
inline LinearInstance random_linear_instance(const TreeSpace& space, int dim, double feature_bound,
                                             double param_bound, Rng& rng) {
  auto phi = std::make_shared<const FeatureMap>(FeatureMap::random_gaussian(space, dim, feature_bound, rng));
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd theta(dim);
  for (int i = 0; i < dim; ++i) theta(i) = g(rng);
  theta *= param_bound * (0.5 + 0.5 * uniform01(rng)) / theta.norm();
  const Eigen::VectorXd vals = phi->rows() * theta;
  return {phi, theta, RewardTable(space, std::vector<double>(vals.data(), vals.data() + vals.size()))};
}

}  // namespace tokenrl
