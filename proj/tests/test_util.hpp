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


// Brute-force oracles shared by the unit and acceptance tests.

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "tokenrl/policy.hpp"
#include "tokenrl/token_mdp.hpp"

namespace tokenrl::testing {

struct ResponseProb {
  std::vector<Token> tokens;
  double prob = 0.0;
};

// π*(y|x) ∝ π_ref(y|x) exp(R(y)/β), normalized over every complete response.
inline std::vector<ResponseProb> gibbs_distribution(const TokenMdp& mdp, const RewardTable& r,
                                                    const AutoregressivePolicy& ref, double beta, int prompt) {
  std::vector<ResponseProb> out;
  std::vector<double> logw;
  for_each_response(mdp, prompt, [&](std::span<const Token> y) {
    out.push_back({{y.begin(), y.end()}, 0.0});
    logw.push_back(ref.sequence_log_prob(prompt, y) + trajectory_return(r, prompt, y) / beta);
  });
  double mx = -INFINITY;
  for (double l : logw) mx = std::max(mx, l);
  double z = 0.0;
  for (double l : logw) z += std::exp(l - mx);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].prob = std::exp(logw[i] - mx) / z;
  return out;
}

// Central differences of f at x.
inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2 * h);
  }
  return g;
}

inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

}  // namespace tokenrl::testing
