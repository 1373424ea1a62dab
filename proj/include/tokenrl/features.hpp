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

#pragma once

#include <Eigen/Dense>

#include <memory>
#include <string>

#include "tokenrl/token_mdp.hpp"

namespace tokenrl {

// φ(s, a) for every decision state-action pair, stored row-wise.
class FeatureMap {
 public:
  FeatureMap(TreeSpace space, Eigen::MatrixXd rows, std::string kind = "custom")
      : space_(std::move(space)), rows_(std::move(rows)), kind_(std::move(kind)) {
    if (rows_.rows() != space_.num_state_actions()) throw UsageError("feature rows must cover every (s, a)");
    if (rows_.cols() < 1) throw UsageError("feature dimension must be >= 1");
  }

  // Indicator features: d = #decision states × A.
  static FeatureMap one_hot(const TreeSpace& space, std::int64_t max_dim = 4096) {
    const std::int64_t d = space.num_state_actions();
    if (d > max_dim) throw UnsupportedModeError("one-hot feature dimension " + std::to_string(d) + " too large");
    return FeatureMap(space, Eigen::MatrixXd::Identity(d, d), "onehot");
  }

  // Fixed Gaussian features rescaled to ‖φ(s, a)‖₂ = norm.
  static FeatureMap random_gaussian(const TreeSpace& space, int dim, double norm, Rng& rng) {
    if (dim < 1) throw UsageError("feature dimension must be >= 1");
    if (!(norm > 0)) throw UsageError("feature norm must be positive");
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd rows(space.num_state_actions(), dim);
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      for (int j = 0; j < dim; ++j) rows(i, j) = gauss(rng);
      const double n = rows.row(i).norm();
      rows.row(i) *= norm / (n > 0 ? n : 1.0);
    }
    return FeatureMap(space, std::move(rows), "gaussian");
  }

  const TreeSpace& space() const { return space_; }
  int dim() const { return static_cast<int>(rows_.cols()); }
  const std::string& kind() const { return kind_; }
  const Eigen::MatrixXd& rows() const { return rows_; }

  auto operator()(const Node& s, Token a) const { return rows_.row(space_.sa_index(s, a)); }

  // max ‖φ(s, a)‖₂ over the table.
  double max_norm() const { return rows_.rowwise().norm().maxCoeff(); }

  // Σ_h φ(s_h, a_h) along a response.
  Eigen::VectorXd trajectory_sum(int prompt, std::span<const Token> toks) const {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim());
    for_each_step(space_, prompt, toks, [&](const Node& n, Token a, int) { acc += rows_.row(space_.sa_index(n, a)).transpose(); });
    return acc;
  }

 private:
  TreeSpace space_;
  Eigen::MatrixXd rows_;
  std::string kind_;
};

}  // namespace tokenrl
