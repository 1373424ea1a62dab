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
#include <vector>

#include "tokenrl/features.hpp"
#include "tokenrl/token_mdp.hpp"

namespace tokenrl {

// Conditional next-token distribution π(a | x, y_{1:h-1}) at every decision
// state. The sequence probability is the product of conditionals, so the
// autoregressive factorization holds by construction.
//
// Two parameterizations share one materialized log-probability table:
//   tabular         logits(s, a) free
//   linear-softmax  logits(s, a) = base(s, a) + ψ(s, a)ᵀ w
// The base logits let a linear-softmax policy start exactly at a reference.
class AutoregressivePolicy {
 public:
  enum class Kind { kTabular, kLinearSoftmax };

  AutoregressivePolicy() = default;

  static AutoregressivePolicy uniform(const TreeSpace& space) {
    return from_logits(space, std::vector<double>(space.num_state_actions(), 0.0));
  }

  static AutoregressivePolicy from_logits(TreeSpace space, std::vector<double> logits) {
    AutoregressivePolicy p;
    p.space_ = std::move(space);
    p.kind_ = Kind::kTabular;
    p.logits_ = std::move(logits);
    p.normalize();
    return p;
  }

  // Conditionals given directly; zeros become -inf logits.
  static AutoregressivePolicy from_probs(TreeSpace space, std::span<const double> probs) {
    std::vector<double> logits(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] < 0) throw UsageError("negative probability");
      logits[i] = probs[i] > 0 ? std::log(probs[i]) : kNegInf;
    }
    return from_logits(std::move(space), std::move(logits));
  }

  static AutoregressivePolicy linear_softmax(std::shared_ptr<const FeatureMap> features, Eigen::VectorXd weights,
                                             std::vector<double> base_logits) {
    if (!features) throw UsageError("linear-softmax policy needs a feature map");
    if (weights.size() != features->dim()) throw UsageError("weight dimension mismatch");
    AutoregressivePolicy p;
    p.space_ = features->space();
    if (static_cast<std::int64_t>(base_logits.size()) != p.space_.num_state_actions()) {
      throw UsageError("base logits size mismatch");
    }
    p.kind_ = Kind::kLinearSoftmax;
    p.features_ = std::move(features);
    p.weights_ = std::move(weights);
    p.base_ = std::move(base_logits);
    const Eigen::VectorXd lin = p.features_->rows() * p.weights_;
    p.logits_.resize(p.base_.size());
    for (std::size_t i = 0; i < p.base_.size(); ++i) p.logits_[i] = p.base_[i] + lin(static_cast<Eigen::Index>(i));
    p.normalize();
    return p;
  }

  Kind kind() const { return kind_; }
  const TreeSpace& space() const { return space_; }
  std::span<const double> logits() const { return logits_; }
  std::span<const double> log_prob_table() const { return log_probs_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  std::span<const double> base_logits() const { return base_; }
  const std::shared_ptr<const FeatureMap>& features() const { return features_; }

  double log_prob(const Node& s, Token a) const { return log_probs_[space_.sa_index(s, a)]; }
  double prob(const Node& s, Token a) const { return probs_[space_.sa_index(s, a)]; }
  std::span<const double> log_probs(const Node& s) const {
    return {log_probs_.data() + space_.sa_index(s, 0), static_cast<std::size_t>(space_.vocab_size())};
  }
  std::span<const double> probs(const Node& s) const {
    return {probs_.data() + space_.sa_index(s, 0), static_cast<std::size_t>(space_.vocab_size())};
  }

  Token sample(const Node& s, Rng& rng) const { return sample_categorical(probs(s), rng); }

  // log π(y | x) = Σ_h log π(y_h | x, y_{1:h-1}).
  double sequence_log_prob(int prompt, std::span<const Token> toks) const {
    double s = 0.0;
    for_each_step(space_, prompt, toks, [&](const Node& n, Token a, int) { s += log_prob(n, a); });
    return s;
  }

 private:
  void normalize() {
    const int A = space_.vocab_size();
    if (static_cast<std::int64_t>(logits_.size()) != space_.num_state_actions()) {
      throw UsageError("policy table size does not match the tree");
    }
    log_probs_.resize(logits_.size());
    probs_.resize(logits_.size());
    for (std::size_t base = 0; base < logits_.size(); base += A) {
      const std::span<const double> row(logits_.data() + base, A);
      for (double l : row) {
        if (std::isnan(l) || l == std::numeric_limits<double>::infinity()) throw NumericalError("non-finite logit");
      }
      const double z = log_sum_exp(row);
      if (z == kNegInf) throw NumericalError("policy row has no support");
      for (int a = 0; a < A; ++a) {
        log_probs_[base + a] = row[a] - z;
        probs_[base + a] = std::exp(log_probs_[base + a]);
      }
    }
  }

  TreeSpace space_;
  Kind kind_ = Kind::kTabular;
  std::vector<double> logits_;
  std::vector<double> log_probs_;
  std::vector<double> probs_;
  std::shared_ptr<const FeatureMap> features_;
  Eigen::VectorXd weights_;
  std::vector<double> base_;
};

inline Trajectory sample_trajectory(const TokenMdp& mdp, const AutoregressivePolicy& pi, int prompt, Rng& rng) {
  Trajectory t;
  t.prompt_id = prompt;
  Node n = mdp.space().root(prompt);
  while (!mdp.space().is_terminal(n)) {
    const Token a = pi.sample(n, rng);
    t.tokens.push_back(a);
    n = mdp.space().child(n, a);
  }
  return t;
}

inline int sample_prompt(const TokenMdp& mdp, Rng& rng) { return sample_categorical(mdp.initial_dist(), rng); }

// KL(π(·|s) ‖ π_ref(·|s)); +inf when π puts mass where π_ref has none.
inline double kl_at(const AutoregressivePolicy& pi, const AutoregressivePolicy& ref, const Node& s) {
  double kl = 0.0;
  for (Token a = 0; a < pi.space().vocab_size(); ++a) {
    const double p = pi.prob(s, a);
    if (p == 0.0) continue;
    const double lr = ref.log_prob(s, a);
    if (lr == kNegInf) return std::numeric_limits<double>::infinity();
    kl += p * (pi.log_prob(s, a) - lr);
  }
  return kl;
}

}  // namespace tokenrl
