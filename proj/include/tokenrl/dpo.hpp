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

// Direct preference optimization over autoregressive policies and the
// token-wise implicit reward β log(π_dpo(a|s) / π_ref(a|s)) it induces.

#pragma once

#include "tokenrl/policy.hpp"
#include "tokenrl/preference.hpp"

namespace tokenrl {

struct DpoConfig {
  double beta = 0.1;
  double learning_rate = 0.1;  // 1e-2 is the usual choice for linear-softmax
  int max_epochs = 20000;
  double tolerance = 1e-9;  // on the ∞-norm of the parameter gradient
};

struct DpoResult {
  AutoregressivePolicy policy;
  double loss = 0.0;
  double gradient_norm = 0.0;
  int epochs = 0;
  bool converged = false;
};

namespace detail {

inline double log_ratio_sum(const AutoregressivePolicy& pi, const AutoregressivePolicy& ref, int prompt,
                            std::span<const Token> toks) {
  double s = 0.0;
  for_each_step(pi.space(), prompt, toks, [&](const Node& n, Token a, int) {
    const double lp = pi.log_prob(n, a);
    const double lr = ref.log_prob(n, a);
    if (lp == kNegInf || lr == kNegInf) throw NumericalError("zero probability on a dataset token");
    s += lp - lr;
  });
  return s;
}

inline void check_beta(double beta) {
  if (!(beta > 0)) throw UsageError("DPO beta must be positive");
}

}  // namespace detail

// Weighted mean of −log σ(β Σ_h log(π/π_ref)(winner) − β Σ_h log(π/π_ref)(loser)).
inline double dpo_loss(const AutoregressivePolicy& pi, const AutoregressivePolicy& ref, const PreferenceDataset& ds,
                       double beta) {
  detail::check_beta(beta);
  if (ds.empty()) throw UsageError("dpo_loss: empty dataset");
  double total = 0.0, wsum = 0.0;
  for (const auto& p : ds.pairs) {
    const double z = beta * (detail::log_ratio_sum(pi, ref, p.prompt_id, p.winner) -
                             detail::log_ratio_sum(pi, ref, p.prompt_id, p.loser));
    total += -p.weight * log_sigmoid(z);
    wsum += p.weight;
  }
  return total / wsum;
}

// Same loss from whole-sequence probabilities π(y|x) = Π_h π(y_h|·).
inline double dpo_loss_sentence(const AutoregressivePolicy& pi, const AutoregressivePolicy& ref,
                                const PreferenceDataset& ds, double beta) {
  detail::check_beta(beta);
  if (ds.empty()) throw UsageError("dpo_loss: empty dataset");
  auto seq_prob = [](const AutoregressivePolicy& p, int prompt, std::span<const Token> toks) {
    double prob = 1.0;
    for_each_step(p.space(), prompt, toks, [&](const Node& n, Token a, int) { prob *= p.prob(n, a); });
    if (prob == 0.0) throw NumericalError("zero probability on a dataset response");
    return prob;
  };
  double total = 0.0, wsum = 0.0;
  for (const auto& p : ds.pairs) {
    const double rw = std::log(seq_prob(pi, p.prompt_id, p.winner) / seq_prob(ref, p.prompt_id, p.winner));
    const double rl = std::log(seq_prob(pi, p.prompt_id, p.loser) / seq_prob(ref, p.prompt_id, p.loser));
    total += -p.weight * log_sigmoid(beta * (rw - rl));
    wsum += p.weight;
  }
  return total / wsum;
}

// ∂ loss / ∂ logits(s, a) for the full logit table.
inline std::vector<double> dpo_logit_gradient(const AutoregressivePolicy& pi, const AutoregressivePolicy& ref,
                                              const PreferenceDataset& ds, double beta) {
  detail::check_beta(beta);
  if (ds.empty()) throw UsageError("dpo gradient: empty dataset");
  const TreeSpace& sp = pi.space();
  const int A = sp.vocab_size();
  std::vector<double> grad(sp.num_state_actions(), 0.0);
  const double wsum = ds.total_weight();
  for (const auto& p : ds.pairs) {
    const double z = beta * (detail::log_ratio_sum(pi, ref, p.prompt_id, p.winner) -
                             detail::log_ratio_sum(pi, ref, p.prompt_id, p.loser));
    const double coef = -p.weight * sigmoid(-z) * beta / wsum;
    auto accumulate = [&](std::span<const Token> toks, double sign) {
      for_each_step(sp, p.prompt_id, toks, [&](const Node& n, Token a, int) {
        const std::int64_t base = sp.sa_index(n, 0);
        for (int b = 0; b < A; ++b) grad[base + b] -= sign * coef * pi.prob(n, b);
        grad[base + a] += sign * coef;
      });
    };
    accumulate(p.winner, 1.0);
    accumulate(p.loser, -1.0);
  }
  return grad;
}

// Gradient with respect to the linear-softmax weights: Ψᵀ ∂loss/∂logits.
inline Eigen::VectorXd dpo_weight_gradient(const AutoregressivePolicy& pi, const AutoregressivePolicy& ref,
                                           const PreferenceDataset& ds, double beta) {
  if (pi.kind() != AutoregressivePolicy::Kind::kLinearSoftmax) throw UsageError("policy is not linear-softmax");
  const std::vector<double> g = dpo_logit_gradient(pi, ref, ds, beta);
  const Eigen::Map<const Eigen::VectorXd> gv(g.data(), static_cast<Eigen::Index>(g.size()));
  return pi.features()->rows().transpose() * gv;
}

namespace detail {

// Adam with the step size halved whenever the loss goes up.
struct AdamState {
  Eigen::VectorXd m, v;
  int t = 0;
  void init(Eigen::Index n) {
    m = Eigen::VectorXd::Zero(n);
    v = Eigen::VectorXd::Zero(n);
    t = 0;
  }
  Eigen::VectorXd step(const Eigen::VectorXd& g, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-12;
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g.cwiseProduct(g);
    const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
    return -lr * (m / c1).cwiseQuotient(((v / c2).cwiseSqrt().array() + eps).matrix());
  }
};

}  // namespace detail

// Full-batch minimization of dpo_loss starting from π_ref. The
// parameterization (tabular or linear-softmax) follows `init`; pass π_ref
// itself for tabular fitting or a zero-weight linear-softmax policy whose
// base logits are log π_ref.
inline DpoResult dpo_fit(const PreferenceDataset& ds, const AutoregressivePolicy& ref, const DpoConfig& cfg,
                         const AutoregressivePolicy* init = nullptr) {
  detail::check_beta(cfg.beta);
  if (ds.empty()) throw UsageError("dpo_fit: empty dataset");
  const PreferenceDataset data = compress_dataset(ds);
  const AutoregressivePolicy& start = init ? *init : ref;
  const bool linear = start.kind() == AutoregressivePolicy::Kind::kLinearSoftmax;

  Eigen::VectorXd params;
  if (linear) {
    params = start.weights();
  } else {
    const auto lp = start.log_prob_table();
    params = Eigen::Map<const Eigen::VectorXd>(lp.data(), static_cast<Eigen::Index>(lp.size()));
  }
  auto build = [&](const Eigen::VectorXd& x) {
    if (linear) {
      return AutoregressivePolicy::linear_softmax(start.features(), x,
                                                  std::vector<double>(start.base_logits().begin(),
                                                                      start.base_logits().end()));
    }
    return AutoregressivePolicy::from_logits(start.space(), std::vector<double>(x.data(), x.data() + x.size()));
  };
  auto gradient = [&](const AutoregressivePolicy& p) -> Eigen::VectorXd {
    if (linear) return dpo_weight_gradient(p, ref, data, cfg.beta);
    const std::vector<double> g = dpo_logit_gradient(p, ref, data, cfg.beta);
    return Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
  };

  DpoResult res;
  AutoregressivePolicy pi = build(params);
  double loss = dpo_loss(pi, ref, data, cfg.beta);
  Eigen::VectorXd g = gradient(pi);
  detail::AdamState adam;
  adam.init(params.size());
  double lr = cfg.learning_rate;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    res.gradient_norm = g.cwiseAbs().maxCoeff();
    res.epochs = epoch;
    if (res.gradient_norm <= cfg.tolerance) {
      res.converged = true;
      break;
    }
    const Eigen::VectorXd candidate = params + adam.step(g, lr);
    AutoregressivePolicy next = build(candidate);
    const double next_loss = dpo_loss(next, ref, data, cfg.beta);
    if (std::isnan(next_loss)) {
      throw NumericalError("dpo_fit diverged at epoch " + std::to_string(epoch) + " (last loss " +
                           std::to_string(loss) + ", gradient norm " + std::to_string(res.gradient_norm) + ")");
    }
    if (next_loss > loss) lr *= 0.5;
    params = candidate;
    pi = std::move(next);
    loss = next_loss;
    g = gradient(pi);
    res.epochs = epoch + 1;
  }
  res.gradient_norm = g.cwiseAbs().maxCoeff();
  res.converged = res.converged || res.gradient_norm <= cfg.tolerance;
  res.loss = loss;
  res.policy = std::move(pi);
  return res;
}

inline double implicit_token_reward(const AutoregressivePolicy& pi_dpo, const AutoregressivePolicy& ref, double beta,
                                    const Node& s, Token a) {
  const double lr = ref.log_prob(s, a);
  const double lp = pi_dpo.log_prob(s, a);
  if (lr == kNegInf) throw NumericalError("implicit reward: zero reference probability");
  if (lp == kNegInf) throw NumericalError("implicit reward: zero policy probability");
  return beta * (lp - lr);
}

inline RewardTable implicit_reward_table(const TokenMdp& mdp, const AutoregressivePolicy& pi_dpo,
                                         const AutoregressivePolicy& ref, double beta) {
  RewardTable r(mdp.space());
  mdp.for_each_live([&](const Node& n) {
    for (Token a = 0; a < mdp.vocab_size(); ++a) r.at(n, a) = implicit_token_reward(pi_dpo, ref, beta, n, a);
  });
  return r;
}

}  // namespace tokenrl
