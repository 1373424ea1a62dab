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

// Exact planning in KL-regularized token MDPs.
//
// With r_β(s, a) = r(s, a) + β log π_ref(a|s):
//
//   Q^π(s, a) = r_β(s, a) + V^π(s')
//   V^π(s)    = Σ_a π(a|s) (Q^π(s, a) − β log π(a|s))
//
// and the optimal tables satisfy V*(s) = β log Σ_a exp(Q*(s, a)/β) with
// π*(a|s) = exp((Q*(s, a) − V*(s))/β). Terminal and absorbing states have
// value zero.

#pragma once

#include <ostream>
#include <vector>

#include "tokenrl/policy.hpp"
#include "tokenrl/visitation.hpp"

namespace tokenrl {

struct SoftValueTables {
  TreeSpace space;
  double beta = 0.0;
  std::vector<double> q;  // per (s, a), includes β log π_ref
  std::vector<double> v;  // per decision state

  double Q(const Node& s, Token a) const { return q[space.sa_index(s, a)]; }
  double V(const Node& s) const { return space.is_terminal(s) ? 0.0 : v[space.index(s)]; }

  // V(ρ) = Σ_x ρ(x) V(x).
  double value(const TokenMdp& mdp) const {
    double acc = 0.0;
    for (int p = 0; p < mdp.num_prompts(); ++p) acc += mdp.initial_dist()[p] * V(space.root(p));
    return acc;
  }
};

struct PlanResult {
  SoftValueTables values;
  AutoregressivePolicy policy;
};

namespace detail {

inline void check_inputs(const TokenMdp& mdp, const RewardTable& r, const AutoregressivePolicy& ref) {
  if (!r.space().same_shape(mdp.space())) throw UsageError("reward does not match the MDP");
  if (!ref.space().same_shape(mdp.space())) throw UsageError("reference policy does not match the MDP");
}

// β log p with the convention 0 · log 0 = 0 at β = 0.
inline double scaled_log(double beta, double logp) { return beta == 0.0 ? 0.0 : beta * logp; }

}  // namespace detail

inline PlanResult soft_backward_induction(const TokenMdp& mdp, const RewardTable& r, const AutoregressivePolicy& ref,
                                          double beta) {
  if (!(beta > 0.0)) throw UsageError("soft_backward_induction requires beta > 0");
  detail::check_inputs(mdp, r, ref);
  const TreeSpace& sp = mdp.space();
  const int A = mdp.vocab_size();
  SoftValueTables t{sp, beta, std::vector<double>(sp.num_state_actions(), 0.0),
                    std::vector<double>(sp.num_decision_states(), 0.0)};
  std::vector<double> logits(sp.num_state_actions(), 0.0);
  std::vector<double> scaled(A);
  for (int h = mdp.horizon() - 1; h >= 0; --h) {
    mdp.for_each_live_at_depth(h, [&](const Node& n) {
      for (Token a = 0; a < A; ++a) {
        const double lr = ref.log_prob(n, a);
        if (lr == kNegInf) throw NumericalError("reference policy has zero mass on an action; log undefined");
        const double q = r(n, a) + beta * lr + t.V(sp.child(n, a));
        t.q[sp.sa_index(n, a)] = q;
        scaled[a] = q / beta;
      }
      const double v = beta * log_sum_exp(scaled);
      t.v[sp.index(n)] = v;
      for (Token a = 0; a < A; ++a) logits[sp.sa_index(n, a)] = (t.q[sp.sa_index(n, a)] - v) / beta;
    });
  }
  return {std::move(t), AutoregressivePolicy::from_logits(sp, std::move(logits))};
}

// Q^π and V^π by backward induction. β = 0 gives the unregularized values.
inline SoftValueTables policy_value_tables(const TokenMdp& mdp, const AutoregressivePolicy& pi, const RewardTable& r,
                                           const AutoregressivePolicy& ref, double beta) {
  if (beta < 0.0) throw UsageError("beta must be non-negative");
  detail::check_inputs(mdp, r, ref);
  if (!pi.space().same_shape(mdp.space())) throw UsageError("policy does not match the MDP");
  const TreeSpace& sp = mdp.space();
  SoftValueTables t{sp, beta, std::vector<double>(sp.num_state_actions(), 0.0),
                    std::vector<double>(sp.num_decision_states(), 0.0)};
  for (int h = mdp.horizon() - 1; h >= 0; --h) {
    mdp.for_each_live_at_depth(h, [&](const Node& n) {
      double v = 0.0;
      for (Token a = 0; a < mdp.vocab_size(); ++a) {
        const double lr = ref.log_prob(n, a);
        const double p = pi.prob(n, a);
        if (p > 0.0 && lr == kNegInf && beta > 0.0) {
          throw NumericalError("policy puts mass where the reference has none");
        }
        const double q = r(n, a) + detail::scaled_log(beta, lr) + t.V(sp.child(n, a));
        t.q[sp.sa_index(n, a)] = q;
        if (p > 0.0) v += p * (q - detail::scaled_log(beta, pi.log_prob(n, a)));
      }
      t.v[sp.index(n)] = v;
    });
  }
  return t;
}

inline double evaluate_policy(const TokenMdp& mdp, const AutoregressivePolicy& pi, const RewardTable& r,
                              const AutoregressivePolicy& ref, double beta) {
  return policy_value_tables(mdp, pi, r, ref, beta).value(mdp);
}

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t samples = 0;
};

// Rollout estimate of V_β^π(ρ) = E[Σ_h r − β log(π/π_ref)].
inline MonteCarloEstimate evaluate_policy_mc(const TokenMdp& mdp, const AutoregressivePolicy& pi,
                                             const RewardTable& r, const AutoregressivePolicy& ref, double beta,
                                             std::int64_t samples, Rng& rng) {
  if (samples < 2) throw UsageError("need at least two rollouts");
  detail::check_inputs(mdp, r, ref);
  double sum = 0.0, sum_sq = 0.0;
  for (std::int64_t i = 0; i < samples; ++i) {
    const int prompt = sample_prompt(mdp, rng);
    const Trajectory t = sample_trajectory(mdp, pi, prompt, rng);
    double g = 0.0;
    for_each_step(mdp.space(), prompt, t.tokens, [&](const Node& n, Token a, int) {
      g += r(n, a) - detail::scaled_log(beta, pi.log_prob(n, a) - ref.log_prob(n, a));
    });
    sum += g;
    sum_sq += g * g;
  }
  const double n = static_cast<double>(samples);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n), samples};
}

inline double suboptimality(const TokenMdp& mdp, const AutoregressivePolicy& pi_hat, const RewardTable& r,
                            const AutoregressivePolicy& ref, double beta) {
  const PlanResult opt = soft_backward_induction(mdp, r, ref, beta);
  return opt.values.value(mdp) - evaluate_policy(mdp, pi_hat, r, ref, beta);
}

struct PerformanceDifference {
  double lhs = 0.0;  // V^π(ρ) − V^π'(ρ)
  double rhs = 0.0;  // E_{d^π}[Q^π'(s,a) − V^π'(s) − β log π(a|s)]
};

inline PerformanceDifference performance_difference(const TokenMdp& mdp, const AutoregressivePolicy& pi,
                                                    const AutoregressivePolicy& pi_prime, const RewardTable& r,
                                                    const AutoregressivePolicy& ref, double beta) {
  const SoftValueTables tp = policy_value_tables(mdp, pi, r, ref, beta);
  const SoftValueTables tq = policy_value_tables(mdp, pi_prime, r, ref, beta);
  const VisitationMeasure d = visitation(mdp, pi);
  PerformanceDifference out;
  out.lhs = tp.value(mdp) - tq.value(mdp);
  out.rhs = d.expect(mdp, [&](const Node& n, Token a) {
    return tq.Q(n, a) - tq.V(n) - detail::scaled_log(beta, pi.log_prob(n, a));
  });
  return out;
}

// max over live (s, a) of |Q(s,a) − r_β(s,a) − V(s')| and, for the optimal
// tables, |V(s) − β log Σ exp(Q/β)|.
inline double soft_bellman_residual(const TokenMdp& mdp, const SoftValueTables& t, const RewardTable& r,
                                    const AutoregressivePolicy& ref) {
  const TreeSpace& sp = mdp.space();
  double worst = 0.0;
  std::vector<double> scaled(mdp.vocab_size());
  mdp.for_each_live([&](const Node& n) {
    for (Token a = 0; a < mdp.vocab_size(); ++a) {
      const double target = r(n, a) + t.beta * ref.log_prob(n, a) + t.V(sp.child(n, a));
      worst = std::max(worst, std::abs(t.Q(n, a) - target));
      scaled[a] = t.Q(n, a) / t.beta;
    }
    worst = std::max(worst, std::abs(t.V(n) - t.beta * log_sum_exp(scaled)));
  });
  return worst;
}

// Value table export: one row per live (state, action).
inline void write_value_csv(std::ostream& os, const TokenMdp& mdp, const SoftValueTables& t) {
  os << "state,prompt,tokens,action,Q,V\n";
  os.precision(17);
  mdp.for_each_live([&](const Node& n) {
    std::string toks;
    for (Token y : mdp.space().tokens(n)) {
      if (!toks.empty()) toks += ' ';
      toks += std::to_string(y);
    }
    for (Token a = 0; a < mdp.vocab_size(); ++a) {
      os << mdp.space().index(n) << ',' << n.prompt << ',' << toks << ',' << a << ',' << t.Q(n, a) << ','
         << t.V(n) << '\n';
    }
  });
}

}  // namespace tokenrl
