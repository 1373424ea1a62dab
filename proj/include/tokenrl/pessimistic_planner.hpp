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

// Offline planning from preferences with a linear reward model.
//
// Plug-in pessimism: fit θ_MLE, subtract ϱ‖φ‖_{Σ_D⁻¹} from the reward and
// solve the KL-regularized MDP exactly.
//
// Max-min pessimism: maximize over π
//   min_{θ ∈ Θ} μ_πᵀθ − β E_{s~d^π} KL(π(·|s) ‖ π_ref(·|s)),   μ_π = E_{d^π}[φ],
// with Θ = {‖θ‖₂ ≤ B, ‖θ − θ_MLE‖_{Σ_D} ≤ ϱ}.

#pragma once

#include <Eigen/Dense>

#include <memory>
#include <optional>

#include "tokenrl/reward_model.hpp"
#include "tokenrl/soft_planner.hpp"
#include "tokenrl/visitation.hpp"

namespace tokenrl {

struct ConfidenceSet {
  Eigen::VectorXd theta_mle;
  std::shared_ptr<const CovarianceMatrix> sigma;
  double rho = 0.0;
  double param_bound = 1.0;

  bool contains(const Eigen::VectorXd& theta, double slack = 1e-12) const {
    return theta.norm() <= param_bound + slack && sigma->norm(theta - theta_mle) <= rho + slack;
  }
};

// μ_π = Σ_{(s,a)} d^π(s, a) φ(s, a).
inline Eigen::VectorXd feature_expectation(const VisitationMeasure& d, const FeatureMap& phi) {
  const Eigen::Map<const Eigen::VectorXd> w(d.state_action.data(), static_cast<Eigen::Index>(d.state_action.size()));
  return phi.rows().transpose() * w;
}

struct InnerMin {
  double value = 0.0;
  double linear_part = 0.0;  // min_θ μᵀθ
  double kl_part = 0.0;      // E_{d^π} KL(π ‖ π_ref)
  Eigen::VectorXd theta;     // a minimizer
  bool ball_active = false;  // ‖θ‖ ≤ B binds
};

// min_{θ ∈ Θ} μᵀθ. Without the ball the minimizer is
// θ_MLE − ϱ Σ⁻¹μ / ‖μ‖_{Σ⁻¹}. When that point leaves the ball the problem is
// solved through its two-multiplier dual in the eigenbasis of Σ_D:
// θ(a, b) = (aΣ + bI)⁻¹(aΣθ_MLE − μ), with both multipliers found by nested
// bisection on the (monotone) constraint slacks.
inline InnerMin minimize_linear(const Eigen::VectorXd& mu, const ConfidenceSet& set) {
  if (!set.sigma) throw UsageError("confidence set without covariance");
  if (set.sigma->condition_number() >= kMaxConditionNumber) throw NumericalError("covariance is numerically singular");
  const Eigen::VectorXd& t0 = set.theta_mle;
  InnerMin out;
  const double mnorm = set.sigma->inv_norm(mu);
  if (mnorm == 0.0) {
    out.theta = t0;
    out.linear_part = 0.0;
    return out;
  }
  out.theta = set.rho > 0 ? Eigen::VectorXd(t0 - set.rho * set.sigma->solve(mu) / mnorm) : t0;
  if (out.theta.norm() <= set.param_bound * (1 + 1e-12)) {
    out.linear_part = mu.dot(t0) - set.rho * mnorm;
    return out;
  }
  if (t0.norm() > set.param_bound * (1 + 1e-9)) throw UsageError("theta_mle lies outside the parameter ball");
  out.ball_active = true;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(set.sigma->matrix());
  const Eigen::VectorXd lam = es.eigenvalues();
  const Eigen::VectorXd et = es.eigenvectors().transpose() * t0;
  const Eigen::VectorXd em = es.eigenvectors().transpose() * mu;
  const double B2 = set.param_bound * set.param_bound;
  const double R2 = set.rho * set.rho;

  auto theta_of = [&](double a, double b) {
    Eigen::VectorXd x(lam.size());
    for (Eigen::Index i = 0; i < lam.size(); ++i) x(i) = (a * lam(i) * et(i) - em(i)) / (a * lam(i) + b);
    return x;
  };
  auto ell_slack = [&](const Eigen::VectorXd& x) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < lam.size(); ++i) s += lam(i) * (x(i) - et(i)) * (x(i) - et(i));
    return s - R2;
  };
  // b*(a): smallest b ≥ 0 with ‖θ(a, b)‖ ≤ B.
  auto best_b = [&](double a) {
    if (a == 0.0) return std::sqrt(em.squaredNorm() / B2);
    if (theta_of(a, 0.0).squaredNorm() <= B2) return 0.0;
    double lo = 0.0, hi = 1.0;
    while (theta_of(a, hi).squaredNorm() > B2) hi *= 2.0;
    for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
      const double mid = 0.5 * (lo + hi);
      (theta_of(a, mid).squaredNorm() > B2 ? lo : hi) = mid;
    }
    return hi;
  };
  double a_star = 0.0;
  if (ell_slack(theta_of(0.0, best_b(0.0))) > 0.0) {
    double lo = 0.0, hi = 1.0;
    while (ell_slack(theta_of(hi, best_b(hi))) > 0.0) hi *= 2.0;
    for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
      const double mid = 0.5 * (lo + hi);
      (ell_slack(theta_of(mid, best_b(mid))) > 0.0 ? lo : hi) = mid;
    }
    a_star = hi;
  }
  const Eigen::VectorXd x = theta_of(a_star, best_b(a_star));
  out.theta = es.eigenvectors() * x;
  out.linear_part = mu.dot(out.theta);
  return out;
}

inline InnerMin inner_min_value(const TokenMdp& mdp, const AutoregressivePolicy& pi, const ConfidenceSet& set,
                                const FeatureMap& phi, const AutoregressivePolicy& ref, double beta) {
  if (beta < 0) throw UsageError("beta must be non-negative");
  const VisitationMeasure d = visitation(mdp, pi);
  InnerMin out = minimize_linear(feature_expectation(d, phi), set);
  out.kl_part = expected_kl(mdp, d, pi, ref);
  out.value = out.linear_part - beta * out.kl_part;
  return out;
}

struct OfflinePlanConfig {
  PessimismConfig pessimism;
  MleOptions mle;
  std::optional<double> rho_override;          // replaces the radius formula
  std::optional<Eigen::VectorXd> theta_override;  // skip the MLE fit
};

struct OfflinePlanResult {
  AutoregressivePolicy policy;
  Eigen::VectorXd theta_mle;
  std::shared_ptr<const CovarianceMatrix> sigma;
  double rho = 0.0;
  RewardTable pessimistic;
  SoftValueTables values;

  ConfidenceSet confidence_set(double param_bound) const { return {theta_mle, sigma, rho, param_bound}; }
};

// MLE fit, pessimistic reward, exact soft planning.
inline OfflinePlanResult offline_plan(const TokenMdp& mdp, const PreferenceDataset& ds, const FeatureMap& phi,
                                   const AutoregressivePolicy& ref, double beta, const OfflinePlanConfig& cfg) {
  if (!phi.space().same_shape(mdp.space())) throw UsageError("features do not match the MDP");
  OfflinePlanResult res;
  res.theta_mle = cfg.theta_override ? *cfg.theta_override
                                     : mle_fit(ds, phi, cfg.pessimism.param_bound, cfg.mle).theta;
  res.sigma = std::make_shared<const CovarianceMatrix>(covariance(ds, phi, cfg.pessimism.lambda));
  res.rho = cfg.rho_override ? *cfg.rho_override : cfg.pessimism.rho();
  res.pessimistic = pessimistic_reward(res.theta_mle, *res.sigma, res.rho, phi);
  PlanResult plan = soft_backward_induction(mdp, res.pessimistic, ref, beta);
  res.policy = std::move(plan.policy);
  res.values = std::move(plan.values);
  return res;
}

// 2ϱ E_{d*}‖φ‖_{Σ⁻¹} − β E_{s~d*} KL(π*(·|s) ‖ π̂(·|s)).
inline double pessimistic_bound(const TokenMdp& mdp, const AutoregressivePolicy& pi_star, const AutoregressivePolicy& pi_hat,
                           const FeatureMap& phi, const CovarianceMatrix& sigma, double rho, double beta) {
  const VisitationMeasure d = visitation(mdp, pi_star);
  const double bonus = d.expect(mdp, [&](const Node& n, Token a) {
    return sigma.inv_norm(phi(n, a).transpose());
  });
  return 2.0 * rho * bonus - beta * expected_kl(mdp, d, pi_star, pi_hat);
}

// 2ϱ ‖E_{d*}φ‖_{Σ⁻¹}.
inline double maxmin_bound(const TokenMdp& mdp, const AutoregressivePolicy& pi_star, const FeatureMap& phi,
                           const CovarianceMatrix& sigma, double rho) {
  return 2.0 * rho * sigma.inv_norm(feature_expectation(visitation(mdp, pi_star), phi));
}

struct MaxMinConfig {
  int iterations = 2000;
  double step = 0.5;  // fraction of the soft policy-iteration step 1/β
  int patience = 100;
};

struct MaxMinResult {
  AutoregressivePolicy policy;
  double value = kNegInf;  // pessimistic value of the returned policy
  std::vector<double> trace;  // pessimistic value per iterate
  int iterations = 0;
  bool stalled = false;  // stopped while oscillating below the best value
};

// Ascent on tabular logits against the inner minimum. Each step takes the
// minimizing θ (Danskin), evaluates Q^π under r_θ and moves
// logits += (step/β)(Q − β log π − V). The best iterate is returned.
inline MaxMinResult maxmin_plan(const TokenMdp& mdp, const ConfidenceSet& set, const FeatureMap& phi,
                                const AutoregressivePolicy& ref, double beta, const MaxMinConfig& cfg = {},
                                const AutoregressivePolicy* init = nullptr) {
  if (!(beta > 0)) throw UsageError("maxmin planning requires beta > 0");
  if (!(cfg.step > 0 && cfg.step <= 1)) throw UsageError("step must lie in (0, 1]");
  const TreeSpace& sp = mdp.space();
  AutoregressivePolicy pi = init ? *init : ref;
  std::vector<double> logits(pi.log_prob_table().begin(), pi.log_prob_table().end());
  MaxMinResult res;
  int since_best = 0;
  for (int it = 0; it <= cfg.iterations; ++it) {
    const InnerMin inner = inner_min_value(mdp, pi, set, phi, ref, beta);
    res.trace.push_back(inner.value);
    res.iterations = it;
    if (res.value == kNegInf || inner.value > res.value + 1e-13 * std::max(1.0, std::abs(res.value))) {
      res.value = inner.value;
      res.policy = pi;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      // A plateau is convergence; a current value below the best is oscillation.
      res.stalled = inner.value < res.value - 1e-9 * std::max(1.0, std::abs(res.value));
      break;
    }
    if (it == cfg.iterations) break;
    const Eigen::VectorXd rv = phi.rows() * inner.theta;
    const RewardTable r(sp, std::vector<double>(rv.data(), rv.data() + rv.size()));
    const SoftValueTables t = policy_value_tables(mdp, pi, r, ref, beta);
    const double eta = cfg.step / beta;
    mdp.for_each_live([&](const Node& n) {
      for (Token a = 0; a < mdp.vocab_size(); ++a) {
        const std::int64_t i = sp.sa_index(n, a);
        logits[i] += eta * (t.Q(n, a) - beta * pi.log_prob(n, a) - t.V(n));
      }
    });
    pi = AutoregressivePolicy::from_logits(sp, logits);
  }
  return res;
}

}  // namespace tokenrl
