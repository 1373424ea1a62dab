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

// Linear token rewards r_θ(s, a) = φ(s, a)ᵀθ learned from trajectory
// preferences, and their pessimistic lower-confidence version
//
//   r̂(s, a) = φ(s, a)ᵀθ_MLE − ϱ ‖φ(s, a)‖_{Σ_D⁻¹}.

#pragma once

#include <Eigen/Dense>

#include <memory>
#include <sstream>

#include "tokenrl/features.hpp"
#include "tokenrl/preference.hpp"

namespace tokenrl {

struct LinearReward {
  std::shared_ptr<const FeatureMap> features;
  Eigen::VectorXd theta;
  double feature_bound = 1.0;  // L
  double param_bound = 1.0;    // B

  // Checks ‖φ(s, a)‖₂ ≤ L and ‖θ‖₂ ≤ B.
  void validate(double slack = 1e-12) const {
    if (!features) throw UsageError("linear reward without features");
    if (theta.size() != features->dim()) throw UsageError("theta dimension mismatch");
    if (features->max_norm() > feature_bound + slack) throw UsageError("feature norm exceeds L");
    if (theta.norm() > param_bound + slack) throw UsageError("parameter norm exceeds B");
  }

  RewardTable table() const {
    const Eigen::VectorXd vals = features->rows() * theta;
    return RewardTable(features->space(), std::vector<double>(vals.data(), vals.data() + vals.size()));
  }
};

// Per-pair Δφ = Σ_h φ(winner) − Σ_h φ(loser) as matrix rows, plus weights.
struct PairFeatures {
  Eigen::MatrixXd diff;
  Eigen::VectorXd weight;
};

inline PairFeatures pair_features(const PreferenceDataset& ds, const FeatureMap& phi) {
  PairFeatures pf{Eigen::MatrixXd(static_cast<Eigen::Index>(ds.size()), phi.dim()),
                  Eigen::VectorXd(static_cast<Eigen::Index>(ds.size()))};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& p = ds.pairs[i];
    pf.diff.row(static_cast<Eigen::Index>(i)) =
        (phi.trajectory_sum(p.prompt_id, p.winner) - phi.trajectory_sum(p.prompt_id, p.loser)).transpose();
    pf.weight(static_cast<Eigen::Index>(i)) = p.weight;
  }
  return pf;
}

// L_D(θ) = Σ_pairs w log σ(Δφᵀθ).
inline double mle_log_likelihood(const Eigen::VectorXd& theta, const PairFeatures& pf) {
  const Eigen::VectorXd z = pf.diff * theta;
  double s = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) s += pf.weight(i) * log_sigmoid(z(i));
  return s;
}

inline double mle_log_likelihood(const Eigen::VectorXd& theta, const PreferenceDataset& ds, const FeatureMap& phi) {
  return mle_log_likelihood(theta, pair_features(ds, phi));
}

// ∇L_D(θ) = Σ_pairs w σ(−Δφᵀθ) Δφ.
inline Eigen::VectorXd mle_gradient(const Eigen::VectorXd& theta, const PairFeatures& pf) {
  const Eigen::VectorXd z = pf.diff * theta;
  Eigen::VectorXd coef(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) coef(i) = pf.weight(i) * sigmoid(-z(i));
  return pf.diff.transpose() * coef;
}

inline Eigen::VectorXd mle_gradient(const Eigen::VectorXd& theta, const PreferenceDataset& ds, const FeatureMap& phi) {
  if (theta.size() != phi.dim()) throw UsageError("theta dimension mismatch");
  return mle_gradient(theta, pair_features(ds, phi));
}

struct MleOptions {
  double tolerance = 1e-9;  // on ‖θ − P(θ + ∇L)‖∞
  int max_iterations = 100000;
};

struct MleResult {
  Eigen::VectorXd theta;
  double log_likelihood = 0.0;
  double gradient_norm = 0.0;  // projected-gradient ∞-norm at the solution
  int iterations = 0;
  bool converged = false;
};

inline Eigen::VectorXd project_ball(const Eigen::VectorXd& v, double radius) {
  const double n = v.norm();
  return n > radius ? Eigen::VectorXd(v * (radius / n)) : v;
}

// argmax_{‖θ‖₂ ≤ B} L_D(θ) by projected gradient ascent with
// Barzilai-Borwein trial steps and backtracking.
inline MleResult mle_fit(const PreferenceDataset& ds, const FeatureMap& phi, double param_bound,
                         const MleOptions& opts = {}) {
  if (ds.empty()) throw UsageError("mle_fit: empty dataset");
  if (!(param_bound > 0)) throw UsageError("mle_fit: B must be positive");
  const PairFeatures pf = pair_features(compress_dataset(ds), phi);
  if (pf.diff.cwiseAbs().maxCoeff() == 0.0) throw NumericalError("mle_fit: all feature differences are zero");

  // Lipschitz bound of ∇L: Σ w ‖Δφ‖² / 4.
  double lip = 0.0;
  for (Eigen::Index i = 0; i < pf.diff.rows(); ++i) lip += pf.weight(i) * pf.diff.row(i).squaredNorm() / 4.0;
  double step = 1.0 / std::max(lip, 1e-300);

  MleResult res;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(phi.dim());
  double f = mle_log_likelihood(theta, pf);
  Eigen::VectorXd g = mle_gradient(theta, pf);
  Eigen::VectorXd prev_theta, prev_g;
  for (int it = 0; it < opts.max_iterations; ++it) {
    res.gradient_norm = (theta - project_ball(theta + g, param_bound)).cwiseAbs().maxCoeff();
    if (res.gradient_norm <= opts.tolerance) {
      res.converged = true;
      res.iterations = it;
      break;
    }
    if (it > 0) {
      const Eigen::VectorXd s = theta - prev_theta;
      const Eigen::VectorXd y = prev_g - g;
      const double sy = s.dot(y);
      if (sy > 0) step = s.squaredNorm() / sy;
    }
    Eigen::VectorXd next;
    double f_next = 0.0;
    for (int bt = 0; bt < 200; ++bt) {
      next = project_ball(theta + step * g, param_bound);
      f_next = mle_log_likelihood(next, pf);
      const Eigen::VectorXd delta = next - theta;
      if (f_next >= f + g.dot(delta) - delta.squaredNorm() / (2.0 * step) - 1e-15 * std::abs(f)) break;
      step *= 0.5;
    }
    prev_theta = theta;
    prev_g = g;
    theta = next;
    f = f_next;
    g = mle_gradient(theta, pf);
    res.iterations = it + 1;
  }
  if (!res.converged) res.gradient_norm = (theta - project_ball(theta + g, param_bound)).cwiseAbs().maxCoeff();
  res.theta = theta;
  res.log_likelihood = f;
  return res;
}

// Σ_D = Σ_pairs ΔφΔφᵀ + λI together with its Cholesky factor.
class CovarianceMatrix {
 public:
  CovarianceMatrix(Eigen::MatrixXd sigma, double lambda) : sigma_(std::move(sigma)), lambda_(lambda), llt_(sigma_) {
    if (llt_.info() != Eigen::Success) throw NumericalError("covariance matrix is not positive definite");
  }

  const Eigen::MatrixXd& matrix() const { return sigma_; }
  double lambda() const { return lambda_; }
  int dim() const { return static_cast<int>(sigma_.rows()); }

  // ‖v‖_{Σ⁻¹} via a triangular solve.
  double inv_norm(const Eigen::VectorXd& v) const { return llt_.matrixL().solve(v).norm(); }
  double norm(const Eigen::VectorXd& v) const { return std::sqrt(std::max(0.0, v.dot(sigma_ * v))); }
  Eigen::VectorXd solve(const Eigen::VectorXd& v) const { return llt_.solve(v); }

  double condition_number() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma_, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    return lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
  }

 private:
  Eigen::MatrixXd sigma_;
  double lambda_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

inline CovarianceMatrix covariance(const PreferenceDataset& ds, const FeatureMap& phi, double lambda) {
  if (!(lambda > 0)) throw UsageError("covariance: lambda must be positive");
  Eigen::MatrixXd sigma = lambda * Eigen::MatrixXd::Identity(phi.dim(), phi.dim());
  if (!ds.empty()) {
    const PairFeatures pf = pair_features(compress_dataset(ds), phi);
    sigma += pf.diff.transpose() * pf.weight.asDiagonal() * pf.diff;
  }
  sigma = 0.5 * (sigma + sigma.transpose());
  return CovarianceMatrix(std::move(sigma), lambda);
}

// Confidence radius ϱ = C sqrt(d log(1/δ)/Υ + λB²) with
// Υ = 1/(2 + exp(−2HLB) + exp(2HLB)).
struct PessimismConfig {
  double delta = 0.1;
  double constant = 1.0;  // C
  double lambda = 1.0;
  int horizon = 1;
  double feature_bound = 1.0;  // L
  double param_bound = 1.0;    // B
  int dim = 1;

  double upsilon() const {
    const double x = 2.0 * horizon * feature_bound * param_bound;
    return 1.0 / (2.0 + std::exp(-x) + std::exp(x));
  }

  double rho() const {
    if (!(delta > 0 && delta < 1)) throw UsageError("delta must lie in (0, 1)");
    return constant * std::sqrt(dim * std::log(1.0 / delta) / upsilon() + lambda * param_bound * param_bound);
  }
};

inline constexpr double kMaxConditionNumber = 1e14;

inline RewardTable pessimistic_reward(const Eigen::VectorXd& theta_mle, const CovarianceMatrix& sigma, double rho,
                                      const FeatureMap& phi) {
  if (theta_mle.size() != phi.dim() || sigma.dim() != phi.dim()) throw UsageError("dimension mismatch");
  if (rho < 0) throw UsageError("rho must be non-negative");
  const double cond = sigma.condition_number();
  if (!(cond < kMaxConditionNumber)) {
    std::ostringstream msg;
    msg << "covariance is numerically singular (condition number " << cond << ")";
    throw NumericalError(msg.str());
  }
  RewardTable r(phi.space());
  auto& vals = r.mutable_values();
  for (Eigen::Index i = 0; i < phi.rows().rows(); ++i) {
    const Eigen::VectorXd f = phi.rows().row(i).transpose();
    vals[static_cast<std::size_t>(i)] = f.dot(theta_mle) - (rho == 0.0 ? 0.0 : rho * sigma.inv_norm(f));
  }
  return r;
}

}  // namespace tokenrl
