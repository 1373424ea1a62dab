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

// Policy-gradient training on token MDPs with tabular actors.
//
// Reward assembly per response y = (y_1, ..., y_T):
//
//   sparse  r_h = −β log(π/π_ref)(y_h)                 + 1{h = T} r_MLE(x, y)
//   rto     r_h = β₁ log(π_dpo/π_ref)(y_h) − β₂ log(π/π_ref)(y_h) + 1{h = T} β₃ r_MLE(x, y)
//
// The sentence reward r_MLE(x, y) is the trajectory sum of a token table
// (typically the MLE linear reward). Updates use the PPO clipped surrogate
// with GAE(γ = 1) advantages and a tabular critic, or return-to-go
// advantages with no critic for the REINFORCE++ variants.

#pragma once

#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tokenrl/policy.hpp"
#include "tokenrl/soft_planner.hpp"
#include "tokenrl/visitation.hpp"

namespace tokenrl {

struct RtoRewardSpec {
  double beta1 = 0.05;  // DPO reward scale
  double beta2 = 0.01;  // KL coefficient
  double beta3 = 1.0;   // sentence reward scale
  std::shared_ptr<const AutoregressivePolicy> dpo;
  std::shared_ptr<const AutoregressivePolicy> ref;
  std::shared_ptr<const RewardTable> sentence;  // r_MLE as a token table, summed per response

  void validate() const {
    if (beta1 < 0 || beta2 < 0 || beta3 < 0) throw UsageError("reward scales must be non-negative");
    if (!ref) throw UsageError("reward spec needs a reference policy");
    if (beta1 > 0 && !dpo) throw UsageError("beta1 > 0 needs a DPO policy");
    if (beta3 > 0 && !sentence) throw UsageError("beta3 > 0 needs a sentence reward");
  }
};

namespace detail {

inline double log_ratio(const AutoregressivePolicy& p, const AutoregressivePolicy& q, const Node& n, Token a) {
  const double lp = p.log_prob(n, a);
  const double lq = q.log_prob(n, a);
  if (lp == kNegInf || lq == kNegInf) throw NumericalError("zero-probability token in reward assembly");
  return lp - lq;
}

}  // namespace detail

inline std::vector<double> sparse_reward(double r_sentence, const AutoregressivePolicy& pi,
                                         const AutoregressivePolicy& ref, double beta, const Trajectory& t) {
  if (t.tokens.empty()) throw UsageError("empty trajectory");
  std::vector<double> out(t.tokens.size(), 0.0);
  for_each_step(pi.space(), t.prompt_id, t.tokens, [&](const Node& n, Token a, int h) {
    out[h] = beta == 0.0 ? 0.0 : -beta * detail::log_ratio(pi, ref, n, a);
  });
  out.back() += r_sentence;
  return out;
}

// Per-step RTO rewards. The optional breakdown receives the DPO component
// β₁ log(π_dpo/π_ref) per step.
inline std::vector<double> rto_reward(const RtoRewardSpec& spec, const AutoregressivePolicy& pi, const Trajectory& t,
                                      std::vector<double>* dpo_part = nullptr) {
  spec.validate();
  if (t.tokens.empty()) throw UsageError("empty trajectory");
  std::vector<double> out(t.tokens.size(), 0.0);
  if (dpo_part) dpo_part->assign(t.tokens.size(), 0.0);
  for_each_step(pi.space(), t.prompt_id, t.tokens, [&](const Node& n, Token a, int h) {
    double d = 0.0;
    if (spec.beta1 > 0) d = spec.beta1 * detail::log_ratio(*spec.dpo, *spec.ref, n, a);
    const double kl = spec.beta2 == 0.0 ? 0.0 : spec.beta2 * detail::log_ratio(pi, *spec.ref, n, a);
    out[h] = d - kl;
    if (dpo_part) (*dpo_part)[h] = d;
  });
  if (spec.beta3 > 0) out.back() += spec.beta3 * trajectory_return(*spec.sentence, t.prompt_id, t.tokens);
  return out;
}

enum class Redistribution { kRto, kSemiRto, kDdpo, kRsPpo };

inline Redistribution parse_redistribution(const std::string& s) {
  if (s == "rto") return Redistribution::kRto;
  if (s == "semi_rto") return Redistribution::kSemiRto;
  if (s == "ddpo") return Redistribution::kDdpo;
  if (s == "rs_ppo") return Redistribution::kRsPpo;
  throw UsageError("unknown redistribution variant '" + s + "'");
}

struct RedistributionArgs {
  std::span<const Token> tokens;   // semi_rto: the response
  std::set<Token> delimiters;      // semi_rto: segment-ending tokens
  double dpo_total = 0.0;          // rs_ppo: Σ_h β₁ log(π_dpo/π_ref)
};

// semi_rto moves each segment's sum onto its delimiter (the trailing segment
// onto the last step); ddpo moves everything onto the last step; rs_ppo
// subtracts the DPO total at the last step.
inline std::vector<double> redistribute(Redistribution variant, std::span<const double> base,
                                        const RedistributionArgs& args = {}) {
  std::vector<double> out(base.begin(), base.end());
  if (out.empty()) return out;
  switch (variant) {
    case Redistribution::kRto:
      break;
    case Redistribution::kDdpo: {
      double s = 0.0;
      for (double r : base) s += r;
      std::fill(out.begin(), out.end(), 0.0);
      out.back() = s;
      break;
    }
    case Redistribution::kSemiRto: {
      if (args.delimiters.empty()) throw UsageError("semi_rto needs a delimiter token set");
      if (args.tokens.size() != base.size()) throw UsageError("semi_rto: tokens and rewards differ in length");
      double acc = 0.0;
      for (std::size_t h = 0; h < base.size(); ++h) {
        acc += base[h];
        out[h] = 0.0;
        if (args.delimiters.count(args.tokens[h]) || h + 1 == base.size()) {
          out[h] = acc;
          acc = 0.0;
        }
      }
      break;
    }
    case Redistribution::kRsPpo:
      out.back() -= args.dpo_total;
      break;
  }
  return out;
}

// GAE with γ = 1. `values` has one entry per step plus the terminal value.
inline std::vector<double> gae(std::span<const double> rewards, std::span<const double> values, double lambda) {
  if (values.size() != rewards.size() + 1) throw UsageError("gae: need one value per step plus the terminal");
  if (!(lambda >= 0 && lambda <= 1)) throw UsageError("gae: lambda must lie in [0, 1]");
  std::vector<double> adv(rewards.size(), 0.0);
  double running = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    const double delta = rewards[i] + values[i + 1] - values[i];
    running = delta + lambda * running;
    adv[i] = running;
  }
  return adv;
}

struct PpoConfig {
  double clip = 0.2;
  double gae_lambda = 0.95;
  int update_epochs = 8;
  int batch_size = 16;
  double actor_lr = 0.05;
  double critic_lr = 0.1;
  double value_clip = 0.2;
  bool normalize_advantages = false;

  void validate() const {
    if (!(clip > 0 && clip < 1)) throw UsageError("clip must lie in (0, 1)");
    if (!(gae_lambda >= 0 && gae_lambda <= 1)) throw UsageError("gae_lambda must lie in [0, 1]");
    if (update_epochs < 1 || batch_size < 1) throw UsageError("update_epochs and batch_size must be >= 1");
    if (!(actor_lr > 0) || !(critic_lr > 0)) throw UsageError("learning rates must be positive");
  }
};

struct StepSample {
  Node state;
  Token action = 0;
  double old_log_prob = 0.0;
  double advantage = 0.0;
  double value_target = 0.0;
  double old_value = 0.0;
};

struct Batch {
  std::vector<StepSample> steps;
  int episodes = 0;
};

struct SurrogateEval {
  double objective = 0.0;
  double clip_fraction = 0.0;
  std::vector<double> gradient;  // ∂objective / ∂logits
};

// (1/episodes) Σ_steps min(ρA, clip(ρ, 1−ε, 1+ε)A) and its logit gradient.
inline SurrogateEval surrogate_gradient(const AutoregressivePolicy& pi, const Batch& batch, double clip) {
  if (batch.episodes < 1) throw UsageError("batch has no episodes");
  const TreeSpace& sp = pi.space();
  const int A = sp.vocab_size();
  SurrogateEval out;
  out.gradient.assign(sp.num_state_actions(), 0.0);
  const double scale = 1.0 / batch.episodes;
  int clipped = 0;
  for (const auto& s : batch.steps) {
    const double ratio = std::exp(pi.log_prob(s.state, s.action) - s.old_log_prob);
    const double unclipped = ratio * s.advantage;
    const double clipped_ratio = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
    const double cl = clipped_ratio * s.advantage;
    out.objective += scale * std::min(unclipped, cl);
    // The min picks the clipped branch only when it is strictly smaller and
    // the ratio sits outside the trust interval; then the gradient is zero.
    if (cl < unclipped && clipped_ratio != ratio) {
      ++clipped;
      continue;
    }
    const double coef = scale * s.advantage * ratio;
    const std::int64_t base = sp.sa_index(s.state, 0);
    for (int b = 0; b < A; ++b) out.gradient[base + b] -= coef * pi.prob(s.state, b);
    out.gradient[base + s.action] += coef;
  }
  if (!batch.steps.empty()) out.clip_fraction = static_cast<double>(clipped) / batch.steps.size();
  if (!std::isfinite(out.objective)) throw NumericalError("surrogate objective is not finite");
  return out;
}

struct PpoUpdateResult {
  AutoregressivePolicy policy;
  double surrogate = 0.0;
  double clip_fraction = 0.0;
};

// cfg.update_epochs full-batch ascent steps on the clipped surrogate.
inline PpoUpdateResult ppo_update(const AutoregressivePolicy& pi, const Batch& batch, const PpoConfig& cfg) {
  cfg.validate();
  for (const auto& s : batch.steps) {
    if (!std::isfinite(s.advantage)) throw NumericalError("non-finite advantage");
  }
  std::vector<double> logits(pi.logits().begin(), pi.logits().end());
  PpoUpdateResult res{pi, 0.0, 0.0};
  for (int e = 0; e < cfg.update_epochs; ++e) {
    const SurrogateEval ev = surrogate_gradient(res.policy, batch, cfg.clip);
    res.surrogate = ev.objective;
    res.clip_fraction = ev.clip_fraction;
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += cfg.actor_lr * ev.gradient[i];
    res.policy = AutoregressivePolicy::from_logits(pi.space(), logits);
  }
  return res;
}

// Tabular state-value critic trained on the clipped value loss
// max((V − R)², (V_old + clip(V − V_old, ±c) − R)²), averaged per state.
class TabularCritic {
 public:
  explicit TabularCritic(const TreeSpace& space) : space_(space), v_(space.num_decision_states(), 0.0) {}

  double operator()(const Node& s) const { return space_.is_terminal(s) ? 0.0 : v_[space_.index(s)]; }

  void update(const Batch& batch, const PpoConfig& cfg) {
    std::vector<double> grad(v_.size()), count(v_.size());
    for (int e = 0; e < cfg.update_epochs; ++e) {
      std::fill(grad.begin(), grad.end(), 0.0);
      std::fill(count.begin(), count.end(), 0.0);
      for (const auto& s : batch.steps) {
        const std::int64_t i = space_.index(s.state);
        const double v = v_[i];
        const double v_clip = s.old_value + std::clamp(v - s.old_value, -cfg.value_clip, cfg.value_clip);
        const double l1 = (v - s.value_target) * (v - s.value_target);
        const double l2 = (v_clip - s.value_target) * (v_clip - s.value_target);
        count[i] += 1.0;
        if (l2 > l1 && v_clip != v) continue;
        grad[i] += v - s.value_target;
      }
      for (std::size_t i = 0; i < v_.size(); ++i) {
        if (count[i] > 0) v_[i] -= cfg.critic_lr * grad[i] / count[i];
      }
    }
  }

 private:
  TreeSpace space_;
  std::vector<double> v_;
};

enum class Algo { kPpoSparse, kRto, kRppSparse, kRtoRpp, kSemiRto, kDdpo, kRsPpo };

inline Algo parse_algo(const std::string& s) {
  if (s == "ppo_sparse") return Algo::kPpoSparse;
  if (s == "rto") return Algo::kRto;
  if (s == "rpp_sparse") return Algo::kRppSparse;
  if (s == "rto_rpp") return Algo::kRtoRpp;
  if (s == "semi_rto") return Algo::kSemiRto;
  if (s == "ddpo") return Algo::kDdpo;
  if (s == "rs_ppo") return Algo::kRsPpo;
  throw UsageError("unknown algorithm '" + s + "'");
}

inline std::string algo_name(Algo a) {
  switch (a) {
    case Algo::kPpoSparse: return "ppo_sparse";
    case Algo::kRto: return "rto";
    case Algo::kRppSparse: return "rpp_sparse";
    case Algo::kRtoRpp: return "rto_rpp";
    case Algo::kSemiRto: return "semi_rto";
    case Algo::kDdpo: return "ddpo";
    case Algo::kRsPpo: return "rs_ppo";
  }
  return "?";
}

inline bool uses_critic(Algo a) { return a != Algo::kRppSparse && a != Algo::kRtoRpp; }

struct TrainRecord {
  int iter = 0;
  std::int64_t episodes = 0;  // cumulative
  double mean_return_rmle = 0.0;
  double mean_return_true = 0.0;
  double subopt_exact = std::numeric_limits<double>::quiet_NaN();
  double kl_to_ref = 0.0;
  double surrogate = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;

  void append(const TrainRecord& r) {
    if (!records.empty() && (r.iter <= records.back().iter || r.episodes < records.back().episodes)) {
      throw UsageError("TrainLog records must be appended in order");
    }
    records.push_back(r);
  }
  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }

  // Cumulative episodes at the first record with subopt ≤ target.
  std::optional<std::int64_t> episodes_to_reach(double target) const {
    for (const auto& r : records) {
      if (r.subopt_exact <= target) return r.episodes;
    }
    return std::nullopt;
  }

  void write_csv(std::ostream& os) const {
    os << "iter,episodes,mean_return_rmle,mean_return_true,subopt_exact,kl_to_ref\n";
    std::ostringstream line;
    line.precision(17);
    for (const auto& r : records) {
      line.str("");
      line << r.iter << ',' << r.episodes << ',' << r.mean_return_rmle << ',' << r.mean_return_true << ','
           << r.subopt_exact << ',' << r.kl_to_ref << '\n';
      os << line.str();
    }
  }
};

struct TrainOptions {
  PpoConfig ppo;
  std::set<Token> delimiters;                       // semi_rto
  std::shared_ptr<const RewardTable> true_reward;   // for logging; optional
};

struct TrainResult {
  AutoregressivePolicy policy;
  TrainLog log;
};

namespace detail {

inline TrainRecord evaluate_record(const TokenMdp& mdp, const AutoregressivePolicy& pi, const RtoRewardSpec& spec,
                                   const TrainOptions& opts, const std::optional<double>& optimum) {
  TrainRecord rec;
  const AutoregressivePolicy& ref = *spec.ref;
  if (spec.sentence) rec.mean_return_rmle = evaluate_policy(mdp, pi, *spec.sentence, ref, 0.0);
  if (opts.true_reward) {
    rec.mean_return_true = evaluate_policy(mdp, pi, *opts.true_reward, ref, 0.0);
    if (optimum && spec.beta2 > 0) rec.subopt_exact = *optimum - evaluate_policy(mdp, pi, *opts.true_reward, ref, spec.beta2);
  }
  rec.kl_to_ref = expected_kl(mdp, visitation(mdp, pi), pi, ref);
  return rec;
}

}  // namespace detail

// Exact V*_{β₂}(ρ) under the true reward, used as the suboptimality anchor.
inline std::optional<double> training_optimum(const TokenMdp& mdp, const RtoRewardSpec& spec,
                                              const TrainOptions& opts) {
  if (!opts.true_reward || !(spec.beta2 > 0)) return std::nullopt;
  return soft_backward_induction(mdp, *opts.true_reward, *spec.ref, spec.beta2).values.value(mdp);
}

inline double training_suboptimality(const TokenMdp& mdp, const AutoregressivePolicy& pi, const RtoRewardSpec& spec,
                                     const TrainOptions& opts) {
  const auto opt = training_optimum(mdp, spec, opts);
  if (!opt) throw UsageError("suboptimality needs a true reward and beta2 > 0");
  return *opt - evaluate_policy(mdp, pi, *opts.true_reward, *spec.ref, spec.beta2);
}

// Sample, assemble rewards, update; `budget` iterations of cfg.batch_size
// episodes each. Deterministic given the rng state.
inline TrainResult train(const TokenMdp& mdp, Algo algo, const RtoRewardSpec& spec, const AutoregressivePolicy& init,
                         const TrainOptions& opts, Rng& rng, int budget) {
  if (budget < 0) throw UsageError("budget must be non-negative");
  TrainResult res{init, {}};
  if (budget == 0) return res;
  spec.validate();
  opts.ppo.validate();
  if (!init.space().same_shape(mdp.space())) throw UsageError("initial policy does not match the MDP");
  if (algo == Algo::kSemiRto && opts.delimiters.empty()) throw UsageError("semi_rto needs delimiter tokens");
  const bool sparse = algo == Algo::kPpoSparse || algo == Algo::kRppSparse;
  if (sparse && !spec.sentence) throw UsageError("sparse training needs a sentence reward");

  const std::optional<double> optimum = training_optimum(mdp, spec, opts);
  TabularCritic critic(mdp.space());
  const bool with_critic = uses_critic(algo);
  const double lambda = with_critic ? opts.ppo.gae_lambda : 1.0;
  std::int64_t episodes = 0;

  for (int it = 1; it <= budget; ++it) {
    AutoregressivePolicy& pi = res.policy;
    Batch batch;
    batch.episodes = opts.ppo.batch_size;
    for (int e = 0; e < opts.ppo.batch_size; ++e) {
      const int prompt = sample_prompt(mdp, rng);
      const Trajectory t = sample_trajectory(mdp, pi, prompt, rng);
      std::vector<double> rewards;
      if (sparse) {
        rewards = sparse_reward(trajectory_return(*spec.sentence, prompt, t.tokens), pi, *spec.ref, spec.beta2, t);
      } else {
        std::vector<double> dpo_part;
        rewards = rto_reward(spec, pi, t, &dpo_part);
        RedistributionArgs args;
        args.tokens = t.tokens;
        switch (algo) {
          case Algo::kSemiRto:
            args.delimiters = opts.delimiters;
            rewards = redistribute(Redistribution::kSemiRto, rewards, args);
            break;
          case Algo::kDdpo:
            rewards = redistribute(Redistribution::kDdpo, rewards, args);
            break;
          case Algo::kRsPpo:
            for (double d : dpo_part) args.dpo_total += d;
            rewards = redistribute(Redistribution::kRsPpo, rewards, args);
            break;
          default:
            break;
        }
      }
      std::vector<Node> nodes;
      std::vector<double> values;
      for_each_step(mdp.space(), prompt, t.tokens, [&](const Node& n, Token, int) {
        nodes.push_back(n);
        values.push_back(with_critic ? critic(n) : 0.0);
      });
      values.push_back(0.0);
      const std::vector<double> adv = gae(rewards, values, lambda);
      for (std::size_t h = 0; h < t.tokens.size(); ++h) {
        batch.steps.push_back(
            {nodes[h], t.tokens[h], pi.log_prob(nodes[h], t.tokens[h]), adv[h], adv[h] + values[h], values[h]});
      }
    }
    if (opts.ppo.normalize_advantages && batch.steps.size() > 1) {
      double m = 0.0, sq = 0.0;
      for (const auto& s : batch.steps) m += s.advantage;
      m /= batch.steps.size();
      for (const auto& s : batch.steps) sq += (s.advantage - m) * (s.advantage - m);
      const double sd = std::sqrt(sq / batch.steps.size());
      for (auto& s : batch.steps) s.advantage = (s.advantage - m) / (sd + 1e-8);
    }
    const PpoUpdateResult up = ppo_update(pi, batch, opts.ppo);
    if (with_critic) critic.update(batch, opts.ppo);
    pi = up.policy;
    episodes += batch.episodes;

    TrainRecord rec = detail::evaluate_record(mdp, pi, spec, opts, optimum);
    rec.iter = it;
    rec.episodes = episodes;
    rec.surrogate = up.surrogate;
    res.log.append(rec);
  }
  return res;
}

}  // namespace tokenrl
