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

// Single-seed trials behind the sweeps: explorer comparisons, offline
// bound checks and RL training runs. Each trial derives all randomness from
// its seeds, so sweeps can run them in any order.

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tokenrl/dpo.hpp"
#include "tokenrl/generators.hpp"
#include "tokenrl/pessimistic_planner.hpp"
#include "tokenrl/policy_optimizers.hpp"
#include "tokenrl/tree_explorer.hpp"

namespace tokenrl {

// SplitMix64 mixing of several integers into one seed.
inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x9E3779B97F4A7C15ull;
  for (std::uint64_t p : parts) {
    std::uint64_t z = h + p + 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    h = z ^ (z >> 31);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Explorer comparison on one random tree.

struct ExplorerTrial {
  std::int64_t token_queries = 0;
  std::int64_t sentence_queries = 0;
  std::int64_t node_set_size = 0;
  bool token_found_optimal = false;
  bool sentence_found_optimal = false;
};

inline ExplorerTrial explorer_trial(const PrefixTree& tree) {
  ExplorerTrial t;
  const std::int64_t best = tree.argmax_leaf();
  const ExploreResult tok = explore_token(tree);
  const ExploreResult sen = explore_sentence(tree);
  t.token_queries = tok.queries;
  t.sentence_queries = sen.queries;
  t.node_set_size = static_cast<std::int64_t>(node_sets(tree).size());
  t.token_found_optimal = tok.leaf == best;
  t.sentence_found_optimal = sen.leaf == best;
  return t;
}

inline std::int64_t token_query_bound(int vocab, int horizon, double xi) {
  const double e = std::min(xi + 1.0, static_cast<double>(horizon));
  return static_cast<std::int64_t>(std::floor(std::pow(static_cast<double>(vocab), e) + 1e-9));
}

// ---------------------------------------------------------------------------
// Offline linear-reward instance: pessimistic planning and its two bounds.

struct OfflineConfig {
  int vocab = 2;
  int horizon = 3;
  int dim = 4;
  double beta = 1.0;
  double feature_bound = 1.0;  // L
  double param_bound = 1.0;    // B
  double lambda = 1.0;
  double delta = 0.1;
  double constant = 1.0;  // C in the radius
  bool maxmin = false;    // also run max-min planning for the max-min bound
  MaxMinConfig maxmin_cfg;
};

struct OfflineTrial {
  std::int64_t n = 0;
  double subopt = 0.0;
  double pessimistic_bound = 0.0;
  double rho = 0.0;
  double confidence_radius_used = 0.0;  // ‖θ_MLE − θ*‖_{Σ_D}
  bool event = false;
  std::optional<double> maxmin_subopt;
  std::optional<double> maxmin_bound;
  // The outer ascent is heuristic; the max-min bound is only meaningful when
  // it matched π_β* under the pessimistic objective.
  std::optional<bool> maxmin_reached;
};

struct OfflineInstance {
  TokenMdp mdp;
  LinearInstance linear;
  AutoregressivePolicy ref;
  PlanResult optimum;
};

// Random features, θ*, uniform reference; the optimum is exact.
inline OfflineInstance make_offline_instance(const OfflineConfig& cfg, std::uint64_t seed) {
  Rng rng(mix_seed({seed, 0x0ff1}));
  TokenMdp mdp = make_token_mdp(cfg.vocab, cfg.horizon);
  LinearInstance lin = random_linear_instance(mdp.space(), cfg.dim, cfg.feature_bound, cfg.param_bound, rng);
  AutoregressivePolicy ref = AutoregressivePolicy::uniform(mdp.space());
  PlanResult opt = soft_backward_induction(mdp, lin.reward, ref, cfg.beta);
  return {std::move(mdp), std::move(lin), std::move(ref), std::move(opt)};
}

// Preference pairs from the uniform sampler; nested across sizes because a
// size-n dataset is the first n pairs of one stream.
inline PreferenceDataset offline_dataset(const OfflineInstance& inst, std::int64_t n, std::uint64_t seed) {
  Rng rng(mix_seed({seed, 0xda7a}));
  return sample_dataset(inst.mdp, inst.linear.reward, inst.ref, n, rng);
}

inline OfflineTrial offline_trial(const OfflineInstance& inst, const PreferenceDataset& ds, const OfflineConfig& cfg) {
  OfflinePlanConfig plan_cfg;
  plan_cfg.pessimism = {cfg.delta, cfg.constant, cfg.lambda, cfg.horizon, cfg.feature_bound, cfg.param_bound, cfg.dim};
  const OfflinePlanResult res = offline_plan(inst.mdp, ds, *inst.linear.features, inst.ref, cfg.beta, plan_cfg);
  OfflineTrial t;
  t.n = static_cast<std::int64_t>(ds.size());
  t.rho = res.rho;
  const double v_star = inst.optimum.values.value(inst.mdp);
  t.subopt = v_star - evaluate_policy(inst.mdp, res.policy, inst.linear.reward, inst.ref, cfg.beta);
  t.pessimistic_bound = pessimistic_bound(inst.mdp, inst.optimum.policy, res.policy, *inst.linear.features, *res.sigma, res.rho,
                            cfg.beta);
  t.confidence_radius_used = res.sigma->norm(res.theta_mle - inst.linear.theta_star);
  t.event = t.confidence_radius_used <= res.rho;
  if (cfg.maxmin) {
    const ConfidenceSet set = res.confidence_set(cfg.param_bound);
    const MaxMinResult mm = maxmin_plan(inst.mdp, set, *inst.linear.features, inst.ref, cfg.beta, cfg.maxmin_cfg);
    t.maxmin_subopt = v_star - evaluate_policy(inst.mdp, mm.policy, inst.linear.reward, inst.ref, cfg.beta);
    t.maxmin_bound = maxmin_bound(inst.mdp, inst.optimum.policy, *inst.linear.features, *res.sigma, res.rho);
    t.maxmin_reached =
        mm.value >= inner_min_value(inst.mdp, inst.optimum.policy, set, *inst.linear.features, inst.ref, cfg.beta).value;
  }
  return t;
}

// ---------------------------------------------------------------------------
// DPO as token-level reward learning: telescoping of the soft-optimal policy,
// token vs sentence loss, and per-token recovery from sampled data.

struct DpoEquivalenceConfig {
  int vocab = 2;
  int horizon = 2;
  double beta = 1.0;
  std::int64_t pairs = 100000;
  double ref_temperature = 1.0;
  int bandit_vocab = 4;
  DpoConfig dpo = [] {
    DpoConfig c;
    c.max_epochs = 5000;
    return c;
  }();
};

struct DpoEquivalenceTrial {
  double telescoping_error = 0.0;  // max_y |Σ_h β log(π*/π_ref) − (R(y) − V*(x))|
  double loss_gap = 0.0;           // |token-wise − sentence-wise DPO loss|
  double bandit_error = 0.0;       // max_a |Δ implicit reward − Δ r| on population data
  double pearson_optimal = 0.0;    // implicit vs β log(π*_β/π_ref) per (s, a)
  double pearson_raw = 0.0;        // implicit vs r per (s, a)
};

inline DpoEquivalenceTrial dpo_equivalence_trial(const DpoEquivalenceConfig& cfg, std::uint64_t seed) {
  Rng rng(mix_seed({seed, 0xd70e}));
  DpoEquivalenceTrial t;
  const TokenMdp mdp = make_token_mdp(cfg.vocab, cfg.horizon);
  const RewardTable r = random_reward(mdp.space(), rng);
  const AutoregressivePolicy ref = random_policy(mdp.space(), rng, cfg.ref_temperature);
  const PlanResult opt = soft_backward_induction(mdp, r, ref, cfg.beta);
  const RewardTable implicit_opt = implicit_reward_table(mdp, opt.policy, ref, cfg.beta);
  const double v0 = opt.values.V(mdp.space().root(0));
  for_each_response(mdp, 0, [&](std::span<const Token> y) {
    t.telescoping_error =
        std::max(t.telescoping_error, std::abs(trajectory_return(implicit_opt, 0, y) - (trajectory_return(r, 0, y) - v0)));
  });

  DpoConfig dc = cfg.dpo;
  dc.beta = cfg.beta;
  const PreferenceDataset ds = sample_dataset(mdp, r, ref, cfg.pairs, rng);
  const DpoResult fit = dpo_fit(ds, ref, dc);
  t.loss_gap = std::abs(dpo_loss(fit.policy, ref, ds, cfg.beta) - dpo_loss_sentence(fit.policy, ref, ds, cfg.beta));
  std::vector<double> got, target, raw;
  mdp.for_each_live([&](const Node& n) {
    for (Token a = 0; a < mdp.vocab_size(); ++a) {
      got.push_back(implicit_token_reward(fit.policy, ref, cfg.beta, n, a));
      target.push_back(implicit_opt(n, a));
      raw.push_back(r(n, a));
    }
  });
  t.pearson_optimal = pearson(got, target);
  t.pearson_raw = pearson(got, raw);

  const TokenMdp bandit = make_token_mdp(cfg.bandit_vocab, 1);
  const RewardTable rb = random_reward(bandit.space(), rng);
  const AutoregressivePolicy refb = random_policy(bandit.space(), rng, cfg.ref_temperature);
  const DpoResult fb = dpo_fit(population_dataset(bandit, rb, refb), refb, dc);
  const Node root = bandit.space().root(0);
  const double base = implicit_token_reward(fb.policy, refb, cfg.beta, root, 0);
  for (Token a = 1; a < cfg.bandit_vocab; ++a) {
    const double d = implicit_token_reward(fb.policy, refb, cfg.beta, root, a) - base;
    t.bandit_error = std::max(t.bandit_error, std::abs(d - (rb(root, a) - rb(root, 0))));
  }
  return t;
}

// ---------------------------------------------------------------------------
// RL instance: true token reward, reference policy, preference data, the
// MLE sentence reward and the DPO policy fitted on that data.

struct RlInstanceConfig {
  int vocab = 2;
  int horizon = 4;
  double reward_scale = 1.0;
  double ref_temperature = 1.0;
  std::int64_t pairs = 100000;
  double mle_bound = 100.0;
  double dpo_beta = 0.1;
  DpoConfig dpo = [] {
    DpoConfig c;
    c.max_epochs = 3000;
    return c;
  }();
};

struct RlInstance {
  TokenMdp mdp;
  std::shared_ptr<const RewardTable> true_reward;
  std::shared_ptr<const AutoregressivePolicy> ref;
  std::shared_ptr<const AutoregressivePolicy> dpo;
  std::shared_ptr<const RewardTable> mle_reward;
};

inline RlInstance make_rl_instance(const RlInstanceConfig& cfg, std::uint64_t seed) {
  Rng rng(mix_seed({seed, 0x7a5c}));
  TokenMdp mdp = make_token_mdp(cfg.vocab, cfg.horizon);
  auto truth = std::make_shared<const RewardTable>(random_reward(mdp.space(), rng, cfg.reward_scale));
  auto ref = std::make_shared<const AutoregressivePolicy>(random_policy(mdp.space(), rng, cfg.ref_temperature));
  const PreferenceDataset ds = sample_dataset(mdp, *truth, *ref, cfg.pairs, rng);

  const FeatureMap onehot = FeatureMap::one_hot(mdp.space());
  MleOptions mo;
  mo.tolerance = 1e-7;
  mo.max_iterations = 20000;
  const MleResult mle = mle_fit(ds, onehot, cfg.mle_bound, mo);
  std::vector<double> vals(mle.theta.data(), mle.theta.data() + mle.theta.size());
  auto rmle = std::make_shared<const RewardTable>(mdp.space(), std::move(vals));

  DpoConfig dc = cfg.dpo;
  dc.beta = cfg.dpo_beta;
  auto dpo = std::make_shared<const AutoregressivePolicy>(dpo_fit(ds, *ref, dc).policy);
  return {std::move(mdp), std::move(truth), std::move(ref), std::move(dpo), std::move(rmle)};
}

struct RlTrialConfig {
  Algo algo = Algo::kRto;
  double beta1 = 0.05;
  double beta2 = 0.01;
  double beta3 = 1.0;
  int iterations = 100;
  TrainOptions options;
};

struct RlTrial {
  double initial_subopt = 0.0;
  TrainLog log;
  AutoregressivePolicy policy;
};

inline RtoRewardSpec rl_reward_spec(const RlInstance& inst, const RlTrialConfig& cfg) {
  RtoRewardSpec spec;
  spec.beta1 = cfg.beta1;
  spec.beta2 = cfg.beta2;
  spec.beta3 = cfg.beta3;
  spec.dpo = inst.dpo;
  spec.ref = inst.ref;
  spec.sentence = inst.mle_reward;
  return spec;
}

inline RlTrial rl_trial(const RlInstance& inst, const RlTrialConfig& cfg, std::uint64_t seed) {
  const RtoRewardSpec spec = rl_reward_spec(inst, cfg);
  TrainOptions opts = cfg.options;
  opts.true_reward = inst.true_reward;
  Rng rng(mix_seed({seed, 0x7a1e}));
  RlTrial t;
  t.initial_subopt = training_suboptimality(inst.mdp, *inst.ref, spec, opts);
  TrainResult r = train(inst.mdp, cfg.algo, spec, *inst.ref, opts, rng, cfg.iterations);
  t.log = std::move(r.log);
  t.policy = std::move(r.policy);
  return t;
}

}  // namespace tokenrl
