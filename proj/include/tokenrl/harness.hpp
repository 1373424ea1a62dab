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


// Config-driven experiment runner.
//
//   {"experiment": "explorer" | "theory_bound" | "dpo_equivalence" | "rl" | "ablation",
//    "name": "...", "seeds": [0, 1, 2] | {"start": 0, "count": 50},
//    "output_dir": "out/explorer", "params": {...}}
//
// Each run writes <output_dir>/results.csv (experiment, config_hash, seed,
// group, metric, value), summary.json, and for RL runs one curve file per
// algorithm under curves/. Rows are merged in seed order, so the output does
// not depend on the worker count.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tokenrl/experiments.hpp"
#include "tokenrl/io.hpp"

#ifndef TOKENRL_GIT_REVISION
#define TOKENRL_GIT_REVISION "unknown"
#endif

namespace tokenrl {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << x;
  return os.str();
}

// ---------------------------------------------------------------------------
// Parameters per experiment kind.

struct ExplorerParams {
  std::vector<int> vocab = {2, 3};
  std::vector<int> horizon = {3, 4, 5, 6, 7};
  std::vector<double> xi = {1.0, 2.0};
};

struct TheoryParams {
  OfflineConfig base;
  std::vector<std::int64_t> n = {32, 64, 128, 256, 512, 1024, 2048, 4096};
};

struct RlParams {
  RlInstanceConfig instance;
  std::vector<std::int64_t> pairs;  // empty: instance.pairs only
  std::vector<std::uint64_t> instances = {0};
  std::vector<Algo> algos;
  int iterations = 300;
  double beta1 = 0.05, beta2 = 0.01, beta3 = 1.0;
  PpoConfig ppo;
  std::set<Token> delimiters;
  double target_fraction = 0.1;
  bool curves = true;
};

using ExperimentParams = std::variant<ExplorerParams, TheoryParams, DpoEquivalenceConfig, RlParams>;

struct ExperimentConfig {
  std::string experiment;
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::string output_dir;
  ExperimentParams params;
  std::string hash;  // FNV-1a of the canonical config text
};

namespace detail {

template <class T>
std::vector<T> scalar_or_list(const Json& j, const std::string& key, std::vector<T> fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  try {
    if (v.is_array()) {
      auto out = v.get<std::vector<T>>();
      if (out.empty()) throw ConfigError(path + "." + key + ": empty list");
      return out;
    }
    return {v.get<T>()};
  } catch (const Json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

inline std::vector<std::uint64_t> parse_seed_list(const Json& j, const std::string& path) {
  if (j.is_array()) {
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (!j[i].is_number_unsigned()) throw ConfigError(path + "[" + std::to_string(i) + "]: expected a non-negative integer");
      out.push_back(j[i].get<std::uint64_t>());
    }
    if (out.empty()) throw ConfigError(path + ": empty seed list");
    return out;
  }
  if (j.is_object()) {
    reject_unknown(j, {"start", "count"}, path);
    const auto start = get_field_or<std::uint64_t>(j, "start", 0, path);
    const auto count = get_field<std::int64_t>(j, "count", path);
    if (count < 1) throw ConfigError(path + ".count: must be >= 1");
    std::vector<std::uint64_t> out;
    for (std::int64_t i = 0; i < count; ++i) out.push_back(start + static_cast<std::uint64_t>(i));
    return out;
  }
  throw ConfigError(path + ": expected a list or {start, count}");
}

template <class F>
void guard(const std::string& path, F&& f) {
  try {
    f();
  } catch (const UsageError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline ExplorerParams parse_explorer(const Json& j, const std::string& path) {
  reject_unknown(j, {"vocab", "horizon", "xi"}, path);
  ExplorerParams p;
  p.vocab = scalar_or_list<int>(j, "vocab", p.vocab, path);
  p.horizon = scalar_or_list<int>(j, "horizon", p.horizon, path);
  p.xi = scalar_or_list<double>(j, "xi", p.xi, path);
  for (int a : p.vocab) {
    if (a < 2) throw ConfigError(path + ".vocab: must be >= 2");
  }
  for (int h : p.horizon) {
    if (h < 1) throw ConfigError(path + ".horizon: must be >= 1");
  }
  for (double x : p.xi) {
    if (!(x > 0)) throw ConfigError(path + ".xi: must be positive");
  }
  return p;
}

inline MaxMinConfig parse_maxmin(const Json& j, const std::string& path) {
  reject_unknown(j, {"iterations", "step", "patience"}, path);
  MaxMinConfig c;
  c.iterations = get_field_or<int>(j, "iterations", c.iterations, path);
  c.step = get_field_or<double>(j, "step", c.step, path);
  c.patience = get_field_or<int>(j, "patience", c.patience, path);
  if (!(c.step > 0 && c.step <= 1)) throw ConfigError(path + ".step: must lie in (0, 1]");
  return c;
}

inline TheoryParams parse_theory(const Json& j, const std::string& path) {
  reject_unknown(j, {"vocab", "horizon", "dim", "beta", "feature_bound", "param_bound", "lambda", "delta", "constant",
                     "n", "maxmin", "maxmin_config"},
                 path);
  TheoryParams p;
  OfflineConfig& c = p.base;
  c.vocab = get_field_or<int>(j, "vocab", c.vocab, path);
  c.horizon = get_field_or<int>(j, "horizon", c.horizon, path);
  c.dim = get_field_or<int>(j, "dim", c.dim, path);
  c.beta = get_field_or<double>(j, "beta", c.beta, path);
  c.feature_bound = get_field_or<double>(j, "feature_bound", c.feature_bound, path);
  c.param_bound = get_field_or<double>(j, "param_bound", c.param_bound, path);
  c.lambda = get_field_or<double>(j, "lambda", c.lambda, path);
  c.delta = get_field_or<double>(j, "delta", c.delta, path);
  c.constant = get_field_or<double>(j, "constant", c.constant, path);
  c.maxmin = get_field_or<bool>(j, "maxmin", c.maxmin, path);
  if (j.contains("maxmin_config")) c.maxmin_cfg = parse_maxmin(j.at("maxmin_config"), path + ".maxmin_config");
  p.n = scalar_or_list<std::int64_t>(j, "n", p.n, path);
  if (!(c.beta > 0)) throw ConfigError(path + ".beta: must be positive");
  if (!(c.delta > 0 && c.delta < 1)) throw ConfigError(path + ".delta: must lie in (0, 1)");
  if (c.dim < 1) throw ConfigError(path + ".dim: must be >= 1");
  for (auto n : p.n) {
    if (n < 1) throw ConfigError(path + ".n: sizes must be >= 1");
  }
  guard(path, [&] { TreeSpace(c.vocab, c.horizon, 1, std::nullopt); });
  return p;
}

inline DpoConfig parse_dpo(const Json& j, const std::string& path, DpoConfig c) {
  reject_unknown(j, {"learning_rate", "max_epochs", "tolerance"}, path);
  c.learning_rate = get_field_or<double>(j, "learning_rate", c.learning_rate, path);
  c.max_epochs = get_field_or<int>(j, "max_epochs", c.max_epochs, path);
  c.tolerance = get_field_or<double>(j, "tolerance", c.tolerance, path);
  if (!(c.learning_rate > 0)) throw ConfigError(path + ".learning_rate: must be positive");
  return c;
}

inline DpoEquivalenceConfig parse_dpo_equivalence(const Json& j, const std::string& path) {
  reject_unknown(j, {"vocab", "horizon", "beta", "pairs", "ref_temperature", "bandit_vocab", "dpo"}, path);
  DpoEquivalenceConfig c;
  c.vocab = get_field_or<int>(j, "vocab", c.vocab, path);
  c.horizon = get_field_or<int>(j, "horizon", c.horizon, path);
  c.beta = get_field_or<double>(j, "beta", c.beta, path);
  c.pairs = get_field_or<std::int64_t>(j, "pairs", c.pairs, path);
  c.ref_temperature = get_field_or<double>(j, "ref_temperature", c.ref_temperature, path);
  c.bandit_vocab = get_field_or<int>(j, "bandit_vocab", c.bandit_vocab, path);
  if (j.contains("dpo")) c.dpo = parse_dpo(j.at("dpo"), path + ".dpo", c.dpo);
  if (!(c.beta > 0)) throw ConfigError(path + ".beta: must be positive");
  if (c.pairs < 1) throw ConfigError(path + ".pairs: must be >= 1");
  if (c.bandit_vocab < 2) throw ConfigError(path + ".bandit_vocab: must be >= 2");
  guard(path, [&] { TreeSpace(c.vocab, c.horizon, 1, std::nullopt, 4096); });
  return c;
}

inline PpoConfig parse_ppo(const Json& j, const std::string& path) {
  reject_unknown(j, {"clip", "gae_lambda", "update_epochs", "batch_size", "actor_lr", "critic_lr", "value_clip",
                     "normalize_advantages"},
                 path);
  PpoConfig c;
  c.clip = get_field_or<double>(j, "clip", c.clip, path);
  c.gae_lambda = get_field_or<double>(j, "gae_lambda", c.gae_lambda, path);
  c.update_epochs = get_field_or<int>(j, "update_epochs", c.update_epochs, path);
  c.batch_size = get_field_or<int>(j, "batch_size", c.batch_size, path);
  c.actor_lr = get_field_or<double>(j, "actor_lr", c.actor_lr, path);
  c.critic_lr = get_field_or<double>(j, "critic_lr", c.critic_lr, path);
  c.value_clip = get_field_or<double>(j, "value_clip", c.value_clip, path);
  c.normalize_advantages = get_field_or<bool>(j, "normalize_advantages", c.normalize_advantages, path);
  guard(path, [&] { c.validate(); });
  return c;
}

inline RlParams parse_rl(const Json& j, const std::string& path, bool ablation) {
  reject_unknown(j, {"vocab", "horizon", "reward_scale", "ref_temperature", "pairs", "mle_bound", "dpo_beta", "dpo",
                     "instances", "algos", "iterations", "beta1", "beta2", "beta3", "ppo", "delimiters",
                     "target_fraction", "curves"},
                 path);
  RlParams p;
  RlInstanceConfig& ic = p.instance;
  ic.vocab = get_field_or<int>(j, "vocab", ic.vocab, path);
  ic.horizon = get_field_or<int>(j, "horizon", ic.horizon, path);
  ic.reward_scale = get_field_or<double>(j, "reward_scale", ic.reward_scale, path);
  ic.ref_temperature = get_field_or<double>(j, "ref_temperature", ic.ref_temperature, path);
  ic.mle_bound = get_field_or<double>(j, "mle_bound", ic.mle_bound, path);
  ic.dpo_beta = get_field_or<double>(j, "dpo_beta", ic.dpo_beta, path);
  if (j.contains("dpo")) ic.dpo = parse_dpo(j.at("dpo"), path + ".dpo", ic.dpo);
  p.pairs = scalar_or_list<std::int64_t>(j, "pairs", {ic.pairs}, path);
  for (auto n : p.pairs) {
    if (n < 1) throw ConfigError(path + ".pairs: must be >= 1");
  }
  if (j.contains("instances")) p.instances = parse_seed_list(j.at("instances"), path + ".instances");
  const std::vector<std::string> fallback =
      ablation ? std::vector<std::string>{"rto", "semi_rto", "ddpo"} : std::vector<std::string>{"rto", "ppo_sparse"};
  for (const auto& name : scalar_or_list<std::string>(j, "algos", fallback, path)) {
    try {
      p.algos.push_back(parse_algo(name));
    } catch (const UsageError&) {
      throw ConfigError(path + ".algos: unknown algorithm '" + name + "'");
    }
  }
  p.iterations = get_field_or<int>(j, "iterations", p.iterations, path);
  p.beta1 = get_field_or<double>(j, "beta1", p.beta1, path);
  p.beta2 = get_field_or<double>(j, "beta2", p.beta2, path);
  p.beta3 = get_field_or<double>(j, "beta3", p.beta3, path);
  if (j.contains("ppo")) p.ppo = parse_ppo(j.at("ppo"), path + ".ppo");
  for (int d : get_field_or<std::vector<int>>(j, "delimiters", {}, path)) {
    if (d < 0 || d >= ic.vocab) throw ConfigError(path + ".delimiters: token out of range");
    p.delimiters.insert(d);
  }
  p.target_fraction = get_field_or<double>(j, "target_fraction", p.target_fraction, path);
  p.curves = get_field_or<bool>(j, "curves", p.curves, path);
  if (p.iterations < 1) throw ConfigError(path + ".iterations: must be >= 1");
  if (!(p.beta2 > 0)) throw ConfigError(path + ".beta2: must be positive (it anchors the suboptimality)");
  if (p.beta1 < 0 || p.beta3 < 0) throw ConfigError(path + ": reward scales must be non-negative");
  if (!(p.target_fraction > 0 && p.target_fraction < 1)) throw ConfigError(path + ".target_fraction: must lie in (0, 1)");
  if (!(ic.dpo_beta > 0)) throw ConfigError(path + ".dpo_beta: must be positive");
  for (Algo a : p.algos) {
    if (a == Algo::kSemiRto && p.delimiters.empty()) throw ConfigError(path + ".delimiters: semi_rto needs delimiters");
  }
  guard(path, [&] { TreeSpace(ic.vocab, ic.horizon, 1, std::nullopt, 4096); });
  return p;
}

}  // namespace detail

// Validates a config; every error names the offending field path.
inline ExperimentConfig parse_experiment_config(const Json& j) {
  reject_unknown(j, {"experiment", "name", "seeds", "output_dir", "params"}, "config");
  ExperimentConfig c;
  c.experiment = get_field<std::string>(j, "experiment", "config");
  c.name = get_field_or<std::string>(j, "name", c.experiment, "config");
  if (!j.contains("seeds")) throw ConfigError("config.seeds: missing required field");
  c.seeds = detail::parse_seed_list(j.at("seeds"), "config.seeds");
  c.output_dir = get_field_or<std::string>(j, "output_dir", "out/" + c.name, "config");
  const Json params = j.contains("params") ? j.at("params") : Json::object();
  if (c.experiment == "explorer") {
    c.params = detail::parse_explorer(params, "config.params");
  } else if (c.experiment == "theory_bound") {
    c.params = detail::parse_theory(params, "config.params");
  } else if (c.experiment == "dpo_equivalence") {
    c.params = detail::parse_dpo_equivalence(params, "config.params");
  } else if (c.experiment == "rl" || c.experiment == "ablation") {
    c.params = detail::parse_rl(params, "config.params", c.experiment == "ablation");
  } else {
    throw ConfigError("config.experiment: unknown experiment '" + c.experiment + "'");
  }
  // The hash names the experiment, not where it is written. nlohmann::json
  // keeps object keys sorted, so the dump is canonical.
  Json canon = j;
  canon.erase("output_dir");
  c.hash = hex64(fnv1a64(canon.dump()));
  return c;
}

// ---------------------------------------------------------------------------
// Results.

struct ResultRow {
  std::uint64_t seed = 0;
  std::string group;
  std::string metric;
  double value = 0.0;
};

struct ErrorRow {
  std::uint64_t seed = 0;
  std::string group;
  std::string message;
};

struct CurveRow {
  std::string file;  // curves/<file>.csv
  std::string key;   // leading columns
  std::uint64_t seed = 0;
  TrainLog log;
};

struct TaskOutput {
  std::vector<ResultRow> rows;
  std::vector<CurveRow> curves;
};

struct Task {
  std::uint64_t seed = 0;
  std::string group;
  std::function<TaskOutput()> run;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::vector<ErrorRow> errors;
  std::vector<CurveRow> curves;
};

inline int worker_count() {
  if (const char* v = std::getenv("TOKENRL_WORKERS")) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end != v && *end == '\0' && n >= 1) return static_cast<int>(std::min(n, 256L));
    throw ConfigError("TOKENRL_WORKERS: expected a positive integer, got '" + std::string(v) + "'");
  }
  return 1;
}

// Runs tasks on `workers` threads; outputs are merged in task order, then
// stably by seed.
inline ResultTable run_tasks(const std::vector<Task>& tasks, int workers) {
  std::vector<std::optional<TaskOutput>> out(tasks.size());
  std::vector<std::optional<std::string>> err(tasks.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) {
      try {
        out[i] = tasks[i].run();
      } catch (const std::exception& e) {
        err[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < std::min<int>(workers, static_cast<int>(tasks.size())); ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  std::vector<std::size_t> order(tasks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return tasks[a].seed < tasks[b].seed; });
  ResultTable table;
  for (std::size_t i : order) {
    if (err[i]) {
      table.errors.push_back({tasks[i].seed, tasks[i].group, *err[i]});
      continue;
    }
    for (auto& r : out[i]->rows) table.rows.push_back(std::move(r));
    for (auto& c : out[i]->curves) table.curves.push_back(std::move(c));
  }
  return table;
}

// Linear-interpolated quantile.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw UsageError("quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  if (std::isinf(v[lo]) || std::isinf(v[hi])) return v[pos - lo < 0.5 ? lo : hi];
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

inline OrderedJson json_number(double x) { return std::isfinite(x) ? OrderedJson(x) : OrderedJson(nullptr); }

// ---------------------------------------------------------------------------
// Task builders.

namespace detail {

inline std::string fmt(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

inline std::vector<Task> explorer_tasks(const ExperimentConfig& c) {
  const auto& p = std::get<ExplorerParams>(c.params);
  std::vector<Task> tasks;
  for (std::uint64_t seed : c.seeds) {
    for (int A : p.vocab) {
      for (int H : p.horizon) {
        for (double xi : p.xi) {
          const std::string group = "A=" + std::to_string(A) + ";H=" + std::to_string(H) + ";xi=" + fmt(xi);
          tasks.push_back({seed, group, [=] {
                             Rng rng(mix_seed({seed, static_cast<std::uint64_t>(A), static_cast<std::uint64_t>(H),
                                               static_cast<std::uint64_t>(xi * 1000)}));
                             const PrefixTree tree = random_planted_tree(A, H, xi, rng);
                             const ExplorerTrial t = explorer_trial(tree);
                             const auto bound = token_query_bound(A, H, xi);
                             TaskOutput o;
                             o.rows = {{seed, group, "token_queries", static_cast<double>(t.token_queries)},
                                       {seed, group, "sentence_queries", static_cast<double>(t.sentence_queries)},
                                       {seed, group, "node_set_size", static_cast<double>(t.node_set_size)},
                                       {seed, group, "query_bound", static_cast<double>(bound)},
                                       {seed, group, "within_bound", t.token_queries <= bound ? 1.0 : 0.0},
                                       {seed, group, "token_found_optimal", t.token_found_optimal ? 1.0 : 0.0}};
                             return o;
                           }});
        }
      }
    }
  }
  return tasks;
}

inline std::vector<Task> theory_tasks(const ExperimentConfig& c) {
  const auto& p = std::get<TheoryParams>(c.params);
  std::vector<Task> tasks;
  for (std::uint64_t seed : c.seeds) {
    tasks.push_back({seed, "all", [=] {
                       const OfflineInstance inst = make_offline_instance(p.base, seed);
                       const std::int64_t n_max = *std::max_element(p.n.begin(), p.n.end());
                       const PreferenceDataset full = offline_dataset(inst, n_max, seed);
                       TaskOutput o;
                       for (std::int64_t n : p.n) {
                         PreferenceDataset ds;
                         ds.pairs.assign(full.pairs.begin(), full.pairs.begin() + n);
                         const OfflineTrial t = offline_trial(inst, ds, p.base);
                         const std::string g = "n=" + std::to_string(n);
                         o.rows.push_back({seed, g, "subopt", t.subopt});
                         o.rows.push_back({seed, g, "pessimistic_bound", t.pessimistic_bound});
                         o.rows.push_back({seed, g, "rho", t.rho});
                         o.rows.push_back({seed, g, "mle_error_sigma_norm", t.confidence_radius_used});
                         o.rows.push_back({seed, g, "event", t.event ? 1.0 : 0.0});
                         o.rows.push_back({seed, g, "bound_holds", t.subopt <= t.pessimistic_bound ? 1.0 : 0.0});
                         if (t.maxmin_subopt) {
                           o.rows.push_back({seed, g, "maxmin_subopt", *t.maxmin_subopt});
                           o.rows.push_back({seed, g, "maxmin_bound", *t.maxmin_bound});
                           o.rows.push_back({seed, g, "maxmin_reached", *t.maxmin_reached ? 1.0 : 0.0});
                           o.rows.push_back({seed, g, "maxmin_bound_holds", *t.maxmin_subopt <= *t.maxmin_bound ? 1.0 : 0.0});
                         }
                       }
                       return o;
                     }});
  }
  return tasks;
}

inline std::vector<Task> dpo_equivalence_tasks(const ExperimentConfig& c) {
  const auto& p = std::get<DpoEquivalenceConfig>(c.params);
  std::vector<Task> tasks;
  for (std::uint64_t seed : c.seeds) {
    tasks.push_back({seed, "all", [=] {
                       const DpoEquivalenceTrial t = dpo_equivalence_trial(p, seed);
                       TaskOutput o;
                       o.rows = {{seed, "all", "telescoping_error", t.telescoping_error},
                                 {seed, "all", "loss_gap", t.loss_gap},
                                 {seed, "all", "bandit_error", t.bandit_error},
                                 {seed, "all", "pearson_optimal", t.pearson_optimal},
                                 {seed, "all", "pearson_raw", t.pearson_raw}};
                       return o;
                     }});
  }
  return tasks;
}

inline std::vector<Task> rl_tasks(const ExperimentConfig& c, int workers) {
  const auto& p = std::get<RlParams>(c.params);
  // Instances are shared by every (seed, algorithm) trial, so build them first.
  struct Key {
    std::uint64_t instance;
    std::int64_t pairs;
  };
  std::vector<Key> keys;
  for (auto n : p.pairs) {
    for (auto i : p.instances) keys.push_back({i, n});
  }
  std::vector<std::shared_ptr<const RlInstance>> built(keys.size());
  std::vector<Task> build_tasks;
  for (std::size_t k = 0; k < keys.size(); ++k) {
    build_tasks.push_back({0, "", [&, k] {
                             RlInstanceConfig ic = p.instance;
                             ic.pairs = keys[k].pairs;
                             built[k] = std::make_shared<const RlInstance>(make_rl_instance(ic, keys[k].instance));
                             return TaskOutput{};
                           }});
  }
  const ResultTable bt = run_tasks(build_tasks, workers);
  if (!bt.errors.empty()) throw Error("building RL instances failed: " + bt.errors.front().message);

  std::vector<Task> tasks;
  for (std::uint64_t seed : c.seeds) {
    for (std::size_t k = 0; k < keys.size(); ++k) {
      for (Algo algo : p.algos) {
        const std::string key = std::to_string(keys[k].instance) + "," + std::to_string(keys[k].pairs);
        const std::string group = "algo=" + algo_name(algo) + ";instance=" + std::to_string(keys[k].instance) +
                                  (p.pairs.size() > 1 ? ";pairs=" + std::to_string(keys[k].pairs) : "");
        auto inst = built[k];
        tasks.push_back({seed, group, [=] {
                           RlTrialConfig tc;
                           tc.algo = algo;
                           tc.beta1 = p.beta1;
                           tc.beta2 = p.beta2;
                           tc.beta3 = p.beta3;
                           tc.iterations = p.iterations;
                           tc.options.ppo = p.ppo;
                           tc.options.delimiters = p.delimiters;
                           const RlTrial t = rl_trial(*inst, tc, mix_seed({seed, keys[k].instance}));
                           const TrainRecord& last = t.log.records.back();
                           const auto ep = t.log.episodes_to_reach(p.target_fraction * t.initial_subopt);
                           TaskOutput o;
                           o.rows = {{seed, group, "initial_subopt", t.initial_subopt},
                                     {seed, group, "final_subopt", last.subopt_exact},
                                     {seed, group, "final_return_true", last.mean_return_true},
                                     {seed, group, "final_return_rmle", last.mean_return_rmle},
                                     {seed, group, "final_kl_to_ref", last.kl_to_ref},
                                     {seed, group, "episodes_to_target",
                                      ep ? static_cast<double>(*ep) : std::numeric_limits<double>::infinity()}};
                           if (p.curves) o.curves.push_back({algo_name(algo), key, seed, t.log});
                           return o;
                         }});
      }
    }
  }
  return tasks;
}

// Paired comparison of two groups' per-seed values.
struct PairedStats {
  int n = 0;
  int a_wins = 0;
  int ties = 0;
  double median_a = 0.0;
  double median_b = 0.0;
  double p_two_sided = 1.0;
  double p_a_greater = 1.0;  // one-sided: a > b more often than chance
};

inline PairedStats paired_stats(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw UsageError("paired statistics need aligned, non-empty samples");
  PairedStats s;
  s.median_a = median(a);
  s.median_b = median(b);
  int decided = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) {
      ++s.ties;
      continue;
    }
    ++decided;
    s.a_wins += a[i] > b[i];
  }
  s.n = static_cast<int>(a.size());
  s.p_two_sided = sign_test_two_sided(s.a_wins, decided);
  s.p_a_greater = sign_test_greater(s.a_wins, decided);
  return s;
}

inline OrderedJson paired_json(const PairedStats& s) {
  OrderedJson j;
  j["n"] = s.n;
  j["a_wins"] = s.a_wins;
  j["ties"] = s.ties;
  j["median_a"] = json_number(s.median_a);
  j["median_b"] = json_number(s.median_b);
  j["sign_test_p_two_sided"] = s.p_two_sided;
  j["sign_test_p_a_greater"] = s.p_a_greater;
  return j;
}

}  // namespace detail

// Per-seed values of one (group, metric), in seed order.
inline std::vector<std::pair<std::uint64_t, double>> metric_values(const ResultTable& t, const std::string& group,
                                                                   const std::string& metric) {
  std::vector<std::pair<std::uint64_t, double>> out;
  for (const auto& r : t.rows) {
    if (r.group == group && r.metric == metric) out.emplace_back(r.seed, r.value);
  }
  return out;
}

inline ResultTable run_experiment(const ExperimentConfig& c, int workers) {
  std::vector<Task> tasks;
  if (c.experiment == "explorer") {
    tasks = detail::explorer_tasks(c);
  } else if (c.experiment == "theory_bound") {
    tasks = detail::theory_tasks(c);
  } else if (c.experiment == "dpo_equivalence") {
    tasks = detail::dpo_equivalence_tasks(c);
  } else {
    tasks = detail::rl_tasks(c, workers);
  }
  return run_tasks(tasks, workers);
}

inline std::string results_csv(const ExperimentConfig& c, const ResultTable& t) {
  std::ostringstream os;
  os << "experiment,config_hash,seed,group,metric,value\n";
  for (const auto& r : t.rows) {
    os << c.experiment << ',' << c.hash << ',' << r.seed << ',' << r.group << ',' << r.metric << ','
       << format_double(r.value) << '\n';
  }
  return os.str();
}

inline std::map<std::string, std::string> curve_csvs(const ResultTable& t) {
  std::map<std::string, std::string> files;
  for (const auto& c : t.curves) {
    std::string& f = files[c.file];
    if (f.empty()) f = "instance,pairs,seed,iter,episodes,mean_return_rmle,mean_return_true,subopt_exact,kl_to_ref\n";
    std::ostringstream body;
    c.log.write_csv(body);
    std::istringstream lines(body.str());
    std::string line;
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) f += c.key + "," + std::to_string(c.seed) + "," + line + "\n";
  }
  return files;
}

inline OrderedJson summary_json(const ExperimentConfig& c, const ResultTable& t) {
  OrderedJson j;
  j["experiment"] = c.experiment;
  j["name"] = c.name;
  j["config_hash"] = c.hash;
  j["git_revision"] = TOKENRL_GIT_REVISION;
  j["seeds"] = c.seeds;
  // (group, metric) in first-appearance order.
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::vector<double>> vals;
  for (const auto& r : t.rows) {
    auto k = std::make_pair(r.group, r.metric);
    if (!vals.count(k)) keys.push_back(k);
    vals[k].push_back(r.value);
  }
  OrderedJson metrics = OrderedJson::array();
  for (const auto& k : keys) {
    const auto& v = vals[k];
    OrderedJson m;
    m["group"] = k.first;
    m["metric"] = k.second;
    m["count"] = v.size();
    m["median"] = json_number(median(v));
    m["q25"] = json_number(quantile(v, 0.25));
    m["q75"] = json_number(quantile(v, 0.75));
    m["min"] = json_number(*std::min_element(v.begin(), v.end()));
    m["max"] = json_number(*std::max_element(v.begin(), v.end()));
    metrics.push_back(std::move(m));
  }
  j["metrics"] = std::move(metrics);

  if (c.experiment == "rl" || c.experiment == "ablation") {
    // Paired comparisons of the first algorithm against the others, per instance.
    const auto& p = std::get<RlParams>(c.params);
    OrderedJson cmp = OrderedJson::array();
    for (std::size_t b = 1; b < p.algos.size(); ++b) {
      for (const std::string metric : {"episodes_to_target", "final_return_true", "final_subopt"}) {
        std::vector<double> va, vb;
        for (auto n : p.pairs) {
          for (auto inst : p.instances) {
            const std::string suffix =
                ";instance=" + std::to_string(inst) + (p.pairs.size() > 1 ? ";pairs=" + std::to_string(n) : "");
            const auto xa = metric_values(t, "algo=" + algo_name(p.algos[0]) + suffix, metric);
            const auto xb = metric_values(t, "algo=" + algo_name(p.algos[b]) + suffix, metric);
            if (xa.size() != xb.size()) continue;
            for (std::size_t i = 0; i < xa.size(); ++i) {
              va.push_back(xa[i].second);
              vb.push_back(xb[i].second);
            }
          }
        }
        if (va.empty()) continue;
        OrderedJson e = detail::paired_json(detail::paired_stats(va, vb));
        e["a"] = algo_name(p.algos[0]);
        e["b"] = algo_name(p.algos[b]);
        e["metric"] = metric;
        cmp.push_back(std::move(e));
      }
    }
    j["comparisons"] = std::move(cmp);
  }
  OrderedJson errs = OrderedJson::array();
  for (const auto& e : t.errors) errs.push_back({{"seed", e.seed}, {"group", e.group}, {"message", e.message}});
  j["errors"] = std::move(errs);
  return j;
}

// Writes results.csv, summary.json, errors.csv (if any) and curve files.
inline void write_outputs(const ExperimentConfig& c, const ResultTable& t) {
  namespace fs = std::filesystem;
  const fs::path dir(c.output_dir);
  fs::create_directories(dir);
  write_text_file((dir / "results.csv").string(), results_csv(c, t));
  write_text_file((dir / "summary.json").string(), dump(summary_json(c, t)));
  if (!t.errors.empty()) {
    std::ostringstream os;
    os << "seed,group,message\n";
    for (const auto& e : t.errors) {
      std::string msg = e.message;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      os << e.seed << ',' << e.group << ',' << msg << '\n';
    }
    write_text_file((dir / "errors.csv").string(), os.str());
  }
  const auto curves = curve_csvs(t);
  if (!curves.empty()) {
    fs::create_directories(dir / "curves");
    for (const auto& [name, text] : curves) write_text_file((dir / "curves" / (name + ".csv")).string(), text);
  }
}

// ---------------------------------------------------------------------------
// Comparing two learning-curve files.

// Reads a curve CSV with an `iter` column and the named metric. Rows are
// grouped by every column before `iter` (absent: a single run).
inline std::map<std::string, std::vector<std::pair<int, double>>> read_curves(std::istream& is,
                                                                             const std::string& metric,
                                                                             const std::string& source) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError(source + ": empty file");
  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    for (std::string f; std::getline(hs, f, ',');) header.push_back(f);
  }
  const auto it_col = std::find(header.begin(), header.end(), "iter") - header.begin();
  const auto m_col = std::find(header.begin(), header.end(), metric) - header.begin();
  if (it_col == static_cast<long>(header.size())) throw ConfigError(source + ": no 'iter' column");
  if (m_col == static_cast<long>(header.size())) throw ConfigError(source + ": no '" + metric + "' column");
  std::map<std::string, std::vector<std::pair<int, double>>> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
    if (f.size() != header.size()) throw ConfigError(source + ":" + std::to_string(lineno) + ": wrong column count");
    std::string key;
    for (long i = 0; i < it_col; ++i) key += (i ? "," : "") + f[i];
    try {
      out[key].emplace_back(std::stoi(f[it_col]), std::stod(f[m_col]));
    } catch (const std::exception&) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": not a number");
    }
  }
  return out;
}

struct CompareSummary {
  std::string metric;
  int runs = 0;
  double auc_a_median = 0.0;
  double auc_b_median = 0.0;
  double auc_diff_median = 0.0;  // median over runs of AUC(a) − AUC(b)
  double final_a_median = 0.0;
  double final_b_median = 0.0;
  int a_wins = 0;                // runs with AUC(a) > AUC(b)
  int ties = 0;
  double p_two_sided = 1.0;
};

// AUC is the rectangle sum Σ_iter metric (one unit per logged iteration).
inline CompareSummary compare_curves(const std::map<std::string, std::vector<std::pair<int, double>>>& a,
                                     const std::map<std::string, std::vector<std::pair<int, double>>>& b,
                                     const std::string& metric) {
  if (a.size() != b.size()) throw UsageError("compare: the two logs cover different seeds");
  CompareSummary s;
  s.metric = metric;
  std::vector<double> auc_a, auc_b, diff, fin_a, fin_b;
  for (const auto& [key, ra] : a) {
    const auto itb = b.find(key);
    if (itb == b.end()) throw UsageError("compare: run '" + key + "' missing from the second log");
    const auto& rb = itb->second;
    if (ra.size() != rb.size() || ra.empty()) throw UsageError("compare: iteration grids differ for run '" + key + "'");
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
      if (ra[i].first != rb[i].first) throw UsageError("compare: iteration grids differ for run '" + key + "'");
      sa += ra[i].second;
      sb += rb[i].second;
    }
    auc_a.push_back(sa);
    auc_b.push_back(sb);
    diff.push_back(sa - sb);
    fin_a.push_back(ra.back().second);
    fin_b.push_back(rb.back().second);
  }
  if (diff.empty()) throw UsageError("compare: no runs");
  const detail::PairedStats ps = detail::paired_stats(auc_a, auc_b);
  s.runs = ps.n;
  s.auc_a_median = ps.median_a;
  s.auc_b_median = ps.median_b;
  s.auc_diff_median = median(diff);
  s.final_a_median = median(fin_a);
  s.final_b_median = median(fin_b);
  s.a_wins = ps.a_wins;
  s.ties = ps.ties;
  s.p_two_sided = ps.p_two_sided;
  return s;
}

inline OrderedJson compare_json(const CompareSummary& s) {
  OrderedJson j;
  j["metric"] = s.metric;
  j["runs"] = s.runs;
  j["auc_a_median"] = json_number(s.auc_a_median);
  j["auc_b_median"] = json_number(s.auc_b_median);
  j["auc_diff_median"] = json_number(s.auc_diff_median);
  j["final_a_median"] = json_number(s.final_a_median);
  j["final_b_median"] = json_number(s.final_b_median);
  j["a_wins"] = s.a_wins;
  j["ties"] = s.ties;
  j["sign_test_p_two_sided"] = s.p_two_sided;
  return j;
}

}  // namespace tokenrl
