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

// JSON forms of MDPs, rewards, policies and reward parameters.
//
// MDP config:
//   {"vocab_size": 2, "horizon": 3, "eos_token": null,
//    "prompts": ["x0"], "initial_dist": [1.0],
//    "transition": "deterministic",
//    "reward": {"kind": "table", "values": [...]}
//            | {"kind": "random", "seed": 7, "scale": 1.0}
//            | {"kind": "linear", "dim": 4, "seed": 7, "feature_bound": 1, "param_bound": 1}}
//
// A stochastic tabular MDP replaces "transition" with
//   {"num_states": 3, "num_actions": 2, "kernel": [[[[next, prob], ...], ...], ...],
//    "reward": [[...], ...]}
// and drops the token fields except "horizon" and "initial_dist".

#pragma once

#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "tokenrl/generators.hpp"
#include "tokenrl/policy.hpp"
#include "tokenrl/reward_model.hpp"
#include "tokenrl/token_mdp.hpp"

namespace tokenrl {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

// Throws ConfigError("<path>: unknown field 'k'") for keys outside `allowed`.
inline void reject_unknown(const Json& j, const std::set<std::string>& allowed, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(path + "." + k + ": unknown field");
  }
}

template <class T>
T get_field(const Json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key)) throw ConfigError(path + "." + key + ": missing required field");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

template <class T>
T get_field_or(const Json& j, const std::string& key, T fallback, const std::string& path) {
  return j.contains(key) ? get_field<T>(j, key, path) : fallback;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot write");
  out << text;
}

// Shortest text that round-trips a double.
inline std::string format_double(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

struct LoadedMdp {
  std::optional<TokenMdp> token;
  std::optional<TabularMdp> tabular;
  std::shared_ptr<const FeatureMap> features;  // for "linear" rewards
  Eigen::VectorXd theta_star;
};

inline std::optional<Token> parse_eos(const Json& j, const std::string& path) {
  if (!j.contains("eos_token") || j.at("eos_token").is_null()) return std::nullopt;
  return get_field<int>(j, "eos_token", path);
}

inline LoadedMdp mdp_from_json(const Json& j, const std::string& path = "mdp") {
  LoadedMdp out;
  const Json transition = j.contains("transition") ? j.at("transition") : Json("deterministic");
  if (transition.is_object()) {
    reject_unknown(j, {"horizon", "initial_dist", "transition"}, path);
    const std::string tp = path + ".transition";
    reject_unknown(transition, {"num_states", "num_actions", "kernel", "reward"}, tp);
    const int ns = get_field<int>(transition, "num_states", tp);
    const int na = get_field<int>(transition, "num_actions", tp);
    const auto raw = get_field<std::vector<std::vector<std::vector<std::pair<int, double>>>>>(transition, "kernel", tp);
    std::vector<std::vector<std::vector<Outcome>>> kernel(raw.size());
    for (std::size_t s = 0; s < raw.size(); ++s) {
      for (const auto& outs : raw[s]) {
        std::vector<Outcome> row;
        for (const auto& [next, p] : outs) row.push_back({next, p});
        kernel[s].push_back(std::move(row));
      }
    }
    try {
      out.tabular.emplace(ns, na, get_field<int>(j, "horizon", path),
                          get_field<std::vector<double>>(j, "initial_dist", path), std::move(kernel),
                          get_field<std::vector<std::vector<double>>>(transition, "reward", tp));
    } catch (const UsageError& e) {
      throw ConfigError(tp + ": " + e.what());
    }
    return out;
  }
  if (!transition.is_string() || transition.get<std::string>() != "deterministic") {
    throw ConfigError(path + ".transition: expected \"deterministic\" or a tabular kernel object");
  }
  reject_unknown(j, {"vocab_size", "horizon", "eos_token", "prompts", "initial_dist", "transition", "reward"}, path);
  const int vocab = get_field<int>(j, "vocab_size", path);
  const int horizon = get_field<int>(j, "horizon", path);
  const auto prompts = get_field_or<std::vector<std::string>>(j, "prompts", {"x0"}, path);
  const auto rho = get_field_or<std::vector<double>>(
      j, "initial_dist", std::vector<double>(prompts.size(), 1.0 / static_cast<double>(prompts.size())), path);
  const auto eos = parse_eos(j, path);
  try {
    TokenMdp mdp(vocab, horizon, prompts, rho, eos);
    if (j.contains("reward")) {
      const Json& r = j.at("reward");
      const std::string rp = path + ".reward";
      const std::string kind = get_field<std::string>(r, "kind", rp);
      std::shared_ptr<const RewardTable> table;
      if (kind == "table") {
        reject_unknown(r, {"kind", "values"}, rp);
        auto vals = get_field<std::vector<double>>(r, "values", rp);
        if (static_cast<std::int64_t>(vals.size()) != mdp.space().num_state_actions()) {
          throw ConfigError(rp + ".values: expected " + std::to_string(mdp.space().num_state_actions()) + " entries");
        }
        table = std::make_shared<const RewardTable>(mdp.space(), std::move(vals));
      } else if (kind == "random") {
        reject_unknown(r, {"kind", "seed", "scale"}, rp);
        Rng rng(get_field<std::uint64_t>(r, "seed", rp));
        table = std::make_shared<const RewardTable>(
            random_reward(mdp.space(), rng, get_field_or<double>(r, "scale", 1.0, rp)));
      } else if (kind == "linear") {
        reject_unknown(r, {"kind", "dim", "seed", "feature_bound", "param_bound"}, rp);
        Rng rng(get_field<std::uint64_t>(r, "seed", rp));
        LinearInstance inst = random_linear_instance(mdp.space(), get_field<int>(r, "dim", rp),
                                                     get_field_or<double>(r, "feature_bound", 1.0, rp),
                                                     get_field_or<double>(r, "param_bound", 1.0, rp), rng);
        out.features = inst.features;
        out.theta_star = inst.theta_star;
        table = std::make_shared<const RewardTable>(std::move(inst.reward));
      } else {
        throw ConfigError(rp + ".kind: unknown reward kind '" + kind + "'");
      }
      mdp = mdp.with_reward(table);
    }
    out.token.emplace(std::move(mdp));
  } catch (const UsageError& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const UnsupportedModeError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return out;
}

inline OrderedJson space_json(const TreeSpace& sp) {
  OrderedJson j;
  j["vocab_size"] = sp.vocab_size();
  j["horizon"] = sp.horizon();
  j["num_prompts"] = sp.num_prompts();
  j["eos_token"] = sp.eos() ? OrderedJson(*sp.eos()) : OrderedJson(nullptr);
  return j;
}

inline TreeSpace space_from_json(const Json& j, const std::string& path) {
  try {
    return TreeSpace(get_field<int>(j, "vocab_size", path), get_field<int>(j, "horizon", path),
                     get_field<int>(j, "num_prompts", path), parse_eos(j, path));
  } catch (const UsageError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// Policies are stored as log-probability tables; -inf becomes null.
inline OrderedJson policy_to_json(const AutoregressivePolicy& pi) {
  OrderedJson j = space_json(pi.space());
  j["kind"] = "tabular";
  OrderedJson lp = OrderedJson::array();
  for (double x : pi.log_prob_table()) lp.push_back(x == kNegInf ? OrderedJson(nullptr) : OrderedJson(x));
  j["log_probs"] = std::move(lp);
  return j;
}

inline AutoregressivePolicy policy_from_json(const Json& j, const std::string& path = "policy") {
  reject_unknown(j, {"vocab_size", "horizon", "num_prompts", "eos_token", "kind", "log_probs"}, path);
  const TreeSpace sp = space_from_json(j, path);
  if (!j.contains("log_probs") || !j.at("log_probs").is_array()) throw ConfigError(path + ".log_probs: missing");
  std::vector<double> lp;
  for (const auto& x : j.at("log_probs")) lp.push_back(x.is_null() ? kNegInf : x.get<double>());
  try {
    return AutoregressivePolicy::from_logits(sp, std::move(lp));
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline OrderedJson reward_to_json(const RewardTable& r) {
  OrderedJson j = space_json(r.space());
  j["values"] = std::vector<double>(r.values().begin(), r.values().end());
  return j;
}

inline RewardTable reward_from_json(const Json& j, const std::string& path = "reward") {
  reject_unknown(j, {"vocab_size", "horizon", "num_prompts", "eos_token", "values"}, path);
  try {
    return RewardTable(space_from_json(j, path), get_field<std::vector<double>>(j, "values", path));
  } catch (const UsageError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline OrderedJson vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline OrderedJson matrix_json(const Eigen::MatrixXd& m) {
  OrderedJson rows = OrderedJson::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i).transpose()));
  return rows;
}

// Dumps with a trailing newline; numbers use nlohmann's round-trip format.
inline std::string dump(const OrderedJson& j) { return j.dump(2) + "\n"; }

}  // namespace tokenrl
