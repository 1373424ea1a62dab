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

// Preference labels under the trajectory-level Bradley-Terry model:
// P(τ¹ ≻ τ²) = σ(Σ_h r(s¹_h, a¹_h) − Σ_h r(s²_h, a²_h)).

#pragma once

#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "tokenrl/policy.hpp"
#include "tokenrl/token_mdp.hpp"

namespace tokenrl {

struct PreferencePair {
  int prompt_id = 0;
  std::vector<Token> winner;
  std::vector<Token> loser;
  // Multiplicity of the pair. Sampled datasets use 1; population datasets use
  // the pair's probability so losses become exact expectations.
  double weight = 1.0;

  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

struct DatasetMetadata {
  std::uint64_t seed = 0;
  std::string reward;
  std::string sampler;
};

struct PreferenceDataset {
  std::vector<PreferencePair> pairs;
  DatasetMetadata metadata;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  double total_weight() const {
    double w = 0.0;
    for (const auto& p : pairs) w += p.weight;
    return w;
  }
};

// Merges duplicate (prompt, winner, loser) records by summing weights. Loss
// and gradients are unchanged; large sampled datasets shrink to the number
// of distinct pairs.
inline PreferenceDataset compress_dataset(const PreferenceDataset& ds) {
  std::map<std::tuple<int, std::vector<Token>, std::vector<Token>>, double> merged;
  for (const auto& p : ds.pairs) merged[{p.prompt_id, p.winner, p.loser}] += p.weight;
  PreferenceDataset out;
  out.metadata = ds.metadata;
  out.pairs.reserve(merged.size());
  for (const auto& [key, w] : merged) out.pairs.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), w});
  return out;
}

inline double bt_prob(double r_sum_1, double r_sum_2) {
  if (!std::isfinite(r_sum_1) || !std::isfinite(r_sum_2)) throw UsageError("bt_prob: non-finite reward");
  return sigmoid(r_sum_1 - r_sum_2);
}

inline constexpr int kMaxTieResamples = 100;

// Draws n labelled pairs: prompt ~ ρ, two independent responses from the
// sampler, winner chosen with the Bradley-Terry probability of the token
// reward sums. Identical responses are redrawn.
inline PreferenceDataset sample_dataset(const TokenMdp& mdp, const RewardTable& r, const AutoregressivePolicy& sampler,
                                        std::int64_t n, Rng& rng) {
  if (n < 1) throw UsageError("sample_dataset: n must be >= 1");
  if (!sampler.space().same_shape(mdp.space())) throw ConfigError("sampler does not match the MDP");
  PreferenceDataset ds;
  ds.pairs.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const int prompt = sample_prompt(mdp, rng);
    Trajectory t1 = sample_trajectory(mdp, sampler, prompt, rng);
    Trajectory t2 = sample_trajectory(mdp, sampler, prompt, rng);
    int attempts = 0;
    while (t1.tokens == t2.tokens) {
      if (++attempts > kMaxTieResamples) {
        throw ConfigError("sampler keeps producing identical responses for prompt " + std::to_string(prompt));
      }
      t2 = sample_trajectory(mdp, sampler, prompt, rng);
    }
    const double p1 = bt_prob(trajectory_return(r, prompt, t1.tokens), trajectory_return(r, prompt, t2.tokens));
    PreferencePair pair;
    pair.prompt_id = prompt;
    if (uniform01(rng) < p1) {
      pair.winner = std::move(t1.tokens);
      pair.loser = std::move(t2.tokens);
    } else {
      pair.winner = std::move(t2.tokens);
      pair.loser = std::move(t1.tokens);
    }
    ds.pairs.push_back(std::move(pair));
  }
  ds.metadata.sampler = "policy";
  ds.metadata.reward = "token_table";
  return ds;
}

// The population version of sample_dataset: every ordered (winner, loser)
// pair of distinct responses weighted by ρ(x) · P(draw the pair in either
// order) · P(label).
inline PreferenceDataset population_dataset(const TokenMdp& mdp, const RewardTable& r,
                                            const AutoregressivePolicy& sampler) {
  PreferenceDataset ds;
  for (int p = 0; p < mdp.num_prompts(); ++p) {
    const double rho = mdp.initial_dist()[p];
    if (rho == 0.0) continue;
    std::vector<std::vector<Token>> ys;
    std::vector<double> q, ret;
    for_each_response(mdp, p, [&](std::span<const Token> toks) {
      ys.emplace_back(toks.begin(), toks.end());
      q.push_back(std::exp(sampler.sequence_log_prob(p, toks)));
      ret.push_back(trajectory_return(r, p, toks));
    });
    double no_tie = 1.0;
    for (double qi : q) no_tie -= qi * qi;
    if (no_tie <= 0.0) throw ConfigError("sampler has a single response; no informative pairs");
    for (std::size_t i = 0; i < ys.size(); ++i) {
      for (std::size_t j = 0; j < ys.size(); ++j) {
        if (i == j) continue;
        const double w = 2.0 * rho * q[i] * q[j] / no_tie * bt_prob(ret[i], ret[j]);
        if (w == 0.0) continue;
        ds.pairs.push_back({p, ys[i], ys[j], w});
      }
    }
  }
  ds.metadata.sampler = "population";
  return ds;
}

// Line-delimited records {"prompt", "winner_tokens", "loser_tokens"}.
inline void write_dataset_jsonl(std::ostream& os, const PreferenceDataset& ds) {
  for (const auto& p : ds.pairs) {
    nlohmann::ordered_json j;
    j["prompt"] = p.prompt_id;
    j["winner_tokens"] = p.winner;
    j["loser_tokens"] = p.loser;
    os << j.dump() << '\n';
  }
}

inline PreferenceDataset read_dataset_jsonl(std::istream& is) {
  PreferenceDataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      for (const auto& [k, v] : j.items()) {
        if (k != "prompt" && k != "winner_tokens" && k != "loser_tokens") {
          throw ConfigError("unknown field '" + k + "'");
        }
      }
      PreferencePair p;
      p.prompt_id = j.at("prompt").get<int>();
      p.winner = j.at("winner_tokens").get<std::vector<Token>>();
      p.loser = j.at("loser_tokens").get<std::vector<Token>>();
      ds.pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("dataset line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return ds;
}

inline void validate_dataset(const TokenMdp& mdp, const PreferenceDataset& ds) {
  for (const auto& p : ds.pairs) {
    check_response(mdp, p.prompt_id, p.winner);
    check_response(mdp, p.prompt_id, p.loser);
  }
}

}  // namespace tokenrl
