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

// Token-level generation MDPs.
//
// A state is a prompt plus the tokens generated so far; an action appends one
// token. Every prefix of length < H is a decision state and gets a dense index
// so policies, rewards and value tables are flat vectors:
//
//   index(prompt, depth, code) = prompt * P + offset[depth] + code
//
// where `code` is the token prefix read as a base-A number, offset[h] counts
// the prefixes shorter than h and P = offset[H]. A state whose last token is
// the end-of-sentence token is absorbing: no further reward, no further steps.

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tokenrl/core.hpp"

namespace tokenrl {

inline constexpr std::int64_t kDefaultExactCap = std::int64_t{1} << 20;

// A prefix-tree node. depth == number of generated tokens.
struct Node {
  int prompt = 0;
  int depth = 0;
  std::int64_t code = 0;

  friend bool operator==(const Node&, const Node&) = default;
};

// Shape of the prefix tree shared by an MDP and every table defined over it.
class TreeSpace {
 public:
  TreeSpace() = default;
  TreeSpace(int vocab_size, int horizon, int num_prompts, std::optional<Token> eos,
            std::int64_t cap = kDefaultExactCap)
      : vocab_(vocab_size), horizon_(horizon), prompts_(num_prompts), eos_(eos) {
    if (vocab_size < 1) throw UsageError("vocab_size must be positive");
    if (horizon < 1) throw UsageError("horizon must be positive");
    if (num_prompts < 1) throw UsageError("at least one prompt is required");
    if (eos && (*eos < 0 || *eos >= vocab_size)) throw UsageError("eos_token out of range");
    if (checked_pow(vocab_size, horizon, cap) > cap) {
      throw UnsupportedModeError("A^H = " + std::to_string(vocab_size) + "^" + std::to_string(horizon) +
                                 " exceeds the exact-mode cap " + std::to_string(cap));
    }
    pow_.resize(horizon + 1);
    offset_.resize(horizon + 2);
    pow_[0] = 1;
    for (int h = 1; h <= horizon; ++h) pow_[h] = pow_[h - 1] * vocab_size;
    offset_[0] = 0;
    for (int h = 0; h <= horizon; ++h) offset_[h + 1] = offset_[h] + pow_[h];
  }

  int vocab_size() const { return vocab_; }
  int horizon() const { return horizon_; }
  int num_prompts() const { return prompts_; }
  std::optional<Token> eos() const { return eos_; }

  std::int64_t nodes_at_depth(int h) const { return pow_.at(h); }
  std::int64_t decision_states_per_prompt() const { return offset_[horizon_]; }
  std::int64_t num_decision_states() const { return prompts_ * decision_states_per_prompt(); }
  std::int64_t num_state_actions() const { return num_decision_states() * vocab_; }
  // Number of complete sequences of length H per prompt (A^H).
  std::int64_t num_leaves() const { return pow_[horizon_]; }

  std::int64_t index(const Node& n) const {
    return static_cast<std::int64_t>(n.prompt) * decision_states_per_prompt() + offset_[n.depth] + n.code;
  }
  std::int64_t sa_index(const Node& n, Token a) const { return index(n) * vocab_ + a; }

  Node node_at(std::int64_t index) const {
    Node n;
    n.prompt = static_cast<int>(index / decision_states_per_prompt());
    std::int64_t rem = index % decision_states_per_prompt();
    int d = 0;
    while (d + 1 <= horizon_ - 1 && offset_[d + 1] <= rem) ++d;
    n.depth = d;
    n.code = rem - offset_[d];
    return n;
  }

  Node root(int prompt) const { return Node{prompt, 0, 0}; }
  Node child(const Node& n, Token a) const { return Node{n.prompt, n.depth + 1, n.code * vocab_ + a}; }
  Node parent(const Node& n) const { return Node{n.prompt, n.depth - 1, n.code / vocab_}; }
  Token last_token(const Node& n) const { return static_cast<Token>(n.code % vocab_); }

  bool is_absorbing(const Node& n) const { return eos_ && n.depth > 0 && last_token(n) == *eos_; }
  bool is_terminal(const Node& n) const { return n.depth >= horizon_ || is_absorbing(n); }

  std::vector<Token> tokens(const Node& n) const {
    std::vector<Token> out(n.depth);
    std::int64_t c = n.code;
    for (int i = n.depth - 1; i >= 0; --i) {
      out[i] = static_cast<Token>(c % vocab_);
      c /= vocab_;
    }
    return out;
  }

  Node node_of(int prompt, std::span<const Token> toks) const {
    if (static_cast<int>(toks.size()) > horizon_) throw UsageError("token sequence longer than horizon");
    Node n = root(prompt);
    for (Token t : toks) {
      if (t < 0 || t >= vocab_) throw UsageError("token index out of range");
      n = child(n, t);
    }
    return n;
  }

  bool same_shape(const TreeSpace& o) const {
    return vocab_ == o.vocab_ && horizon_ == o.horizon_ && prompts_ == o.prompts_ && eos_ == o.eos_;
  }

 private:
  int vocab_ = 0;
  int horizon_ = 0;
  int prompts_ = 0;
  std::optional<Token> eos_;
  std::vector<std::int64_t> pow_;
  std::vector<std::int64_t> offset_;
};

// Token-wise reward r(s, a) tabulated over every decision state.
class RewardTable {
 public:
  RewardTable() = default;
  explicit RewardTable(TreeSpace space) : space_(std::move(space)), values_(space_.num_state_actions(), 0.0) {}
  RewardTable(TreeSpace space, std::vector<double> values) : space_(std::move(space)), values_(std::move(values)) {
    if (static_cast<std::int64_t>(values_.size()) != space_.num_state_actions()) {
      throw UsageError("reward table size does not match the tree");
    }
  }

  const TreeSpace& space() const { return space_; }
  double operator()(const Node& s, Token a) const { return values_[space_.sa_index(s, a)]; }
  double& at(const Node& s, Token a) { return values_[space_.sa_index(s, a)]; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& mutable_values() { return values_; }

 private:
  TreeSpace space_;
  std::vector<double> values_;
};

struct State {
  int prompt_id = 0;
  std::vector<Token> tokens;

  friend bool operator==(const State&, const State&) = default;
};

struct Trajectory {
  int prompt_id = 0;
  std::vector<Token> tokens;
  std::vector<double> per_step_rewards;  // filled by oracles; may be empty
};

// Finite-horizon deterministic token MDP (exact mode: A^H is capped so every
// table over the prefix tree fits in memory).
class TokenMdp {
 public:
  TokenMdp(int vocab_size, int horizon, std::vector<std::string> prompts, std::vector<double> initial_dist,
           std::optional<Token> eos, std::shared_ptr<const RewardTable> reward = nullptr,
           std::int64_t cap = kDefaultExactCap)
      : space_(vocab_size, horizon, static_cast<int>(prompts.size()), eos, cap),
        prompts_(std::move(prompts)),
        rho_(std::move(initial_dist)),
        reward_(std::move(reward)) {
    if (rho_.size() != prompts_.size()) throw UsageError("initial_dist must have one entry per prompt");
    double total = 0.0;
    for (double p : rho_) {
      if (!(p >= 0.0)) throw UsageError("initial_dist entries must be non-negative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) throw UsageError("initial_dist must sum to 1");
    if (reward_ && !reward_->space().same_shape(space_)) throw UsageError("reward table does not match the MDP");
    live_.assign(space_.num_decision_states(), 0);
    for (int p = 0; p < space_.num_prompts(); ++p) {
      live_[space_.index(space_.root(p))] = 1;
      for (int h = 0; h + 1 < horizon; ++h) {
        for (std::int64_t c = 0; c < space_.nodes_at_depth(h); ++c) {
          const Node n{p, h, c};
          if (!live_[space_.index(n)]) continue;
          for (Token a = 0; a < vocab_size; ++a) {
            if (eos && a == *eos) continue;
            live_[space_.index(space_.child(n, a))] = 1;
          }
        }
      }
    }
  }

  const TreeSpace& space() const { return space_; }
  int vocab_size() const { return space_.vocab_size(); }
  int horizon() const { return space_.horizon(); }
  int num_prompts() const { return space_.num_prompts(); }
  std::optional<Token> eos_token() const { return space_.eos(); }
  const std::vector<std::string>& prompts() const { return prompts_; }
  const std::vector<double>& initial_dist() const { return rho_; }
  const RewardTable* reward() const { return reward_.get(); }
  std::shared_ptr<const RewardTable> reward_ptr() const { return reward_; }

  TokenMdp with_reward(std::shared_ptr<const RewardTable> r) const {
    TokenMdp copy = *this;
    if (r && !r->space().same_shape(space_)) throw UsageError("reward table does not match the MDP");
    copy.reward_ = std::move(r);
    return copy;
  }

  // True when the node is reachable without passing through an EoS token,
  // i.e. it is a real decision state.
  bool is_live(const Node& n) const { return n.depth < horizon() && live_[space_.index(n)] != 0; }

  // Calls f(node) for every live decision state at depth h of every prompt.
  template <class F>
  void for_each_live_at_depth(int h, F&& f) const {
    for (int p = 0; p < num_prompts(); ++p) {
      for (std::int64_t c = 0; c < space_.nodes_at_depth(h); ++c) {
        const Node n{p, h, c};
        if (live_[space_.index(n)]) f(n);
      }
    }
  }

  template <class F>
  void for_each_live(F&& f) const {
    for (int h = 0; h < horizon(); ++h) for_each_live_at_depth(h, f);
  }

 private:
  TreeSpace space_;
  std::vector<std::string> prompts_;
  std::vector<double> rho_;
  std::shared_ptr<const RewardTable> reward_;
  std::vector<std::uint8_t> live_;
};

inline Node to_node(const TokenMdp& mdp, const State& s) {
  if (s.prompt_id < 0 || s.prompt_id >= mdp.num_prompts()) throw UsageError("prompt id out of range");
  return mdp.space().node_of(s.prompt_id, s.tokens);
}

inline bool is_terminal(const TokenMdp& mdp, const State& s) { return mdp.space().is_terminal(to_node(mdp, s)); }

// One environment step. Absorbing (EoS-terminated) states return themselves
// with zero reward; stepping a length-H state is a usage error.
inline std::pair<State, double> step(const TokenMdp& mdp, const State& s, Token a, const RewardTable& r) {
  if (a < 0 || a >= mdp.vocab_size()) throw UsageError("action index out of range");
  const Node n = to_node(mdp, s);
  if (mdp.space().is_absorbing(n)) return {s, 0.0};
  if (n.depth >= mdp.horizon()) throw UsageError("step from a terminal state");
  State next = s;
  next.tokens.push_back(a);
  return {std::move(next), r(n, a)};
}

inline std::pair<State, double> step(const TokenMdp& mdp, const State& s, Token a) {
  if (!mdp.reward()) throw UsageError("MDP has no reward attached");
  return step(mdp, s, a, *mdp.reward());
}

// Visits every complete response of a prompt exactly once: sequences of
// length H without EoS, plus every sequence cut at its first EoS.
template <class F>
void for_each_response(const TokenMdp& mdp, int prompt, F&& f) {
  const TreeSpace& sp = mdp.space();
  std::vector<Token> toks;
  toks.reserve(mdp.horizon());
  std::function<void(const Node&)> rec = [&](const Node& n) {
    if (sp.is_terminal(n)) {
      f(std::span<const Token>(toks));
      return;
    }
    for (Token a = 0; a < mdp.vocab_size(); ++a) {
      toks.push_back(a);
      rec(sp.child(n, a));
      toks.pop_back();
    }
  };
  rec(sp.root(prompt));
}

inline std::vector<Trajectory> enumerate_trajectories(const TokenMdp& mdp, int prompt,
                                                      const RewardTable* r = nullptr) {
  if (prompt < 0 || prompt >= mdp.num_prompts()) throw UsageError("prompt id out of range");
  std::vector<Trajectory> out;
  for_each_response(mdp, prompt, [&](std::span<const Token> toks) {
    Trajectory t;
    t.prompt_id = prompt;
    t.tokens.assign(toks.begin(), toks.end());
    if (r) {
      Node n = mdp.space().root(prompt);
      for (Token a : toks) {
        t.per_step_rewards.push_back((*r)(n, a));
        n = mdp.space().child(n, a);
      }
    }
    out.push_back(std::move(t));
  });
  return out;
}

// Validates a response: tokens in range, length <= H, nothing after EoS.
inline void check_response(const TokenMdp& mdp, int prompt, std::span<const Token> toks) {
  if (prompt < 0 || prompt >= mdp.num_prompts()) throw UsageError("prompt id out of range");
  if (static_cast<int>(toks.size()) > mdp.horizon()) throw UsageError("response longer than horizon");
  const auto eos = mdp.eos_token();
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (toks[i] < 0 || toks[i] >= mdp.vocab_size()) throw UsageError("token index out of range");
    if (eos && toks[i] == *eos && i + 1 != toks.size()) throw UsageError("tokens after EoS");
  }
  const bool ended = eos && !toks.empty() && toks.back() == *eos;
  if (!ended && static_cast<int>(toks.size()) != mdp.horizon()) {
    throw UsageError("response shorter than H must end with EoS");
  }
}

// Calls f(node, token, step) for each step of a response.
template <class F>
void for_each_step(const TreeSpace& sp, int prompt, std::span<const Token> toks, F&& f) {
  Node n = sp.root(prompt);
  for (std::size_t h = 0; h < toks.size(); ++h) {
    f(n, toks[h], static_cast<int>(h));
    n = sp.child(n, toks[h]);
  }
}

inline double trajectory_return(const RewardTable& r, int prompt, std::span<const Token> toks) {
  double s = 0.0;
  for_each_step(r.space(), prompt, toks, [&](const Node& n, Token a, int) { s += r(n, a); });
  return s;
}

// Per-step rewards padded to length H; absorbing steps contribute 0.
inline std::vector<double> padded_rewards(const TokenMdp& mdp, const RewardTable& r, const Trajectory& t) {
  std::vector<double> out(mdp.horizon(), 0.0);
  for_each_step(mdp.space(), t.prompt_id, t.tokens, [&](const Node& n, Token a, int h) { out[h] = r(n, a); });
  return out;
}

// ---------------------------------------------------------------------------
// Stochastic tabular MDPs over an explicit state list. Used where the
// deterministic concatenation kernel is not enough (Markov vs predetermined
// policies). Values are time-indexed because the horizon is finite.

struct Outcome {
  int next_state = 0;
  double prob = 0.0;
};

class TabularMdp {
 public:
  // kernel[s][a] lists successor outcomes; reward[s][a] is r(s, a).
  TabularMdp(int num_states, int num_actions, int horizon, std::vector<double> initial_dist,
             std::vector<std::vector<std::vector<Outcome>>> kernel, std::vector<std::vector<double>> reward)
      : states_(num_states),
        actions_(num_actions),
        horizon_(horizon),
        rho_(std::move(initial_dist)),
        kernel_(std::move(kernel)),
        reward_(std::move(reward)) {
    if (num_states < 1 || num_actions < 1 || horizon < 1) throw UsageError("TabularMdp: sizes must be positive");
    if (static_cast<int>(rho_.size()) != states_) throw UsageError("TabularMdp: initial_dist size");
    double total = 0.0;
    for (double p : rho_) {
      if (p < 0) throw UsageError("TabularMdp: negative initial probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) throw UsageError("TabularMdp: initial_dist must sum to 1");
    if (static_cast<int>(kernel_.size()) != states_ || static_cast<int>(reward_.size()) != states_) {
      throw UsageError("TabularMdp: kernel/reward must list every state");
    }
    for (int s = 0; s < states_; ++s) {
      if (static_cast<int>(kernel_[s].size()) != actions_ || static_cast<int>(reward_[s].size()) != actions_) {
        throw UsageError("TabularMdp: kernel/reward must list every action");
      }
      for (const auto& outs : kernel_[s]) {
        double m = 0.0;
        for (const auto& o : outs) {
          if (o.next_state < 0 || o.next_state >= states_ || o.prob < 0) throw UsageError("TabularMdp: bad outcome");
          m += o.prob;
        }
        if (std::abs(m - 1.0) > 1e-12) throw UsageError("TabularMdp: transition row must sum to 1");
      }
    }
  }

  int num_states() const { return states_; }
  int num_actions() const { return actions_; }
  int horizon() const { return horizon_; }
  const std::vector<double>& initial_dist() const { return rho_; }
  const std::vector<Outcome>& transitions(int s, int a) const { return kernel_.at(s).at(a); }
  double reward(int s, int a) const { return reward_.at(s).at(a); }

  std::pair<int, double> step(int s, int a, Rng& rng) const {
    if (s < 0 || s >= states_) throw UsageError("state out of range");
    if (a < 0 || a >= actions_) throw UsageError("action index out of range");
    const auto& outs = kernel_[s][a];
    std::vector<double> probs;
    probs.reserve(outs.size());
    for (const auto& o : outs) probs.push_back(o.prob);
    return {outs[sample_categorical(probs, rng)].next_state, reward_[s][a]};
  }

 private:
  int states_;
  int actions_;
  int horizon_;
  std::vector<double> rho_;
  std::vector<std::vector<std::vector<Outcome>>> kernel_;
  std::vector<std::vector<double>> reward_;
};

// Optimal value of a time-dependent Markov policy (hard max, β = 0).
inline double markov_optimal_value(const TabularMdp& m) {
  std::vector<double> next(m.num_states(), 0.0), cur(m.num_states(), 0.0);
  for (int h = m.horizon() - 1; h >= 0; --h) {
    for (int s = 0; s < m.num_states(); ++s) {
      double best = kNegInf;
      for (int a = 0; a < m.num_actions(); ++a) {
        double q = m.reward(s, a);
        for (const auto& o : m.transitions(s, a)) q += o.prob * next[o.next_state];
        best = std::max(best, q);
      }
      cur[s] = best;
    }
    std::swap(cur, next);
  }
  double v = 0.0;
  for (int s = 0; s < m.num_states(); ++s) v += m.initial_dist()[s] * next[s];
  return v;
}

// Value of an open-loop action sequence chosen from the initial state only.
inline double open_loop_value(const TabularMdp& m, std::span<const int> actions) {
  if (static_cast<int>(actions.size()) != m.horizon()) throw UsageError("open-loop plan must have length H");
  std::vector<double> dist = m.initial_dist();
  double v = 0.0;
  for (int h = 0; h < m.horizon(); ++h) {
    std::vector<double> nd(m.num_states(), 0.0);
    for (int s = 0; s < m.num_states(); ++s) {
      if (dist[s] == 0.0) continue;
      v += dist[s] * m.reward(s, actions[h]);
      for (const auto& o : m.transitions(s, actions[h])) nd[o.next_state] += dist[s] * o.prob;
    }
    dist = std::move(nd);
  }
  return v;
}

// Best predetermined policy: maximum over all A^H open-loop plans. A
// predetermined policy conditioned on the initial state is the per-state max,
// averaged over ρ.
inline double best_predetermined_value(const TabularMdp& m) {
  if (checked_pow(m.num_actions(), m.horizon(), kDefaultExactCap) > kDefaultExactCap) {
    throw UnsupportedModeError("too many open-loop plans to enumerate");
  }
  double total = 0.0;
  for (int s0 = 0; s0 < m.num_states(); ++s0) {
    const double p0 = m.initial_dist()[s0];
    if (p0 == 0.0) continue;
    std::vector<double> rho0(m.num_states(), 0.0);
    rho0[s0] = 1.0;
    std::vector<std::vector<std::vector<Outcome>>> kernel(m.num_states(),
                                                          std::vector<std::vector<Outcome>>(m.num_actions()));
    std::vector<std::vector<double>> reward(m.num_states(), std::vector<double>(m.num_actions()));
    for (int s = 0; s < m.num_states(); ++s) {
      for (int a = 0; a < m.num_actions(); ++a) {
        kernel[s][a] = m.transitions(s, a);
        reward[s][a] = m.reward(s, a);
      }
    }
    const TabularMdp fixed(m.num_states(), m.num_actions(), m.horizon(), rho0, kernel, reward);
    std::vector<int> plan(m.horizon(), 0);
    double best = kNegInf;
    while (true) {
      best = std::max(best, open_loop_value(fixed, plan));
      int i = m.horizon() - 1;
      while (i >= 0 && plan[i] == m.num_actions() - 1) plan[i--] = 0;
      if (i < 0) break;
      ++plan[i];
    }
    total += p0 * best;
  }
  return total;
}

// The three-state example separating Markov from predetermined policies:
// from s0 either action lands in s1 or s2 with probability 1/2, and
// r(s_i, a_j) = 1{i = j}.
inline TabularMdp markov_separation_mdp() {
  std::vector<std::vector<std::vector<Outcome>>> kernel(3, std::vector<std::vector<Outcome>>(2));
  for (int a = 0; a < 2; ++a) {
    kernel[0][a] = {{1, 0.5}, {2, 0.5}};
    kernel[1][a] = {{1, 1.0}};
    kernel[2][a] = {{2, 1.0}};
  }
  // actions a1, a2 are indices 0, 1; state s_i matches action index i-1
  std::vector<std::vector<double>> reward = {{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}};
  return TabularMdp(3, 2, 2, {1.0, 0.0, 0.0}, kernel, reward);
}

}  // namespace tokenrl
