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

// Finding the most likely response of a fixed autoregressive π* from reward
// queries. With τ = A^{−ξ}:
//
//   sentence reward  r_s(x, y) = log π*(y | x)
//   token reward     r_t((x, y_{1:h−1}), y_h) = log π*(y_h | x, y_{1:h−1})
//   N   = {y_{1:h} : π*(y_{1:h}) < τ ≤ π*(y_{1:h−1})}
//   N*  = {y_{1:H} : π*(y_{1:H}) ≥ τ}
//
// Every root-to-leaf path meets N ∪ N* exactly once. The token explorer
// queries paths that avoid the members found so far; each query reveals the
// prefix masses along its path and so exposes one new member.

#pragma once

#include <optional>
#include <set>
#include <sstream>
#include <utility>
#include <vector>

#include "tokenrl/policy.hpp"

namespace tokenrl {

struct TreeNode {
  int depth = 0;
  std::int64_t code = 0;  // tokens read as a base-A number

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
  friend auto operator<=>(const TreeNode&, const TreeNode&) = default;
};

// Prefix masses π*(y_{1:h} | x) for h = 0..H.
class PrefixTree {
 public:
  // cond[h][code * A + a] = π*(a | prefix `code` at depth h).
  PrefixTree(int vocab, int horizon, double xi, const std::vector<std::vector<double>>& cond)
      : vocab_(vocab), horizon_(horizon), xi_(xi) {
    if (vocab < 2) throw UsageError("tree needs at least two tokens");
    if (horizon < 1) throw UsageError("tree depth must be >= 1");
    if (!(xi > 0)) throw UsageError("xi must be positive");
    if (checked_pow(vocab, horizon, kDefaultExactCap) > kDefaultExactCap) {
      throw UnsupportedModeError("tree too large for exact exploration");
    }
    if (static_cast<int>(cond.size()) != horizon) throw UsageError("need conditionals for every depth");
    mass_.resize(horizon + 1);
    mass_[0] = {1.0};
    for (int h = 0; h < horizon; ++h) {
      const std::int64_t n = static_cast<std::int64_t>(mass_[h].size());
      if (static_cast<std::int64_t>(cond[h].size()) != n * vocab) throw UsageError("conditional table size mismatch");
      mass_[h + 1].resize(n * vocab);
      for (std::int64_t c = 0; c < n; ++c) {
        double total = 0.0;
        for (int a = 0; a < vocab; ++a) {
          const double p = cond[h][c * vocab + a];
          if (!(p >= 0.0)) throw UsageError("conditional probabilities must be non-negative");
          total += p;
          mass_[h + 1][c * vocab + a] = mass_[h][c] * p;
        }
        if (std::abs(total - 1.0) > 1e-12) throw UsageError("conditionals must sum to 1");
      }
    }
  }

  // masses[h][code] = π*(y_{1:h}); children must sum to their parent.
  static PrefixTree from_masses(int vocab, int horizon, double xi, std::vector<std::vector<double>> masses) {
    std::vector<std::vector<double>> cond(horizon);
    for (int h = 0; h < horizon; ++h) {
      if (h + 1 >= static_cast<int>(masses.size())) throw UsageError("need masses for every depth");
      cond[h].resize(masses[h + 1].size());
      for (std::size_t i = 0; i < cond[h].size(); ++i) {
        const double parent = masses[h].at(i / vocab);
        cond[h][i] = parent > 0 ? masses[h + 1][i] / parent : 1.0 / vocab;
      }
    }
    PrefixTree t(vocab, horizon, xi, cond);
    for (int h = 1; h <= horizon; ++h) {
      for (std::size_t c = 0; c < masses[h].size(); ++c) {
        if (std::abs(masses[h][c] - t.mass_[h][c]) > 1e-12) throw UsageError("children masses must sum to the parent");
      }
    }
    t.mass_ = std::move(masses);
    return t;
  }

  int vocab_size() const { return vocab_; }
  int horizon() const { return horizon_; }
  double xi() const { return xi_; }
  double threshold() const { return std::pow(static_cast<double>(vocab_), -xi_); }

  double mass(const TreeNode& n) const { return mass_.at(n.depth).at(n.code); }
  double mass(int depth, std::int64_t code) const { return mass_.at(depth).at(code); }
  std::int64_t num_leaves() const { return static_cast<std::int64_t>(mass_[horizon_].size()); }

  // π*(y_h | prefix) for the token ending at `n`; 0 when the parent has no mass.
  double conditional(const TreeNode& n) const {
    const double parent = mass(n.depth - 1, n.code / vocab_);
    return parent > 0.0 ? mass(n) / parent : 0.0;
  }
  double token_reward(const TreeNode& n) const { return std::log(conditional(n)); }
  double sentence_reward(std::int64_t leaf) const { return std::log(mass(horizon_, leaf)); }

  TreeNode ancestor(std::int64_t leaf, int depth) const {
    std::int64_t c = leaf;
    for (int h = horizon_; h > depth; --h) c /= vocab_;
    return {depth, c};
  }

  std::vector<Token> tokens(const TreeNode& n) const {
    std::vector<Token> out(n.depth);
    std::int64_t c = n.code;
    for (int i = n.depth - 1; i >= 0; --i) {
      out[i] = static_cast<Token>(c % vocab_);
      c /= vocab_;
    }
    return out;
  }

  double max_leaf_mass() const { return *std::max_element(mass_[horizon_].begin(), mass_[horizon_].end()); }

  // Leaf of largest mass; ties go to the lexicographically smallest.
  std::int64_t argmax_leaf() const {
    const auto& leaves = mass_[horizon_];
    return std::max_element(leaves.begin(), leaves.end()) - leaves.begin();
  }

 private:
  int vocab_;
  int horizon_;
  double xi_;
  std::vector<std::vector<double>> mass_;
};

inline void check_assumption(const PrefixTree& t) {
  if (t.max_leaf_mass() < t.threshold()) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "no response reaches mass A^-xi = " << t.threshold() << " (max leaf mass " << t.max_leaf_mass() << ")";
    throw ConfigError(msg.str());
  }
}

// Prefix tree of a policy's conditionals for one prompt. Requires a
// policy without EoS so every response has length H.
inline PrefixTree build_tree(const AutoregressivePolicy& pi, int prompt, double xi) {
  const TreeSpace& sp = pi.space();
  if (sp.eos()) throw UnsupportedModeError("prefix trees need fixed-length responses (no EoS)");
  if (prompt < 0 || prompt >= sp.num_prompts()) throw UsageError("prompt id out of range");
  std::vector<std::vector<double>> cond(sp.horizon());
  for (int h = 0; h < sp.horizon(); ++h) {
    cond[h].resize(sp.nodes_at_depth(h) * sp.vocab_size());
    for (std::int64_t c = 0; c < sp.nodes_at_depth(h); ++c) {
      const auto probs = pi.probs(Node{prompt, h, c});
      std::copy(probs.begin(), probs.end(), cond[h].begin() + c * sp.vocab_size());
    }
  }
  PrefixTree t(sp.vocab_size(), sp.horizon(), xi, cond);
  check_assumption(t);
  return t;
}

struct NodeSets {
  std::vector<TreeNode> light;  // N
  std::vector<TreeNode> heavy;  // N*

  std::size_t size() const { return light.size() + heavy.size(); }
};

// The member of N ∪ N* on the path to `leaf`.
inline TreeNode path_member(const PrefixTree& t, std::int64_t leaf) {
  const double tau = t.threshold();
  for (int h = 1; h <= t.horizon(); ++h) {
    const TreeNode n = t.ancestor(leaf, h);
    if (t.mass(n) < tau) return n;
  }
  return {t.horizon(), leaf};
}

// Full traversal in lexicographic order.
inline NodeSets node_sets(const PrefixTree& t) {
  NodeSets s;
  const double tau = t.threshold();
  for (int h = 1; h <= t.horizon(); ++h) {
    const std::int64_t n = checked_pow(t.vocab_size(), h, kDefaultExactCap);
    for (std::int64_t c = 0; c < n; ++c) {
      const TreeNode node{h, c};
      if (t.mass(node) < tau && t.mass(h - 1, c / t.vocab_size()) >= tau) s.light.push_back(node);
      if (h == t.horizon() && t.mass(node) >= tau) s.heavy.push_back(node);
    }
  }
  return s;
}

struct ExploreResult {
  std::int64_t leaf = -1;
  std::int64_t queries = 0;
};

// Token-reward explorer: the next query is the lexicographically smallest
// path that avoids every identified member; it stops when no such path is
// left and returns the heaviest leaf of N*.
inline ExploreResult explore_token(const PrefixTree& t) {
  check_assumption(t);
  const int A = t.vocab_size();
  const int H = t.horizon();
  std::set<TreeNode> identified;
  ExploreResult res;
  double best = -1.0;

  // Smallest admissible leaf below `n`, if any.
  auto find_path = [&](auto&& self, const TreeNode& n) -> std::optional<std::int64_t> {
    if (identified.count(n)) return std::nullopt;
    if (n.depth == H) return n.code;
    for (int a = 0; a < A; ++a) {
      if (auto leaf = self(self, TreeNode{n.depth + 1, n.code * A + a})) return leaf;
    }
    return std::nullopt;
  };

  while (auto leaf = find_path(find_path, TreeNode{0, 0})) {
    ++res.queries;
    // The query reveals r_t along the path, hence every prefix mass on it.
    const TreeNode member = path_member(t, *leaf);
    identified.insert(member);
    if (member.depth == H) {
      const double m = t.mass(member);
      if (m > best) {
        best = m;
        res.leaf = member.code;
      }
    }
  }
  return res;
}

// Sentence-reward baseline: every response is queried once.
inline ExploreResult explore_sentence(const PrefixTree& t) {
  ExploreResult res;
  double best = kNegInf;
  for (std::int64_t leaf = 0; leaf < t.num_leaves(); ++leaf) {
    ++res.queries;
    const double r = t.sentence_reward(leaf);
    if (r > best) {
      best = r;
      res.leaf = leaf;
    }
  }
  return res;
}

// Smallest ξ for which the assumption holds: −log_A max π*(y | x).
inline double minimal_xi(const PrefixTree& t) {
  return -std::log(t.max_leaf_mass()) / std::log(static_cast<double>(t.vocab_size()));
}

// The A = 2, H = 3, ξ = 1 example tree. Token 0 is the left child. Masses
// not pinned by the example are equal splits of their parent.
inline PrefixTree example_tree() {
  std::vector<std::vector<double>> m(4);
  m[0] = {1.0};
  m[1] = {1.0 / 8, 7.0 / 8};
  m[2] = {1.0 / 16, 1.0 / 16, 3.0 / 4, 1.0 / 8};
  m[3] = {1.0 / 32, 1.0 / 32, 1.0 / 32, 1.0 / 32, 1.0 / 2, 1.0 / 4, 1.0 / 16, 1.0 / 16};
  return PrefixTree::from_masses(2, 3, 1.0, std::move(m));
}

// Random conditionals with one planted path whose leaf mass is drawn
// uniformly from [A^{−ξ}, 1]. Off-path rows are normalized Exp(1) draws.
inline PrefixTree random_planted_tree(int vocab, int horizon, double xi, Rng& rng) {
  if (vocab < 2 || horizon < 1 || !(xi > 0)) throw UsageError("random tree: bad parameters");
  const double tau = std::pow(static_cast<double>(vocab), -xi);
  std::uniform_int_distribution<int> tok(0, vocab - 1);
  std::exponential_distribution<double> expo(1.0);
  std::vector<Token> path(horizon);
  for (auto& y : path) y = tok(rng);
  const double leaf_mass = tau + (1.0 - tau) * uniform01(rng);
  const double step = std::pow(leaf_mass, 1.0 / horizon);

  std::vector<std::vector<double>> cond(horizon);
  std::int64_t path_code = 0;
  std::int64_t width = 1;
  for (int h = 0; h < horizon; ++h) {
    cond[h].resize(width * vocab);
    for (std::int64_t c = 0; c < width; ++c) {
      double* row = cond[h].data() + c * vocab;
      double total = 0.0;
      for (int a = 0; a < vocab; ++a) total += row[a] = expo(rng);
      if (c == path_code) {
        const double rest = total - row[path[h]];
        for (int a = 0; a < vocab; ++a) {
          row[a] = a == path[h] ? step : (rest > 0 ? (1.0 - step) * row[a] / rest : (1.0 - step) / (vocab - 1));
        }
      } else {
        for (int a = 0; a < vocab; ++a) row[a] /= total;
      }
    }
    path_code = path_code * vocab + path[h];
    width *= vocab;
  }
  return PrefixTree(vocab, horizon, xi, cond);
}

}  // namespace tokenrl
