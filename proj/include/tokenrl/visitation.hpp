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

#pragma once

#include <vector>

#include "tokenrl/policy.hpp"
#include "tokenrl/token_mdp.hpp"

namespace tokenrl {

// d^π(s) and d^π(s, a) summed over steps. The total mass is the expected
// number of generated tokens, which is below H when EoS can end a response.
struct VisitationMeasure {
  TreeSpace space;
  std::vector<double> state;
  std::vector<double> state_action;

  double operator()(const Node& s) const { return state[space.index(s)]; }
  double operator()(const Node& s, Token a) const { return state_action[space.sa_index(s, a)]; }

  double total_mass() const {
    double m = 0.0;
    for (double w : state_action) m += w;
    return m;
  }

  // E_{(s,a)~d}[f(s, a)] over entries with positive weight.
  template <class F>
  double expect(const TokenMdp& mdp, F&& f) const {
    double acc = 0.0;
    mdp.for_each_live([&](const Node& n) {
      for (Token a = 0; a < mdp.vocab_size(); ++a) {
        const double w = state_action[space.sa_index(n, a)];
        if (w > 0.0) acc += w * f(n, a);
      }
    });
    return acc;
  }
};

// Exact forward pass over the prefix tree.
inline VisitationMeasure visitation(const TokenMdp& mdp, const AutoregressivePolicy& pi) {
  if (!pi.space().same_shape(mdp.space())) throw UsageError("policy does not match the MDP");
  const TreeSpace& sp = mdp.space();
  VisitationMeasure d{sp, std::vector<double>(sp.num_decision_states(), 0.0),
                      std::vector<double>(sp.num_state_actions(), 0.0)};
  for (int p = 0; p < mdp.num_prompts(); ++p) d.state[sp.index(sp.root(p))] = mdp.initial_dist()[p];
  for (int h = 0; h < mdp.horizon(); ++h) {
    mdp.for_each_live_at_depth(h, [&](const Node& n) {
      const double ds = d.state[sp.index(n)];
      if (ds == 0.0) return;
      for (Token a = 0; a < mdp.vocab_size(); ++a) {
        const double w = ds * pi.prob(n, a);
        d.state_action[sp.sa_index(n, a)] = w;
        const Node c = sp.child(n, a);
        if (!sp.is_terminal(c)) d.state[sp.index(c)] += w;
      }
    });
  }
  return d;
}

// E_{s~d}[KL(π(·|s) ‖ ref(·|s))].
inline double expected_kl(const TokenMdp& mdp, const VisitationMeasure& d, const AutoregressivePolicy& pi,
                          const AutoregressivePolicy& ref) {
  double acc = 0.0;
  mdp.for_each_live([&](const Node& n) {
    const double w = d(n);
    if (w > 0.0) acc += w * kl_at(pi, ref, n);
  });
  return acc;
}

}  // namespace tokenrl
