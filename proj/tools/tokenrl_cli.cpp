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


// tokenrl command-line driver. Exit codes: 0 ok, 1 runtime failure,
// 2 bad arguments or config.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "tokenrl/harness.hpp"

namespace {

using namespace tokenrl;

TokenMdp load_token_mdp(const std::string& path, LoadedMdp* full = nullptr) {
  LoadedMdp m = mdp_from_json(read_json_file(path), path);
  if (!m.token) throw ConfigError(path + ": expected a token MDP (deterministic transitions)");
  TokenMdp mdp = *m.token;
  if (full) *full = std::move(m);
  return mdp;
}

AutoregressivePolicy load_policy(const std::string& path) { return policy_from_json(read_json_file(path), path); }

PreferenceDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  try {
    return read_dataset_jsonl(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// Writes to `path`, or stdout for "-" / empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_text_file(path, text);
  }
}

const RewardTable& require_reward(const TokenMdp& mdp, const std::string& path) {
  if (!mdp.reward()) throw ConfigError(path + ".reward: this command needs a reward");
  return *mdp.reward();
}

AutoregressivePolicy ref_or_uniform(const std::string& path, const TokenMdp& mdp) {
  if (path.empty()) return AutoregressivePolicy::uniform(mdp.space());
  AutoregressivePolicy p = load_policy(path);
  if (!p.space().same_shape(mdp.space())) throw ConfigError(path + ": policy does not match the MDP");
  return p;
}

int run_config(const std::string& path, const std::optional<std::string>& required_kind) {
  const ExperimentConfig cfg = parse_experiment_config(read_json_file(path));
  if (required_kind && cfg.experiment != *required_kind) {
    throw ConfigError("config.experiment: expected '" + *required_kind + "', got '" + cfg.experiment + "'");
  }
  const ResultTable t = run_experiment(cfg, worker_count());
  write_outputs(cfg, t);
  std::cerr << cfg.experiment << ": " << t.rows.size() << " rows, " << t.errors.size() << " errors -> "
            << cfg.output_dir << "\n";
  return t.errors.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tokenrl: token-level RLHF experiments on enumerable token MDPs"};
  app.require_subcommand(1);
  int status = 0;

  // run / validate-config / ablate
  std::string config_path;
  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->callback([&] { status = run_config(config_path, std::nullopt); });

  auto* validate = app.add_subcommand("validate-config", "Check a config against the schema");
  validate->add_option("config", config_path, "Experiment config (JSON)")->required();
  validate->callback([&] {
    const ExperimentConfig cfg = parse_experiment_config(read_json_file(config_path));
    std::cout << "ok " << cfg.experiment << " " << cfg.hash << " seeds=" << cfg.seeds.size() << "\n";
  });

  auto* ablate = app.add_subcommand("ablate", "Run a reward-granularity or shaping ablation config");
  ablate->add_option("config", config_path, "Ablation config (JSON)")->required();
  ablate->callback([&] { status = run_config(config_path, std::string("ablation")); });

  // plan
  std::string mdp_path, ref_path, out_path, values_path;
  double beta = 1.0;
  auto* plan = app.add_subcommand("plan", "Exact soft-optimal policy and value tables");
  plan->add_option("--mdp", mdp_path, "MDP config with a reward")->required();
  plan->add_option("--beta", beta, "KL coefficient")->check(CLI::PositiveNumber);
  plan->add_option("--ref", ref_path, "Reference policy (default: uniform)");
  plan->add_option("--out", out_path, "Policy JSON output (default: stdout)");
  plan->add_option("--values", values_path, "Q/V table CSV output");
  plan->callback([&] {
    const TokenMdp mdp = load_token_mdp(mdp_path);
    const AutoregressivePolicy ref = ref_or_uniform(ref_path, mdp);
    const PlanResult res = soft_backward_induction(mdp, require_reward(mdp, mdp_path), ref, beta);
    emit(out_path, dump(policy_to_json(res.policy)));
    if (!values_path.empty()) {
      std::ostringstream os;
      write_value_csv(os, mdp, res.values);
      write_text_file(values_path, os.str());
    }
    std::cerr << "V* = " << format_double(res.values.value(mdp)) << "\n";
  });

  // sample
  std::int64_t n_pairs = 1000;
  std::uint64_t seed = 0;
  auto* sample = app.add_subcommand("sample", "Sample Bradley-Terry preference pairs");
  sample->add_option("--mdp", mdp_path, "MDP config with a reward")->required();
  sample->add_option("--n", n_pairs, "Number of pairs")->check(CLI::PositiveNumber);
  sample->add_option("--seed", seed, "RNG seed");
  sample->add_option("--sampler", ref_path, "Response sampler policy (default: uniform)");
  sample->add_option("--out", out_path, "JSONL output (default: stdout)");
  sample->callback([&] {
    const TokenMdp mdp = load_token_mdp(mdp_path);
    const AutoregressivePolicy sampler = ref_or_uniform(ref_path, mdp);
    Rng rng(seed);
    PreferenceDataset ds = sample_dataset(mdp, require_reward(mdp, mdp_path), sampler, n_pairs, rng);
    ds.metadata.seed = seed;
    std::ostringstream os;
    write_dataset_jsonl(os, ds);
    emit(out_path, os.str());
  });

  // mle
  std::string data_path;
  double param_bound = 1.0, pess_c = 1.0, delta = 0.1, lambda = 1.0;
  auto* mle = app.add_subcommand("mle", "Fit a linear Bradley-Terry reward and the pessimistic token reward");
  mle->add_option("--mdp", mdp_path, "MDP config; a linear reward supplies the features, otherwise one-hot")
      ->required();
  mle->add_option("--data", data_path, "Preference pairs (JSONL)")->required();
  mle->add_option("--param-bound", param_bound, "B, the bound on ||theta||")->check(CLI::PositiveNumber);
  mle->add_option("--pessimism-c", pess_c, "Constant C in the confidence radius")->check(CLI::NonNegativeNumber);
  mle->add_option("--delta", delta, "Failure probability")->check(CLI::Range(0.0, 1.0));
  mle->add_option("--lambda", lambda, "Ridge term of the covariance")->check(CLI::PositiveNumber);
  mle->add_option("--out", out_path, "JSON output (default: stdout)");
  mle->callback([&] {
    LoadedMdp full;
    const TokenMdp mdp = load_token_mdp(mdp_path, &full);
    const PreferenceDataset ds = load_dataset(data_path);
    validate_dataset(mdp, ds);
    const FeatureMap phi = full.features ? *full.features : FeatureMap::one_hot(mdp.space());
    const MleResult fit = mle_fit(ds, phi, param_bound);
    const CovarianceMatrix sigma = covariance(ds, phi, lambda);
    PessimismConfig pc;
    pc.delta = delta;
    pc.constant = pess_c;
    pc.lambda = lambda;
    pc.horizon = mdp.horizon();
    pc.feature_bound = phi.max_norm();
    pc.param_bound = param_bound;
    pc.dim = phi.dim();
    const double rho = pc.rho();
    OrderedJson j;
    j["features"] = phi.kind();
    j["pairs"] = ds.size();
    j["config"] = {{"param_bound", param_bound}, {"pessimism_c", pess_c}, {"delta", delta}, {"lambda", lambda}};
    j["theta"] = vector_json(fit.theta);
    j["log_likelihood"] = fit.log_likelihood;
    j["converged"] = fit.converged;
    j["iterations"] = fit.iterations;
    j["sigma"] = matrix_json(sigma.matrix());
    j["rho"] = rho;
    j["pessimistic_reward"] = reward_to_json(pessimistic_reward(fit.theta, sigma, rho, phi));
    emit(out_path, dump(j));
  });

  // dpo-fit
  DpoConfig dpo_cfg;
  auto* dpo = app.add_subcommand("dpo-fit", "Fit a tabular DPO policy");
  dpo->add_option("--mdp", mdp_path, "MDP config (shape only)")->required();
  dpo->add_option("--dataset", data_path, "Preference pairs (JSONL)")->required();
  dpo->add_option("--beta", dpo_cfg.beta, "DPO beta")->check(CLI::PositiveNumber);
  dpo->add_option("--ref", ref_path, "Reference policy (default: uniform)");
  dpo->add_option("--lr", dpo_cfg.learning_rate, "Adam step size")->check(CLI::PositiveNumber);
  dpo->add_option("--epochs", dpo_cfg.max_epochs, "Maximum epochs")->check(CLI::NonNegativeNumber);
  dpo->add_option("--out", out_path, "Policy JSON output (default: stdout)");
  dpo->callback([&] {
    const TokenMdp mdp = load_token_mdp(mdp_path);
    const AutoregressivePolicy ref = ref_or_uniform(ref_path, mdp);
    const PreferenceDataset ds = load_dataset(data_path);
    validate_dataset(mdp, ds);
    const DpoResult res = dpo_fit(ds, ref, dpo_cfg);
    emit(out_path, dump(policy_to_json(res.policy)));
    std::cerr << "loss " << format_double(res.loss) << " epochs " << res.epochs
              << (res.converged ? "" : " (not converged)") << "\n";
  });

  // train
  std::string algo_name_arg = "rto", dpo_path;
  RlTrialConfig tc;
  double mle_bound = 100.0, dpo_beta = 0.1;
  auto* train_cmd = app.add_subcommand("train", "Train a policy with PPO, RTO or a variant");
  train_cmd->add_option("--algo", algo_name_arg, "ppo_sparse|rto|rpp_sparse|rto_rpp|semi_rto|ddpo|rs_ppo");
  train_cmd->add_option("--mdp", mdp_path, "MDP config; its reward is the true reward")->required();
  train_cmd->add_option("--data", data_path, "Preference pairs for the one-hot MLE reward (and DPO if needed)");
  train_cmd->add_option("--dpo-policy", dpo_path, "DPO policy JSON");
  train_cmd->add_option("--ref", ref_path, "Reference policy (default: uniform)");
  train_cmd->add_option("--beta1", tc.beta1, "DPO reward scale")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--beta2", tc.beta2, "KL coefficient")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--beta3", tc.beta3, "Sentence reward scale")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--dpo-beta", dpo_beta, "Beta for a DPO fit from --data")->check(CLI::PositiveNumber);
  train_cmd->add_option("--mle-bound", mle_bound, "Norm bound for the MLE fit")->check(CLI::PositiveNumber);
  std::vector<int> delimiters;
  train_cmd->add_option("--delimiters", delimiters, "Delimiter tokens for semi_rto");
  train_cmd->add_option("--seed", seed, "RNG seed");
  train_cmd->add_option("--iters", tc.iterations, "Training iterations")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--batch", tc.options.ppo.batch_size, "Episodes per iteration")->check(CLI::PositiveNumber);
  train_cmd->add_option("--out", out_path, "Log CSV output (default: stdout)");
  train_cmd->callback([&] {
    try {
      tc.algo = parse_algo(algo_name_arg);
    } catch (const UsageError& e) {
      throw ConfigError(std::string("--algo: ") + e.what());
    }
    const TokenMdp mdp = load_token_mdp(mdp_path);
    auto truth = std::make_shared<const RewardTable>(require_reward(mdp, mdp_path));
    auto ref = std::make_shared<const AutoregressivePolicy>(ref_or_uniform(ref_path, mdp));
    RlInstance inst{mdp, truth, ref, nullptr, truth};
    std::optional<PreferenceDataset> ds;
    if (!data_path.empty()) {
      ds = load_dataset(data_path);
      validate_dataset(mdp, *ds);
      const MleResult fit = mle_fit(*ds, FeatureMap::one_hot(mdp.space()), mle_bound);
      inst.mle_reward =
          std::make_shared<const RewardTable>(mdp.space(), std::vector<double>(fit.theta.data(), fit.theta.data() + fit.theta.size()));
    }
    if (!dpo_path.empty()) {
      inst.dpo = std::make_shared<const AutoregressivePolicy>(ref_or_uniform(dpo_path, mdp));
    } else if (ds && tc.beta1 > 0) {
      DpoConfig dc;
      dc.beta = dpo_beta;
      inst.dpo = std::make_shared<const AutoregressivePolicy>(dpo_fit(*ds, *ref, dc).policy);
    }
    tc.options.delimiters = std::set<Token>(delimiters.begin(), delimiters.end());
    const RlTrial t = rl_trial(inst, tc, seed);
    std::ostringstream os;
    t.log.write_csv(os);
    emit(out_path, os.str());
  });

  // explore
  int vocab = 2, horizon = 3, trees = 50;
  double xi = 1.0;
  bool example = false;
  auto* explore = app.add_subcommand("explore", "Token vs sentence exploration on prefix trees");
  explore->add_option("--A", vocab, "Vocabulary size")->check(CLI::Range(2, 64));
  explore->add_option("--H", horizon, "Horizon")->check(CLI::Range(1, 24));
  explore->add_option("--xi", xi, "Concentration exponent")->check(CLI::PositiveNumber);
  explore->add_option("--trees", trees, "Random trees")->check(CLI::PositiveNumber);
  explore->add_option("--seed", seed, "RNG seed");
  explore->add_flag("--example", example, "Use the fixed A=2, H=3 example tree");
  explore->add_option("--out", out_path, "CSV output (default: stdout)");
  explore->callback([&] {
    std::ostringstream os;
    os << "tree_id,method,queries,found_optimal\n";
    auto one = [&](int id, const PrefixTree& tree) {
      const ExplorerTrial t = explorer_trial(tree);
      os << id << ",token," << t.token_queries << ',' << (t.token_found_optimal ? 1 : 0) << '\n';
      os << id << ",sentence," << t.sentence_queries << ',' << (t.sentence_found_optimal ? 1 : 0) << '\n';
    };
    if (example) {
      one(0, example_tree());
    } else {
      for (int i = 0; i < trees; ++i) {
        Rng rng(mix_seed({seed, static_cast<std::uint64_t>(i)}));
        one(i, random_planted_tree(vocab, horizon, xi, rng));
      }
    }
    emit(out_path, os.str());
  });

  // theory-bound
  std::string instance_path;
  int n_seeds = 200;
  std::int64_t n_data = 1024;
  auto* theory = app.add_subcommand("theory-bound", "Check the offline suboptimality bounds per seed");
  theory->add_option("--instance", instance_path, "Instance params (JSON object, keys as in theory_bound params)")
      ->required();
  theory->add_option("--seeds", n_seeds, "Seeds 0..N-1")->check(CLI::PositiveNumber);
  theory->add_option("--n", n_data, "Preference pairs per seed")->check(CLI::PositiveNumber);
  theory->add_option("--out", out_path, "CSV output (default: stdout)");
  theory->callback([&] {
    Json params = read_json_file(instance_path);
    if (params.is_object()) params.erase("n");
    const TheoryParams p = detail::parse_theory(params, instance_path);
    std::vector<std::string> lines(static_cast<std::size_t>(n_seeds));
    std::vector<Task> tasks;
    for (int s = 0; s < n_seeds; ++s) {
      tasks.push_back({static_cast<std::uint64_t>(s), "", [&, s] {
                         const OfflineInstance inst = make_offline_instance(p.base, s);
                         const OfflineTrial t = offline_trial(inst, offline_dataset(inst, n_data, s), p.base);
                         lines[s] = std::to_string(s) + "," + format_double(t.subopt) + "," +
                                    format_double(t.pessimistic_bound) + "," +
                                    (t.maxmin_bound ? format_double(*t.maxmin_bound) : std::string()) + "," +
                                    (t.maxmin_subopt ? format_double(*t.maxmin_subopt) : std::string()) + "," +
                                    (t.event ? "1" : "0") + "," +
                                    (t.maxmin_reached ? (*t.maxmin_reached ? "1" : "0") : "") + "\n";
                         return TaskOutput{};
                       }});
    }
    const ResultTable rt = run_tasks(tasks, worker_count());
    std::string text = "seed,subopt,pessimistic_bound,maxmin_bound,maxmin_subopt,confidence_event_held,maxmin_reached\n";
    for (const auto& l : lines) text += l;
    emit(out_path, text);
    for (const auto& e : rt.errors) std::cerr << "seed " << e.seed << ": " << e.message << "\n";
    if (!rt.errors.empty()) status = 1;
  });

  // compare
  std::string log_a, log_b, metric = "mean_return_true";
  auto* compare = app.add_subcommand("compare", "Paired comparison of two learning-curve CSVs");
  compare->add_option("log_a", log_a, "First CSV")->required();
  compare->add_option("log_b", log_b, "Second CSV")->required();
  compare->add_option("--metric", metric, "Column to compare");
  compare->add_option("--out", out_path, "JSON output (default: stdout)");
  compare->callback([&] {
    std::ifstream a(log_a), b(log_b);
    if (!a) throw ConfigError(log_a + ": cannot open");
    if (!b) throw ConfigError(log_b + ": cannot open");
    const auto ca = read_curves(a, metric, log_a);
    const auto cb = read_curves(b, metric, log_b);
    emit(out_path, dump(compare_json(compare_curves(ca, cb, metric))));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return status;
}
