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


#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "tokenrl/harness.hpp"

namespace tokenrl {
namespace {

std::string config_error(const char* text) {
  try {
    parse_experiment_config(Json::parse(text));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "no error";
}

TEST(ExperimentConfig, SeedForms) {
  const auto a = parse_experiment_config(Json::parse(R"({"experiment": "explorer", "seeds": [4, 2]})"));
  EXPECT_EQ(a.seeds, (std::vector<std::uint64_t>{4, 2}));
  const auto b = parse_experiment_config(Json::parse(R"({"experiment": "explorer", "seeds": {"start": 10, "count": 3}})"));
  EXPECT_EQ(b.seeds, (std::vector<std::uint64_t>{10, 11, 12}));
  EXPECT_EQ(b.output_dir, "out/explorer");
}

TEST(ExperimentConfig, ErrorsCarryFieldPaths) {
  EXPECT_EQ(config_error(R"({"experiment": "explorer", "seeds": [0], "extra": 1})"), "config.extra: unknown field");
  EXPECT_EQ(config_error(R"({"experiment": "explorer"})"), "config.seeds: missing required field");
  EXPECT_EQ(config_error(R"({"experiment": "explorer", "seeds": [0, -1]})"),
            "config.seeds[1]: expected a non-negative integer");
  EXPECT_EQ(config_error(R"({"experiment": "prop2", "seeds": [0]})"), "config.experiment: unknown experiment 'prop2'");
  EXPECT_EQ(config_error(R"({"experiment": "explorer", "seeds": [0], "params": {"vocab": [1]}})"),
            "config.params.vocab: must be >= 2");
  EXPECT_EQ(config_error(R"({"experiment": "rl", "seeds": [0], "params": {"ppo": {"clip": 0.2, "kl": 1}}})"),
            "config.params.ppo.kl: unknown field");
  EXPECT_EQ(config_error(R"({"experiment": "rl", "seeds": [0], "params": {"algos": ["dqn"]}})"),
            "config.params.algos: unknown algorithm 'dqn'");
  EXPECT_EQ(config_error(R"({"experiment": "ablation", "seeds": [0], "params": {}})"),
            "config.params.delimiters: semi_rto needs delimiters");
  EXPECT_EQ(config_error(R"({"experiment": "theory_bound", "seeds": [0], "params": {"delta": 2}})"),
            "config.params.delta: must lie in (0, 1)");
}

TEST(ExperimentConfig, HashIgnoresKeyOrderAndOutputDir) {
  const auto a = parse_experiment_config(
      Json::parse(R"({"experiment": "explorer", "seeds": [0], "params": {"xi": 1, "vocab": 2}, "output_dir": "x"})"));
  const auto b = parse_experiment_config(
      Json::parse(R"({"params": {"vocab": 2, "xi": 1}, "seeds": [0], "experiment": "explorer", "output_dir": "y"})"));
  const auto c = parse_experiment_config(
      Json::parse(R"({"experiment": "explorer", "seeds": [0], "params": {"xi": 2, "vocab": 2}})"));
  EXPECT_EQ(a.hash, b.hash);
  EXPECT_NE(a.hash, c.hash);
  EXPECT_EQ(a.hash.size(), 16u);
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
}

TEST(Quantile, Interpolates) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_EQ(quantile({1, INFINITY}, 0.75), INFINITY);
  EXPECT_THROW(quantile({}, 0.5), UsageError);
}

TEST(RunTasks, MergeOrderDoesNotDependOnWorkers) {
  std::vector<Task> tasks;
  for (std::uint64_t s : {3, 1, 2, 1, 0}) {
    tasks.push_back({s, "g" + std::to_string(tasks.size()), [s, i = tasks.size()] {
                       if (i == 2) throw NumericalError("boom");
                       TaskOutput o;
                       o.rows.push_back({s, "g" + std::to_string(i), "x", static_cast<double>(i)});
                       return o;
                     }});
  }
  const ResultTable one = run_tasks(tasks, 1);
  const ResultTable four = run_tasks(tasks, 4);
  ASSERT_EQ(one.rows.size(), 4u);
  std::vector<std::string> groups;
  for (const auto& r : one.rows) groups.push_back(r.group);
  EXPECT_EQ(groups, (std::vector<std::string>{"g4", "g1", "g3", "g0"}));
  ASSERT_EQ(one.errors.size(), 1u);
  EXPECT_EQ(one.errors[0].seed, 2u);
  EXPECT_EQ(one.errors[0].message, "boom");
  ASSERT_EQ(four.rows.size(), one.rows.size());
  for (std::size_t i = 0; i < one.rows.size(); ++i) EXPECT_EQ(four.rows[i].group, one.rows[i].group);
}

TEST(WorkerCount, ReadsEnvironment) {
  ::setenv("TOKENRL_WORKERS", "3", 1);
  EXPECT_EQ(worker_count(), 3);
  ::setenv("TOKENRL_WORKERS", "zero", 1);
  EXPECT_THROW(worker_count(), ConfigError);
  ::unsetenv("TOKENRL_WORKERS");
  EXPECT_EQ(worker_count(), 1);
}

TEST(Outputs, ResultsCsvIsLongFormat) {
  const ExperimentConfig cfg = parse_experiment_config(
      Json::parse(R"({"experiment": "explorer", "seeds": [1, 0], "params": {"vocab": 2, "horizon": 3, "xi": 1}})"));
  const ResultTable t = run_experiment(cfg, 1);
  EXPECT_TRUE(t.errors.empty());
  const std::string csv = results_csv(cfg, t);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "experiment,config_hash,seed,group,metric,value");
  std::getline(is, line);
  EXPECT_EQ(line.rfind("explorer," + cfg.hash + ",0,A=2;H=3;xi=1,token_queries,", 0), 0u) << line;

  const OrderedJson s = summary_json(cfg, t);
  EXPECT_EQ(s["seeds"], (std::vector<std::uint64_t>{1, 0}));
  EXPECT_EQ(s["config_hash"], cfg.hash);
  EXPECT_TRUE(s.contains("git_revision"));
  EXPECT_EQ(s["metrics"][0]["count"], 2);
}

TEST(Outputs, WritesFilesAndCurves) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "tokenrl_harness_test";
  fs::remove_all(dir);
  Json j = Json::parse(R"({"experiment": "rl", "seeds": [0, 1],
      "params": {"horizon": 2, "pairs": 300, "algos": ["rto", "ppo_sparse"], "iterations": 3}})");
  j["output_dir"] = dir.string();
  const ExperimentConfig cfg = parse_experiment_config(j);
  const ResultTable t = run_experiment(cfg, 2);
  write_outputs(cfg, t);
  EXPECT_TRUE(fs::exists(dir / "results.csv"));
  EXPECT_TRUE(fs::exists(dir / "summary.json"));
  EXPECT_FALSE(fs::exists(dir / "errors.csv"));
  ASSERT_TRUE(fs::exists(dir / "curves" / "rto.csv"));
  std::ifstream in(dir / "curves" / "rto.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "instance,pairs,seed,iter,episodes,mean_return_rmle,mean_return_true,subopt_exact,kl_to_ref");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 2 * 3);  // one record per iteration, two seeds
  const Json summary = read_json_file((dir / "summary.json").string());
  EXPECT_EQ(summary["comparisons"][0]["a"], "rto");
  EXPECT_EQ(summary["comparisons"][0]["b"], "ppo_sparse");
  fs::remove_all(dir);
}

std::map<std::string, std::vector<std::pair<int, double>>> curves(const std::string& text) {
  std::istringstream is(text);
  return read_curves(is, "m", "test");
}

TEST(Compare, IdenticalLogs) {
  const std::string log = "seed,iter,m\n0,0,1\n0,1,2\n1,0,3\n1,1,5\n";
  const CompareSummary s = compare_curves(curves(log), curves(log), "m");
  EXPECT_EQ(s.runs, 2);
  EXPECT_EQ(s.auc_diff_median, 0.0);
  EXPECT_EQ(s.p_two_sided, 1.0);
  EXPECT_EQ(s.ties, 2);
}

TEST(Compare, ShiftByOneGivesGridLength) {
  std::string a = "seed,iter,m\n", b = a;
  const int T = 7;
  for (int seed = 0; seed < 3; ++seed) {
    for (int it = 0; it < T; ++it) {
      const double v = 0.5 * it + seed;
      a += std::to_string(seed) + "," + std::to_string(it) + "," + format_double(v + 1.0) + "\n";
      b += std::to_string(seed) + "," + std::to_string(it) + "," + format_double(v) + "\n";
    }
  }
  const CompareSummary s = compare_curves(curves(a), curves(b), "m");
  EXPECT_NEAR(s.auc_diff_median, T * 1.0, 1e-12);
  EXPECT_EQ(s.a_wins, 3);
  EXPECT_DOUBLE_EQ(s.p_two_sided, 0.25);
}

TEST(Compare, MismatchedRunsAreErrors) {
  const auto a = curves("seed,iter,m\n0,0,1\n0,1,1\n");
  EXPECT_THROW(compare_curves(a, curves("seed,iter,m\n1,0,1\n1,1,1\n"), "m"), UsageError);
  EXPECT_THROW(compare_curves(a, curves("seed,iter,m\n0,0,1\n0,2,1\n"), "m"), UsageError);
  EXPECT_THROW(compare_curves(a, curves("seed,iter,m\n0,0,1\n"), "m"), UsageError);
  EXPECT_THROW(curves("seed,iter,x\n0,0,1\n"), ConfigError);
  EXPECT_THROW(curves("seed,iter,m\n0,0\n"), ConfigError);
}

}  // namespace
}  // namespace tokenrl
