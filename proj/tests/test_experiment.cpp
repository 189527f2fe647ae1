// Copyright 2026 The tarot Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "tarot/experiment.hpp"

namespace tarot {
namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("tarot-test-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

ExperimentConfig tiny(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.source = "two_moons:rot=0,n=48";
  c.target = "two_moons:rot=40,n=48";
  c.train.hidden = 8;
  c.train.epochs = 2;
  c.train.batch_size = 16;
  c.train.attack = PerturbationBudget::pgd(0.05, 3, true);
  c.teacher_overrides = json{{"epochs", 2}};
  c.selection_samples = 20;
  c.save_checkpoints = false;
  c.seeds = {0};
  return c;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

TEST(ExperimentConfig, JsonRoundTrip) {
  ExperimentConfig c = tiny("rt");
  c.unseen = {"two_moons:rot=60"};
  c.method = Method::kPl;
  c.robust_pt = true;
  c.eval_attacks = {"fgsm:eps=0.03"};
  c.selection = SelectionPolicy::kLast;
  c.seeds = {4, 5};
  const ExperimentConfig back = experiment_config_from_json(json::parse(json(c).dump()));
  EXPECT_EQ(json(back), json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(ExperimentConfig, RejectsUnknownAndInvalid) {
  EXPECT_THROW(experiment_config_from_json(json{{"alhpa", 1}}), ConfigurationError);
  EXPECT_THROW(experiment_config_from_json(json{{"method", "dann"}}), ConfigurationError);
  EXPECT_THROW(experiment_config_from_json(json{{"seeds", json::array()}}), ConfigurationError);
  EXPECT_THROW(experiment_config_from_json(json{{"name", 3}}), ConfigurationError);
  EXPECT_THROW(experiment_config_from_json(json::array()), ConfigurationError);
}

TEST(ExperimentConfig, Overrides) {
  json j = json(tiny("ov"));
  apply_override(j, "train.alpha=0.5");
  apply_override(j, "method=pl");
  apply_override(j, "teacher.epochs=7");
  const ExperimentConfig c = experiment_config_from_json(j);
  EXPECT_DOUBLE_EQ(c.train.alpha, 0.5);
  EXPECT_EQ(c.method, Method::kPl);
  EXPECT_EQ(c.teacher_config(0).epochs, 7);
  EXPECT_DOUBLE_EQ(c.teacher_config(0).attack.epsilon, 0.0);
  EXPECT_THROW(apply_override(j, "novalue"), ConfigurationError);
  EXPECT_THROW(apply_override(j, "train..alpha=1"), ConfigurationError);
}

TEST(ExperimentConfig, HashIgnoresSeedsOnly) {
  ExperimentConfig a = tiny("h");
  ExperimentConfig b = a;
  b.seeds = {7, 8, 9};
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.train.alpha = 0.2;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

// Canonical serialization: frozen value for the default configuration.
TEST(ExperimentConfig, HashIsFrozenForDefaults) { EXPECT_EQ(config_hash(ExperimentConfig{}), "250cad9c5b8ead55"); }

TEST(ExperimentConfig, DefaultAttackFollowsTrainingEpsilon) {
  ExperimentConfig c = tiny("atk");
  const auto a = c.attacks();
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].label(), "pgd20");
  EXPECT_DOUBLE_EQ(a[0].budget.epsilon, 0.05);
  EXPECT_TRUE(a[0].budget.box.has_value());
}

TEST(RunExperiment, WritesManifestAndReusesIt) {
  TempDir tmp("run");
  ExperimentConfig c = tiny("run");
  c.unseen = {"two_moons:rot=60,n=30", "two_moons:rot=80,n=30"};
  c.save_checkpoints = true;
  const RunManifest m = run_experiment(c, 0, tmp.path());
  EXPECT_EQ(m.status, "complete");
  EXPECT_FALSE(m.reused);
  EXPECT_EQ(m.history.size(), 2u);
  EXPECT_TRUE(m.reports.count("target"));
  EXPECT_TRUE(m.reports.count("source"));
  EXPECT_TRUE(m.reports.count("unseen:two_moons:rot=60,n=30"));
  EXPECT_TRUE(m.reports.count("unseen:two_moons:rot=80,n=30"));
  EXPECT_NE(m.selection.find("oracle"), std::string::npos);
  for (const char* f : {"manifest.json", "metrics.jsonl", "model.json", "teacher.json", "checkpoints/epoch-001.json"})
    EXPECT_TRUE(fs::exists(m.dir / f)) << f;
  EXPECT_EQ(read_lines(m.dir / "metrics.jsonl").size(), 2u);
  const json first = json::parse(read_lines(m.dir / "metrics.jsonl").front());
  EXPECT_TRUE(first.at("robust_acc").contains("target"));

  const RunManifest again = run_experiment(c, 0, tmp.path());
  EXPECT_TRUE(again.reused);
  EXPECT_EQ(again.created_at, m.created_at);

  const RunManifest loaded = load_manifest(m.dir / "manifest.json");
  EXPECT_EQ(loaded.config_hash, config_hash(c));
}

TEST(RunExperiment, RerunIsIdenticalExceptTimestamp) {
  TempDir a("rerun-a"), b("rerun-b");
  const ExperimentConfig c = tiny("rerun");
  json ma = json(run_experiment(c, 1, a.path()));
  json mb = json(run_experiment(c, 1, b.path()));
  ma.erase("created_at");
  mb.erase("created_at");
  EXPECT_EQ(ma, mb);
}

TEST(RunExperiment, PlEqualsTarotAtAlphaZero) {
  TempDir tmp("pl");
  ExperimentConfig t = tiny("degenerate");
  t.train.alpha = 0.0;
  t.selection = SelectionPolicy::kLast;
  ExperimentConfig p = t;
  p.method = Method::kPl;
  const RunManifest mt = run_experiment(t, 0, tmp.path());
  const RunManifest mp = run_experiment(p, 0, tmp.path());
  auto model = [](const RunManifest& m) {
    std::ifstream in(m.dir / "model.json");
    return json::parse(in).at("model");
  };
  EXPECT_EQ(model(mt).at("psi"), model(mp).at("psi"));
  EXPECT_EQ(model(mt).at("pi"), model(mp).at("pi"));
  EXPECT_EQ(json(mt.reports), json(mp.reports));
}

TEST(RunExperiment, FailedStageLeavesMarker) {
  TempDir tmp("fail");
  ExperimentConfig c = tiny("fail");
  c.target = "two_moons:rot=40,n=2";
  try {
    run_experiment(c, 0, tmp.path());
    FAIL() << "expected a stage error";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "data");
  }
  const fs::path dir = run_directory(c, 0, tmp.path());
  ASSERT_TRUE(fs::exists(dir / "failed"));
  EXPECT_EQ(read_lines(dir / "failed").front().rfind("data:", 0), 0u);
  EXPECT_FALSE(fs::exists(dir / "manifest.json"));
}

TEST(RunExperiment, OtherMethodsRun) {
  TempDir tmp("methods");
  for (Method m : {Method::kMdd, Method::kAt}) {
    ExperimentConfig c = tiny("m");
    c.method = m;
    c.robust_pt = m == Method::kAt;
    const RunManifest r = run_experiment(c, 0, tmp.path());
    EXPECT_EQ(r.status, "complete");
    EXPECT_FALSE(r.artifacts.count("teacher"));
    EXPECT_EQ(r.artifacts.count("pretrain"), m == Method::kAt ? 1u : 0u);
  }
}

TEST(Sweep, SingleValueEqualsRun) {
  TempDir tmp("sweep1");
  const ExperimentConfig c = tiny("single");
  const SweepResult s = sweep(c, SweepParam::kAlpha, {c.train.alpha}, tmp.path());
  ASSERT_EQ(s.runs.size(), 1u);
  TempDir other("sweep1-direct");
  const RunManifest direct = run_experiment(c, 0, other.path());
  EXPECT_EQ(json(s.runs[0].reports), json(direct.reports));
  const auto lines = read_lines(s.summary_csv);
  EXPECT_EQ(lines.front(), "param,value,seed,method,robust_pt,domain,standard_acc,attack,robust_acc");
  EXPECT_EQ(lines.size(), 1u + 2u);
}

TEST(Sweep, ValuesAndErrors) {
  EXPECT_DOUBLE_EQ(with_value(tiny("v"), SweepParam::kEpsilon, 0.08).train.attack.step_size, 0.02);
  EXPECT_TRUE(with_value(tiny("v"), SweepParam::kRobustPt, 1.0).robust_pt);
  EXPECT_THROW(with_value(tiny("v"), SweepParam::kRobustPt, 0.5), ParameterError);
  EXPECT_THROW(with_value(tiny("v"), SweepParam::kAlpha, -1.0), ParameterError);
  EXPECT_THROW(sweep_param_from_string("lr"), ConfigurationError);
  EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
}

// Parses "series,x,y,n_seeds" rows back into (series, x) -> y.
std::map<std::pair<std::string, double>, double> read_plot_csv(const fs::path& p) {
  std::map<std::pair<std::string, double>, double> out;
  const auto lines = read_lines(p);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::stringstream ss(lines[i]);
    std::string series, x, y;
    std::getline(ss, series, ',');
    std::getline(ss, x, ',');
    std::getline(ss, y, ',');
    out[{series, std::stod(x)}] = std::stod(y);
  }
  return out;
}

TEST(EmitPlots, CsvHoldsEveryPlottedNumber) {
  TempDir tmp("plots");
  ExperimentConfig c = tiny("plots");
  c.seeds = {0, 1};
  const SweepResult s = sweep(c, SweepParam::kAlpha, {0.0, 0.5}, tmp.path());
  ASSERT_EQ(s.runs.size(), 4u);
  const auto images = emit_plots(s.runs, SweepParam::kAlpha, tmp.path() / "plots");
  EXPECT_EQ(images.size(), 4u);
  for (const fs::path& svg : images) {
    ASSERT_TRUE(fs::exists(svg));
    fs::path csv = svg;
    csv.replace_extension(".csv");
    ASSERT_TRUE(fs::exists(csv));
  }
  const auto robust = read_plot_csv(tmp.path() / "plots" / "robust_acc_target.csv");
  for (double alpha : {0.0, 0.5}) {
    std::vector<double> ys;
    for (const RunManifest& m : s.runs)
      if (swept_value(m.config, SweepParam::kAlpha) == alpha) ys.push_back(m.reports.at("target").robust_acc.at("pgd20"));
    EXPECT_EQ(robust.at({"tarot", alpha}), median(ys));
  }
  std::ifstream in(tmp.path() / "plots" / "robust_acc_target.svg");
  const std::string svg((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_NE(svg.find(">PL<"), std::string::npos);

  const auto collected = collect_manifests(tmp.path());
  EXPECT_EQ(collected.size(), 4u);
  EXPECT_THROW(emit_plots({}, SweepParam::kAlpha, tmp.path()), ParameterError);
}

TEST(EmitPlots, RobustPtGivesTwoSeries) {
  TempDir tmp("plots-pt");
  ExperimentConfig c = tiny("pt");
  std::vector<RunManifest> runs;
  for (double eps : {0.02, 0.05}) {
    for (double pt : {0.0, 1.0}) {
      const auto r = sweep(with_value(c, SweepParam::kRobustPt, pt), SweepParam::kEpsilon, {eps}, tmp.path());
      runs.insert(runs.end(), r.runs.begin(), r.runs.end());
    }
  }
  emit_plots(runs, SweepParam::kEpsilon, tmp.path() / "plots");
  const auto robust = read_plot_csv(tmp.path() / "plots" / "robust_acc_target.csv");
  EXPECT_EQ(robust.size(), 4u);
  EXPECT_TRUE(robust.count({"tarot + robust-pt", 0.05}));
  EXPECT_TRUE(robust.count({"tarot", 0.02}));
}

}  // namespace
}  // namespace tarot
