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

// Command-line front end: teacher, pretrain, train, eval, lipschitz, probe,
// verify-theory, sweep and plot.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tarot/disparity.hpp"
#include "tarot/evaluation.hpp"
#include "tarot/experiment.hpp"
#include "tarot/synthdata.hpp"
#include "tarot/theory.hpp"
#include "tarot/training.hpp"

namespace {

using namespace tarot;

struct RunOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--config", o.config, "JSON experiment config");
  cmd->add_option("--seed", o.seed, "run a single seed instead of the config's list");
  cmd->add_option("--out", o.out, std::string("output root (default $") + kOutRootEnv + " or ./runs)");
  cmd->add_option("--set", o.overrides, "override a config field, e.g. train.alpha=0.5 (repeatable)");
}

ExperimentConfig resolve_config(const RunOptions& o) {
  json j = json::object();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw ConfigurationError("cannot read config '" + o.config + "'");
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigurationError("config '" + o.config + "': " + e.what());
    }
  }
  for (const std::string& s : o.overrides) apply_override(j, s);
  ExperimentConfig c = experiment_config_from_json(j);
  if (o.seed) c.seeds = {*o.seed};
  return c;
}

fs::path out_root(const RunOptions& o) { return o.out.empty() ? default_out_root() : fs::path(o.out); }

void log_line(const std::string& s) { std::fprintf(stderr, "[tarot] %s\n", s.c_str()); }

ComposedScorer load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot read model '" + path + "'");
  const json j = json::parse(in);
  return (j.contains("model") ? j.at("model") : j).get<ComposedScorer>();
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path().empty() ? fs::path(".") : p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
}

// Stage commands train one component and store it next to where
// run_experiment would put it.
int cmd_teacher(const RunOptions& o) {
  const ExperimentConfig c = resolve_config(o);
  for (std::uint64_t seed : c.seeds) {
    const fs::path dir = run_directory(c, seed, out_root(o));
    fs::create_directories(dir);
    const DomainDataset src = make_domain(c.source, derive_seed(seed, 1), DomainTag::kSource);
    const DomainDataset tgt = make_domain(c.target, derive_seed(seed, 2), DomainTag::kTarget);
    std::ofstream metrics(dir / "teacher_metrics.jsonl");
    const TrainState s = train_loop(TrainMode::kMddTeacher, src, tgt.unlabeled(), std::nullopt, std::nullopt,
                                    c.teacher_config(seed), [&](const TrainState&, MetricsRecord& r) {
                                      metrics << json(r).dump() << '\n';
                                    });
    write_file(dir / "teacher.json", json(s.scorer).dump(2) + "\n");
    const DomainDataset src_test = make_domain(c.source, derive_seed(seed, 3), DomainTag::kSource);
    const DomainDataset tgt_test = make_domain(c.target, derive_seed(seed, 4), DomainTag::kTarget);
    std::printf("seed %llu  teacher  source %.4f  target %.4f  -> %s\n", static_cast<unsigned long long>(seed),
                standard_accuracy(s.scorer.main_path(), src_test), standard_accuracy(s.scorer.main_path(), tgt_test),
                (dir / "teacher.json").c_str());
  }
  return 0;
}

int cmd_pretrain(const RunOptions& o) {
  const ExperimentConfig c = resolve_config(o);
  for (std::uint64_t seed : c.seeds) {
    const fs::path dir = run_directory(c, seed, out_root(o));
    fs::create_directories(dir);
    const DomainDataset src = make_domain(c.source, derive_seed(seed, 1), DomainTag::kSource);
    const double eps_pre = c.train.attack.epsilon / c.pretrain_ratio;
    TarotConfig pc = c.pretrain_config(seed);
    pc.attack.epsilon = eps_pre;
    pc.attack.step_size = eps_pre > 0.0 ? eps_pre / 4.0 : 1.0;
    const TrainState s = train_standard_at(src, pc);
    write_file(dir / "pretrain.json", json(s.scorer).dump(2) + "\n");
    std::printf("seed %llu  pretrain eps_pre=%g  source %.4f  -> %s\n", static_cast<unsigned long long>(seed), eps_pre,
                standard_accuracy(s.scorer.main_path(), src), (dir / "pretrain.json").c_str());
  }
  return 0;
}

void print_manifest(const RunManifest& m) {
  std::vector<std::pair<std::string, EvalReport>> rows(m.reports.begin(), m.reports.end());
  std::printf("seed %llu  selected epoch %d [%s]%s\n%s", static_cast<unsigned long long>(m.seed), m.selected_epoch,
              m.selection.c_str(), m.reused ? "  (reused)" : "", format_report_table(rows).c_str());
  std::printf("  -> %s\n", m.dir.c_str());
}

int cmd_train(const RunOptions& o) {
  const ExperimentConfig c = resolve_config(o);
  std::vector<RunManifest> runs;
  for (std::uint64_t seed : c.seeds) {
    runs.push_back(run_experiment(c, seed, out_root(o), log_line));
    print_manifest(runs.back());
  }
  const fs::path group = run_directory(c, c.seeds.front(), out_root(o)).parent_path();
  std::ofstream csv(group / "summary.csv");
  csv << "seed,domain,standard_acc,attack,robust_acc\n";
  for (const RunManifest& m : runs)
    for (const auto& [domain, r] : m.reports)
      for (const auto& [attack, acc] : r.robust_acc)
        csv << m.seed << ',' << domain << ',' << r.standard_acc << ',' << attack << ',' << acc << '\n';
  std::printf("summary: %s\n", (group / "summary.csv").c_str());
  return 0;
}

struct ModelOptions {
  std::string model;
  std::string data = "two_moons:rot=40";
  std::uint64_t data_seed = 4;
  std::uint64_t seed = 0;
  std::string out;
};

void add_model_options(CLI::App* cmd, ModelOptions& o) {
  cmd->add_option("--model", o.model, "model or checkpoint JSON")->required();
  cmd->add_option("--data", o.data, "generator spec of the evaluation domain");
  cmd->add_option("--data-seed", o.data_seed, "seed of the generated evaluation sample");
  cmd->add_option("--seed", o.seed, "attack / search seed");
  cmd->add_option("--out", o.out, "write the JSON result to this file");
}

DomainDataset model_data(const ModelOptions& o) { return make_domain(o.data, o.data_seed, DomainTag::kTarget); }

void emit_json(const ModelOptions& o, const json& j) {
  std::printf("%s\n", j.dump(2).c_str());
  if (!o.out.empty()) write_file(o.out, j.dump(2) + "\n");
}

int cmd_eval(const ModelOptions& o, const std::vector<std::string>& attack_texts, double lipschitz_eps) {
  const ComposedScorer f = load_model(o.model);
  const DomainDataset d = model_data(o);
  std::vector<AttackSpec> attacks;
  for (const std::string& a : attack_texts) attacks.push_back(parse_attack_spec(a, Box::unit(d.dim())));
  std::optional<std::pair<double, LipschitzSearch>> lip;
  if (lipschitz_eps > 0.0) {
    LipschitzSearch s;
    s.seed = o.seed;
    s.box = Box::unit(d.dim());
    lip = std::make_pair(lipschitz_eps, s);
  }
  const EvalReport r = evaluate(f.main_path(), d, attacks, o.seed, lip);
  std::fprintf(stderr, "%s", format_report_table({{o.data, r}}).c_str());
  emit_json(o, r);
  return 0;
}

int cmd_lipschitz(const ModelOptions& o, double eps, const LipschitzSearch& search_in) {
  const ComposedScorer f = load_model(o.model);
  const DomainDataset d = model_data(o);
  LipschitzSearch search = search_in;
  search.seed = o.seed;
  search.box = Box::unit(d.dim());
  const LipschitzEstimate e = local_lipschitz_estimate(f.main_path(), d.inputs, eps, search);
  json j = e;
  j["epsilon"] = eps;
  emit_json(o, j);
  return 0;
}

int cmd_probe(const ModelOptions& o, double eps, double rho, const std::string& other, int steps) {
  const ComposedScorer f = load_model(o.model);
  const DomainDataset d = model_data(o);
  BallSearch how;
  how.kind = Maximizer::kPgd;
  how.budget = PerturbationBudget::pgd(eps, steps, true, Box::unit(d.dim()));
  how.seed = o.seed;
  DisparityReport r;
  if (other.empty()) {
    r = disparity_report(f.aux_path(), f.main_path(), d.inputs, rho, how);
  } else {
    const ComposedScorer g = load_model(other);
    r = disparity_report(g.main_path(), f.main_path(), d.inputs, rho, how);
  }
  r.per_sample.clear();
  emit_json(o, r);
  return 0;
}

int cmd_verify_theory(std::size_t n, std::uint64_t seed, const std::string& out, bool independent) {
  InstanceSizes sizes;
  sizes.independent_labels = independent;
  const TheorySummary s = verify_theory(n, seed, sizes);
  const json j = s;
  std::printf("%s\n", j.dump(2).c_str());
  if (!out.empty()) write_file(out, j.dump(2) + "\n");
  return s.failures.empty() ? 0 : 1;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) {
      const auto slash = item.find('/');
      try {
        out.push_back(slash == std::string::npos ? std::stod(item)
                                                 : std::stod(item.substr(0, slash)) / std::stod(item.substr(slash + 1)));
      } catch (const std::exception&) {
        throw ConfigurationError("bad sweep value '" + item + "'");
      }
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw ConfigurationError("no sweep values");
  return out;
}

int cmd_sweep(const RunOptions& o, const std::string& param, const std::string& values) {
  const ExperimentConfig c = resolve_config(o);
  const SweepParam p = sweep_param_from_string(param);
  const SweepResult r = sweep(c, p, parse_values(values), out_root(o), log_line);
  std::printf("summary: %s\n", r.summary_csv.c_str());
  const fs::path plots = out_root(o) / (c.name + "-plots-" + param);
  for (const fs::path& svg : emit_plots(r.runs, p, plots)) std::printf("plot: %s\n", svg.c_str());
  return 0;
}

int cmd_plot(const std::string& in, const std::string& param, const std::string& out) {
  const std::vector<RunManifest> runs = collect_manifests(in);
  const fs::path dir = out.empty() ? fs::path(in) / ("plots-" + param) : fs::path(out);
  for (const fs::path& svg : emit_plots(runs, sweep_param_from_string(param), dir)) std::printf("plot: %s\n", svg.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarially robust domain adaptation experiments"};
  app.require_subcommand(1);

  RunOptions teacher_o, pretrain_o, train_o, sweep_o;
  auto* teacher = app.add_subcommand("teacher", "train the non-robust MDD teacher");
  add_run_options(teacher, teacher_o);
  auto* pretrain = app.add_subcommand("pretrain", "adversarially pretrain a feature extractor on the source");
  add_run_options(pretrain, pretrain_o);
  auto* train = app.add_subcommand("train", "run teacher, optional pretraining, method training and evaluation");
  add_run_options(train, train_o);

  ModelOptions eval_o, lip_o, probe_o;
  std::vector<std::string> eval_attacks{"pgd:eps=0.05,steps=20"};
  double eval_lip = 0.0;
  auto* eval = app.add_subcommand("eval", "standard and robust accuracy of a stored model");
  add_model_options(eval, eval_o);
  eval->add_option("--attack", eval_attacks, "attack spec, e.g. pgd:eps=0.05,steps=20 or fgsm:eps=0.05");
  eval->add_option("--lipschitz", eval_lip, "also estimate the local Lipschitz constant at this radius");

  double lip_eps = 0.05;
  LipschitzSearch lip_search;
  auto* lip = app.add_subcommand("lipschitz", "empirical local Lipschitz estimate of a stored model");
  add_model_options(lip, lip_o);
  lip->add_option("--eps", lip_eps, "ball radius (L-inf)");
  lip->add_option("--steps", lip_search.steps, "ascent steps per restart");
  lip->add_option("--restarts", lip_search.restarts, "random restarts per sample");

  double probe_eps = 0.05, probe_rho = MarginConfig{}.rho;
  int probe_steps = 20;
  std::string probe_other;
  auto* probe = app.add_subcommand("probe", "disparity report between two heads or two models");
  add_model_options(probe, probe_o);
  probe->add_option("--eps", probe_eps, "ball radius (L-inf)");
  probe->add_option("--rho", probe_rho, "margin");
  probe->add_option("--steps", probe_steps, "PGD steps of the inner maximizer");
  probe->add_option("--other", probe_other, "second model; default is the auxiliary head of --model");

  std::size_t theory_n = 1000;
  std::uint64_t theory_seed = 0;
  std::string theory_out;
  bool theory_independent = false;
  auto* theory = app.add_subcommand("verify-theory", "check the bounds on random finite instances");
  theory->add_option("--n", theory_n, "number of random instances");
  theory->add_option("--seed", theory_seed, "instance seed");
  theory->add_option("--out", theory_out, "write the JSON summary to this file");
  theory->add_flag("--independent-labels", theory_independent, "draw source and target labelings independently");

  std::string sweep_param = "alpha", sweep_values = "0,0.05,0.1,0.5,1.0";
  auto* sw = app.add_subcommand("sweep", "one run per value and seed, summary CSV and plots");
  add_run_options(sw, sweep_o);
  sw->add_option("--param", sweep_param, "alpha, epsilon or robust_pt");
  sw->add_option("--values", sweep_values, "comma-separated values; a/b fractions allowed");

  std::string plot_in, plot_param = "alpha", plot_out;
  auto* plot = app.add_subcommand("plot", "plots from stored manifests");
  plot->add_option("--in", plot_in, "directory searched for manifest.json files")->required();
  plot->add_option("--param", plot_param, "swept parameter on the x axis");
  plot->add_option("--out", plot_out, "output directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (teacher->parsed()) return cmd_teacher(teacher_o);
    if (pretrain->parsed()) return cmd_pretrain(pretrain_o);
    if (train->parsed()) return cmd_train(train_o);
    if (eval->parsed()) return cmd_eval(eval_o, eval_attacks, eval_lip);
    if (lip->parsed()) return cmd_lipschitz(lip_o, lip_eps, lip_search);
    if (probe->parsed()) return cmd_probe(probe_o, probe_eps, probe_rho, probe_other, probe_steps);
    if (theory->parsed()) return cmd_verify_theory(theory_n, theory_seed, theory_out, theory_independent);
    if (sw->parsed()) return cmd_sweep(sweep_o, sweep_param, sweep_values);
    if (plot->parsed()) return cmd_plot(plot_in, plot_param, plot_out);
  } catch (const StageError& e) {
    std::fprintf(stderr, "error in stage %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
