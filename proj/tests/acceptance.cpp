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

// Acceptance suite: one line per criterion, then a summary. Exit status is
// nonzero when a correctness criterion (1-5, 9, 10) fails; the trend criteria
// (6-8) are reported but do not gate the exit status.

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "tarot/disparity.hpp"
#include "tarot/evaluation.hpp"
#include "tarot/experiment.hpp"
#include "tarot/theory.hpp"
#include "tarot/training.hpp"
#include "test_util.hpp"

namespace tarot {
namespace {

using testing::numeric_gradient;
using testing::random_vec;
using testing::relative_error;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome theory_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const TheorySummary s = verify_theory(1000, 1);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  for (const char* k : {"prop1", "prop2", "prop3", "disp_risk_lemma"}) worst = std::min(worst, s.min_slack.at(k));
  const bool ok = s.failures.empty() && worst >= -kSlackTolerance && secs < 120.0;
  return {ok, fmt("%.0f instances, min slack %.3g, %.1f s", static_cast<double>(s.checked), worst, secs)};
}

Outcome dominance() {
  Rng rng(11);
  int violations = 0;
  for (int t = 0; t < 500; ++t) {
    const FiniteWorld w = make_finite_world(1 + static_cast<int>(rng.index(2)), 3 + static_cast<int>(rng.index(4)),
                                            rng.uniform(0, 0.6), rng.next());
    const int c = 2 + static_cast<int>(rng.index(2));
    TableScorer f, fp;
    for (std::size_t i = 0; i < w.size(); ++i) {
      f.table.push_back(random_vec(rng, c, -2, 2));
      fp.table.push_back(random_vec(rng, c, -2, 2));
    }
    const double rho = rng.uniform(0.1, 2.0);
    for (const auto* wt : {&w.source_weights, &w.target_weights}) {
      const double d01 = exact::disparity_01(fp, f, *wt);
      const double r01 = exact::robust_disparity_01(fp, f, *wt, w);
      const double rm = exact::robust_margin_disparity(fp, f, *wt, rho, w);
      if (!(rm >= r01) || !(r01 >= d01)) ++violations;
    }
  }
  return {violations == 0, fmt("500 instances x 2 domains, %.0f violations", violations)};
}

Outcome gradient_checks() {
  Rng rng(12);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const GradientReversal grl{rng.uniform(0.0, 2.0)};
    const Vec x = random_vec(rng, 5);
    auto downstream = [](const Vec& v) { return v.array().cube().sum(); };
    auto through = [&](const Vec& v) { return -grl.coefficient * downstream(v); };
    worst = std::max(worst, relative_error(grl.backward(numeric_gradient(downstream, x)), numeric_gradient(through, x)));

    const int c = 2 + static_cast<int>(rng.index(3));
    const Vec z = random_vec(rng, c, -3, 3);
    const int y = static_cast<int>(rng.index(c));
    worst = std::max(worst, relative_error(ce_loss_grad(z, y), numeric_gradient([&](const Vec& v) { return ce_loss(v, y); }, z)));
    worst = std::max(worst, relative_error(CrossEntropy{}.grad(z, y),
                                           numeric_gradient([&](const Vec& v) { return ce_rob_loss(v, y); }, z)));
    worst = std::max(worst, relative_error(mod_ce_rob_loss_grad(z, y),
                                           numeric_gradient([&](const Vec& v) { return mod_ce_rob_loss(v, y); }, z)));
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ComposedScorer f = ComposedScorer::init(2, 6, 3, seed);
    f.psi.set_standardization(Vec{{0.5, 0.5}}, Vec{{3.0, 3.0}});
    Batch source;
    std::vector<Vec> clean, adv;
    std::vector<int> labels;
    for (int i = 0; i < 5; ++i) {
      source.inputs.push_back(random_vec(rng, 2, 0, 1));
      source.labels.push_back(static_cast<int>(rng.index(3)));
      clean.push_back(random_vec(rng, 2, 0, 1));
      adv.push_back((clean.back() + random_vec(rng, 2, -0.05, 0.05)).eval());
      labels.push_back(static_cast<int>(rng.index(3)));
    }
    ObjectiveInputs in;
    in.source = &source;
    in.target_clean = &clean;
    in.target_adv = &adv;
    in.target_labels = &labels;
    const double alpha = rng.uniform(0.1, 1.0), gamma = 4.0;
    const ObjectiveGradients g = objective_gradients(f, TrainMode::kTarot, in, alpha, gamma, 1.0);
    auto loss = [&](const ComposedScorer& h) {
      return objective_gradients(h, TrainMode::kTarot, in, alpha, gamma, 1.0).losses.total;
    };
    auto by_psi = [&](const Vec& p) {
      ComposedScorer h = f;
      h.psi.params() = p;
      return loss(h);
    };
    auto by_pi = [&](const Vec& p) {
      ComposedScorer h = f;
      h.pi.params() = p;
      return loss(h);
    };
    auto by_aux = [&](const Vec& p) {
      ComposedScorer h = f;
      h.pi_aux->params() = p;
      return loss(h);
    };
    worst = std::max(worst, relative_error(g.grad_psi, numeric_gradient(by_psi, f.psi.params())));
    worst = std::max(worst, relative_error(g.grad_pi, numeric_gradient(by_pi, f.pi.params())));
    worst = std::max(worst, relative_error(g.grad_aux, (-numeric_gradient(by_aux, f.pi_aux->params())).eval()));
  }
  return {worst <= 1e-5, fmt("max relative error %.2e", worst)};
}

Outcome attack_correctness() {
  Rng rng(13);
  double closed_form = 0.0;
  int mismatches = 0, escapes = 0;
  for (int t = 0; t < 1000; ++t) {
    const Mat W = random_vec(rng, 4, -2, 2).reshaped(2, 2);
    const Vec bias = random_vec(rng, 2);
    const LinearScorer f(W, bias);
    const Vec x = random_vec(rng, 2, -1, 1);
    const int y = static_cast<int>(rng.index(2));
    const double eps = rng.uniform(0.0, 0.5);
    const Vec dw = W.row(y) - W.row(1 - y);
    const double m = dw.dot(x) + bias[y] - bias[1 - y];
    const double worst = std::log1p(std::exp(-(m - eps * dw.lpNorm<1>())));
    const AttackResult g = fgsm(f, CrossEntropy{}, x, y, eps);
    closed_form = std::max(closed_form, std::abs(g.loss_adv - worst));
    PerturbationBudget b = PerturbationBudget::pgd(std::max(eps, 1e-6), 1, false);
    b.step_size = b.epsilon;
    const AttackResult p = pgd(f, CrossEntropy{}, x, y, b);
    const AttackResult q = fgsm(f, CrossEntropy{}, x, y, b.epsilon);
    if (!(p.x_adv == q.x_adv) || p.loss_adv != q.loss_adv) ++mismatches;
  }
  const ComposedScorer net = ComposedScorer::init(2, 8, 3, 9);
  const Box box = Box::unit(2);
  for (int t = 0; t < 10000; ++t) {
    const Vec x = random_vec(rng, 2, 0, 1);
    const int y = static_cast<int>(rng.index(3));
    const double eps = rng.uniform(0.0, 0.4);
    AttackResult r;
    if (t % 2 == 0) {
      const PerturbationBudget b =
          PerturbationBudget::pgd(eps, 1 + static_cast<int>(rng.index(10)), rng.index(2) == 1, box);
      r = pgd(net, CrossEntropy{}, x, y, b, rng.next());
    } else {
      r = fgsm(net, CrossEntropy{}, x, y, eps, box);
    }
    if (!((r.x_adv - x).cwiseAbs().maxCoeff() <= eps) || !box.contains(r.x_adv, 0.0)) ++escapes;
  }
  const bool ok = closed_form <= 1e-9 && mismatches == 0 && escapes == 0;
  return {ok, fmt("closed-form gap %.1e, pgd/fgsm mismatches %.0f, containment escapes %.0f / 10000", closed_form,
                  mismatches, escapes)};
}

Outcome alpha_zero() {
  auto [src, tgt] = make_two_moons_shift(200, 40.0, 0.1, 3);
  TarotConfig c;
  c.attack = PerturbationBudget::pgd(0.05, 5, true, Box::unit(2));
  c.hidden = 16;
  c.epochs = 4;
  c.alpha = 0.0;
  c.seed = 5;
  const ComposedScorer teacher = train_teacher_mdd(src, tgt, [&] {
    TarotConfig t = c;
    t.alpha = 0.1;
    t.attack.epsilon = 0.0;
    t.attack.step_size = 1.0;
    return t;
  }());
  const TrainState a = train_tarot(src, tgt, teacher, std::nullopt, c);
  const TrainState b = train_pl(src, tgt, teacher, std::nullopt, c);
  bool same = a.checkpoints.size() == b.checkpoints.size();
  for (std::size_t e = 0; same && e < a.checkpoints.size(); ++e) {
    same = a.checkpoints[e].psi.params() == b.checkpoints[e].psi.params() &&
           a.checkpoints[e].pi.params() == b.checkpoints[e].pi.params();
  }
  return {same, fmt("%.0f epochs, feature extractor and classifier compared bitwise per epoch",
                    static_cast<double>(a.checkpoints.size()))};
}

// Median over seeds of a report entry for runs matching a predicate.
double median_of(const std::vector<RunManifest>& runs, const std::string& domain,
                 const std::function<bool(const ExperimentConfig&)>& keep) {
  std::vector<double> v;
  for (const RunManifest& m : runs) {
    const ExperimentConfig c = experiment_config_from_json(m.config);
    if (keep(c)) v.push_back(m.reports.at(domain).robust_acc.begin()->second);
  }
  return median(v);
}

struct TrendRuns {
  std::vector<RunManifest> tarot;  // epsilon x robust_pt sweep
  std::vector<RunManifest> pl;     // largest epsilon, random init
  double sweep_seconds = 0.0;
  double largest_eps = 0.0;
};

TrendRuns trend_runs(const ExperimentConfig& base, const fs::path& root) {
  TrendRuns r;
  const std::vector<double> eps = {0.02, 0.035, 0.05};
  r.largest_eps = eps.back();
  const auto t0 = std::chrono::steady_clock::now();
  for (double pt : {0.0, 1.0}) {
    const SweepResult s = sweep(with_value(base, SweepParam::kRobustPt, pt), SweepParam::kEpsilon, eps, root);
    r.tarot.insert(r.tarot.end(), s.runs.begin(), s.runs.end());
  }
  r.sweep_seconds = seconds_since(t0);
  ExperimentConfig pl = with_value(base, SweepParam::kEpsilon, r.largest_eps);
  pl.method = Method::kPl;
  pl.robust_pt = false;
  for (std::uint64_t seed : pl.seeds) r.pl.push_back(run_experiment(pl, seed, root));
  return r;
}

Outcome robust_pt_trend(const TrendRuns& r) {
  auto at = [&](bool pt) {
    return median_of(r.tarot, "target", [&](const ExperimentConfig& c) {
      return c.robust_pt == pt && c.train.attack.epsilon == r.largest_eps;
    });
  };
  const double with_pt = at(true), without = at(false);
  const double gain = 100.0 * (with_pt - without);
  return {gain >= 5.0 && r.sweep_seconds < 600.0,
          fmt("eps %.3g: target robust %.3f (robust-pt) vs %.3f (random init), %+.1f pp", r.largest_eps, with_pt,
              without, gain) +
              fmt(", sweep %.0f s", r.sweep_seconds)};
}

Outcome invariance_trend(const TrendRuns& r) {
  auto tarot = [&](const std::string& domain) {
    return median_of(r.tarot, domain, [&](const ExperimentConfig& c) {
      return !c.robust_pt && c.train.attack.epsilon == r.largest_eps;
    });
  };
  auto pl = [&](const std::string& domain) {
    return median_of(r.pl, domain, [](const ExperimentConfig&) { return true; });
  };
  const double src_gap = 100.0 * (tarot("source") - pl("source"));
  const double tgt_gap = 100.0 * (tarot("target") - pl("target"));
  return {src_gap >= 10.0 && tgt_gap >= -2.0,
          fmt("source robust %.3f vs PL %.3f (%+.1f pp)", tarot("source"), pl("source"), src_gap) +
              fmt(", target robust %.3f vs PL %.3f (%+.1f pp)", tarot("target"), pl("target"), tgt_gap)};
}

Outcome lipschitz_trend(const ExperimentConfig& base) {
  const DomainDataset src = make_domain(base.source, 21, DomainTag::kSource);
  const DomainDataset probe = make_domain(base.source, 22, DomainTag::kSource);
  TarotConfig at = base.train;
  at.seed = 4;
  TarotConfig standard = at;
  standard.attack.epsilon = 0.0;
  standard.attack.step_size = 1.0;
  const ComposedScorer robust = train_standard_at(src, at).scorer;
  const ComposedScorer plain = train_standard_at(src, standard).scorer;
  LipschitzSearch search;
  search.seed = 23;
  search.box = Box::unit(2);
  const std::vector<Vec> xs(probe.inputs.begin(), probe.inputs.begin() + 200);
  const double lr = local_lipschitz_estimate(robust.main_path(), xs, at.attack.epsilon, search).value;
  const double lp = local_lipschitz_estimate(plain.main_path(), xs, at.attack.epsilon, search).value;
  return {lr <= 0.5 * lp, fmt("adversarial %.3f vs standard %.3f (ratio %.3f)", lr, lp, lr / lp)};
}

Outcome exact_monotone() {
  Rng rng(14);
  int fixtures = 0, violations = 0;
  const std::vector<double> grid = {0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5};
  for (int t = 0; t < 50; ++t, ++fixtures) {
    const int d = 1 + static_cast<int>(rng.index(2));
    FiniteWorld w = make_finite_world(d, d == 1 ? 21 : 9, 0.0, rng.next());
    const ComposedScorer f = ComposedScorer::init(d, 8, 2, rng.next());
    DomainDataset data;
    data.name = "world";
    data.domain_tag = DomainTag::kTarget;
    data.num_classes = 2;
    data.inputs = w.points;
    std::vector<int> labels;
    for (const Vec& p : w.points) labels.push_back(rng.uniform() < 0.8 ? predict_class(f, p) : static_cast<int>(rng.index(2)));
    data.labels = labels;
    double prev = 2.0;
    for (double eps : grid) {
      w.set_epsilon(eps);
      const double acc = robust_accuracy_exact(f, data, w);
      if (acc > prev) ++violations;
      prev = acc;
    }
  }
  return {violations == 0,
          fmt("%.0f worlds x %.0f epsilons, %.0f increases", fixtures, static_cast<double>(grid.size()), violations)};
}

Outcome rademacher_fixtures() {
  const bool ok = empirical_rademacher({{0.3, -1.2, 2.0}}) == 0.0 && empirical_rademacher({{5.0}}) == 0.0 &&
                  empirical_rademacher({{1, 0, 0}, {0, 1, 0}}) == 4.0 / 24.0 &&
                  empirical_rademacher({{1, 2}, {-1, -2}}) == 1.0 &&
                  empirical_rademacher({{1, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, -1}}) == 12.0 / 64.0;
  return {ok, "3 hand-enumerated fixtures exact, 2 singleton classes give 0"};
}

int run(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <experiment config>\n", argv[0]);
    return 2;
  }
  ExperimentConfig base = load_experiment_config(argv[1]);
  base.unseen.clear();
  base.save_checkpoints = false;
  const fs::path root = fs::temp_directory_path() / ("tarot-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(root);

  struct Line {
    int id;
    const char* name;
    bool gating;
    Outcome outcome;
  };
  std::vector<Line> lines;
  auto report = [&](int id, const char* name, bool gating, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("[%s] %2d %-28s %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    lines.push_back({id, name, gating, o});
  };

  report(1, "theory oracle suite", true, theory_suite);
  report(2, "disparity dominance", true, dominance);
  report(3, "gradient checks", true, gradient_checks);
  report(4, "attack correctness", true, attack_correctness);
  report(5, "alpha=0 equals PL", true, alpha_zero);
  std::optional<TrendRuns> trends;
  try {
    trends = trend_runs(base, root);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "trend runs failed: %s\n", e.what());
  }
  auto need = [&]() -> const TrendRuns& {
    if (!trends) throw Error("trend runs unavailable");
    return *trends;
  };
  report(6, "robust-pt trend", false, [&] { return robust_pt_trend(need()); });
  report(7, "domain-invariance trend", false, [&] { return invariance_trend(need()); });
  report(8, "lipschitz trend", false, [&] { return lipschitz_trend(base); });
  report(9, "exact robust acc monotone", true, exact_monotone);
  report(10, "rademacher fixtures", true, rademacher_fixtures);
  fs::remove_all(root);

  int passed = 0;
  bool gate = true;
  for (const Line& l : lines) {
    passed += l.outcome.pass;
    if (l.gating && !l.outcome.pass) gate = false;
  }
  std::printf("acceptance: %d/%zu criteria met; correctness criteria %s\n", passed, lines.size(),
              gate ? "all met" : "NOT all met");
  return gate ? 0 : 1;
}

}  // namespace
}  // namespace tarot

int main(int argc, char** argv) { return tarot::run(argc, argv); }
