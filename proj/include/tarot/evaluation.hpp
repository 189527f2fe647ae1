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

// Standard and robust accuracy, the empirical local Lipschitz estimator,
// per-epoch metrics records and checkpoint selection.

#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tarot/attacks.hpp"
#include "tarot/core.hpp"
#include "tarot/disparity.hpp"
#include "tarot/losses.hpp"

namespace tarot {

template <Scorer M>
double standard_accuracy(const M& f, const DomainDataset& data) {
  if (!data.labeled()) throw MissingLabelsError("standard_accuracy: dataset '" + data.name + "' is unlabeled");
  if (data.size() == 0) throw ParameterError("standard_accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (predict_class(f, data.inputs[i]) == data.label(i)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Fraction of samples whose adversarial prediction matches the label. Every
/// sample is attacked, including clean misclassifications.
template <Scorer M>
double robust_accuracy(const M& f, const DomainDataset& data, const AttackSpec& attack, std::uint64_t seed) {
  if (!data.labeled()) throw MissingLabelsError("robust_accuracy: dataset '" + data.name + "' is unlabeled");
  if (data.size() == 0) throw ParameterError("robust_accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const AttackResult r = run_attack(attack, f, CrossEntropy{}, data.inputs[i], data.label(i), derive_seed(seed, i));
    if (predict_class(f.logits(r.x_adv)) == data.label(i)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Robust accuracy with the exhaustive maximizer: a sample counts only if no
/// world point in its ball is misclassified.
template <Scorer M>
double robust_accuracy_exact(const M& f, const DomainDataset& data, const FiniteWorld& world) {
  if (!data.labeled()) throw MissingLabelsError("robust_accuracy_exact: dataset '" + data.name + "' is unlabeled");
  if (data.size() == 0) throw ParameterError("robust_accuracy_exact: empty dataset");
  const TableScorer table = tabulate(f, world);
  const BallSearch how = BallSearch::exact_on(world);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t p = detail::world_index(how, data.inputs[i]);
    const int y = data.label(i);
    const auto [arg, wrong] =
        exact_ball_max([&](std::size_t j) { return table.predict(j) != y ? 1.0 : 0.0; }, p, world);
    if (wrong == 0.0) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Local Lipschitz estimate

struct LipschitzSearch {
  int steps = 50;
  double step_size = 0.0;  // 0 means epsilon / 10
  int restarts = 3;
  std::uint64_t seed = 0;
  std::optional<Box> box;
};

struct LipschitzEstimate {
  double value = 0.0;  // mean of per-sample maxima; a lower bound
  std::vector<double> per_sample;
  std::size_t skipped = 0;  // samples where every restart collapsed onto x
};

inline void to_json(json& j, const LipschitzEstimate& e) {
  j = json{{"value", e.value}, {"skipped", e.skipped}, {"n", e.per_sample.size()}};
}

inline constexpr double kLipschitzFloor = 1e-12;

/// Mean over samples of max over B_inf(x, eps) of ||f(x) - f(x')||_1 / ||x - x'||_inf,
/// maximized per sample by signed-gradient ascent from random starts.
template <Scorer M>
LipschitzEstimate local_lipschitz_estimate(const M& f, const std::vector<Vec>& inputs, double epsilon,
                                           const LipschitzSearch& search = {}) {
  if (!(epsilon > 0.0)) throw ParameterError("local_lipschitz_estimate: epsilon must be > 0");
  if (search.steps < 1) throw ParameterError("local_lipschitz_estimate: steps must be >= 1");
  if (search.restarts < 1) throw ParameterError("local_lipschitz_estimate: restarts must be >= 1");
  if (inputs.empty()) throw ParameterError("local_lipschitz_estimate: no inputs");
  PerturbationBudget ball;
  ball.epsilon = epsilon;
  ball.step_size = search.step_size > 0.0 ? search.step_size : epsilon / 10.0;
  ball.box = search.box;

  LipschitzEstimate out;
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Vec& x = inputs[i];
    const Vec fx = f.logits(x);
    auto ratio = [&](const Vec& xp, Vec* grad) {
      const Vec diff = f.logits(xp) - fx;
      const Vec delta = xp - x;
      Eigen::Index k = 0;
      const double den = std::max(delta.cwiseAbs().maxCoeff(&k), kLipschitzFloor);
      const double num = diff.lpNorm<1>();
      if (grad) {
        const Vec s = diff.unaryExpr([](double v) { return detail::sign0(v); });
        *grad = f.input_grad(xp, s) / den;
        (*grad)[k] -= num * detail::sign0(delta[k]) / (den * den);
      }
      return num / den;
    };
    auto collapsed = [&](const Vec& xp) { return (xp - x).cwiseAbs().maxCoeff() < kLipschitzFloor; };

    double best = -1.0;
    for (int r = 0; r < search.restarts; ++r) {
      Rng rng(derive_seed(search.seed, i, static_cast<std::uint64_t>(r)));
      Vec cur = detail::random_start(x, ball, rng);
      if (collapsed(cur)) cur = detail::random_start(x, ball, rng);
      if (collapsed(cur)) continue;
      Vec grad;
      best = std::max(best, ratio(cur, &grad));
      for (int s = 0; s < search.steps; ++s) {
        cur = detail::project(cur + ball.step_size * detail::sign(grad), x, ball);
        if (collapsed(cur)) {
          cur = detail::random_start(x, ball, rng);
          if (collapsed(cur)) break;
        }
        best = std::max(best, ratio(cur, &grad));
      }
    }
    if (best < 0.0) {
      ++out.skipped;
      out.per_sample.push_back(0.0);
      continue;
    }
    out.per_sample.push_back(best);
    total += best;
    ++counted;
  }
  out.value = counted ? total / static_cast<double>(counted) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Reports and metric records

struct EvalReport {
  std::string domain_tag;
  std::size_t n_samples = 0;
  double standard_acc = 0.0;
  std::map<std::string, double> robust_acc;  // keyed by attack label
  std::optional<double> lipschitz;
};

inline void to_json(json& j, const EvalReport& r) {
  j = json{{"domain_tag", r.domain_tag},
           {"n_samples", r.n_samples},
           {"standard_acc", r.standard_acc},
           {"robust_acc", r.robust_acc},
           {"lipschitz", r.lipschitz ? json(*r.lipschitz) : json(nullptr)}};
}

inline void from_json(const json& j, EvalReport& r) {
  r.domain_tag = j.at("domain_tag").get<std::string>();
  r.n_samples = j.at("n_samples").get<std::size_t>();
  r.standard_acc = j.at("standard_acc").get<double>();
  r.robust_acc = j.at("robust_acc").get<std::map<std::string, double>>();
  if (j.contains("lipschitz") && !j.at("lipschitz").is_null()) r.lipschitz = j.at("lipschitz").get<double>();
}

template <Scorer M>
EvalReport evaluate(const M& f, const DomainDataset& data, const std::vector<AttackSpec>& attacks,
                    std::uint64_t seed, std::optional<std::pair<double, LipschitzSearch>> lipschitz = std::nullopt) {
  EvalReport r;
  r.domain_tag = to_string(data.domain_tag);
  r.n_samples = data.size();
  r.standard_acc = standard_accuracy(f, data);
  for (std::size_t a = 0; a < attacks.size(); ++a)
    r.robust_acc[attacks[a].label()] = robust_accuracy(f, data, attacks[a], derive_seed(seed, 0xa77ac, a));
  if (lipschitz) r.lipschitz = local_lipschitz_estimate(f, data.inputs, lipschitz->first, lipschitz->second).value;
  return r;
}

/// Renders reports as "standard / robust" percentage cells, one row per domain.
inline std::string format_report_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::ostringstream os;
  int width = 28;
  for (const auto& row : rows) width = std::max(width, static_cast<int>(row.first.size()) + 2);
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%-*s %8s  %s\n", width, "domain", "n", "standard / robust (%)");
  os << buf;
  for (const auto& [name, r] : rows) {
    std::string cells;
    for (const auto& [label, acc] : r.robust_acc) {
      char cell[64];
      std::snprintf(cell, sizeof(cell), "%6.2f / %6.2f [%s]  ", 100.0 * r.standard_acc, 100.0 * acc, label.c_str());
      cells += cell;
    }
    if (r.robust_acc.empty()) {
      char cell[32];
      std::snprintf(cell, sizeof(cell), "%6.2f", 100.0 * r.standard_acc);
      cells = cell;
    }
    std::snprintf(buf, sizeof(buf), "%-*s %8zu  ", width, name.c_str(), r.n_samples);
    os << buf << cells << '\n';
  }
  return os.str();
}

/// One record per epoch. Accuracy maps are keyed by domain name.
struct MetricsRecord {
  int epoch = 0;
  std::map<std::string, double> losses;
  std::map<std::string, double> standard_acc;
  std::map<std::string, double> robust_acc;
  std::optional<double> lipschitz;
};

inline void to_json(json& j, const MetricsRecord& m) {
  j = json{{"epoch", m.epoch},
           {"losses", m.losses},
           {"standard_acc", m.standard_acc},
           {"robust_acc", m.robust_acc},
           {"lipschitz", m.lipschitz ? json(*m.lipschitz) : json(nullptr)}};
}

inline void from_json(const json& j, MetricsRecord& m) {
  m.epoch = j.at("epoch").get<int>();
  m.losses = j.at("losses").get<std::map<std::string, double>>();
  m.standard_acc = j.at("standard_acc").get<std::map<std::string, double>>();
  m.robust_acc = j.at("robust_acc").get<std::map<std::string, double>>();
  if (j.contains("lipschitz") && !j.at("lipschitz").is_null()) m.lipschitz = j.at("lipschitz").get<double>();
}

enum class SelectionPolicy { kPgd20Target, kLast };

inline SelectionPolicy selection_policy_from_string(const std::string& s) {
  if (s == "pgd20-target") return SelectionPolicy::kPgd20Target;
  if (s == "last") return SelectionPolicy::kLast;
  throw ParameterError("unknown selection policy '" + s + "'");
}

/// Epoch to keep. pgd20-target takes the best target robust accuracy (later
/// epoch on ties); it reads target labels, so reports call it oracle selection.
inline int select_checkpoint(const std::vector<MetricsRecord>& history, SelectionPolicy policy) {
  if (history.empty()) throw PolicyError("select_checkpoint: empty history");
  if (policy == SelectionPolicy::kLast) return history.back().epoch;
  int best_epoch = -1;
  double best = -1.0;
  for (const MetricsRecord& m : history) {
    auto it = m.robust_acc.find("target");
    if (it == m.robust_acc.end())
      throw PolicyError("select_checkpoint: epoch " + std::to_string(m.epoch) + " has no target robust accuracy");
    if (it->second >= best) {
      best = it->second;
      best_epoch = m.epoch;
    }
  }
  return best_epoch;
}

}  // namespace tarot
