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

// Exhaustive verification of the robust domain-adaptation inequalities on
// finite instances, and exact empirical Rademacher complexity.
//
// Scorers are lookup tables over the points of a FiniteWorld, so every
// "max over the ball" and "sup over the class" below is a finite computation.
// The concentration terms of the generalization bound (Rademacher terms and
// confidence terms) are not checked here; only its computable ingredients are.

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "tarot/core.hpp"
#include "tarot/disparity.hpp"
#include "tarot/losses.hpp"
#include "tarot/synthdata.hpp"

namespace tarot {

struct TheoryInstance {
  FiniteWorld world;
  std::vector<int> source_labels;
  std::vector<int> target_labels;
  std::vector<TableScorer> hypothesis_class;
  double rho = 1.0;
  int num_classes = 2;

  const std::vector<double>& source() const { return world.source_weights; }
  const std::vector<double>& target() const { return world.target_weights; }

  void validate() const {
    const std::size_t n = world.size();
    if (source_labels.size() != n || target_labels.size() != n)
      throw InputShapeError("theory instance: labels must cover every world point");
    if (hypothesis_class.empty()) throw ParameterError("theory instance: empty hypothesis class");
    for (const auto& f : hypothesis_class) {
      if (f.size() != n) throw InputShapeError("theory instance: scorer does not cover the world");
      for (const Vec& z : f.table)
        if (z.size() != num_classes) throw InputShapeError("theory instance: logit width differs from C");
    }
    if (!(rho > 0.0)) throw ParameterError("theory instance: rho must be > 0");
  }
};

inline constexpr double kSlackTolerance = 1e-12;

struct InequalityReport {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;
  std::map<std::string, double> terms;

  bool holds() const { return slack >= -kSlackTolerance; }
};

inline void to_json(json& j, const InequalityReport& r) {
  j = json{{"name", r.name}, {"lhs", r.lhs}, {"rhs", r.rhs}, {"slack", r.slack}, {"terms", r.terms}};
}

namespace detail {

inline InequalityReport finish(std::string name, double lhs, double rhs, std::map<std::string, double> terms) {
  InequalityReport r;
  r.name = std::move(name);
  r.lhs = lhs;
  r.rhs = rhs;
  r.slack = rhs - lhs;
  r.terms = std::move(terms);
  return r;
}

inline double combined_margin_risk(const TheoryInstance& inst, std::size_t k) {
  const TableScorer& g = inst.hypothesis_class[k];
  return exact::margin_risk(g, inst.target_labels, inst.target(), inst.rho) +
         exact::margin_risk(g, inst.source_labels, inst.source(), inst.rho);
}

}  // namespace detail

/// Ideal joint hypothesis: all members minimizing R_T^rho + R_S^rho, in index
/// order. The first entry is the one the verifiers report.
inline std::vector<std::size_t> ideal_hypotheses(const TheoryInstance& inst, double* lambda = nullptr) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> values;
  for (std::size_t k = 0; k < inst.hypothesis_class.size(); ++k) {
    values.push_back(detail::combined_margin_risk(inst, k));
    best = std::min(best, values.back());
  }
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < values.size(); ++k)
    if (values[k] == best) out.push_back(k);
  if (lambda) *lambda = best;
  return out;
}

/// Exact L_f(D_X, eps): max over support points of the max over their ball
/// (excluding the point) of ||f(x') - f(x)||_1 / ||x' - x||_inf.
inline double exact_local_lipschitz(const TableScorer& f, const FiniteWorld& world,
                                    const std::vector<double>& weights) {
  double best = 0.0;
  for (std::size_t i = 0; i < world.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    for (std::size_t j : world.ball_map[i]) {
      if (j == i) continue;
      const double dx = distance(world.points[i], world.points[j], Norm::kLinf);
      if (dx <= 0.0) continue;
      best = std::max(best, (f(j) - f(i)).lpNorm<1>() / dx);
    }
  }
  return best;
}

/// R_T^rob(f) <= R_S^rho(f) + [disp^{rob,rho}_T(f*, f) - disp^rho_S(f*, f)] + lambda.
/// The report uses the lowest-index f*; terms["min_slack_all_minimizers"]
/// repeats the check for every minimizer.
inline InequalityReport verify_prop1(const TheoryInstance& inst, std::size_t f_index) {
  const TableScorer& f = inst.hypothesis_class.at(f_index);
  double lambda = 0.0;
  const auto minimizers = ideal_hypotheses(inst, &lambda);
  const double lhs = exact::robust_risk_01(f, inst.target_labels, inst.target(), inst.world);
  const double src_margin = exact::margin_risk(f, inst.source_labels, inst.source(), inst.rho);

  auto rhs_for = [&](std::size_t k, double* rob_t, double* std_s) {
    const TableScorer& fs = inst.hypothesis_class[k];
    *rob_t = exact::robust_margin_disparity(fs, f, inst.target(), inst.rho, inst.world);
    *std_s = exact::margin_disparity(fs, f, inst.source(), inst.rho);
    return src_margin + (*rob_t - *std_s) + lambda;
  };

  double rob_t = 0.0;
  double std_s = 0.0;
  const double rhs = rhs_for(minimizers.front(), &rob_t, &std_s);
  double min_slack = rhs - lhs;
  for (std::size_t k : minimizers) {
    double a = 0.0;
    double b = 0.0;
    min_slack = std::min(min_slack, rhs_for(k, &a, &b) - lhs);
  }
  return detail::finish("prop1", lhs, rhs,
                        {{"robust_risk_target", lhs},
                         {"margin_risk_source", src_margin},
                         {"robust_margin_disparity_target", rob_t},
                         {"margin_disparity_source", std_s},
                         {"lambda", lambda},
                         {"f_star", static_cast<double>(minimizers.front())},
                         {"num_minimizers", static_cast<double>(minimizers.size())},
                         {"min_slack_all_minimizers", min_slack}});
}

/// R_T^rob(f) <= disp^rob_T(f*, f) + R_T(f*) for an arbitrary f*.
inline InequalityReport verify_prop2(const TheoryInstance& inst, std::size_t f_index, std::size_t f_star_index) {
  const TableScorer& f = inst.hypothesis_class.at(f_index);
  const TableScorer& fs = inst.hypothesis_class.at(f_star_index);
  const double lhs = exact::robust_risk_01(f, inst.target_labels, inst.target(), inst.world);
  const double disp = exact::robust_disparity_01(fs, f, inst.target(), inst.world);
  const double risk = exact::risk_01(fs, inst.target_labels, inst.target());
  return detail::finish("prop2", lhs, disp + risk,
                        {{"robust_risk_target", lhs}, {"robust_disparity_target", disp}, {"risk_target_f_star", risk}});
}

/// R_S^rob(f) <= R_S^rho(f) + 2 d^{rob,rho}_{f,F}(S_X, T_X) + 2 eps L_f(S_X, eps)/rho + lambda.
inline InequalityReport verify_prop3(const TheoryInstance& inst, std::size_t f_index) {
  const TableScorer& f = inst.hypothesis_class.at(f_index);
  double lambda = 0.0;
  ideal_hypotheses(inst, &lambda);
  const double lhs = exact::robust_risk_01(f, inst.source_labels, inst.source(), inst.world);
  const double src_margin = exact::margin_risk(f, inst.source_labels, inst.source(), inst.rho);
  const double discrepancy =
      robust_mdd_exact(f, inst.hypothesis_class, inst.source(), inst.target(), inst.rho, inst.world);
  const double lip = exact_local_lipschitz(f, inst.world, inst.source());
  const double lip_term = 2.0 * inst.world.epsilon * lip / inst.rho;
  const double rhs = src_margin + 2.0 * discrepancy + lip_term + lambda;
  return detail::finish("prop3", lhs, rhs,
                        {{"robust_risk_source", lhs},
                         {"margin_risk_source", src_margin},
                         {"discrepancy", discrepancy},
                         {"local_lipschitz_source", lip},
                         {"lipschitz_term", lip_term},
                         {"lambda", lambda}});
}

enum class Domain { kSource, kTarget };

/// disp^rho_D(f', f) <= R^rho_D(f') + R^rho_D(f).
inline InequalityReport verify_disp_risk_lemma(const TheoryInstance& inst, std::size_t f_index,
                                               std::size_t f_prime_index, Domain domain) {
  const TableScorer& f = inst.hypothesis_class.at(f_index);
  const TableScorer& fp = inst.hypothesis_class.at(f_prime_index);
  const auto& w = domain == Domain::kSource ? inst.source() : inst.target();
  const auto& y = domain == Domain::kSource ? inst.source_labels : inst.target_labels;
  const double lhs = exact::margin_disparity(fp, f, w, inst.rho);
  const double rf = exact::margin_risk(f, y, w, inst.rho);
  const double rfp = exact::margin_risk(fp, y, w, inst.rho);
  return detail::finish("disp_risk_lemma", lhs, rf + rfp,
                        {{"margin_disparity", lhs}, {"margin_risk_f", rf}, {"margin_risk_f_prime", rfp}});
}

inline constexpr std::size_t kMaxRademacherSamples = 16;

/// E_sigma sup_f (1/n) sum sigma_i f(z_i), averaged over all 2^n sign vectors.
/// function_class[k][i] is the k-th function evaluated at sample i.
inline double empirical_rademacher(const std::vector<std::vector<double>>& function_class) {
  if (function_class.empty()) throw ParameterError("empirical_rademacher: empty class");
  const std::size_t n = function_class.front().size();
  if (n == 0) throw ParameterError("empirical_rademacher: no samples");
  if (n > kMaxRademacherSamples)
    throw CapacityError("empirical_rademacher: n = " + std::to_string(n) + " exceeds 16 (exhaustive enumeration)");
  for (const auto& f : function_class)
    if (f.size() != n) throw InputShapeError("empirical_rademacher: ragged function class");
  const std::uint32_t vectors = 1u << n;
  auto sup_over_class = [&](std::uint32_t mask) {
    double sup = -std::numeric_limits<double>::infinity();
    for (const auto& f : function_class) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += ((mask >> i) & 1u) ? f[i] : -f[i];
      sup = std::max(sup, s);
    }
    return sup;
  };
  // Each sign vector is summed with its negation; for a single function the
  // two sums are exact negatives, so the result is exactly 0.
  double total = 0.0;
  for (std::uint32_t mask = 0; mask < vectors / 2; ++mask)
    total += sup_over_class(mask) + sup_over_class(~mask & (vectors - 1));
  return total / (static_cast<double>(vectors) * static_cast<double>(n));
}

struct InstanceSizes {
  int max_points = 25;
  int max_class = 8;
  int min_classes = 2;
  int max_classes = 3;
  bool independent_labels = false;  // separate labelings for S and T
};

inline constexpr int kMaxInstancePoints = 4096;
inline constexpr int kMaxInstanceClass = 1024;

/// Deterministic random instance: grid world in d in {1,2}, lookup-table
/// scorers with logits in [-2, 2], rho in [0.1, 2], eps from the world's
/// distance spectrum.
inline TheoryInstance random_instance(std::uint64_t seed, const InstanceSizes& sizes = {}) {
  if (sizes.max_points < 2 || sizes.max_points > kMaxInstancePoints)
    throw CapacityError("random_instance: max_points outside [2, 4096]");
  if (sizes.max_class < 1 || sizes.max_class > kMaxInstanceClass)
    throw CapacityError("random_instance: max_class outside [1, 1024]");
  if (sizes.min_classes < 2 || sizes.max_classes < sizes.min_classes)
    throw ParameterError("random_instance: invalid class-count range");
  Rng rng(seed);
  int d = 1 + static_cast<int>(rng.index(2));
  const int max_axis = d == 1 ? sizes.max_points : static_cast<int>(std::sqrt(static_cast<double>(sizes.max_points)));
  if (max_axis < 2) d = 1;
  const int axis_cap = d == 1 ? sizes.max_points : max_axis;
  const int g = 2 + static_cast<int>(rng.index(static_cast<std::size_t>(axis_cap - 1)));

  TheoryInstance inst;
  inst.world = make_finite_world(d, g, 0.0, rng.next());
  const auto spectrum = inst.world.distance_spectrum();
  inst.world.set_epsilon(spectrum[rng.index(spectrum.size())]);
  inst.num_classes = sizes.min_classes + static_cast<int>(rng.index(static_cast<std::size_t>(sizes.max_classes - sizes.min_classes + 1)));
  inst.rho = rng.uniform(0.1, 2.0);
  const std::size_t n = inst.world.size();
  for (std::size_t i = 0; i < n; ++i)
    inst.source_labels.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(inst.num_classes))));
  if (sizes.independent_labels) {
    for (std::size_t i = 0; i < n; ++i)
      inst.target_labels.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(inst.num_classes))));
  } else {
    inst.target_labels = inst.source_labels;
  }
  const int class_size = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(sizes.max_class)));
  for (int k = 0; k < class_size; ++k) {
    TableScorer f;
    for (std::size_t i = 0; i < n; ++i) {
      Vec z(inst.num_classes);
      for (int c = 0; c < inst.num_classes; ++c) z[c] = rng.uniform(-2.0, 2.0);
      f.table.push_back(std::move(z));
    }
    inst.hypothesis_class.push_back(std::move(f));
  }
  return inst;
}

// ---------------------------------------------------------------------------
// Batch verification

struct TheoryFailure {
  std::uint64_t instance_seed = 0;
  std::string check;
  double slack = 0.0;
  std::string detail;
};

struct TheorySummary {
  std::size_t checked = 0;
  std::map<std::string, double> min_slack;
  std::map<std::string, std::size_t> evaluations;
  std::vector<TheoryFailure> failures;
  std::string scope_note =
      "finite-instance checks of the population inequalities; concentration terms of the generalization "
      "bound are not verified";
};

inline void to_json(json& j, const TheorySummary& s) {
  json failures = json::array();
  for (const auto& f : s.failures)
    failures.push_back({{"instance_seed", f.instance_seed}, {"check", f.check}, {"slack", f.slack}, {"detail", f.detail}});
  j = json{{"checked", s.checked},
           {"min_slack", s.min_slack},
           {"evaluations", s.evaluations},
           {"failures", std::move(failures)},
           {"note", s.scope_note}};
}

/// Runs every verifier on n random instances: props 1 and 3 for each class
/// member, prop 2 and the disparity/risk lemma for every ordered pair.
inline TheorySummary verify_theory(std::size_t n, std::uint64_t seed, const InstanceSizes& sizes = {},
                                   std::size_t max_failures_recorded = 50) {
  TheorySummary s;
  for (const char* name : {"prop1", "prop2", "prop3", "disp_risk_lemma", "lambda_argmin"}) {
    s.min_slack[name] = std::numeric_limits<double>::infinity();
    s.evaluations[name] = 0;
  }
  auto record = [&](std::uint64_t inst_seed, const std::string& name, double slack, const std::string& where) {
    s.min_slack[name] = std::min(s.min_slack[name], slack);
    ++s.evaluations[name];
    if (slack < -kSlackTolerance && s.failures.size() < max_failures_recorded)
      s.failures.push_back({inst_seed, name, slack, where});
  };
  for (std::size_t t = 0; t < n; ++t) {
    const std::uint64_t inst_seed = derive_seed(seed, t);
    const TheoryInstance inst = random_instance(inst_seed, sizes);
    const std::size_t k = inst.hypothesis_class.size();
    double lambda = 0.0;
    ideal_hypotheses(inst, &lambda);
    double audit = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < k; ++a) audit = std::min(audit, detail::combined_margin_risk(inst, a) - lambda);
    record(inst_seed, "lambda_argmin", audit, "min over class of (R_T + R_S) - lambda");
    for (std::size_t a = 0; a < k; ++a) {
      const auto p1 = verify_prop1(inst, a);
      record(inst_seed, "prop1", std::min(p1.slack, p1.terms.at("min_slack_all_minimizers")), "f=" + std::to_string(a));
      record(inst_seed, "prop3", verify_prop3(inst, a).slack, "f=" + std::to_string(a));
      for (std::size_t b = 0; b < k; ++b) {
        const std::string where = "f=" + std::to_string(a) + ",g=" + std::to_string(b);
        record(inst_seed, "prop2", verify_prop2(inst, a, b).slack, where);
        record(inst_seed, "disp_risk_lemma", verify_disp_risk_lemma(inst, a, b, Domain::kSource).slack, where + ",S");
        record(inst_seed, "disp_risk_lemma", verify_disp_risk_lemma(inst, a, b, Domain::kTarget).slack, where + ",T");
      }
    }
    ++s.checked;
  }
  return s;
}

}  // namespace tarot
