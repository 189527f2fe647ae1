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

// Disparity measures between two scorers: clean and robust 0-1 disparity,
// (robust) margin disparity, the robust margin disparity discrepancy over a
// finite class, and the differentiable auxiliary-head term used in training.
//
// Two maximizers are available for the inner max over the epsilon-ball:
// exhaustive enumeration on a FiniteWorld (exact) and PGD on a surrogate
// (a lower-bound estimate).

#pragma once

#include <string>
#include <vector>

#include "tarot/attacks.hpp"
#include "tarot/core.hpp"
#include "tarot/losses.hpp"
#include "tarot/nn.hpp"
#include "tarot/synthdata.hpp"

namespace tarot {

/// A scorer known only on the points of a finite world.
struct TableScorer {
  std::vector<Vec> table;

  const Vec& operator()(std::size_t i) const { return table[i]; }
  int predict(std::size_t i) const { return predict_class(table[i]); }
  std::size_t size() const { return table.size(); }
  int num_classes() const { return table.empty() ? 0 : static_cast<int>(table.front().size()); }
};

template <Scorer M>
TableScorer tabulate(const M& f, const FiniteWorld& world) {
  TableScorer t;
  t.table.reserve(world.size());
  for (const Vec& p : world.points) t.table.push_back(f.logits(p));
  return t;
}

// ---------------------------------------------------------------------------
// Exact measures under a distribution (weights) over world points.

namespace exact {

inline void check_weights(const std::vector<double>& w, const FiniteWorld& world) {
  if (w.size() != world.size()) throw InputShapeError("exact: weight vector does not match world size");
}

inline double disparity_01(const TableScorer& f_prime, const TableScorer& f, const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (f_prime.predict(i) != f.predict(i)) s += w[i];
  return s;
}

inline double robust_disparity_01(const TableScorer& f_prime, const TableScorer& f, const std::vector<double>& w,
                                  const FiniteWorld& world) {
  check_weights(w, world);
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const int pseudo = f_prime.predict(i);
    const auto [arg, v] = exact_ball_max(
        [&](std::size_t j) { return f.predict(j) != pseudo ? 1.0 : 0.0; }, i, world);
    s += w[i] * v;
  }
  return s;
}

inline double margin_disparity(const TableScorer& f_prime, const TableScorer& f, const std::vector<double>& w,
                               double rho) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * phi_rho(margin(f(i), f_prime.predict(i)), rho);
  return s;
}

/// Pseudo-labels come from f' at the clean point; only f is perturbed.
inline double robust_margin_disparity(const TableScorer& f_prime, const TableScorer& f,
                                      const std::vector<double>& w, double rho, const FiniteWorld& world) {
  check_weights(w, world);
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const int pseudo = f_prime.predict(i);
    const auto [arg, v] = exact_ball_max([&](std::size_t j) { return phi_rho(margin(f(j), pseudo), rho); }, i, world);
    s += w[i] * v;
  }
  return s;
}

inline double risk_01(const TableScorer& f, const std::vector<int>& labels, const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (f.predict(i) != labels[i]) s += w[i];
  return s;
}

inline double robust_risk_01(const TableScorer& f, const std::vector<int>& labels, const std::vector<double>& w,
                             const FiniteWorld& world) {
  check_weights(w, world);
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto [arg, v] =
        exact_ball_max([&](std::size_t j) { return f.predict(j) != labels[i] ? 1.0 : 0.0; }, i, world);
    s += w[i] * v;
  }
  return s;
}

inline double margin_risk(const TableScorer& f, const std::vector<int>& labels, const std::vector<double>& w,
                          double rho) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * phi_rho(margin(f(i), labels[i]), rho);
  return s;
}

inline double robust_margin_risk(const TableScorer& f, const std::vector<int>& labels,
                                 const std::vector<double>& w, double rho, const FiniteWorld& world) {
  check_weights(w, world);
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto [arg, v] =
        exact_ball_max([&](std::size_t j) { return phi_rho(margin(f(j), labels[i]), rho); }, i, world);
    s += w[i] * v;
  }
  return s;
}

}  // namespace exact

/// sup over f' in the class of [robust margin disparity on T - margin
/// disparity on S]. The value is signed; a poor class can make it negative.
inline double robust_mdd_exact(const TableScorer& f, const std::vector<TableScorer>& hypothesis_class,
                               const std::vector<double>& source_weights, const std::vector<double>& target_weights,
                               double rho, const FiniteWorld& world) {
  if (hypothesis_class.empty()) throw ParameterError("robust_mdd_exact: empty hypothesis class");
  double best = -std::numeric_limits<double>::infinity();
  for (const TableScorer& fp : hypothesis_class) {
    const double v = exact::robust_margin_disparity(fp, f, target_weights, rho, world) -
                     exact::margin_disparity(fp, f, source_weights, rho);
    best = std::max(best, v);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Measures over an input sample with a configurable maximizer.

enum class Maximizer { kPgd, kExact };

struct BallSearch {
  Maximizer kind = Maximizer::kPgd;
  PerturbationBudget budget;
  const FiniteWorld* world = nullptr;  // required for kExact
  std::uint64_t seed = 0;

  static BallSearch exact_on(const FiniteWorld& w) {
    BallSearch s;
    s.kind = Maximizer::kExact;
    s.budget.epsilon = w.epsilon;
    s.budget.step_size = 1.0;
    s.world = &w;
    return s;
  }
};

namespace detail {

inline std::size_t world_index(const BallSearch& how, const Vec& x) {
  if (!how.world) throw ConfigurationError("exact maximizer requested without a finite world");
  const auto idx = how.world->index_of(x);
  if (!idx) throw ConfigurationError("exact maximizer: input is not a point of the finite world");
  return *idx;
}

// max over the ball of value(x') where value is monotone in the attack loss;
// the clean point always participates.
template <Scorer M, LogitLoss L, typename V>
double ball_max(const M& f, const L& attack_loss, const Vec& x, int label, const BallSearch& how,
                std::size_t sample, V&& value) {
  if (how.kind == Maximizer::kExact) {
    const std::size_t i = world_index(how, x);
    return exact_ball_max([&](std::size_t j) { return value(f.logits(how.world->points[j])); }, i, *how.world)
        .second;
  }
  double best = value(f.logits(x));
  if (how.budget.epsilon == 0.0) return best;
  const AttackResult r = pgd(f, attack_loss, x, label, how.budget, derive_seed(how.seed, sample));
  return std::max(best, value(f.logits(r.x_adv)));
}

}  // namespace detail

template <Scorer A, Scorer B>
double disparity_01(const A& f_prime, const B& f, const std::vector<Vec>& X) {
  if (X.empty()) throw ParameterError("disparity_01: empty sample");
  double s = 0.0;
  for (const Vec& x : X)
    if (predict_class(f_prime, x) != predict_class(f, x)) s += 1.0;
  return s / static_cast<double>(X.size());
}

/// With the PGD maximizer, f is attacked with cross-entropy at the label
/// h_{f'}(x) and the indicator is read off at the found point.
template <Scorer A, Scorer B>
double robust_disparity_01(const A& f_prime, const B& f, const std::vector<Vec>& X, const BallSearch& how) {
  if (X.empty()) throw ParameterError("robust_disparity_01: empty sample");
  double s = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const int pseudo = predict_class(f_prime, X[i]);
    s += detail::ball_max(f, CrossEntropy{}, X[i], pseudo, how, i,
                          [&](const Vec& z) { return predict_class(z) != pseudo ? 1.0 : 0.0; });
  }
  return s / static_cast<double>(X.size());
}

template <Scorer A, Scorer B>
double margin_disparity(const A& f_prime, const B& f, const std::vector<Vec>& X, double rho) {
  if (X.empty()) throw ParameterError("margin_disparity: empty sample");
  double s = 0.0;
  for (const Vec& x : X) s += phi_rho(margin(f.logits(x), predict_class(f_prime, x)), rho);
  return s / static_cast<double>(X.size());
}

template <Scorer A, Scorer B>
double robust_margin_disparity(const A& f_prime, const B& f, const std::vector<Vec>& X, double rho,
                               const BallSearch& how) {
  if (X.empty()) throw ParameterError("robust_margin_disparity: empty sample");
  double s = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const int pseudo = predict_class(f_prime, X[i]);
    s += detail::ball_max(f, NegativeMargin{}, X[i], pseudo, how, i,
                          [&](const Vec& z) { return phi_rho(margin(z, pseudo), rho); });
  }
  return s / static_cast<double>(X.size());
}

/// (1/n) sum max over the ball of Phi_rho(M_f(x', y_i)). Exact on a finite
/// world; a lower bound with PGD.
template <Scorer M>
double robust_margin_risk(const M& f, const DomainDataset& data, double rho, const BallSearch& how) {
  if (!data.labeled()) throw MissingLabelsError("robust_margin_risk: dataset '" + data.name + "' is unlabeled");
  if (data.size() == 0) throw ParameterError("robust_margin_risk: empty dataset");
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int y = data.label(i);
    s += detail::ball_max(f, NegativeMargin{}, data.inputs[i], y, how, i,
                          [&](const Vec& z) { return phi_rho(margin(z, y), rho); });
  }
  return s / static_cast<double>(data.size());
}

struct DisparitySample {
  double disp_01 = 0.0;
  double disp_rob_01 = 0.0;
  double disp_margin = 0.0;
  double disp_rob_margin = 0.0;
};

struct DisparityReport {
  double disp_01 = 0.0;
  double disp_rob_01 = 0.0;
  double disp_margin = 0.0;
  double disp_rob_margin = 0.0;
  std::string maximizer;
  std::vector<DisparitySample> per_sample;
};

inline void to_json(json& j, const DisparityReport& r) {
  json samples = json::array();
  for (const auto& s : r.per_sample)
    samples.push_back({{"disp_01", s.disp_01},
                       {"disp_rob_01", s.disp_rob_01},
                       {"disp_margin", s.disp_margin},
                       {"disp_rob_margin", s.disp_rob_margin}});
  j = json{{"disp_01", r.disp_01},
           {"disp_rob_01", r.disp_rob_01},
           {"disp_margin", r.disp_margin},
           {"disp_rob_margin", r.disp_rob_margin},
           {"maximizer", r.maximizer},
           {"per_sample", std::move(samples)}};
}

template <Scorer A, Scorer B>
DisparityReport disparity_report(const A& f_prime, const B& f, const std::vector<Vec>& X, double rho,
                                 const BallSearch& how) {
  if (X.empty()) throw ParameterError("disparity_report: empty sample");
  DisparityReport r;
  r.maximizer = how.kind == Maximizer::kExact ? "exact" : "pgd (lower-bound estimate)";
  for (std::size_t i = 0; i < X.size(); ++i) {
    const std::vector<Vec> one{X[i]};
    BallSearch local = how;
    local.seed = derive_seed(how.seed, i);
    DisparitySample s;
    s.disp_01 = disparity_01(f_prime, f, one);
    s.disp_rob_01 = robust_disparity_01(f_prime, f, one, local);
    s.disp_margin = margin_disparity(f_prime, f, one, rho);
    s.disp_rob_margin = robust_margin_disparity(f_prime, f, one, rho, local);
    r.disp_01 += s.disp_01;
    r.disp_rob_01 += s.disp_rob_01;
    r.disp_margin += s.disp_margin;
    r.disp_rob_margin += s.disp_rob_margin;
    r.per_sample.push_back(s);
  }
  const double n = static_cast<double>(X.size());
  r.disp_01 /= n;
  r.disp_rob_01 /= n;
  r.disp_margin /= n;
  r.disp_rob_margin /= n;
  return r;
}

// ---------------------------------------------------------------------------
// Gradient reversal and the auxiliary-head term

/// Identity forward; backward multiplies the incoming gradient by -coefficient.
struct GradientReversal {
  double coefficient = 1.0;

  const Vec& forward(const Vec& x) const { return x; }
  Vec backward(const Vec& g) const { return -coefficient * g; }
};

/// Ramp 2/(1+exp(-10 p)) - 1 from 0 to 1 over training progress p in [0,1].
inline double grl_coefficient(double progress, double max_value = 1.0, double sharpness = 10.0) {
  return max_value * (2.0 / (1.0 + std::exp(-sharpness * progress)) - 1.0);
}

struct MddTerm {
  double value = 0.0;        // target_term - gamma * source_term
  double target_term = 0.0;  // mean log(1 - sigma) on adversarial target inputs via pi'
  double source_term = 0.0;  // mean cross-entropy on source inputs via pi'
  Vec grad_aux;              // d value / d theta_{pi'}
  Vec grad_psi;              // d value / d theta_psi after the reversal layer
};

/// Auxiliary-head disparity block. Pseudo-labels h_{pi o psi} are taken on the
/// clean inputs and carry no gradient. The features that feed pi' pass through
/// the reversal layer, so grad_psi is -coefficient times the true gradient.
inline MddTerm mdd_adversarial_term(const Mlp& psi, const LinearHead& pi, const LinearHead& pi_aux,
                                    const std::vector<Vec>& batch_s, const std::vector<Vec>& batch_t_adv,
                                    const std::vector<Vec>& batch_t_clean, double gamma,
                                    const GradientReversal& grl) {
  if (batch_s.empty() || batch_t_adv.empty()) throw ParameterError("mdd_adversarial_term: empty batch");
  if (batch_t_adv.size() != batch_t_clean.size())
    throw PairingError("mdd_adversarial_term: adversarial and clean target batches differ in size");
  MddTerm out;
  out.grad_aux = Vec::Zero(pi_aux.params().size());
  out.grad_psi = Vec::Zero(psi.params().size());
  const double m_t = static_cast<double>(batch_t_adv.size());
  const double m_s = static_cast<double>(batch_s.size());
  const HeadPath main{psi, pi};

  for (std::size_t j = 0; j < batch_t_adv.size(); ++j) {
    if (batch_t_adv[j].size() != batch_t_clean[j].size())
      throw PairingError("mdd_adversarial_term: adversarial input paired with a clean input of another shape");
    const int pseudo = predict_class(main.logits(batch_t_clean[j]));
    Mlp::Tape tape;
    const Vec feat = grl.forward(psi.forward(batch_t_adv[j], &tape));
    const Vec z = pi_aux.forward(feat);
    out.target_term += mod_ce_rob_loss(z, pseudo) / m_t;
    const Vec gz = mod_ce_rob_loss_grad(z, pseudo) / m_t;
    const Vec gfeat = pi_aux.backward(feat, gz, &out.grad_aux);
    psi.backward(tape, grl.backward(gfeat), &out.grad_psi);
  }
  for (const Vec& x : batch_s) {
    const int pseudo = predict_class(main.logits(x));
    Mlp::Tape tape;
    const Vec feat = grl.forward(psi.forward(x, &tape));
    const Vec z = pi_aux.forward(feat);
    out.source_term += ce_loss(z, pseudo) / m_s;
    const Vec gz = -gamma * ce_loss_grad(z, pseudo) / m_s;
    const Vec gfeat = pi_aux.backward(feat, gz, &out.grad_aux);
    psi.backward(tape, grl.backward(gfeat), &out.grad_psi);
  }
  out.value = out.target_term - gamma * out.source_term;
  return out;
}

inline MddTerm mdd_adversarial_term(const ComposedScorer& f, const std::vector<Vec>& batch_s,
                                    const std::vector<Vec>& batch_t_adv, const std::vector<Vec>& batch_t_clean,
                                    double gamma, const GradientReversal& grl) {
  if (!f.pi_aux) throw ConfigurationError("mdd_adversarial_term: scorer has no auxiliary head");
  return mdd_adversarial_term(f.psi, f.pi, *f.pi_aux, batch_s, batch_t_adv, batch_t_clean, gamma, grl);
}

}  // namespace tarot
