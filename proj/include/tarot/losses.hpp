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

// Margins, the ramp loss Phi_rho, the cross-entropy family used by the
// training objective, and (robust) margin risks over datasets.

#pragma once

#include <cmath>
#include <string>

#include "tarot/core.hpp"

namespace tarot {

inline void check_label(const Vec& logits, int y, const char* who) {
  if (y < 0 || y >= logits.size())
    throw ParameterError(std::string(who) + ": label " + std::to_string(y) + " out of range");
}

/// f_y - max_{y' != y} f_{y'}.
inline double margin(const Vec& logits, int y) {
  if (logits.size() < 2) throw UndefinedMarginError("margin: needs at least two classes");
  check_label(logits, y, "margin");
  double best_other = -std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < logits.size(); ++c)
    if (c != y) best_other = std::max(best_other, logits[c]);
  return logits[y] - best_other;
}

/// Ramp: 1 for m <= 0, 1 - m/rho on [0, rho], 0 for m >= rho.
inline double phi_rho(double m, double rho) {
  if (!(rho > 0.0)) throw ParameterError("phi_rho: rho must be > 0");
  if (m <= 0.0) return 1.0;
  if (m >= rho) return 0.0;
  return 1.0 - m / rho;
}

/// -log softmax_y, in log-space.
inline double ce_loss(const Vec& logits, int y) {
  check_label(logits, y, "ce_loss");
  return log_sum_exp_minus(logits, logits[y]);
}

inline Vec ce_loss_grad(const Vec& logits, int y) {
  check_label(logits, y, "ce_loss");
  Vec g = softmax(logits);
  g[y] -= 1.0;
  return g;
}

/// Identical to ce_loss; named separately because it is evaluated at an
/// adversarial input.
inline double ce_rob_loss(const Vec& adv_logits, int y) { return ce_loss(adv_logits, y); }

inline constexpr double kModCeFloor = 1e-7;

/// log(1 - softmax_y) with softmax_y clamped to at most 1 - 1e-7.
inline double mod_ce_rob_loss(const Vec& adv_logits, int y) {
  check_label(adv_logits, y, "mod_ce_rob_loss");
  if (adv_logits.size() < 2) throw UndefinedMarginError("mod_ce_rob_loss: needs two classes");
  Vec others(adv_logits.size() - 1);
  for (Eigen::Index c = 0, k = 0; c < adv_logits.size(); ++c)
    if (c != y) others[k++] = adv_logits[c];
  const double log_rest = log_sum_exp(others) - log_sum_exp(adv_logits);
  return std::max(log_rest, std::log(kModCeFloor));
}

inline Vec mod_ce_rob_loss_grad(const Vec& adv_logits, int y) {
  check_label(adv_logits, y, "mod_ce_rob_loss");
  Vec others(adv_logits.size() - 1);
  for (Eigen::Index c = 0, k = 0; c < adv_logits.size(); ++c)
    if (c != y) others[k++] = adv_logits[c];
  const double log_rest = log_sum_exp(others) - log_sum_exp(adv_logits);
  if (log_rest < std::log(kModCeFloor)) return Vec::Zero(adv_logits.size());
  const Vec p = softmax(adv_logits);
  const double rest = std::exp(log_rest);
  Vec g(adv_logits.size());
  for (Eigen::Index c = 0; c < adv_logits.size(); ++c)
    g[c] = c == y ? -p[c] : p[c] / rest - p[c];
  return g;
}

// ---------------------------------------------------------------------------
// Loss functors for the attack routines: value and gradient in the logits.

struct CrossEntropy {
  double value(const Vec& z, int y) const { return ce_loss(z, y); }
  Vec grad(const Vec& z, int y) const { return ce_loss_grad(z, y); }
};

struct ModCrossEntropy {
  double value(const Vec& z, int y) const { return mod_ce_rob_loss(z, y); }
  Vec grad(const Vec& z, int y) const { return mod_ce_rob_loss_grad(z, y); }
};

/// -M_f(x, y). Increasing it drives Phi_rho o M up, so it is the attack
/// objective for margin risks.
struct NegativeMargin {
  double value(const Vec& z, int y) const { return -margin(z, y); }
  Vec grad(const Vec& z, int y) const {
    margin(z, y);
    Eigen::Index other = y == 0 ? 1 : 0;
    for (Eigen::Index c = 0; c < z.size(); ++c)
      if (c != y && z[c] > z[other]) other = c;
    Vec g = Vec::Zero(z.size());
    g[other] = 1.0;
    g[y] = -1.0;
    return g;
  }
};

template <typename L>
concept LogitLoss = requires(const L& l, const Vec& z, int y) {
  { l.value(z, y) } -> std::convertible_to<double>;
  { l.grad(z, y) } -> std::convertible_to<Vec>;
};

/// (1/n) sum Phi_rho(M_f(x_i, y_i)).
template <Scorer M>
double margin_risk(const M& f, const DomainDataset& data, double rho) {
  if (!data.labeled()) throw MissingLabelsError("margin_risk: dataset '" + data.name + "' is unlabeled");
  if (data.size() == 0) throw ParameterError("margin_risk: empty dataset");
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    sum += phi_rho(margin(f.logits(data.inputs[i]), data.label(i)), rho);
  return sum / static_cast<double>(data.size());
}

}  // namespace tarot
