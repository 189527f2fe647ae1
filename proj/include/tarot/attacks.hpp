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

// Adversarial example generation: FGSM, PGD with best-iterate return, and the
// exhaustive ball maximizer over finite worlds.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>

#include "tarot/core.hpp"
#include "tarot/losses.hpp"
#include "tarot/synthdata.hpp"

namespace tarot {

struct AttackResult {
  Vec x_adv;
  double loss_clean = 0.0;
  double loss_adv = 0.0;
  int steps_taken = 0;
  // Set when the loss gradient vanished at the starting point, in which
  // case x_adv is that starting point.
  bool degenerate_gradient = false;
};

namespace detail {

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline Vec sign(const Vec& g) { return g.unaryExpr([](double v) { return sign0(v); }); }

// Projection onto B(x, eps) intersected with the box. For L_inf the
// intersection is a box, so coordinate clamping is exact.
inline Vec project(const Vec& x_adv, const Vec& x, const PerturbationBudget& b) {
  Vec out;
  if (b.norm == Norm::kLinf) {
    out = x_adv.cwiseMax((x.array() - b.epsilon).matrix()).cwiseMin((x.array() + b.epsilon).matrix());
    // x +- eps is rounded; walk back so that |out - x| <= eps also holds in
    // floating point.
    for (Eigen::Index i = 0; i < out.size(); ++i)
      while (std::abs(out[i] - x[i]) > b.epsilon) out[i] = std::nextafter(out[i], x[i]);
  } else {
    const Vec delta = x_adv - x;
    const double n = delta.norm();
    out = n > b.epsilon ? Vec(x + delta * (b.epsilon / n)) : x_adv;
  }
  if (b.box) out = b.box->clamp(out);
  return out;
}

inline Vec random_start(const Vec& x, const PerturbationBudget& b, Rng& rng) {
  Vec out(x.size());
  if (b.norm == Norm::kLinf) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      double lo = x[i] - b.epsilon;
      double hi = x[i] + b.epsilon;
      if (b.box) {
        lo = std::max(lo, b.box->lo[i]);
        hi = std::min(hi, b.box->hi[i]);
      }
      out[i] = hi > lo ? rng.uniform(lo, hi) : lo;
    }
    return project(out, x, b);
  }
  Vec dir(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) dir[i] = rng.normal();
  const double n = dir.norm();
  if (n > 0.0) dir /= n;
  const double r = b.epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(x.size()));
  return project(x + r * dir, x, b);
}

template <Scorer M, LogitLoss L>
Vec loss_input_grad(const M& model, const L& loss, const Vec& x, int y, double* value) {
  const Vec z = model.logits(x);
  if (value) *value = loss.value(z, y);
  return model.input_grad(x, loss.grad(z, y));
}

}  // namespace detail

/// Projected gradient ascent on loss(model(x'), y) over B(x, eps) and the box.
/// Returns the best iterate seen; without a random start the clean point is
/// iterate zero, so loss_adv >= loss_clean.
template <Scorer M, LogitLoss L>
AttackResult pgd(const M& model, const L& loss, const Vec& x, int y, const PerturbationBudget& budget,
                 std::uint64_t seed = 0) {
  budget.validate();
  if (x.size() != model.input_dim()) throw InputShapeError("pgd: input dimension mismatch");
  AttackResult r;
  r.loss_clean = loss.value(model.logits(x), y);

  Vec cur = x;
  if (budget.random_start && budget.epsilon > 0.0) {
    Rng rng(seed);
    cur = detail::random_start(x, budget, rng);
  }
  double cur_loss = 0.0;
  Vec grad = detail::loss_input_grad(model, loss, cur, y, &cur_loss);
  r.x_adv = cur;
  r.loss_adv = cur_loss;
  if (grad.cwiseAbs().maxCoeff() == 0.0) {
    r.degenerate_gradient = true;
    return r;
  }
  for (int k = 0; k < budget.num_steps; ++k) {
    Vec step;
    if (budget.norm == Norm::kLinf) {
      step = budget.step_size * detail::sign(grad);
    } else {
      step = grad * (budget.step_size / grad.norm());
    }
    cur = detail::project(cur + step, x, budget);
    ++r.steps_taken;
    grad = detail::loss_input_grad(model, loss, cur, y, &cur_loss);
    if (cur_loss >= r.loss_adv) {
      r.loss_adv = cur_loss;
      r.x_adv = cur;
    }
    if (grad.cwiseAbs().maxCoeff() == 0.0) break;
  }
  return r;
}

/// Single signed-gradient step of size eps, clamped to the box.
template <Scorer M, LogitLoss L>
AttackResult fgsm(const M& model, const L& loss, const Vec& x, int y, double epsilon,
                  const std::optional<Box>& box = std::nullopt) {
  if (!(epsilon >= 0.0)) throw ParameterError("fgsm: epsilon must be >= 0");
  if (x.size() != model.input_dim()) throw InputShapeError("fgsm: input dimension mismatch");
  AttackResult r;
  const Vec grad = detail::loss_input_grad(model, loss, x, y, &r.loss_clean);
  r.degenerate_gradient = grad.cwiseAbs().maxCoeff() == 0.0;
  PerturbationBudget ball;
  ball.epsilon = epsilon;
  ball.box = box;
  const Vec cur = detail::project(x + epsilon * detail::sign(grad), x, ball);
  r.x_adv = cur;
  r.loss_adv = loss.value(model.logits(cur), y);
  r.steps_taken = 1;
  return r;
}

/// Exhaustive maximum of objective over the ball of a world point. Ties go to
/// the lowest point index.
inline std::pair<std::size_t, double> exact_ball_max(const std::function<double(std::size_t)>& objective,
                                                     std::size_t x_index, const FiniteWorld& world) {
  if (x_index >= world.size()) throw ParameterError("exact_ball_max: index out of range");
  const auto& ball = world.ball_map[x_index];
  std::size_t best = ball.front();
  double best_value = objective(best);
  for (std::size_t k = 1; k < ball.size(); ++k) {
    const double v = objective(ball[k]);
    if (v > best_value) {
      best_value = v;
      best = ball[k];
    }
  }
  return {best, best_value};
}

// ---------------------------------------------------------------------------
// Attack spec strings: "pgd:eps=0.0627,steps=10,step=auto,rs=1" or
// "fgsm:eps=0.03". step=auto means eps/4. An optional norm=l2 switches the
// threat model.

struct AttackSpec {
  std::string kind = "pgd";
  PerturbationBudget budget;
  std::string text;

  // e.g. "pgd20" for a 20-step PGD spec.
  std::string label() const { return kind == "pgd" ? "pgd" + std::to_string(budget.num_steps) : kind; }
};

inline AttackSpec parse_attack_spec(const std::string& text, const std::optional<Box>& box = std::nullopt) {
  AttackSpec spec;
  spec.text = text;
  const auto colon = text.find(':');
  spec.kind = text.substr(0, colon);
  if (spec.kind != "pgd" && spec.kind != "fgsm") throw ParameterError("attack spec: unknown attack '" + spec.kind + "'");
  std::map<std::string, std::string> kv;
  if (colon != std::string::npos) {
    std::stringstream ss(text.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ParameterError("attack spec: expected key=value in '" + item + "'");
      kv[item.substr(0, eq)] = item.substr(eq + 1);
    }
  }
  auto get = [&](const std::string& k, const std::string& fallback) {
    auto it = kv.find(k);
    return it == kv.end() ? fallback : it->second;
  };
  PerturbationBudget& b = spec.budget;
  b.epsilon = std::stod(get("eps", "0"));
  if (spec.kind == "fgsm") {
    b.num_steps = 1;
    b.step_size = b.epsilon > 0.0 ? b.epsilon : 1.0;
    b.random_start = false;
  } else {
    b.num_steps = std::stoi(get("steps", "10"));
    const std::string step = get("step", "auto");
    b.step_size = step == "auto" ? (b.epsilon > 0.0 ? b.epsilon / 4.0 : 1.0) : std::stod(step);
    b.random_start = get("rs", "1") != "0";
  }
  const std::string norm = get("norm", "linf");
  if (norm == "l2") {
    b.norm = Norm::kL2;
  } else if (norm != "linf") {
    throw ParameterError("attack spec: unknown norm '" + norm + "'");
  }
  b.box = box;
  b.validate();
  return spec;
}

/// Runs the attack a spec describes.
template <Scorer M, LogitLoss L>
AttackResult run_attack(const AttackSpec& spec, const M& model, const L& loss, const Vec& x, int y,
                        std::uint64_t seed) {
  if (spec.kind == "fgsm") return fgsm(model, loss, x, y, spec.budget.epsilon, spec.budget.box);
  return pgd(model, loss, x, y, spec.budget, seed);
}

}  // namespace tarot
