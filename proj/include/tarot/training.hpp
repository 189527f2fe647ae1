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

// Trainers: the TAROT step and loop, the pseudo-label (PL) baseline, the MDD
// teacher, supervised PGD adversarial training and robust pretraining.
//
// All trainers share one loop. Source and target batches are paired; an epoch
// has max(#source batches, #target batches) steps and the shorter stream is
// cycled. Both streams are reshuffled independently every epoch.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tarot/attacks.hpp"
#include "tarot/core.hpp"
#include "tarot/disparity.hpp"
#include "tarot/evaluation.hpp"
#include "tarot/losses.hpp"
#include "tarot/nn.hpp"

namespace tarot {

struct LrSchedule {
  double gamma = 10.0;
  double power = 0.75;

  // initial * (1 + gamma * progress)^(-power)
  double at(double initial, double progress) const { return initial * std::pow(1.0 + gamma * progress, -power); }
};

struct GrlSchedule {
  double max_value = 1.0;
  double sharpness = 10.0;

  double at(double progress) const { return grl_coefficient(progress, max_value, sharpness); }
};

struct TarotConfig {
  double alpha = 0.1;
  MarginConfig margin = MarginConfig::from_gamma(4.0);
  PerturbationBudget attack = PerturbationBudget::pgd(8.0 / 255.0, 10, true);
  double eta1 = 0.1;
  double eta2 = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 20;
  int batch_size = 32;
  LrSchedule lr_schedule;
  GrlSchedule grl_schedule;
  Eigen::Index hidden = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha >= 0.0)) throw ParameterError("config: alpha must be >= 0");
    if (epochs < 1) throw ParameterError("config: epochs must be >= 1");
    if (batch_size < 1) throw ParameterError("config: batch_size must be >= 1");
    if (hidden < 1) throw ParameterError("config: hidden must be >= 1");
    margin.validate();
    attack.validate();
  }
};

inline void to_json(json& j, const TarotConfig& c) {
  j = json{{"alpha", c.alpha},
           {"gamma", c.margin.gamma},
           {"epsilon", c.attack.epsilon},
           {"attack_steps", c.attack.num_steps},
           {"attack_step_size", c.attack.step_size},
           {"attack_random_start", c.attack.random_start},
           {"eta1", c.eta1},
           {"eta2", c.eta2},
           {"momentum", c.momentum},
           {"weight_decay", c.weight_decay},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"lr_gamma", c.lr_schedule.gamma},
           {"lr_power", c.lr_schedule.power},
           {"grl_max", c.grl_schedule.max_value},
           {"grl_sharpness", c.grl_schedule.sharpness},
           {"hidden", c.hidden},
           {"seed", c.seed}};
}

/// Reads fields present in j over the defaults in c. attack_step_size may be
/// the string "auto" (epsilon / 4).
inline void update_from_json(TarotConfig& c, const json& j) {
  auto num = [&](const char* k, double& v) {
    if (j.contains(k)) v = j.at(k).get<double>();
  };
  auto integer = [&](const char* k, auto& v) {
    if (j.contains(k)) v = j.at(k).get<std::remove_reference_t<decltype(v)>>();
  };
  num("alpha", c.alpha);
  if (j.contains("gamma")) c.margin = MarginConfig::from_gamma(j.at("gamma").get<double>());
  bool eps_changed = false;
  if (j.contains("epsilon")) {
    c.attack.epsilon = j.at("epsilon").get<double>();
    eps_changed = true;
  }
  integer("attack_steps", c.attack.num_steps);
  if (j.contains("attack_step_size") && !j.at("attack_step_size").is_string()) {
    c.attack.step_size = j.at("attack_step_size").get<double>();
  } else if (eps_changed || j.contains("attack_step_size")) {
    c.attack.step_size = c.attack.epsilon > 0.0 ? c.attack.epsilon / 4.0 : 1.0;
  }
  if (j.contains("attack_random_start")) c.attack.random_start = j.at("attack_random_start").get<bool>();
  num("eta1", c.eta1);
  if (j.contains("eta2")) {
    num("eta2", c.eta2);
  } else if (j.contains("eta1")) {
    c.eta2 = c.eta1;
  }
  num("momentum", c.momentum);
  num("weight_decay", c.weight_decay);
  integer("epochs", c.epochs);
  integer("batch_size", c.batch_size);
  num("lr_gamma", c.lr_schedule.gamma);
  num("lr_power", c.lr_schedule.power);
  num("grl_max", c.grl_schedule.max_value);
  num("grl_sharpness", c.grl_schedule.sharpness);
  integer("hidden", c.hidden);
  integer("seed", c.seed);
}

/// Loss components of one step. total is assembled from the others:
///   tarot:   alpha * (source_ce + target_disparity - gamma * source_disparity) + robust_ce
///   pl / at: robust_ce
///   teacher: source_ce + alpha * (target_disparity - gamma * source_disparity)
struct StepLosses {
  double source_ce = 0.0;
  double target_disparity = 0.0;
  double source_disparity = 0.0;
  double robust_ce = 0.0;
  double alpha = 0.0;
  double gamma = 0.0;
  double total = 0.0;
  double grl_coefficient = 0.0;
  double lr = 0.0;
};

enum class TrainMode { kTarot, kPl, kMddTeacher, kSupervisedAt };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kTarot: return "tarot";
    case TrainMode::kPl: return "pl";
    case TrainMode::kMddTeacher: return "mdd";
    case TrainMode::kSupervisedAt: return "at";
  }
  return "unknown";
}

struct Batch {
  std::vector<Vec> inputs;
  std::vector<int> labels;  // true labels, or empty for unlabeled streams
};

/// Gradients of the training objective at fixed inputs, adversarial points
/// and pseudo-labels. grad_psi and grad_pi are gradients of l_TAROT with the
/// pi' -> psi path scaled by -coefficient of the reversal layer (equal to the
/// plain gradient at coefficient 1 for the disparity path reversed twice).
/// grad_aux is the descent direction for pi', i.e. minus the gradient of
/// l_TAROT, so a single descent step ascends the disparity block.
struct ObjectiveGradients {
  StepLosses losses;
  Vec grad_psi;
  Vec grad_pi;
  Vec grad_aux;
};

struct ObjectiveInputs {
  const Batch* source = nullptr;             // labeled source batch (may be null for pl/at)
  const std::vector<Vec>* target_clean = nullptr;
  const std::vector<Vec>* target_adv = nullptr;
  const std::vector<int>* target_labels = nullptr;  // teacher pseudo-labels or true labels
};

inline ObjectiveGradients objective_gradients(const ComposedScorer& f, TrainMode mode, const ObjectiveInputs& in,
                                              double alpha, double gamma, double grl_coef) {
  ObjectiveGradients out;
  out.grad_psi = Vec::Zero(f.psi.params().size());
  out.grad_pi = Vec::Zero(f.pi.params().size());
  if (f.pi_aux) out.grad_aux = Vec::Zero(f.pi_aux->params().size());
  StepLosses& L = out.losses;
  L.alpha = alpha;
  L.gamma = gamma;
  L.grl_coefficient = grl_coef;

  auto accumulate_ce = [&](const std::vector<Vec>& xs, const std::vector<int>& ys, double scale, const char* name) {
    double sum = 0.0;
    const double m = static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      Mlp::Tape tape;
      const Vec feat = f.psi.forward(xs[i], &tape);
      const Vec z = f.pi.forward(feat);
      if (!z.allFinite()) throw TrainingDivergedError(name, std::string("training diverged: ") + name + " is not finite");
      sum += ce_loss(z, ys[i]);
      const Vec gz = (scale / m) * ce_loss_grad(z, ys[i]);
      f.psi.backward(tape, f.pi.backward(feat, gz, &out.grad_pi), &out.grad_psi);
    }
    return sum / m;
  };

  if (mode != TrainMode::kMddTeacher) {
    if (!in.target_adv || !in.target_labels) throw ConfigurationError("objective: missing adversarial batch");
    L.robust_ce = accumulate_ce(*in.target_adv, *in.target_labels, 1.0, "robust_ce");
  }
  const bool disparity_block = mode == TrainMode::kTarot || mode == TrainMode::kMddTeacher;
  if (disparity_block) {
    if (!in.source || !in.target_clean || !in.target_adv) throw ConfigurationError("objective: missing batches");
    if (!f.pi_aux) throw ConfigurationError("objective: disparity block needs an auxiliary head");
    const double source_weight = mode == TrainMode::kTarot ? alpha : 1.0;
    L.source_ce = accumulate_ce(in.source->inputs, in.source->labels, source_weight, "source_ce");
    MddTerm d;
    try {
      d = mdd_adversarial_term(f, in.source->inputs, *in.target_adv, *in.target_clean, gamma,
                               GradientReversal{grl_coef});
    } catch (const NumericError&) {
      throw TrainingDivergedError("disparity", "training diverged: disparity block is not finite");
    }
    L.target_disparity = d.target_term;
    L.source_disparity = d.source_term;
    // Descent objective carries -alpha * D so that pi' ascends D while the
    // reversal layer hands psi the gradient of +alpha * D.
    out.grad_aux += -alpha * d.grad_aux;
    out.grad_psi += -alpha * d.grad_psi;
  }
  const double disparity = L.target_disparity - gamma * L.source_disparity;
  switch (mode) {
    case TrainMode::kTarot: L.total = alpha * (L.source_ce + disparity) + L.robust_ce; break;
    case TrainMode::kMddTeacher: L.total = L.source_ce + alpha * disparity; break;
    default: L.total = L.robust_ce; break;
  }
  return out;
}

struct TrainState {
  ComposedScorer scorer;
  std::optional<ComposedScorer> teacher;
  int epoch = 0;
  std::int64_t step = 0;
  std::int64_t total_steps = 1;
  std::vector<MetricsRecord> history;
  std::vector<ComposedScorer> checkpoints;  // one per finished epoch
  Vec psi_momentum;
  Vec pi_momentum;
  Vec aux_momentum;
};

using EpochHook = std::function<void(const TrainState&, MetricsRecord&)>;

namespace detail {

inline void check_finite(const StepLosses& L) {
  const std::pair<const char*, double> parts[] = {{"source_ce", L.source_ce},
                                                  {"target_disparity", L.target_disparity},
                                                  {"source_disparity", L.source_disparity},
                                                  {"robust_ce", L.robust_ce},
                                                  {"total", L.total}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) throw TrainingDivergedError(name, std::string("training diverged: ") + name + " is not finite");
}

inline Batch gather(const DomainDataset& d, const std::vector<std::size_t>& perm, std::int64_t b, int k) {
  Batch out;
  for (int i = 0; i < k; ++i) {
    const std::size_t idx = perm[static_cast<std::size_t>((b * k + i) % static_cast<std::int64_t>(perm.size()))];
    out.inputs.push_back(d.inputs[idx]);
    if (d.labeled()) out.labels.push_back(d.label(idx));
  }
  return out;
}

inline std::int64_t batches_per_epoch(std::size_t n, int k) {
  return static_cast<std::int64_t>((n + static_cast<std::size_t>(k) - 1) / static_cast<std::size_t>(k));
}

}  // namespace detail

/// One optimizer step. batch_t carries target inputs; in kSupervisedAt mode
/// its labels are the true labels and no teacher is consulted.
inline StepLosses train_step(TrainState& state, TrainMode mode, const Batch& batch_s, const Batch& batch_t,
                             const TarotConfig& config) {
  ComposedScorer& f = state.scorer;
  const double progress = static_cast<double>(state.step) / static_cast<double>(std::max<std::int64_t>(1, state.total_steps));
  const double lr1 = config.lr_schedule.at(config.eta1, progress);
  const double lr2 = config.lr_schedule.at(config.eta2, progress);
  const double grl = config.grl_schedule.at(progress);

  std::vector<int> target_labels;
  if (mode == TrainMode::kSupervisedAt) {
    target_labels = batch_t.labels;
  } else if (mode != TrainMode::kMddTeacher) {
    if (!state.teacher) throw ConfigurationError("train_step: pseudo-labeling needs a teacher");
    for (const Vec& x : batch_t.inputs) target_labels.push_back(predict_class(*state.teacher, x));
  }

  std::vector<Vec> adv;
  if (mode == TrainMode::kMddTeacher) {
    adv = batch_t.inputs;
  } else {
    const HeadPath main = f.main_path();
    adv.reserve(batch_t.inputs.size());
    for (std::size_t j = 0; j < batch_t.inputs.size(); ++j) {
      if (config.attack.epsilon == 0.0) {
        adv.push_back(batch_t.inputs[j]);
        continue;
      }
      const auto seed = derive_seed(config.seed, static_cast<std::uint64_t>(state.step), j);
      try {
        adv.push_back(pgd(main, CrossEntropy{}, batch_t.inputs[j], target_labels[j], config.attack, seed).x_adv);
      } catch (const NumericError&) {
        throw TrainingDivergedError("attack", "training diverged: attack loss is not finite");
      }
    }
  }

  ObjectiveInputs in;
  in.source = &batch_s;
  in.target_clean = &batch_t.inputs;
  in.target_adv = &adv;
  in.target_labels = &target_labels;
  ObjectiveGradients g = objective_gradients(f, mode, in, config.alpha, config.margin.gamma, grl);
  g.losses.lr = lr1;
  detail::check_finite(g.losses);

  const Sgd opt(config.momentum, config.weight_decay);
  opt.step(f.psi.params(), g.grad_psi, state.psi_momentum, lr1);
  opt.step(f.pi.params(), g.grad_pi, state.pi_momentum, lr1);
  if (f.pi_aux && (mode == TrainMode::kTarot || mode == TrainMode::kMddTeacher))
    opt.step(f.pi_aux->params(), g.grad_aux, state.aux_momentum, lr2);
  ++state.step;
  return g.losses;
}

/// One TAROT step: teacher pseudo-labels, PGD on the main path, then the
/// assembled objective. The adversarial batch feeds both the robust CE term
/// and the pi' disparity term.
inline StepLosses tarot_step(TrainState& state, const Batch& batch_s, const Batch& batch_t, const TarotConfig& config) {
  return train_step(state, TrainMode::kTarot, batch_s, batch_t, config);
}



inline TrainState train_loop(TrainMode mode, const DomainDataset& source, const DomainDataset& target,
                             std::optional<ComposedScorer> teacher, std::optional<Mlp> init_psi,
                             const TarotConfig& config, const EpochHook& on_epoch = {}) {
  config.validate();
  if (mode == TrainMode::kSupervisedAt && !target.labeled())
    throw MissingLabelsError("supervised adversarial training needs labels");
  if ((mode == TrainMode::kTarot || mode == TrainMode::kMddTeacher) && !source.labeled())
    throw MissingLabelsError("source dataset must be labeled");
  if (target.size() == 0) throw ParameterError("train: empty target dataset");
  const bool uses_source = mode != TrainMode::kSupervisedAt;
  if (uses_source && source.size() == 0) throw ParameterError("train: empty source dataset");
  if (uses_source && source.dim() != target.dim()) throw InputShapeError("train: source and target dimensions differ");

  TrainState state;
  const int classes = std::max(source.num_classes, target.num_classes);
  state.scorer = ComposedScorer::init(target.dim(), config.hidden, classes, config.seed);
  {
    const auto [center, scale] = fit_standardization(uses_source ? source.inputs : target.inputs);
    state.scorer.psi.set_standardization(center, scale);
  }
  if (init_psi) {
    if (init_psi->input_dim() != target.dim() || init_psi->output_dim() != config.hidden)
      throw InputShapeError("train: initial feature extractor does not match the configured architecture");
    state.scorer.psi = *init_psi;
  }
  state.teacher = std::move(teacher);
  const std::uint64_t teacher_sum = state.teacher ? checksum(*state.teacher) : 0;

  const std::int64_t nb_t = detail::batches_per_epoch(target.size(), config.batch_size);
  const std::int64_t nb_s = uses_source ? detail::batches_per_epoch(source.size(), config.batch_size) : 0;
  const std::int64_t per_epoch = std::max(nb_t, nb_s);
  state.total_steps = per_epoch * config.epochs;

  Rng shuffle_rng(derive_seed(config.seed, 0x5ec0));
  std::vector<std::size_t> perm_s(uses_source ? source.size() : 0);
  std::vector<std::size_t> perm_t(target.size());
  for (int e = 0; e < config.epochs; ++e) {
    for (std::size_t i = 0; i < perm_s.size(); ++i) perm_s[i] = i;
    for (std::size_t i = 0; i < perm_t.size(); ++i) perm_t[i] = i;
    shuffle_rng.shuffle(perm_s);
    shuffle_rng.shuffle(perm_t);
    MetricsRecord record;
    record.epoch = e + 1;
    std::map<std::string, double> sums;
    for (std::int64_t b = 0; b < per_epoch; ++b) {
      const Batch bs = uses_source ? detail::gather(source, perm_s, b, config.batch_size) : Batch{};
      const Batch bt = detail::gather(target, perm_t, b, config.batch_size);
      const StepLosses L = train_step(state, mode, bs, bt, config);
      sums["source_ce"] += L.source_ce;
      sums["target_disparity"] += L.target_disparity;
      sums["source_disparity"] += L.source_disparity;
      sums["robust_ce"] += L.robust_ce;
      sums["total"] += L.total;
    }
    for (auto& [k, v] : sums) record.losses[k] = v / static_cast<double>(per_epoch);
    state.epoch = e + 1;
    state.checkpoints.push_back(state.scorer);
    if (on_epoch) on_epoch(state, record);
    state.history.push_back(std::move(record));
  }
  if (state.teacher && checksum(*state.teacher) != teacher_sum)
    throw Error("train: teacher parameters changed during training");
  return state;
}

/// Non-robust MDD teacher: source CE plus alpha times the clean auxiliary-head
/// disparity block. alpha = 0 is source-only training.
inline ComposedScorer train_teacher_mdd(const DomainDataset& source, const DomainDataset& target,
                                        const TarotConfig& config) {
  return train_loop(TrainMode::kMddTeacher, source, target.unlabeled(), std::nullopt, std::nullopt, config).scorer;
}

/// Supervised PGD adversarial training on a labeled dataset. epsilon = 0 is
/// standard training.
inline TrainState train_standard_at(const DomainDataset& data, const TarotConfig& config,
                                    std::optional<Mlp> init_psi = std::nullopt, const EpochHook& on_epoch = {}) {
  return train_loop(TrainMode::kSupervisedAt, DomainDataset{}, data, std::nullopt, std::move(init_psi), config,
                    on_epoch);
}

/// Adversarial pretraining at eps_pre; returns the feature extractor only.
inline Mlp pretrain_robust(const DomainDataset& data, double eps_pre, const TarotConfig& config) {
  if (!(eps_pre >= 0.0)) throw ParameterError("pretrain_robust: eps_pre must be >= 0");
  TarotConfig c = config;
  c.attack.epsilon = eps_pre;
  c.attack.step_size = eps_pre > 0.0 ? eps_pre / 4.0 : 1.0;
  return train_standard_at(data, c).scorer.psi;
}

inline TrainState train_tarot(const DomainDataset& source, const DomainDataset& target, const ComposedScorer& teacher,
                              std::optional<Mlp> init_psi, const TarotConfig& config, const EpochHook& on_epoch = {}) {
  return train_loop(TrainMode::kTarot, source, target.unlabeled(), teacher, std::move(init_psi), config, on_epoch);
}

/// PGD adversarial training on teacher pseudo-labels, target only.
inline TrainState train_pl(const DomainDataset& source, const DomainDataset& target, const ComposedScorer& teacher,
                           std::optional<Mlp> init_psi, const TarotConfig& config, const EpochHook& on_epoch = {}) {
  return train_loop(TrainMode::kPl, source, target.unlabeled(), teacher, std::move(init_psi), config, on_epoch);
}

}  // namespace tarot
