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

// Desk-scale differentiable models with hand-written backpropagation: a
// linear scorer, a two-layer tanh feature extractor, linear heads, and the
// composed scorer pi o psi with an optional auxiliary head.

#pragma once

#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "tarot/core.hpp"

namespace tarot {

/// logits = W x + b.
class LinearScorer {
 public:
  LinearScorer(Mat weight, Vec bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
    if (weight_.rows() != bias_.size()) throw InputShapeError("LinearScorer: bias size mismatch");
  }

  Vec logits(const Vec& x) const {
    check(x);
    return weight_ * x + bias_;
  }
  Vec input_grad(const Vec& x, const Vec& g) const {
    check(x);
    return weight_.transpose() * g;
  }
  int num_classes() const { return static_cast<int>(weight_.rows()); }
  Eigen::Index input_dim() const { return weight_.cols(); }

  const Mat& weight() const { return weight_; }
  const Vec& bias() const { return bias_; }

 private:
  void check(const Vec& x) const {
    if (x.size() != weight_.cols()) throw InputShapeError("LinearScorer: input dimension mismatch");
  }
  Mat weight_;
  Vec bias_;
};

/// Parameters live in one flat vector so that optimizers, checksums and
/// checkpoints never need to know the layer structure.
class Mlp {
 public:
  struct Tape {
    Vec x;
    Vec h1;
    Vec h2;
  };

  Mlp() = default;
  Mlp(Eigen::Index input_dim, Eigen::Index hidden)
      : in_(input_dim),
        hidden_(hidden),
        params_(Vec::Zero(param_count(input_dim, hidden))),
        center_(Vec::Zero(input_dim)),
        scale_(Vec::Ones(input_dim)) {}

  static Eigen::Index param_count(Eigen::Index in, Eigen::Index hidden) {
    return hidden * in + hidden + hidden * hidden + hidden;
  }

  // Glorot-uniform weights, zero biases.
  static Mlp init(Eigen::Index input_dim, Eigen::Index hidden, std::uint64_t seed) {
    Mlp m(input_dim, hidden);
    Rng rng(seed);
    const double a1 = std::sqrt(6.0 / static_cast<double>(input_dim + hidden));
    const double a2 = std::sqrt(6.0 / static_cast<double>(2 * hidden));
    auto w1 = m.w1();
    for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = rng.uniform(-a1, a1);
    auto w2 = m.w2();
    for (Eigen::Index i = 0; i < w2.size(); ++i) w2.data()[i] = rng.uniform(-a2, a2);
    return m;
  }

  Eigen::Index input_dim() const { return in_; }
  Eigen::Index output_dim() const { return hidden_; }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  // Fixed input standardization (x - center) * scale applied before the first
  // layer. Not trained. Identity unless set.
  const Vec& input_center() const { return center_; }
  const Vec& input_scale() const { return scale_; }
  void set_standardization(const Vec& center, const Vec& scale) {
    if (center.size() != in_ || scale.size() != in_)
      throw InputShapeError("Mlp: standardization dimension mismatch");
    if (!(scale.array() > 0.0).all() || !scale.allFinite() || !center.allFinite())
      throw ParameterError("Mlp: standardization scale must be finite and positive");
    center_ = center;
    scale_ = scale;
  }

  Vec forward(const Vec& x, Tape* tape = nullptr) const {
    if (x.size() != in_) throw InputShapeError("Mlp: input dimension mismatch");
    const Vec xs = (x - center_).cwiseProduct(scale_);
    Vec h1 = (cw1() * xs + cb1()).array().tanh().matrix();
    Vec h2 = (cw2() * h1 + cb2()).array().tanh().matrix();
    if (tape) {
      tape->x = xs;
      tape->h1 = h1;
      tape->h2 = h2;
    }
    return h2;
  }

  // Pulls g = dL/dfeatures back through the layers. Adds dL/dparams into
  // *param_grad when given and returns dL/dx.
  Vec backward(const Tape& tape, const Vec& g, Vec* param_grad = nullptr) const {
    const Vec d2 = g.cwiseProduct((1.0 - tape.h2.array().square()).matrix());
    const Vec g1 = cw2().transpose() * d2;
    const Vec d1 = g1.cwiseProduct((1.0 - tape.h1.array().square()).matrix());
    if (param_grad) {
      Vec& pg = *param_grad;
      Eigen::Map<Mat> gw1(pg.data(), hidden_, in_);
      Eigen::Map<Vec> gb1(pg.data() + hidden_ * in_, hidden_);
      Eigen::Map<Mat> gw2(pg.data() + hidden_ * in_ + hidden_, hidden_, hidden_);
      Eigen::Map<Vec> gb2(pg.data() + hidden_ * in_ + hidden_ + hidden_ * hidden_, hidden_);
      gw1.noalias() += d1 * tape.x.transpose();
      gb1 += d1;
      gw2.noalias() += d2 * tape.h1.transpose();
      gb2 += d2;
    }
    return (cw1().transpose() * d1).cwiseProduct(scale_);
  }

 private:
  Eigen::Map<Mat> w1() { return {params_.data(), hidden_, in_}; }
  Eigen::Map<Mat> w2() { return {params_.data() + hidden_ * in_ + hidden_, hidden_, hidden_}; }
  Eigen::Map<const Mat> cw1() const { return {params_.data(), hidden_, in_}; }
  Eigen::Map<const Vec> cb1() const { return {params_.data() + hidden_ * in_, hidden_}; }
  Eigen::Map<const Mat> cw2() const {
    return {params_.data() + hidden_ * in_ + hidden_, hidden_, hidden_};
  }
  Eigen::Map<const Vec> cb2() const {
    return {params_.data() + hidden_ * in_ + hidden_ + hidden_ * hidden_, hidden_};
  }

  Eigen::Index in_ = 0;
  Eigen::Index hidden_ = 0;
  Vec params_;
  Vec center_;
  Vec scale_;
};

/// Per-feature mean and 1/std of a sample. Features with zero spread keep
/// scale 1.
inline std::pair<Vec, Vec> fit_standardization(const std::vector<Vec>& xs) {
  if (xs.empty()) throw ParameterError("fit_standardization: no inputs");
  const Eigen::Index d = xs.front().size();
  Vec mean = Vec::Zero(d);
  for (const Vec& x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  Vec var = Vec::Zero(d);
  for (const Vec& x : xs) var += (x - mean).array().square().matrix();
  var /= static_cast<double>(xs.size());
  Vec scale(d);
  for (Eigen::Index i = 0; i < d; ++i) scale[i] = var[i] > 0.0 ? 1.0 / std::sqrt(var[i]) : 1.0;
  return {mean, scale};
}

/// Linear map features -> C scores.
class LinearHead {
 public:
  LinearHead() = default;
  LinearHead(Eigen::Index feature_dim, int num_classes)
      : in_(feature_dim), classes_(num_classes), params_(Vec::Zero(feature_dim * num_classes + num_classes)) {}

  static LinearHead init(Eigen::Index feature_dim, int num_classes, std::uint64_t seed) {
    LinearHead h(feature_dim, num_classes);
    Rng rng(seed);
    const double a = std::sqrt(6.0 / static_cast<double>(feature_dim + num_classes));
    for (Eigen::Index i = 0; i < feature_dim * num_classes; ++i) h.params_[i] = rng.uniform(-a, a);
    return h;
  }

  int num_classes() const { return classes_; }
  Eigen::Index input_dim() const { return in_; }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  Vec forward(const Vec& feat) const {
    if (feat.size() != in_) throw InputShapeError("LinearHead: feature dimension mismatch");
    return weight() * feat + bias();
  }

  Vec backward(const Vec& feat, const Vec& g, Vec* param_grad = nullptr) const {
    if (param_grad) {
      Eigen::Map<Mat> gw(param_grad->data(), classes_, in_);
      Eigen::Map<Vec> gb(param_grad->data() + classes_ * in_, classes_);
      gw.noalias() += g * feat.transpose();
      gb += g;
    }
    return weight().transpose() * g;
  }

 private:
  Eigen::Map<const Mat> weight() const { return {params_.data(), classes_, in_}; }
  Eigen::Map<const Vec> bias() const { return {params_.data() + classes_ * in_, classes_}; }

  Eigen::Index in_ = 0;
  int classes_ = 0;
  Vec params_;
};

/// psi followed by one particular head; satisfies Scorer.
class HeadPath {
 public:
  HeadPath(const Mlp& psi, const LinearHead& head) : psi_(&psi), head_(&head) {}

  Vec logits(const Vec& x) const { return head_->forward(psi_->forward(x)); }
  Vec input_grad(const Vec& x, const Vec& g) const {
    Mlp::Tape tape;
    const Vec feat = psi_->forward(x, &tape);
    return psi_->backward(tape, head_->backward(feat, g));
  }
  int num_classes() const { return head_->num_classes(); }
  Eigen::Index input_dim() const { return psi_->input_dim(); }

 private:
  const Mlp* psi_;
  const LinearHead* head_;
};

/// Score function f = pi o psi, plus the auxiliary head pi' that shares pi's
/// hypothesis space. Scorer operations use the main head.
struct ComposedScorer {
  Mlp psi;
  LinearHead pi;
  std::optional<LinearHead> pi_aux;

  static ComposedScorer init(Eigen::Index input_dim, Eigen::Index hidden, int num_classes,
                             std::uint64_t seed, bool with_aux = true) {
    ComposedScorer f;
    f.psi = Mlp::init(input_dim, hidden, derive_seed(seed, 1));
    f.pi = LinearHead::init(hidden, num_classes, derive_seed(seed, 2));
    if (with_aux) f.pi_aux = LinearHead::init(hidden, num_classes, derive_seed(seed, 3));
    return f;
  }

  HeadPath main_path() const { return {psi, pi}; }
  HeadPath aux_path() const {
    if (!pi_aux) throw ConfigurationError("ComposedScorer: no auxiliary head");
    return {psi, *pi_aux};
  }

  Vec logits(const Vec& x) const { return pi.forward(psi.forward(x)); }
  Vec input_grad(const Vec& x, const Vec& g) const { return main_path().input_grad(x, g); }
  int num_classes() const { return pi.num_classes(); }
  Eigen::Index input_dim() const { return psi.input_dim(); }
};

// FNV-1a over the raw parameter bytes. Used to prove a model was untouched.
inline std::uint64_t checksum(const Vec& v, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(v.size()) * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t checksum(const ComposedScorer& f) {
  std::uint64_t h = checksum(f.psi.params());
  h = checksum(f.psi.input_center(), h);
  h = checksum(f.psi.input_scale(), h);
  h = checksum(f.pi.params(), h);
  if (f.pi_aux) h = checksum(f.pi_aux->params(), h);
  return h;
}

inline std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }
inline Vec from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline void to_json(json& j, const ComposedScorer& f) {
  j = json{{"input_dim", f.psi.input_dim()},
           {"hidden", f.psi.output_dim()},
           {"num_classes", f.pi.num_classes()},
           {"psi", to_std(f.psi.params())},
           {"input_center", to_std(f.psi.input_center())},
           {"input_scale", to_std(f.psi.input_scale())},
           {"pi", to_std(f.pi.params())},
           {"pi_aux", f.pi_aux ? json(to_std(f.pi_aux->params())) : json(nullptr)}};
}

inline void from_json(const json& j, ComposedScorer& f) {
  const auto in = j.at("input_dim").get<Eigen::Index>();
  const auto hidden = j.at("hidden").get<Eigen::Index>();
  const int classes = j.at("num_classes").get<int>();
  f.psi = Mlp(in, hidden);
  f.pi = LinearHead(hidden, classes);
  const Vec psi = from_std(j.at("psi").get<std::vector<double>>());
  const Vec pi = from_std(j.at("pi").get<std::vector<double>>());
  if (psi.size() != f.psi.params().size() || pi.size() != f.pi.params().size())
    throw InputShapeError("checkpoint: parameter count mismatch");
  f.psi.params() = psi;
  f.pi.params() = pi;
  if (j.contains("input_center"))
    f.psi.set_standardization(from_std(j.at("input_center").get<std::vector<double>>()),
                              from_std(j.at("input_scale").get<std::vector<double>>()));
  if (j.contains("pi_aux") && !j.at("pi_aux").is_null()) {
    f.pi_aux = LinearHead(hidden, classes);
    const Vec aux = from_std(j.at("pi_aux").get<std::vector<double>>());
    if (aux.size() != f.pi_aux->params().size()) throw InputShapeError("checkpoint: aux head size mismatch");
    f.pi_aux->params() = aux;
  } else {
    f.pi_aux.reset();
  }
}

/// SGD with momentum and L2 weight decay, PyTorch semantics:
/// g += wd * p; buf = momentum * buf + g; p -= lr * buf.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(Vec& params, const Vec& grad, Vec& buffer, double lr) const {
    if (buffer.size() != params.size()) buffer = Vec::Zero(params.size());
    Vec g = grad;
    if (weight_decay_ != 0.0) g += weight_decay_ * params;
    buffer = momentum_ * buffer + g;
    params -= lr * buffer;
  }

 private:
  double momentum_;
  double weight_decay_;
};

}  // namespace tarot
