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

// Shared domain types: vectors, datasets, perturbation budgets, margin
// parameters, the scorer concept, and the argmax/softmax primitives.

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace tarot {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define TAROT_DEFINE_ERROR(Name) \
  class Name : public Error {    \
   public:                       \
    using Error::Error;          \
  }

TAROT_DEFINE_ERROR(InputShapeError);
TAROT_DEFINE_ERROR(NumericError);
TAROT_DEFINE_ERROR(ParameterError);
TAROT_DEFINE_ERROR(CapacityError);
TAROT_DEFINE_ERROR(ConfigurationError);
TAROT_DEFINE_ERROR(MissingLabelsError);
TAROT_DEFINE_ERROR(PairingError);
TAROT_DEFINE_ERROR(PolicyError);
TAROT_DEFINE_ERROR(UndefinedMarginError);

#undef TAROT_DEFINE_ERROR

class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(std::string component, const std::string& what)
      : Error(what), component_(std::move(component)) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

// ---------------------------------------------------------------------------
// Deterministic randomness.
//
// Standard library distributions are implementation-defined, so uniform and
// normal draws are derived directly from the engine output to keep results
// bit-identical across toolchains.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(base) ^ a) ^ (b * 0x2545f4914f6cdd1dULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw ParameterError("Rng::index: empty range");
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return static_cast<std::size_t>(v % n);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Datasets

enum class DomainTag { kSource, kTarget, kUnseen };

inline std::string to_string(DomainTag tag) {
  switch (tag) {
    case DomainTag::kSource: return "source";
    case DomainTag::kTarget: return "target";
    case DomainTag::kUnseen: return "unseen";
  }
  return "unknown";
}

inline DomainTag domain_tag_from_string(const std::string& s) {
  if (s == "source") return DomainTag::kSource;
  if (s == "target") return DomainTag::kTarget;
  if (s == "unseen") return DomainTag::kUnseen;
  throw ParameterError("unknown domain tag '" + s + "'");
}

/// A finite sample from one domain. The empirical distribution puts weight
/// 1/n on every row.
struct DomainDataset {
  std::string name;
  DomainTag domain_tag = DomainTag::kSource;
  std::vector<Vec> inputs;
  std::optional<std::vector<int>> labels;
  int num_classes = 2;

  std::size_t size() const { return inputs.size(); }
  bool labeled() const { return labels.has_value(); }
  Eigen::Index dim() const { return inputs.empty() ? 0 : inputs.front().size(); }

  int label(std::size_t i) const {
    if (!labels) throw MissingLabelsError("dataset '" + name + "' has no labels");
    return (*labels)[i];
  }

  void validate() const {
    const Eigen::Index d = dim();
    for (const Vec& x : inputs)
      if (x.size() != d) throw InputShapeError("dataset '" + name + "': ragged inputs");
    if (labels) {
      if (labels->size() != inputs.size())
        throw InputShapeError("dataset '" + name + "': label count differs from input count");
      for (int y : *labels)
        if (y < 0 || y >= num_classes)
          throw ParameterError("dataset '" + name + "': label out of range");
    }
  }

  // Same inputs without labels, as handed to an adaptation method.
  DomainDataset unlabeled() const {
    DomainDataset out = *this;
    out.labels.reset();
    return out;
  }
};

inline void to_json(json& j, const DomainDataset& ds) {
  json inputs = json::array();
  for (const Vec& x : ds.inputs) inputs.push_back(std::vector<double>(x.data(), x.data() + x.size()));
  j = json{{"name", ds.name},
           {"domain_tag", to_string(ds.domain_tag)},
           {"num_classes", ds.num_classes},
           {"inputs", std::move(inputs)},
           {"labels", ds.labels ? json(*ds.labels) : json(nullptr)}};
}

inline void from_json(const json& j, DomainDataset& ds) {
  ds.name = j.at("name").get<std::string>();
  ds.domain_tag = domain_tag_from_string(j.at("domain_tag").get<std::string>());
  ds.inputs.clear();
  for (const auto& row : j.at("inputs")) {
    const auto v = row.get<std::vector<double>>();
    ds.inputs.emplace_back(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  if (j.contains("labels") && !j.at("labels").is_null())
    ds.labels = j.at("labels").get<std::vector<int>>();
  else
    ds.labels.reset();
  if (j.contains("num_classes")) {
    ds.num_classes = j.at("num_classes").get<int>();
  } else {
    ds.num_classes = 2;
    if (ds.labels && !ds.labels->empty())
      ds.num_classes = std::max(2, *std::max_element(ds.labels->begin(), ds.labels->end()) + 1);
  }
  ds.validate();
}

inline void save_dataset(const DomainDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigurationError("cannot write " + path);
  out << json(ds).dump() << '\n';
}

inline DomainDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot read " + path);
  return json::parse(in).get<DomainDataset>();
}

// ---------------------------------------------------------------------------
// Threat model

enum class Norm { kLinf, kL2 };

struct Box {
  Vec lo;
  Vec hi;

  static Box unit(Eigen::Index d) { return {Vec::Zero(d), Vec::Ones(d)}; }

  Vec clamp(const Vec& x) const { return x.cwiseMax(lo).cwiseMin(hi); }
  bool contains(const Vec& x, double tol = 0.0) const {
    return ((x - lo).array() >= -tol).all() && ((hi - x).array() >= -tol).all();
  }
};

struct PerturbationBudget {
  double epsilon = 0.0;
  Norm norm = Norm::kLinf;
  double step_size = 0.0;
  int num_steps = 1;
  bool random_start = false;
  std::optional<Box> box;

  // num_steps of size epsilon/4, the default training and evaluation recipe.
  static PerturbationBudget pgd(double eps, int steps, bool random_start,
                                std::optional<Box> box = std::nullopt) {
    PerturbationBudget b;
    b.epsilon = eps;
    b.num_steps = steps;
    b.step_size = eps > 0.0 ? eps / 4.0 : 1.0;
    b.random_start = random_start;
    b.box = std::move(box);
    return b;
  }

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
      throw ParameterError("budget: epsilon must be finite and >= 0");
    if (num_steps < 1) throw ParameterError("budget: num_steps must be >= 1");
    if (!(step_size > 0.0)) throw ParameterError("budget: step_size must be > 0");
    if (epsilon > 0.0 && step_size > 2.0 * epsilon)
      throw ParameterError("budget: step_size must not exceed 2*epsilon");
    if (box) {
      if (box->lo.size() != box->hi.size()) throw InputShapeError("budget: box bounds differ in size");
      if (!((box->hi - box->lo).array() > 0.0).all())
        throw ParameterError("budget: box requires lo < hi coordinate-wise");
    }
  }
};

inline double distance(const Vec& a, const Vec& b, Norm norm) {
  return norm == Norm::kLinf ? (a - b).cwiseAbs().maxCoeff() : (a - b).norm();
}

struct MarginConfig {
  double rho = std::log(4.0);
  double gamma = 4.0;

  static MarginConfig from_gamma(double gamma) {
    if (!(gamma > 1.0)) throw ParameterError("margin: gamma must be > 1");
    return {std::log(gamma), gamma};
  }
  static MarginConfig from_rho(double rho) {
    if (!(rho > 0.0)) throw ParameterError("margin: rho must be > 0");
    return {rho, std::exp(rho)};
  }

  void validate() const {
    if (!(rho > 0.0) || !(gamma > 1.0)) throw ParameterError("margin: need rho > 0 and gamma > 1");
    if (std::abs(gamma - std::exp(rho)) > 1e-12 * gamma)
      throw ParameterError("margin: gamma must equal exp(rho)");
  }
};

// ---------------------------------------------------------------------------
// Scorers

/// Anything that maps an input to class scores and can pull a gradient on
/// those scores back to the input.
template <typename M>
concept Scorer = requires(const M& m, const Vec& x, const Vec& g) {
  { m.logits(x) } -> std::convertible_to<Vec>;
  { m.input_grad(x, g) } -> std::convertible_to<Vec>;
  { m.num_classes() } -> std::convertible_to<int>;
  { m.input_dim() } -> std::convertible_to<Eigen::Index>;
};

/// Argmax with ties resolved to the lowest index.
inline int predict_class(const Vec& logits) {
  if (logits.size() == 0) throw InputShapeError("predict_class: empty logits");
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < logits.size(); ++c)
    if (logits[c] > logits[best]) best = c;
  return static_cast<int>(best);
}

template <Scorer M>
int predict_class(const M& model, const Vec& x) {
  if (x.size() != model.input_dim())
    throw InputShapeError("predict_class: input has dimension " + std::to_string(x.size()) +
                          ", expected " + std::to_string(model.input_dim()));
  return predict_class(model.logits(x));
}

inline Vec softmax(const Vec& logits) {
  if (!logits.allFinite()) throw NumericError("softmax: non-finite logits");
  const double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp();
  return e / e.sum();
}

/// log(sum exp(z_c)) - z_ref, via log1p over the non-maximal terms so that
/// confident logits keep full relative precision.
inline double log_sum_exp_minus(const Vec& logits, double ref) {
  Eigen::Index top = 0;
  const double m = logits.maxCoeff(&top);
  double rest = 0.0;
  for (Eigen::Index c = 0; c < logits.size(); ++c)
    if (c != top) rest += std::exp(logits[c] - m);
  return (m - ref) + std::log1p(rest);
}

inline double log_sum_exp(const Vec& logits) { return log_sum_exp_minus(logits, 0.0); }

}  // namespace tarot
