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

// Synthetic domain-shift generators and finite worlds for the exact oracle.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tarot/core.hpp"

namespace tarot {

enum class ShiftKind { kRotation, kTranslation, kScale, kNoise };

inline ShiftKind shift_kind_from_string(const std::string& s) {
  if (s == "rotation") return ShiftKind::kRotation;
  if (s == "translation") return ShiftKind::kTranslation;
  if (s == "scale") return ShiftKind::kScale;
  if (s == "noise") return ShiftKind::kNoise;
  throw ParameterError("unknown shift kind '" + s + "'");
}

struct ShiftSpec {
  ShiftKind kind = ShiftKind::kRotation;
  double magnitude = 0.0;  // degrees for rotation, [0,1]-units otherwise
  std::uint64_t seed = 0;
};

namespace detail {

// Raw two-moons sample: outer arc for class 0, inner arc for class 1.
inline void raw_two_moons(int n, double noise_sd, std::uint64_t seed, std::vector<Vec>& pts,
                          std::vector<int>& labels) {
  Rng rng(seed);
  const int n0 = n / 2;
  const int n1 = n - n0;
  pts.clear();
  labels.clear();
  for (int i = 0; i < n0; ++i) {
    const double t = M_PI * static_cast<double>(i) / static_cast<double>(n0 - 1);
    pts.push_back(Vec{{std::cos(t), std::sin(t)}});
    labels.push_back(0);
  }
  for (int i = 0; i < n1; ++i) {
    const double t = M_PI * static_cast<double>(i) / static_cast<double>(n1 - 1);
    pts.push_back(Vec{{1.0 - std::cos(t), 0.5 - std::sin(t)}});
    labels.push_back(1);
  }
  for (Vec& p : pts) {
    p[0] += noise_sd * rng.normal();
    p[1] += noise_sd * rng.normal();
  }
}

// Centers the cloud on its centroid and scales by the enclosing radius so
// that every rotation about the centroid stays inside [0,1]^2.
inline std::vector<Vec> centered_unit_disk(const std::vector<Vec>& pts) {
  Vec c = Vec::Zero(2);
  for (const Vec& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double r = 0.0;
  for (const Vec& p : pts) r = std::max(r, (p - c).norm());
  std::vector<Vec> out;
  out.reserve(pts.size());
  for (const Vec& p : pts) out.push_back((p - c) / (2.0 * r));
  return out;
}

inline Vec clamp01(const Vec& v) { return v.cwiseMax(0.0).cwiseMin(1.0); }

}  // namespace detail

/// Applies a shift to centered coordinates u (|u| <= 1/2) and maps to [0,1]^2.
inline std::vector<Vec> apply_shift(const std::vector<Vec>& centered, const ShiftSpec& shift) {
  std::vector<Vec> out;
  out.reserve(centered.size());
  switch (shift.kind) {
    case ShiftKind::kRotation: {
      const double a = shift.magnitude * M_PI / 180.0;
      const double c = std::cos(a);
      const double s = std::sin(a);
      for (const Vec& u : centered)
        out.push_back(Vec{{(c * u[0] - s * u[1]) + 0.5, (s * u[0] + c * u[1]) + 0.5}});
      break;
    }
    case ShiftKind::kTranslation:
      for (const Vec& u : centered)
        out.push_back(detail::clamp01((u.array() + 0.5 + shift.magnitude / std::sqrt(2.0)).matrix()));
      break;
    case ShiftKind::kScale:
      for (const Vec& u : centered)
        out.push_back(detail::clamp01((shift.magnitude * u.array() + 0.5).matrix()));
      break;
    case ShiftKind::kNoise: {
      Rng rng(shift.seed);
      for (const Vec& u : centered) {
        Vec v = (u.array() + 0.5).matrix();
        v[0] += shift.magnitude * rng.normal();
        v[1] += shift.magnitude * rng.normal();
        out.push_back(detail::clamp01(v));
      }
      break;
    }
  }
  return out;
}

/// Two-moons source and a shifted copy as target. Both live in [0,1]^2.
inline std::pair<DomainDataset, DomainDataset> make_shifted_moons(int n_per_domain, double noise_sd,
                                                                  std::uint64_t seed,
                                                                  const ShiftSpec& shift) {
  if (n_per_domain < 4) throw ParameterError("two moons: n_per_domain must be >= 4");
  if (!(noise_sd >= 0.0)) throw ParameterError("two moons: noise_sd must be >= 0");
  std::vector<Vec> raw;
  std::vector<int> labels;
  detail::raw_two_moons(n_per_domain, noise_sd, seed, raw, labels);
  const std::vector<Vec> centered = detail::centered_unit_disk(raw);

  DomainDataset source;
  source.name = "two_moons";
  source.domain_tag = DomainTag::kSource;
  source.num_classes = 2;
  source.inputs = apply_shift(centered, ShiftSpec{ShiftKind::kRotation, 0.0, 0});
  source.labels = labels;

  DomainDataset target = source;
  target.domain_tag = DomainTag::kTarget;
  target.inputs = apply_shift(centered, shift);
  return {std::move(source), std::move(target)};
}

inline std::pair<DomainDataset, DomainDataset> make_two_moons_shift(int n_per_domain, double rotation_deg,
                                                                    double noise_sd, std::uint64_t seed) {
  auto pair = make_shifted_moons(n_per_domain, noise_sd, seed, {ShiftKind::kRotation, rotation_deg, seed});
  pair.second.name = "two_moons_rot" + std::to_string(rotation_deg);
  return pair;
}

// ---------------------------------------------------------------------------
// Generator spec strings, e.g. "two_moons:rot=30,noise=0.1,n=500".

struct GeneratorSpec {
  std::string name;
  std::map<std::string, std::string> params;

  double number(const std::string& key, double fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : std::stod(it->second);
  }
  std::string text(const std::string& key, const std::string& fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }
};

inline GeneratorSpec parse_generator_spec(const std::string& spec) {
  GeneratorSpec out;
  const auto colon = spec.find(':');
  out.name = spec.substr(0, colon);
  if (colon == std::string::npos) return out;
  std::string rest = spec.substr(colon + 1);
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    const auto comma = rest.find(',', pos);
    const std::string item = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!item.empty()) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ParameterError("generator spec: expected key=value in '" + item + "'");
      out.params[item.substr(0, eq)] = item.substr(eq + 1);
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

/// Builds the domain a spec string describes. The base sample depends only on
/// (n, noise, seed) so specs differing in their shift share raw points.
inline DomainDataset make_domain(const std::string& spec_text, std::uint64_t seed, DomainTag tag) {
  const GeneratorSpec spec = parse_generator_spec(spec_text);
  if (spec.name != "two_moons")
    throw ConfigurationError("unknown generator '" + spec.name + "'");
  const int n = static_cast<int>(spec.number("n", 500));
  const double noise = spec.number("noise", 0.1);
  ShiftSpec shift;
  if (spec.params.count("rot")) {
    shift = {ShiftKind::kRotation, spec.number("rot", 0.0), seed};
  } else {
    shift.kind = shift_kind_from_string(spec.text("shift", "rotation"));
    shift.magnitude = spec.number("mag", shift.kind == ShiftKind::kScale ? 1.0 : 0.0);
    shift.seed = derive_seed(seed, 0x5f1f7);
  }
  auto [source, target] = make_shifted_moons(n, noise, seed, shift);
  DomainDataset out = std::move(target);
  out.name = spec_text;
  out.domain_tag = tag;
  return out;
}

// ---------------------------------------------------------------------------
// Finite worlds

/// Distances are compared with this slack so grid points at exactly epsilon
/// stay inside the ball despite rounding in k/(g-1).
inline constexpr double kBallTolerance = 1e-12;

struct FiniteWorld {
  std::vector<Vec> points;
  std::vector<double> source_weights;
  std::vector<double> target_weights;
  double epsilon = 0.0;
  std::vector<std::vector<std::size_t>> ball_map;

  std::size_t size() const { return points.size(); }

  // Recomputes every ball by exhaustive pairwise L_inf comparison.
  void set_epsilon(double eps) {
    if (!(eps >= 0.0)) throw ParameterError("finite world: epsilon must be >= 0");
    epsilon = eps;
    ball_map.assign(points.size(), {});
    for (std::size_t i = 0; i < points.size(); ++i)
      for (std::size_t j = 0; j < points.size(); ++j)
        if (distance(points[i], points[j], Norm::kLinf) <= eps + kBallTolerance) ball_map[i].push_back(j);
  }

  std::optional<std::size_t> index_of(const Vec& x) const {
    for (std::size_t i = 0; i < points.size(); ++i)
      if (points[i].size() == x.size() && (points[i] - x).cwiseAbs().maxCoeff() <= kBallTolerance) return i;
    return std::nullopt;
  }

  // Sorted distinct pairwise L_inf distances, zero included.
  std::vector<double> distance_spectrum() const {
    std::vector<double> d;
    for (std::size_t i = 0; i < points.size(); ++i)
      for (std::size_t j = i; j < points.size(); ++j) d.push_back(distance(points[i], points[j], Norm::kLinf));
    std::sort(d.begin(), d.end());
    std::vector<double> out;
    for (double v : d)
      if (out.empty() || v > out.back() + kBallTolerance) out.push_back(v);
    return out;
  }
};

inline constexpr std::size_t kMaxWorldPoints = 4096;

inline std::vector<double> random_distribution(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  double total = 0.0;
  for (double& v : w) {
    v = rng.uniform(0.05, 1.0);
    total += v;
  }
  for (double& v : w) v /= total;
  return w;
}

/// Regular grid on [0,1]^d with strictly positive random weights per domain.
inline FiniteWorld make_finite_world(int d, int grid_points_per_axis, double epsilon, std::uint64_t seed) {
  if (d != 1 && d != 2) throw ParameterError("finite world: d must be 1 or 2");
  if (grid_points_per_axis < 2) throw ParameterError("finite world: need >= 2 grid points per axis");
  const std::size_t g = static_cast<std::size_t>(grid_points_per_axis);
  const std::size_t total = d == 1 ? g : g * g;
  if (total > kMaxWorldPoints)
    throw CapacityError("finite world: " + std::to_string(total) + " points exceeds the exhaustive oracle capacity");
  FiniteWorld w;
  auto coord = [&](std::size_t k) { return static_cast<double>(k) / static_cast<double>(g - 1); };
  if (d == 1) {
    for (std::size_t i = 0; i < g; ++i) w.points.push_back(Vec::Constant(1, coord(i)));
  } else {
    for (std::size_t i = 0; i < g; ++i)
      for (std::size_t j = 0; j < g; ++j) w.points.push_back(Vec{{coord(i), coord(j)}});
  }
  Rng rng(seed);
  w.source_weights = random_distribution(total, rng);
  w.target_weights = random_distribution(total, rng);
  w.set_epsilon(epsilon);
  return w;
}

}  // namespace tarot
