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

// Configuration-driven experiment runner: teacher, optional robust
// pretraining, method training and evaluation, with hash-named outputs.

#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tarot/attacks.hpp"
#include "tarot/core.hpp"
#include "tarot/evaluation.hpp"
#include "tarot/nn.hpp"
#include "tarot/synthdata.hpp"
#include "tarot/training.hpp"

namespace tarot {

namespace fs = std::filesystem;

inline constexpr const char* kOutRootEnv = "TAROT_OUT";

/// Output root: TAROT_OUT if set, else "runs".
inline fs::path default_out_root() {
  const char* v = std::getenv(kOutRootEnv);
  return (v && *v) ? fs::path(v) : fs::path("runs");
}

enum class Method { kTarot, kPl, kMdd, kAt };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kTarot: return "tarot";
    case Method::kPl: return "pl";
    case Method::kMdd: return "mdd";
    case Method::kAt: return "at";
  }
  return "unknown";
}

inline Method method_from_string(const std::string& s) {
  if (s == "tarot") return Method::kTarot;
  if (s == "pl") return Method::kPl;
  if (s == "mdd") return Method::kMdd;
  if (s == "at") return Method::kAt;
  throw ConfigurationError("unknown method '" + s + "' (expected tarot, pl, mdd or at)");
}

struct ExperimentConfig {
  std::string name = "run";
  std::string source = "two_moons:rot=0";
  std::string target = "two_moons:rot=40";
  std::vector<std::string> unseen;
  Method method = Method::kTarot;
  bool robust_pt = false;
  double pretrain_ratio = 8.0;  // eps_pre = epsilon / pretrain_ratio
  TarotConfig train;
  json teacher_overrides = json::object();   // applied over train with alpha 0.1, epsilon 0
  json pretrain_overrides = json::object();  // applied over train
  std::vector<std::string> eval_attacks;     // empty: PGD-20 at the training epsilon
  SelectionPolicy selection = SelectionPolicy::kPgd20Target;
  int selection_samples = 200;
  bool lipschitz = false;
  bool save_checkpoints = true;
  std::vector<std::uint64_t> seeds{0, 1, 2};

  TarotConfig teacher_config(std::uint64_t seed) const {
    TarotConfig c = train;
    c.alpha = 0.1;
    c.attack.epsilon = 0.0;
    c.attack.step_size = 1.0;
    update_from_json(c, teacher_overrides);
    c.seed = derive_seed(seed, 0x7eac);
    return c;
  }

  TarotConfig pretrain_config(std::uint64_t seed) const {
    TarotConfig c = train;
    update_from_json(c, pretrain_overrides);
    c.seed = derive_seed(seed, 0x97e7);
    return c;
  }

  TarotConfig method_config(std::uint64_t seed) const {
    TarotConfig c = train;
    c.seed = seed;
    return c;
  }

  std::vector<AttackSpec> attacks() const {
    const Box box = Box::unit(2);
    std::vector<AttackSpec> out;
    if (eval_attacks.empty()) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "pgd:eps=%.17g,steps=20", train.attack.epsilon);
      out.push_back(parse_attack_spec(buf, box));
    }
    for (const std::string& s : eval_attacks) out.push_back(parse_attack_spec(s, box));
    return out;
  }

  void validate() const {
    for (const std::string* s : {&source, &target}) parse_generator_spec(*s);
    for (const std::string& s : unseen) parse_generator_spec(s);
    if (!(pretrain_ratio > 0.0)) throw ConfigurationError("pretrain_ratio must be > 0");
    if (selection_samples < 1) throw ConfigurationError("selection_samples must be >= 1");
    if (seeds.empty()) throw ConfigurationError("seeds must not be empty");
    train.validate();
    attacks();
  }
};

inline std::string selection_to_string(SelectionPolicy p) {
  return p == SelectionPolicy::kLast ? "last" : "pgd20-target";
}

inline void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"name", c.name},
           {"source", c.source},
           {"target", c.target},
           {"unseen", c.unseen},
           {"method", to_string(c.method)},
           {"robust_pt", c.robust_pt},
           {"pretrain_ratio", c.pretrain_ratio},
           {"train", c.train},
           {"teacher", c.teacher_overrides},
           {"pretrain", c.pretrain_overrides},
           {"eval_attacks", c.eval_attacks},
           {"selection", selection_to_string(c.selection)},
           {"selection_samples", c.selection_samples},
           {"lipschitz", c.lipschitz},
           {"save_checkpoints", c.save_checkpoints},
           {"seeds", c.seeds}};
}

/// Fields missing from j keep their defaults.
inline ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  if (!j.is_object()) throw ConfigurationError("config: expected a JSON object");
  static const char* known[] = {"name",   "source",       "target",    "unseen",          "method",
                                "robust_pt", "pretrain_ratio", "train", "teacher",        "pretrain",
                                "eval_attacks", "selection", "selection_samples", "lipschitz", "save_checkpoints",
                                "seeds"};
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (std::find_if(std::begin(known), std::end(known), [&](const char* s) { return k == s; }) == std::end(known))
      throw ConfigurationError("config: unknown field '" + k + "'");
  }
  try {
    if (j.contains("name")) c.name = j.at("name").get<std::string>();
    if (j.contains("source")) c.source = j.at("source").get<std::string>();
    if (j.contains("target")) c.target = j.at("target").get<std::string>();
    if (j.contains("unseen")) c.unseen = j.at("unseen").get<std::vector<std::string>>();
    if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
    if (j.contains("robust_pt")) c.robust_pt = j.at("robust_pt").get<bool>();
    if (j.contains("pretrain_ratio")) c.pretrain_ratio = j.at("pretrain_ratio").get<double>();
    if (j.contains("train")) update_from_json(c.train, j.at("train"));
    if (j.contains("teacher")) c.teacher_overrides = j.at("teacher");
    if (j.contains("pretrain")) c.pretrain_overrides = j.at("pretrain");
    if (j.contains("eval_attacks")) c.eval_attacks = j.at("eval_attacks").get<std::vector<std::string>>();
    if (j.contains("selection")) c.selection = selection_policy_from_string(j.at("selection").get<std::string>());
    if (j.contains("selection_samples")) c.selection_samples = j.at("selection_samples").get<int>();
    if (j.contains("lipschitz")) c.lipschitz = j.at("lipschitz").get<bool>();
    if (j.contains("save_checkpoints")) c.save_checkpoints = j.at("save_checkpoints").get<bool>();
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot read config '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigurationError("config '" + path.string() + "': " + e.what());
  }
  return experiment_config_from_json(j);
}

/// Sets a dotted key ("train.alpha") in a config JSON from text. The value is
/// parsed as JSON when possible and kept as a string otherwise.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigurationError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigurationError("override '" + assignment + "' has an empty key segment");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

/// FNV-1a of the canonical dump. nlohmann::json keeps object keys sorted, so
/// the text is independent of field insertion order.
inline std::string config_hash(const ExperimentConfig& c) {
  json j = c;
  j.erase("seeds");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct RunManifest {
  json config;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string status;  // "complete"
  std::string created_at;
  std::vector<MetricsRecord> history;
  int selected_epoch = 0;
  std::string selection;
  std::map<std::string, EvalReport> reports;  // keyed by domain role: target, source, unseen:<spec>
  std::map<std::string, std::string> artifacts;
  fs::path dir;
  bool reused = false;
};

inline void to_json(json& j, const RunManifest& m) {
  j = json{{"config", m.config},         {"config_hash", m.config_hash}, {"seed", m.seed},
           {"status", m.status},         {"created_at", m.created_at},   {"history", m.history},
           {"selected_epoch", m.selected_epoch}, {"selection", m.selection}, {"reports", m.reports},
           {"artifacts", m.artifacts}};
}

inline void from_json(const json& j, RunManifest& m) {
  m.config = j.at("config");
  m.config_hash = j.at("config_hash").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.status = j.at("status").get<std::string>();
  m.created_at = j.value("created_at", "");
  m.history = j.at("history").get<std::vector<MetricsRecord>>();
  m.selected_epoch = j.at("selected_epoch").get<int>();
  m.selection = j.at("selection").get<std::string>();
  m.reports = j.at("reports").get<std::map<std::string, EvalReport>>();
  m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
}

inline RunManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot read manifest '" + path.string() + "'");
  RunManifest m = json::parse(in).get<RunManifest>();
  m.dir = path.parent_path();
  const ExperimentConfig c = experiment_config_from_json(m.config);
  if (config_hash(c) != m.config_hash)
    throw ConfigurationError("manifest '" + path.string() + "': stored config does not match its hash");
  return m;
}

/// A stage failure. The run directory keeps its partial outputs plus a
/// `failed` marker naming the stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what) : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

namespace detail {

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << j.dump(2) << '\n';
}

// Random subsample of n rows, kept in original order. Generators emit rows
// grouped by class, so a prefix would not do.
inline DomainDataset subsample(const DomainDataset& d, std::size_t n, std::uint64_t seed) {
  if (n >= d.size()) return d;
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  DomainDataset out = d;
  out.inputs.clear();
  if (out.labels) out.labels->clear();
  for (std::size_t i : idx) {
    out.inputs.push_back(d.inputs[i]);
    if (out.labels) out.labels->push_back(d.label(i));
  }
  return out;
}

// Seeds of the data splits. Train, validation and test splits of a domain
// are independent samples.
enum Split : std::uint64_t { kTrainSource = 1, kTrainTarget, kTestSource, kTestTarget, kValTarget, kUnseen };

}  // namespace detail

inline fs::path run_directory(const ExperimentConfig& c, std::uint64_t seed, const fs::path& out_root) {
  return out_root / (c.name + "-" + config_hash(c).substr(0, 12)) / ("seed-" + std::to_string(seed));
}

/// Runs one (config, seed). Returns the stored manifest untouched when a
/// complete run with the same hash already exists under out_root.
inline RunManifest run_experiment(const ExperimentConfig& config, std::uint64_t seed, const fs::path& out_root,
                                  const std::function<void(const std::string&)>& log = {}) {
  config.validate();
  const fs::path dir = run_directory(config, seed, out_root);
  const std::string hash = config_hash(config);
  if (fs::exists(dir / "manifest.json")) {
    RunManifest old = load_manifest(dir / "manifest.json");
    if (old.status == "complete" && old.config_hash == hash && old.seed == seed) {
      old.reused = true;
      return old;
    }
  }
  fs::create_directories(dir);
  fs::remove(dir / "failed");
  fs::remove(dir / "metrics.jsonl");

  RunManifest m;
  m.config = config;
  m.config_hash = hash;
  m.seed = seed;
  m.created_at = detail::utc_timestamp();
  m.selection = selection_to_string(config.selection) +
                (config.selection == SelectionPolicy::kPgd20Target ? " (oracle selection)" : "");
  m.dir = dir;
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };

  std::string stage = "data";
  try {
    const DomainDataset src = make_domain(config.source, derive_seed(seed, detail::kTrainSource), DomainTag::kSource);
    const DomainDataset tgt = make_domain(config.target, derive_seed(seed, detail::kTrainTarget), DomainTag::kTarget);
    const DomainDataset src_test =
        make_domain(config.source, derive_seed(seed, detail::kTestSource), DomainTag::kSource);
    const DomainDataset tgt_test =
        make_domain(config.target, derive_seed(seed, detail::kTestTarget), DomainTag::kTarget);
    const DomainDataset tgt_val = detail::subsample(
        make_domain(config.target, derive_seed(seed, detail::kValTarget), DomainTag::kTarget),
        static_cast<std::size_t>(config.selection_samples), derive_seed(seed, detail::kValTarget, 1));
    const std::vector<AttackSpec> attacks = config.attacks();

    std::optional<ComposedScorer> teacher;
    if (config.method == Method::kTarot || config.method == Method::kPl) {
      stage = "teacher";
      say("training teacher");
      teacher = train_teacher_mdd(src, tgt, config.teacher_config(seed));
      detail::write_json(dir / "teacher.json", json(*teacher));
      m.artifacts["teacher"] = "teacher.json";
    }

    std::optional<Mlp> init_psi;
    if (config.robust_pt) {
      stage = "pretrain";
      say("robust pretraining");
      const double eps_pre = config.train.attack.epsilon / config.pretrain_ratio;
      TarotConfig pc = config.pretrain_config(seed);
      pc.attack.epsilon = eps_pre;
      pc.attack.step_size = eps_pre > 0.0 ? eps_pre / 4.0 : 1.0;
      const TrainState pre = train_standard_at(src, pc);
      init_psi = pre.scorer.psi;
      detail::write_json(dir / "pretrain.json", json(pre.scorer));
      m.artifacts["pretrain"] = "pretrain.json";
    }

    stage = "train";
    say("training " + to_string(config.method));
    const TarotConfig tc = config.method_config(seed);
    std::ofstream metrics(dir / "metrics.jsonl");
    m.artifacts["metrics"] = "metrics.jsonl";
    if (config.save_checkpoints) fs::create_directories(dir / "checkpoints");
    const AttackSpec select_attack = parse_attack_spec(
        [&] {
          char buf[96];
          std::snprintf(buf, sizeof(buf), "pgd:eps=%.17g,steps=20", tc.attack.epsilon);
          return std::string(buf);
        }(),
        Box::unit(tgt.dim()));
    const EpochHook hook = [&](const TrainState& s, MetricsRecord& r) {
      const HeadPath f = s.scorer.main_path();
      r.standard_acc["target"] = standard_accuracy(f, tgt_val);
      if (config.selection == SelectionPolicy::kPgd20Target)
        r.robust_acc["target"] = robust_accuracy(f, tgt_val, select_attack, derive_seed(seed, 0x5e1, s.epoch));
      metrics << json(r).dump() << '\n';
      metrics.flush();
      if (config.save_checkpoints) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch-%03d.json", s.epoch);
        detail::write_json(dir / "checkpoints" / name,
                           json{{"epoch", s.epoch}, {"seed", seed}, {"config", m.config}, {"model", s.scorer}});
      }
    };

    TrainState state;
    switch (config.method) {
      case Method::kTarot: state = train_tarot(src, tgt, *teacher, init_psi, tc, hook); break;
      case Method::kPl: state = train_pl(src, tgt, *teacher, init_psi, tc, hook); break;
      case Method::kMdd: {
        TarotConfig clean = tc;
        clean.attack.epsilon = 0.0;
        clean.attack.step_size = 1.0;
        state = train_loop(TrainMode::kMddTeacher, src, tgt.unlabeled(), std::nullopt, init_psi, clean, hook);
        break;
      }
      case Method::kAt: state = train_standard_at(tgt, tc, init_psi, hook); break;
    }
    m.history = state.history;
    m.selected_epoch = select_checkpoint(state.history, config.selection);
    const ComposedScorer& model = state.checkpoints.at(static_cast<std::size_t>(m.selected_epoch - 1));
    detail::write_json(dir / "model.json",
                       json{{"epoch", m.selected_epoch}, {"seed", seed}, {"config", m.config}, {"model", model}});
    m.artifacts["model"] = "model.json";

    stage = "eval";
    say("evaluating");
    const HeadPath f = model.main_path();
    std::optional<std::pair<double, LipschitzSearch>> lip;
    if (config.lipschitz && config.train.attack.epsilon > 0.0) {
      LipschitzSearch search;
      search.seed = derive_seed(seed, 0x11b);
      search.box = Box::unit(tgt.dim());
      lip = std::make_pair(config.train.attack.epsilon, search);
    }
    m.reports["target"] = evaluate(f, tgt_test, attacks, derive_seed(seed, 0xe7), lip);
    m.reports["source"] = evaluate(f, src_test, attacks, derive_seed(seed, 0xe5), lip);
    for (std::size_t i = 0; i < config.unseen.size(); ++i) {
      const DomainDataset u =
          make_domain(config.unseen[i], derive_seed(seed, detail::kUnseen, i), DomainTag::kUnseen);
      m.reports["unseen:" + config.unseen[i]] = evaluate(f, u, attacks, derive_seed(seed, 0xe0 + i), lip);
    }
    m.status = "complete";
    detail::write_json(dir / "manifest.json", m);
  } catch (const std::exception& e) {
    std::ofstream(dir / "failed") << stage << ": " << e.what() << '\n';
    throw StageError(stage, e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepParam { kAlpha, kEpsilon, kRobustPt };

inline SweepParam sweep_param_from_string(const std::string& s) {
  if (s == "alpha") return SweepParam::kAlpha;
  if (s == "epsilon") return SweepParam::kEpsilon;
  if (s == "robust_pt") return SweepParam::kRobustPt;
  throw ConfigurationError("cannot sweep '" + s + "' (expected alpha, epsilon or robust_pt)");
}

inline std::string to_string(SweepParam p) {
  switch (p) {
    case SweepParam::kAlpha: return "alpha";
    case SweepParam::kEpsilon: return "epsilon";
    case SweepParam::kRobustPt: return "robust_pt";
  }
  return "unknown";
}

inline ExperimentConfig with_value(ExperimentConfig c, SweepParam p, double v) {
  switch (p) {
    case SweepParam::kAlpha:
      if (!(v >= 0.0)) throw ParameterError("sweep: alpha must be >= 0");
      c.train.alpha = v;
      break;
    case SweepParam::kEpsilon:
      if (!(v >= 0.0)) throw ParameterError("sweep: epsilon must be >= 0");
      c.train.attack.epsilon = v;
      c.train.attack.step_size = v > 0.0 ? v / 4.0 : 1.0;
      break;
    case SweepParam::kRobustPt:
      if (v != 0.0 && v != 1.0) throw ParameterError("sweep: robust_pt values must be 0 or 1");
      c.robust_pt = v != 0.0;
      break;
  }
  return c;
}

/// The swept quantity as read back from a stored config.
inline double swept_value(const json& config, SweepParam p) {
  const ExperimentConfig c = experiment_config_from_json(config);
  switch (p) {
    case SweepParam::kAlpha: return c.train.alpha;
    case SweepParam::kEpsilon: return c.train.attack.epsilon;
    case SweepParam::kRobustPt: return c.robust_pt ? 1.0 : 0.0;
  }
  return 0.0;
}

struct SweepResult {
  std::vector<RunManifest> runs;
  fs::path summary_csv;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw ParameterError("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Writes one row per (value, seed, domain, attack).
inline void write_sweep_csv(const fs::path& path, SweepParam p, const std::vector<RunManifest>& runs) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "param,value,seed,method,robust_pt,domain,standard_acc,attack,robust_acc\n";
  char buf[512];
  for (const RunManifest& m : runs) {
    const ExperimentConfig c = experiment_config_from_json(m.config);
    for (const auto& [domain, r] : m.reports) {
      for (const auto& [attack, acc] : r.robust_acc) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%llu,%s,%d,%s,%.17g,%s,%.17g\n", to_string(p).c_str(),
                      swept_value(m.config, p), static_cast<unsigned long long>(m.seed), to_string(c.method).c_str(),
                      c.robust_pt ? 1 : 0, domain.c_str(), r.standard_acc, attack.c_str(), acc);
        out << buf;
      }
    }
  }
}

inline SweepResult sweep(const ExperimentConfig& base, SweepParam p, const std::vector<double>& values,
                         const fs::path& out_root, const std::function<void(const std::string&)>& log = {}) {
  if (values.empty()) throw ParameterError("sweep: no values");
  SweepResult res;
  for (double v : values) {
    const ExperimentConfig c = with_value(base, p, v);
    for (std::uint64_t seed : c.seeds) {
      if (log) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%s=%g seed %llu", to_string(p).c_str(), v,
                      static_cast<unsigned long long>(seed));
        log(buf);
      }
      res.runs.push_back(run_experiment(c, seed, out_root, log));
    }
  }
  fs::create_directories(out_root);
  res.summary_csv = out_root / (base.name + "-sweep-" + to_string(p) + ".csv");
  write_sweep_csv(res.summary_csv, p, res.runs);
  return res;
}

// ---------------------------------------------------------------------------
// Plots

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;  // sorted by x
  std::map<double, std::string> labels;           // optional per-point annotations
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

/// Line plot as standalone SVG.
inline std::string render_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                              const std::vector<PlotSeries>& series) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  const double W = 640, H = 420, L = 70, R = 170, T = 40, B = 60;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (x0 > x1) throw ParameterError("render_svg: no points");
  if (x1 - x0 < 1e-12) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  y0 = std::min(0.0, y0);
  y1 = std::max(1.0, y1);
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  std::ostringstream os;
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%%\" height=\"100%%\" fill=\"white\"/>\n",
                W, H);
  os << buf;
  std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">%s</text>\n",
                (L + W - R) / 2, detail::svg_escape(title).c_str());
  os << buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n"
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                L, H - B, W - R, H - B, L, H - B, L, T);
  os << buf;
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0;
    const double yv = y0 + (y1 - y0) * i / 5.0;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%.3g</text>\n"
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.2f</text>\n",
                  px(xv), H - B, px(xv), H - B + 5, px(xv), H - B + 18, xv, L, py(yv), W - R, py(yv), L - 6,
                  py(yv) + 4, yv);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%s</text>\n"
                "<text x=\"16\" y=\"%.1f\" text-anchor=\"middle\" transform=\"rotate(-90 16 %.1f)\">%s</text>\n",
                (L + W - R) / 2, H - 18, detail::svg_escape(xlabel).c_str(), (T + H - B) / 2, (T + H - B) / 2,
                detail::svg_escape(ylabel).c_str());
  os << buf;
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % (sizeof(colors) / sizeof(colors[0]))];
    std::string pts;
    for (const auto& [x, y] : series[s].points) {
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", px(x), py(y));
      pts += buf;
    }
    std::snprintf(buf, sizeof(buf), "<polyline fill=\"none\" stroke=\"%s\" stroke-width=\"2\" points=\"%s\"/>\n",
                  color, pts.c_str());
    os << buf;
    for (const auto& [x, y] : series[s].points) {
      std::snprintf(buf, sizeof(buf), "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3.5\" fill=\"%s\"/>\n", px(x), py(y), color);
      os << buf;
      auto lab = series[s].labels.find(x);
      if (lab != series[s].labels.end()) {
        std::snprintf(buf, sizeof(buf), "<text x=\"%.2f\" y=\"%.2f\" fill=\"%s\">%s</text>\n", px(x) + 6, py(y) - 6,
                      color, detail::svg_escape(lab->second).c_str());
        os << buf;
      }
    }
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" stroke-width=\"2\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\">%s</text>\n",
                  W - R + 12, T + 10 + 18.0 * s, W - R + 36, T + 10 + 18.0 * s, color, W - R + 42,
                  T + 14 + 18.0 * s, detail::svg_escape(series[s].name).c_str());
    os << buf;
  }
  os << "</svg>\n";
  return os.str();
}

/// Median-over-seeds curves of standard and robust accuracy per domain, one
/// series per (method, init). Writes <metric>_<domain>.svg and a sibling CSV
/// holding every plotted number. Returns the written image paths.
inline std::vector<fs::path> emit_plots(const std::vector<RunManifest>& runs, SweepParam p, const fs::path& out_dir) {
  if (runs.empty()) throw ParameterError("emit_plots: no manifests");
  fs::create_directories(out_dir);
  // (metric, domain) -> series -> x -> values
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::map<double, std::vector<double>>>> data;
  std::string attack_label;
  for (const RunManifest& m : runs) {
    const ExperimentConfig c = experiment_config_from_json(m.config);
    const std::string series = to_string(c.method) + (c.robust_pt ? " + robust-pt" : "");
    const double x = swept_value(m.config, p);
    for (const auto& [domain, r] : m.reports) {
      data[{"standard_acc", domain}][series][x].push_back(r.standard_acc);
      if (!r.robust_acc.empty()) {
        const auto& [label, acc] = *r.robust_acc.begin();
        if (attack_label.empty()) attack_label = label;
        data[{"robust_acc", domain}][series][x].push_back(acc);
      }
    }
  }
  std::vector<fs::path> written;
  for (const auto& [key, by_series] : data) {
    const auto& [metric, domain] = key;
    std::string stem = metric + "_" + domain;
    for (char& ch : stem)
      if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-' && ch != '.') ch = '_';
    std::vector<PlotSeries> series;
    std::ofstream csv(out_dir / (stem + ".csv"));
    csv << "series,x,y,n_seeds\n";
    char buf[256];
    for (const auto& [name, by_x] : by_series) {
      PlotSeries s;
      s.name = name;
      for (const auto& [x, ys] : by_x) {
        const double y = median(ys);
        s.points.emplace_back(x, y);
        if (p == SweepParam::kAlpha && x == 0.0 && name.rfind("tarot", 0) == 0) s.labels[x] = "PL";
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%zu\n", name.c_str(), x, y, ys.size());
        csv << buf;
      }
      series.push_back(std::move(s));
    }
    const std::string ylabel =
        metric == "robust_acc" ? "robust accuracy (" + attack_label + ", median)" : "standard accuracy (median)";
    const fs::path svg = out_dir / (stem + ".svg");
    std::ofstream(svg) << render_svg(metric + " on " + domain, to_string(p), ylabel, series);
    written.push_back(svg);
  }
  return written;
}

/// Every complete manifest.json below root.
inline std::vector<RunManifest> collect_manifests(const fs::path& root) {
  std::vector<RunManifest> out;
  if (!fs::exists(root)) throw ConfigurationError("no such directory '" + root.string() + "'");
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "manifest.json") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  for (const fs::path& p : paths) {
    RunManifest m = load_manifest(p);
    if (m.status == "complete") out.push_back(std::move(m));
  }
  return out;
}

}  // namespace tarot
