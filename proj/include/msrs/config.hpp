// Copyright 2026 The MSRS Lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Run configuration as flat "dotted.key = value" text with '#' comments.
// A "preset = <name>" line selects the base values; every other line
// overrides one key. Unknown keys are errors.

#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <tuple>
#include <type_traits>
#include <utility>
#include <vector>

#include "msrs/sparse_methods.hpp"
#include "msrs/tasks.hpp"
#include "msrs/trainer.hpp"

namespace msrs {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return std::string(s);
}

inline std::string fmt(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}
inline std::string fmt(bool v) { return v ? "true" : "false"; }
template <class T>
  requires(std::is_integral_v<T> && !std::is_same_v<T, bool>)
std::string fmt(T v) {
  return std::to_string(v);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": cannot parse '" + v + "' as a number");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

}  // namespace config_detail

inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adamw"; }
inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adamw") return OptimizerKind::kAdamW;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

struct ConfigKey {
  std::string name;
  std::string doc;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

/// Every recognised key, in documentation order.
inline const std::vector<ConfigKey>& config_keys() {
  using namespace config_detail;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto num = [&k](std::string name, std::string doc, auto member) {
      using T = std::remove_cvref_t<decltype(member(std::declval<ExperimentConfig&>()))>;
      k.push_back({name, std::move(doc),
                   [member](const ExperimentConfig& c) {
                     return fmt(member(const_cast<ExperimentConfig&>(c)));
                   },
                   [member, name](ExperimentConfig& c, const std::string& v) {
                     if constexpr (std::is_same_v<T, bool>)
                       member(c) = parse_bool(name, v);
                     else
                       member(c) = parse_number<T>(name, v);
                   }});
    };
    auto str = [&k](std::string name, std::string doc,
                    std::function<std::string(const ExperimentConfig&)> get,
                    std::function<void(ExperimentConfig&, const std::string&)> set) {
      k.push_back({std::move(name), std::move(doc), std::move(get), std::move(set)});
    };
    using C = ExperimentConfig;

    num("seed", "run seed; every random stream is derived from it",
        [](C& c) -> std::uint64_t& { return c.seed; });

    num("model.depth", "number of blocks", [](C& c) -> int& { return c.model.depth; });
    num("model.width", "hidden width", [](C& c) -> int& { return c.model.width; });
    str("model.activation", "tanh | relu | gelu",
        [](const C& c) { return std::string(activation_name(c.model.activation)); },
        [](C& c, const std::string& v) { c.model.activation = parse_activation(v); });
    num("model.residual", "residual blocks (two linears) instead of plain ones",
        [](C& c) -> bool& { return c.model.residual; });
    num("model.layerscale", "learnable diagonal on each residual branch",
        [](C& c) -> bool& { return c.model.layerscale; });
    num("model.layerscale_init", "initial LayerScale value",
        [](C& c) -> double& { return c.model.layerscale_init; });
    num("model.normalization", "mean-variance normalization before each block",
        [](C& c) -> bool& { return c.model.normalization; });
    num("model.d_in", "input features", [](C& c) -> int& { return c.model.d_in; });
    num("model.d_out", "outputs (classes for classification)",
        [](C& c) -> int& { return c.model.d_out; });
    str("model.init", "uniform | normal, scaled by gain / sqrt(fan_in)",
        [](const C& c) { return std::string(c.model.init == InitScheme::kUniform ? "uniform" : "normal"); },
        [](C& c, const std::string& v) {
          if (v == "uniform")
            c.model.init = InitScheme::kUniform;
          else if (v == "normal")
            c.model.init = InitScheme::kNormal;
          else
            throw std::invalid_argument("expected uniform or normal, got '" + v + "'");
        });
    num("model.gain", "init gain", [](C& c) -> double& { return c.model.gain; });

    str("task.generator", "teacher | spirals | csv",
        [](const C& c) { return c.task.generator; },
        [](C& c, const std::string& v) { c.task.generator = v; });
    num("task.seed", "data seed", [](C& c) -> std::uint64_t& { return c.task.seed; });
    num("task.n", "number of examples", [](C& c) -> std::size_t& { return c.task.n; });
    num("task.d_in", "input features (teacher, csv)", [](C& c) -> std::size_t& { return c.task.d_in; });
    num("task.noise", "spiral noise std", [](C& c) -> double& { return c.task.noise; });
    num("task.teacher_depth", "teacher blocks", [](C& c) -> int& { return c.task.teacher_depth; });
    num("task.teacher_width", "teacher width", [](C& c) -> int& { return c.task.teacher_width; });
    num("task.teacher_gain", "teacher init gain", [](C& c) -> double& { return c.task.teacher_gain; });
    str("task.csv_path", "csv file, final column is the target",
        [](const C& c) { return c.task.csv_path; },
        [](C& c, const std::string& v) { c.task.csv_path = v; });
    num("task.csv_header", "skip one header line", [](C& c) -> bool& { return c.task.csv_header; });
    num("task.csv_classification", "final csv column is a class index",
        [](C& c) -> bool& { return c.task.csv_classification; });

    str("method.name", "dense | msrs | gmp | set | rigl | dense_masked_grads",
        [](const C& c) { return std::string(method_name(c.method.method)); },
        [](C& c, const std::string& v) { c.method.method = parse_method(v); });
    num("method.target_sparsity", "final sparsity for gmp, set, rigl (ignored by msrs)",
        [](C& c) -> double& { return c.method.target_sparsity; });
    num("method.prune_grow_fraction", "zeta, share of active weights cycled per set/rigl update",
        [](C& c) -> double& { return c.method.prune_grow_fraction; });
    num("method.zeta_cosine_decay", "decay zeta to 0 over training",
        [](C& c) -> bool& { return c.method.zeta_cosine_decay; });
    num("method.update_interval", "steps between gmp/set/rigl mask updates",
        [](C& c) -> int& { return c.method.update_interval; });
    str("method.gmp_scope", "per_layer | global",
        [](const C& c) { return std::string(c.method.gmp_scope == PruneScope::kGlobal ? "global" : "per_layer"); },
        [](C& c, const std::string& v) {
          if (v == "per_layer")
            c.method.gmp_scope = PruneScope::kPerLayer;
          else if (v == "global")
            c.method.gmp_scope = PruneScope::kGlobal;
          else
            throw std::invalid_argument("expected per_layer or global, got '" + v + "'");
        });
    num("method.gmp_begin", "fraction of training where the gmp ramp starts",
        [](C& c) -> double& { return c.method.gmp_begin; });
    num("method.gmp_end", "fraction of training where the gmp ramp ends",
        [](C& c) -> double& { return c.method.gmp_end; });
    str("method.sparse_init", "random | magnitude placement of set/rigl ERK masks",
        [](const C& c) { return std::string(c.method.sparse_init == SparseInit::kMagnitude ? "magnitude" : "random"); },
        [](C& c, const std::string& v) {
          if (v == "random")
            c.method.sparse_init = SparseInit::kRandom;
          else if (v == "magnitude")
            c.method.sparse_init = SparseInit::kMagnitude;
          else
            throw std::invalid_argument("expected random or magnitude, got '" + v + "'");
        });

    num("msrs.mu", "logit init offset", [](C& c) -> double& { return c.method.msrs.mu; });
    num("msrs.rho", "logit init scale", [](C& c) -> double& { return c.method.msrs.rho; });
    num("msrs.varsigma", "log guard", [](C& c) -> double& { return c.method.msrs.varsigma; });
    num("msrs.lambda", "per-step logit decrement (pruning speed)",
        [](C& c) -> double& { return c.method.msrs.lambda; });
    num("msrs.epsilon", "joint-phase stop tolerance on sparsity change",
        [](C& c) -> double& { return c.method.msrs.epsilon; });
    num("msrs.l_fwd", "forward temperature", [](C& c) -> double& { return c.method.msrs.l_fwd; });
    num("msrs.l_bwd", "backward temperature", [](C& c) -> double& { return c.method.msrs.l_bwd; });
    num("msrs.max_joint_epochs", "cap on joint-phase epochs",
        [](C& c) -> int& { return c.method.msrs.max_joint_epochs; });
    num("msrs.dense_after", "continue with all weights adjustable (false: only unmasked)",
        [](C& c) -> bool& { return c.method.dense_after; });

    str("optim.kind", "adamw | sgd for the weights",
        [](const C& c) { return std::string(optimizer_name(c.optim.kind)); },
        [](C& c, const std::string& v) { c.optim.kind = parse_optimizer(v); });
    str("optim.phi_kind", "adamw | sgd for the mask logits",
        [](const C& c) { return std::string(optimizer_name(c.optim.phi_kind)); },
        [](C& c, const std::string& v) { c.optim.phi_kind = parse_optimizer(v); });
    num("optim.beta1", "first-moment decay", [](C& c) -> double& { return c.optim.beta1; });
    num("optim.beta2", "second-moment decay", [](C& c) -> double& { return c.optim.beta2; });
    num("optim.adam_eps", "adam denominator guard", [](C& c) -> double& { return c.optim.adam_eps; });
    num("optim.weight_decay", "decoupled weight decay", [](C& c) -> double& { return c.optim.weight_decay; });
    num("optim.lr_theta", "peak weight learning rate (alpha)",
        [](C& c) -> double& { return c.optim.peak_lr_theta; });
    num("optim.lr_phi", "peak logit learning rate (eta)",
        [](C& c) -> double& { return c.optim.peak_lr_phi; });
    num("optim.clip_norm", "global gradient-norm clip", [](C& c) -> double& { return c.optim.clip_norm; });
    num("optim.warmup_epochs", "linear warmup per phase", [](C& c) -> int& { return c.optim.warmup_epochs; });
    num("optim.total_epochs", "epochs of the train or continuation phase",
        [](C& c) -> int& { return c.optim.total_epochs; });
    num("optim.batch_size", "minibatch size", [](C& c) -> int& { return c.optim.batch_size; });

    num("log.interval", "steps between metric records (epoch ends always log)",
        [](C& c) -> int& { return c.log_interval; });
    str("log.run_id", "run identifier written to every record",
        [](const C& c) { return c.run_id; }, [](C& c, const std::string& v) { c.run_id = v; });
    return k;
  }();
  return keys;
}

// --- presets -----------------------------------------------------------------

/// Deep plain tanh network on the teacher task; dense training stalls here.
inline ExperimentConfig preset_pathological() {
  ExperimentConfig c;
  c.model = pathological_model_spec();
  c.task = TaskConfig{};
  c.method.method = Method::kMsrs;
  c.method.msrs.lambda = 1e-5;
  c.method.msrs.max_joint_epochs = 10;
  c.method.dense_after = true;
  c.method.target_sparsity = 0.4;
  c.method.update_interval = 10;
  c.optim.peak_lr_theta = 1e-4;
  c.optim.peak_lr_phi = 1e-4;
  c.optim.total_epochs = 30;
  c.run_id = "pathological";
  return c;
}

/// The pathological fixture at a learning rate where dense training is
/// unstable; used for the masked-gradient probe.
inline ExperimentConfig preset_probe() {
  ExperimentConfig c = preset_pathological();
  c.method.method = Method::kDenseMaskedGrads;
  c.optim.peak_lr_theta = 5e-3;
  c.optim.peak_lr_phi = 1e-3;
  c.optim.total_epochs = 50;
  c.run_id = "probe";
  return c;
}

/// Four residual tanh blocks on the teacher task, sparse continuation.
inline ExperimentConfig preset_teacher() {
  ExperimentConfig c;
  c.method.method = Method::kMsrs;
  c.method.msrs.lambda = 1e-4;
  c.method.dense_after = false;
  c.optim.peak_lr_theta = 1e-3;
  c.optim.peak_lr_phi = 1e-2;
  c.optim.total_epochs = 10;
  c.run_id = "teacher";
  return c;
}

/// Two-spiral classification with a residual relu network.
inline ExperimentConfig preset_spirals() {
  ExperimentConfig c;
  c.task.generator = "spirals";
  c.task.n = 256;
  c.task.noise = 0.0;
  c.model.d_in = 2;
  c.model.d_out = 2;
  c.model.depth = 4;
  c.model.width = 32;
  c.model.activation = Activation::kRelu;
  c.method.method = Method::kDense;
  c.optim.peak_lr_theta = 1e-2;
  c.optim.total_epochs = 150;
  c.run_id = "spirals";
  return c;
}

/// Library defaults: the large-scale mask recipe, lambda 2e-10.
inline ExperimentConfig preset_defaults() { return ExperimentConfig{}; }

inline const std::map<std::string, std::function<ExperimentConfig()>>& presets() {
  static const std::map<std::string, std::function<ExperimentConfig()>> p = {
      {"defaults", preset_defaults},   {"pathological", preset_pathological},
      {"probe", preset_probe},         {"teacher", preset_teacher},
      {"spirals", preset_spirals},
  };
  return p;
}

inline ExperimentConfig preset(const std::string& name) {
  auto it = presets().find(name);
  if (it == presets().end()) throw ConfigError("preset: unknown preset '" + name + "'");
  return it->second();
}

// --- parsing and printing ----------------------------------------------------

inline void set_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (k.name != key) continue;
    try {
      k.set(c, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(key + ": " + e.what());
    }
    return;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

/// Parses config text. Errors name the line and key.
inline ExperimentConfig parse_config(std::istream& in, const std::string& origin = "<config>") {
  std::vector<std::tuple<std::size_t, std::string, std::string>> entries;
  std::string preset_name = "defaults";
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = config_detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected 'key = value'");
    const std::string key = config_detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = config_detail::trim(std::string_view(t).substr(eq + 1));
    if (key == "preset")
      preset_name = value;
    else
      entries.emplace_back(n, key, value);
  }
  ExperimentConfig c = preset(preset_name);
  for (const auto& [ln, key, value] : entries) {
    try {
      set_key(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(ln) + ": " + e.what());
    }
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  return parse_config(in, path);
}

/// Every key with its effective value; feeding this back reproduces `c`.
inline std::string resolved_config(const ExperimentConfig& c) {
  std::ostringstream out;
  for (const auto& k : config_keys()) out << k.name << " = " << k.get(c) << '\n';
  return out.str();
}

/// Defaults with one-line documentation, for the `defaults` command.
inline std::string documented_defaults(const ExperimentConfig& c = {}) {
  std::ostringstream out;
  out << "# preset = defaults | pathological | probe | teacher | spirals\n";
  for (const auto& k : config_keys()) out << "# " << k.doc << '\n' << k.name << " = " << k.get(c) << '\n';
  return out.str();
}

}  // namespace msrs
