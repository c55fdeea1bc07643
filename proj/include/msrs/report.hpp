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

// Run directories and the plain-text tables derived from them.
//
//   <run>/metrics.jsonl             one MetricRecord per line
//   <run>/final.ckpt                binary checkpoint
//   <run>/resolved-config.snapshot  every key with its effective value
//   <run>/gradnorms.csv             written by write_report
//   <run>/sparsity_by_module.csv
//   <run>/summary.txt

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "msrs/checkpoint.hpp"
#include "msrs/config.hpp"
#include "msrs/experiments.hpp"
#include "msrs/metrics.hpp"
#include "msrs/trainer.hpp"

namespace msrs {

namespace report_detail {

inline std::string num(double v) { return config_detail::fmt(v); }

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << s;
}

}  // namespace report_detail

/// metrics.jsonl, final.ckpt and resolved-config.snapshot.
inline void write_run_dir(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                          const RunResult& r) {
  std::filesystem::create_directories(dir);
  write_metrics(r.metrics, (dir / "metrics.jsonl").string());
  checkpoint_save(r.checkpoint, (dir / "final.ckpt").string());
  report_detail::write_text(dir / "resolved-config.snapshot", resolved_config(cfg));
}

struct RunSummary {
  int joint_epochs = 0;
  std::string stop_reason;  // epsilon | max_epochs | not_applicable
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_sparsity = 0.0;
  std::size_t records = 0;
};

/// Derives the summary from a metric stream. The stop reason is "epsilon"
/// when the last joint epoch met the tolerance after at least two epochs.
inline RunSummary summarize_metrics(const std::vector<MetricRecord>& recs, double epsilon) {
  RunSummary s;
  s.records = recs.size();
  if (recs.empty()) return s;
  s.initial_loss = recs.front().loss;
  s.final_loss = recs.back().loss;
  s.final_sparsity = recs.back().global_sparsity;
  std::optional<double> last_diff;
  for (const auto& r : recs) {
    if (r.phase == "joint" && r.mask_sparsity_diff) {
      ++s.joint_epochs;
      last_diff = r.mask_sparsity_diff;
    }
  }
  if (s.joint_epochs == 0)
    s.stop_reason = "not_applicable";
  else
    s.stop_reason = s.joint_epochs >= 2 && *last_diff < epsilon ? "epsilon" : "max_epochs";
  return s;
}

/// gradnorms.csv: one row per logged step, one column per layer.
inline std::string gradnorms_csv(const std::vector<MetricRecord>& recs) {
  std::vector<std::string> layers;
  std::set<std::string> seen;
  for (const auto& r : recs)
    for (const auto& [name, _] : r.per_layer_grad_l2)
      if (seen.insert(name).second) layers.push_back(name);
  // Model order: in, block0..N, head.
  auto rank = [](const std::string& n) {
    const std::string mod = module_of(n);
    if (mod == "in") return std::make_pair(-1, n);
    if (mod == "head") return std::make_pair(1 << 30, n);
    return std::make_pair(std::stoi(mod.substr(5)), n);
  };
  std::sort(layers.begin(), layers.end(), [&](const auto& a, const auto& b) { return rank(a) < rank(b); });
  std::string out = "step,phase,epoch";
  for (const auto& l : layers) out += "," + l;
  out += '\n';
  for (const auto& r : recs) {
    out += std::to_string(r.step) + "," + r.phase + "," + std::to_string(r.epoch);
    for (const auto& l : layers) {
      auto it = r.per_layer_grad_l2.find(l);
      out += "," + (it == r.per_layer_grad_l2.end() ? std::string() : report_detail::num(it->second));
    }
    out += '\n';
  }
  return out;
}

/// sparsity_by_module.csv from the last record: layer, module, layer
/// sparsity, module mean, global.
inline std::string sparsity_csv(const MetricRecord& last) {
  std::string out = "layer,module,sparsity,module_average,global\n";
  std::map<std::string, std::pair<double, int>> mod;
  for (const auto& [name, s] : last.per_layer_sparsity) {
    auto& m = mod[module_of(name)];
    m.first += s;
    ++m.second;
  }
  std::vector<std::string> layers;
  for (const auto& [name, _] : last.per_layer_sparsity) layers.push_back(name);
  auto rank = [](const std::string& n) {
    const std::string m = module_of(n);
    if (m == "in") return std::make_pair(-1, n);
    if (m == "head") return std::make_pair(1 << 30, n);
    return std::make_pair(std::stoi(m.substr(5)), n);
  };
  std::sort(layers.begin(), layers.end(), [&](const auto& a, const auto& b) { return rank(a) < rank(b); });
  for (const auto& l : layers) {
    const auto& m = mod[module_of(l)];
    out += l + "," + module_of(l) + "," + report_detail::num(last.per_layer_sparsity.at(l)) + "," +
           report_detail::num(m.first / m.second) + "," + report_detail::num(last.global_sparsity) + "\n";
  }
  return out;
}

inline std::string summary_text(const RunSummary& s) {
  return "joint_epochs=" + std::to_string(s.joint_epochs) + "\nfinal_sparsity=" +
         report_detail::num(s.final_sparsity) + "\nfinal_loss=" + report_detail::num(s.final_loss) +
         "\ninitial_loss=" + report_detail::num(s.initial_loss) + "\nstop_reason=" + s.stop_reason +
         "\nrecords=" + std::to_string(s.records) + "\n";
}

/// Writes the three report files into a run directory. The joint-phase
/// tolerance comes from the run's snapshot when present. Throws
/// MetricsError (with the line number) for missing or corrupt metrics.
inline RunSummary write_report(const std::filesystem::path& dir) {
  const auto recs = read_metrics((dir / "metrics.jsonl").string());
  double epsilon = MsrsHyper{}.epsilon;
  if (std::filesystem::exists(dir / "resolved-config.snapshot"))
    epsilon = load_config((dir / "resolved-config.snapshot").string()).method.msrs.epsilon;
  RunSummary s = summarize_metrics(recs, epsilon);
  // A resumed run has no joint records of its own; its checkpoint does.
  if (s.joint_epochs == 0 && std::filesystem::exists(dir / "final.ckpt")) {
    const Checkpoint c = checkpoint_load((dir / "final.ckpt").string());
    for (const auto& [name, v] : c.counters) {
      if (name == "epochs_joint" && v > 0) s.joint_epochs = int(v);
      if (name == "stop_reason" && v == 1.0) s.stop_reason = "epsilon";
      if (name == "stop_reason" && v == 2.0) s.stop_reason = "max_epochs";
    }
  }
  report_detail::write_text(dir / "gradnorms.csv", gradnorms_csv(recs));
  report_detail::write_text(dir / "sparsity_by_module.csv", sparsity_csv(recs.back()));
  report_detail::write_text(dir / "summary.txt", summary_text(s));
  return s;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "lambda,seed,final_sparsity,final_loss,epochs_joint,status\n";
  for (const auto& r : rows)
    out += report_detail::num(r.lambda) + "," + std::to_string(r.seed) + "," +
           report_detail::num(r.final_sparsity) + "," + report_detail::num(r.final_loss) + "," +
           std::to_string(r.epochs_joint) + "," + r.status + "\n";
  return out;
}

inline std::string compare_csv(const CompareReport& rep) {
  std::string out = "method,final_loss,initial_loss,final_sparsity,converged,seeds_converged,seeds,status\n";
  for (const auto& r : rep.rows)
    out += std::string(method_name(r.method)) + "," + report_detail::num(r.final_loss) + "," +
           report_detail::num(r.initial_loss) + "," + report_detail::num(r.final_sparsity) + "," +
           (r.converged ? "true" : "false") + "," + std::to_string(r.seeds_converged) + "," +
           std::to_string(r.seeds) + "," + (r.status == "ok" ? "ok" : "failed") + "\n";
  return out;
}

inline std::string compare_runs_csv(const CompareReport& rep) {
  std::string out = "method,seed,final_loss,initial_loss,final_sparsity,converged,status\n";
  for (const auto& r : rep.runs)
    out += std::string(method_name(r.method)) + "," + std::to_string(r.seed) + "," +
           report_detail::num(r.final_loss) + "," + report_detail::num(r.initial_loss) + "," +
           report_detail::num(r.final_sparsity) + "," + (r.converged ? "true" : "false") + "," +
           r.status + "\n";
  return out;
}

}  // namespace msrs
