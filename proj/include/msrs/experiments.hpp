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

// Multi-run drivers: lambda sweeps and the method comparison.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "msrs/config.hpp"
#include "msrs/sparse_methods.hpp"
#include "msrs/trainer.hpp"

namespace msrs {

/// Worker cap from MSRS_LAB_THREADS, default 1.
inline unsigned worker_threads() {
  const char* v = std::getenv("MSRS_LAB_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) return 1;
  return unsigned(n);
}

/// Runs fn(0..n-1) on up to `threads` workers. Each index runs exactly once;
/// the first exception is rethrown after all workers finish.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, unsigned(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  pool.clear();
  if (err) std::rethrow_exception(err);
}

// --- lambda sweep ------------------------------------------------------------

struct SweepRow {
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double final_sparsity = 0.0;
  double final_loss = 0.0;
  int epochs_joint = 0;
  std::string status;  // "ok" or "failed"
  std::string error;
};

/// One msrs run per (lambda, seed). Cells run with the given seed as their
/// run seed, so every lambda shares the same initializations. Failed cells
/// are marked and the sweep continues.
inline std::vector<SweepRow> lambda_sweep(
    const ExperimentConfig& base, const std::vector<double>& lambdas,
    const std::vector<std::uint64_t>& seeds, unsigned threads = 1,
    const std::function<void(std::size_t, std::size_t, const RunResult&)>& on_cell = {}) {
  if (lambdas.empty()) throw std::invalid_argument("lambda_sweep: empty lambda list");
  if (seeds.empty()) throw std::invalid_argument("lambda_sweep: empty seed list");
  const Dataset data = make_dataset(base.task);
  std::vector<SweepRow> rows(lambdas.size() * seeds.size());
  parallel_for(rows.size(), threads, [&](std::size_t cell) {
    const std::size_t li = cell / seeds.size(), si = cell % seeds.size();
    ExperimentConfig c = base;
    c.method.method = Method::kMsrs;
    c.method.msrs.lambda = lambdas[li];
    c.seed = seeds[si];
    SweepRow& row = rows[cell];
    row.lambda = lambdas[li];
    row.seed = seeds[si];
    try {
      RunResult r = run_experiment(c, data);
      row.final_sparsity = r.final_sparsity;
      row.final_loss = r.final_loss;
      row.epochs_joint = r.epochs_joint;
      row.status = r.status == RunStatus::kOk ? "ok" : "failed";
      row.error = r.error;
      if (on_cell) on_cell(li, si, r);
    } catch (const std::exception& e) {
      row.status = "failed";
      row.error = e.what();
      row.final_loss = std::nan("");
    }
  });
  return rows;
}

struct SweepSummary {
  double lambda = 0.0;
  double mean_sparsity = 0.0;
  double mean_loss = 0.0;
  int ok = 0;
};

/// Mean final sparsity and loss per lambda over successful cells.
inline std::vector<SweepSummary> summarize_sweep(const std::vector<SweepRow>& rows) {
  std::vector<SweepSummary> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const SweepSummary& s) { return s.lambda == r.lambda; });
    if (it == out.end()) {
      out.push_back({r.lambda, 0.0, 0.0, 0});
      it = out.end() - 1;
    }
    if (r.status != "ok") continue;
    it->mean_sparsity += r.final_sparsity;
    it->mean_loss += r.final_loss;
    ++it->ok;
  }
  for (auto& s : out) {
    if (s.ok == 0) {
      s.mean_sparsity = s.mean_loss = std::nan("");
      continue;
    }
    s.mean_sparsity /= s.ok;
    s.mean_loss /= s.ok;
  }
  return out;
}

// --- method comparison ---------------------------------------------------------

inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> m = {Method::kDense, Method::kMsrs,         Method::kGmp,
                                        Method::kSet,   Method::kRigl,         Method::kDenseMaskedGrads};
  return m;
}

struct CompareRun {
  Method method = Method::kDense;
  std::uint64_t seed = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_sparsity = 0.0;
  bool converged = false;
  std::string status;
  std::string error;
};

struct CompareRow {
  Method method = Method::kDense;
  double final_loss = 0.0;    // mean over seeds
  double initial_loss = 0.0;  // mean over seeds
  double final_sparsity = 0.0;
  int seeds_converged = 0;
  int seeds = 0;
  bool converged = false;  // majority of seeds
  std::string status;      // "ok" or the first failure
};

struct CompareReport {
  std::string preset;
  std::vector<CompareRun> runs;
  std::vector<CompareRow> rows;  // one per method, in all_methods() order
};

/// Dense pretraining recipe for the warm-start comparison: a learning rate at
/// which the pathological network does train.
inline ExperimentConfig warm_start_pretrain_config(const ExperimentConfig& base) {
  ExperimentConfig p = base;
  p.method.method = Method::kDense;
  p.optim.peak_lr_theta = 1e-3;
  p.optim.total_epochs = 30;
  p.run_id = base.run_id + "-pretrain";
  return p;
}

/// Every method on the pathological fixture with identical seeds.
///  from-scratch: random init.
///  warm-start:   each seed's network is first trained densely, then every
///                method starts from those weights; set/rigl sparsify them by
///                magnitude at ERK densities. Convergence is still judged
///                against the random-init loss.
inline CompareReport run_compare(const std::string& preset_name, const std::vector<std::uint64_t>& seeds,
                                 unsigned threads = 1, ExperimentConfig base = preset_pathological()) {
  if (preset_name != "from-scratch" && preset_name != "warm-start")
    throw std::invalid_argument("compare preset must be from-scratch or warm-start, got '" +
                                preset_name + "'");
  const bool warm = preset_name == "warm-start";
  if (warm) base.method.sparse_init = SparseInit::kMagnitude;
  const Dataset data = make_dataset(base.task);

  std::vector<std::optional<RunResult>> pre(seeds.size());
  if (warm) {
    parallel_for(seeds.size(), threads, [&](std::size_t i) {
      ExperimentConfig p = warm_start_pretrain_config(base);
      p.seed = seeds[i];
      pre[i] = run_experiment(p, data);
    });
  }

  const auto& methods = all_methods();
  CompareReport rep;
  rep.preset = preset_name;
  rep.runs.resize(methods.size() * seeds.size());
  parallel_for(rep.runs.size(), threads, [&](std::size_t cell) {
    const std::size_t mi = cell / seeds.size(), si = cell % seeds.size();
    ExperimentConfig c = base;
    c.method.method = methods[mi];
    c.seed = seeds[si];
    c.run_id = preset_name + "-" + method_name(methods[mi]) + "-" + std::to_string(seeds[si]);
    CompareRun& run = rep.runs[cell];
    run.method = methods[mi];
    run.seed = seeds[si];
    try {
      RunOptions o;
      if (warm) {
        if (pre[si]->status != RunStatus::kOk)
          throw NumericalError("pretraining failed: " + pre[si]->error);
        o.init_model = &pre[si]->model;
        o.reference_loss = pre[si]->initial_loss;
      }
      RunResult r = run_experiment(c, data, o);
      run.initial_loss = r.initial_loss;
      run.final_loss = r.final_loss;
      run.final_sparsity = r.final_sparsity;
      run.converged = r.converged();
      run.status = r.status == RunStatus::kOk ? "ok" : "failed";
      run.error = r.error;
    } catch (const std::exception& e) {
      run.status = "failed";
      run.error = e.what();
      run.final_loss = std::nan("");
    }
  });

  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    CompareRow row;
    row.method = methods[mi];
    row.status = "ok";
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const CompareRun& r = rep.runs[mi * seeds.size() + si];
      ++row.seeds;
      row.final_loss += r.final_loss / double(seeds.size());
      row.initial_loss += r.initial_loss / double(seeds.size());
      row.final_sparsity += r.final_sparsity / double(seeds.size());
      row.seeds_converged += r.converged ? 1 : 0;
      if (r.status != "ok" && row.status == "ok") row.status = "failed: " + r.error;
    }
    row.converged = 2 * row.seeds_converged > row.seeds;
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace msrs
