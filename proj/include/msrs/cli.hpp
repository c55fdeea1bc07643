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

// The msrs_lab command line. Exit statuses:
//   0 success, 1 check or compare failure, 2 usage or config error,
//   3 numerical abort.

#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "msrs/config.hpp"
#include "msrs/experiments.hpp"
#include "msrs/gradcheck.hpp"
#include "msrs/report.hpp"
#include "msrs/trainer.hpp"

namespace msrs {

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitUsage = 2, kExitNumerical = 3 };

struct CliGlobals {
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

namespace cli_detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(config_detail::trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!config_detail::trim(cur).empty() || !out.empty()) out.push_back(config_detail::trim(cur));
  return out;
}

template <class T>
T parse_item(const std::string& flag, const std::string& s) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size())
    throw ConfigError(flag + ": cannot parse '" + s + "'");
  return v;
}

template <class T>
std::vector<T> parse_list(const std::string& flag, const std::string& s) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) out.push_back(parse_item<T>(flag, item));
  return out;
}

inline std::string cell_dir_name(double lambda, std::uint64_t seed) {
  return "lambda=" + config_detail::fmt(lambda) + "_seed=" + std::to_string(seed);
}

}  // namespace cli_detail

/// Trains one configuration and writes its run directory.
inline int cmd_train(const std::string& config_path, const CliGlobals& g, std::ostream& out,
                     std::ostream& err) {
  ExperimentConfig cfg;
  Dataset data;
  try {
    cfg = load_config(config_path);
    if (g.seed) cfg.seed = *g.seed;
    cfg.validate();
    data = make_dataset(cfg.task);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  const std::filesystem::path dir = g.out.empty() ? std::filesystem::path("runs") / cfg.run_id : std::filesystem::path(g.out);
  RunResult r;
  try {
    r = run_experiment(cfg, data);
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  write_run_dir(dir, cfg, r);
  if (r.status == RunStatus::kNumericalAbort) {
    err << "numerical abort: " << r.error << " (partial metrics in " << dir.string() << ")\n";
    return kExitNumerical;
  }
  if (!g.quiet)
    out << "method=" << method_name(cfg.method.method) << " initial_loss=" << r.initial_loss
        << " final_loss=" << r.final_loss << " final_sparsity=" << r.final_sparsity
        << " epochs_joint=" << r.epochs_joint << " out=" << dir.string() << "\n";
  return kExitOk;
}

/// One msrs run per (lambda, seed); sweep.csv plus a run directory per cell.
inline int cmd_sweep(const std::string& config_path, const std::string& lambdas_arg,
                     const std::string& seeds_arg, const CliGlobals& g, std::ostream& out,
                     std::ostream& err) {
  ExperimentConfig cfg;
  std::vector<double> lambdas;
  std::vector<std::uint64_t> seeds;
  try {
    cfg = load_config(config_path);
    lambdas = cli_detail::parse_list<double>("--lambda", lambdas_arg);
    if (!seeds_arg.empty())
      seeds = cli_detail::parse_list<std::uint64_t>("--seeds", seeds_arg);
    else
      seeds = {g.seed.value_or(cfg.seed)};
    if (lambdas.empty()) throw ConfigError("--lambda: at least one value is required");
    if (seeds.empty()) throw ConfigError("--seeds: at least one value is required");
    cfg.validate();
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  const std::filesystem::path dir = g.out.empty() ? std::filesystem::path("runs") / "sweep" : std::filesystem::path(g.out);
  std::filesystem::create_directories(dir / "cells");
  std::mutex log_mu;
  const auto rows = lambda_sweep(cfg, lambdas, seeds, worker_threads(),
                                 [&](std::size_t li, std::size_t si, const RunResult& r) {
                                   ExperimentConfig c = cfg;
                                   c.method.method = Method::kMsrs;
                                   c.method.msrs.lambda = lambdas[li];
                                   c.seed = seeds[si];
                                   write_run_dir(dir / "cells" / cli_detail::cell_dir_name(lambdas[li], seeds[si]),
                                                 c, r);
                                   if (!g.quiet) {
                                     std::lock_guard lock(log_mu);
                                     out << "lambda=" << lambdas[li] << " seed=" << seeds[si]
                                         << " final_sparsity=" << r.final_sparsity
                                         << " final_loss=" << r.final_loss << "\n";
                                   }
                                 });
  report_detail::write_text(dir / "sweep.csv", sweep_csv(rows));
  bool any_ok = false;
  for (const auto& r : rows) {
    if (r.status == "ok")
      any_ok = true;
    else
      err << "cell lambda=" << r.lambda << " seed=" << r.seed << " failed: " << r.error << "\n";
  }
  return any_ok ? kExitOk : kExitCheckFailed;
}

/// Finite-difference check of every primitive.
inline int cmd_gradcheck(const CliGlobals& g, const std::string& perturb_op, std::ostream& out,
                         std::ostream& err) {
  GradcheckOptions opt;
  opt.seed = g.seed.value_or(0);
  opt.perturb_op = perturb_op;
  bool ok = true;
  for (const auto& r : run_gradcheck(opt)) {
    out << r.op << " cases=" << r.cases << " max_rel_err=" << r.max_rel_err << (r.pass ? " ok" : " FAIL")
        << "\n";
    if (!r.pass) {
      ok = false;
      err << "gradcheck failed: " << r.op << " max_rel_err=" << r.max_rel_err << " (tolerance "
          << opt.tolerance << ")\n";
    }
  }
  return ok ? kExitOk : kExitCheckFailed;
}

/// Report tables for a run directory, or for every cell of a sweep directory.
inline int cmd_report(const std::string& path, const CliGlobals& g, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  std::vector<fs::path> runs;
  if (fs::exists(fs::path(path) / "sweep.csv") && fs::is_directory(fs::path(path) / "cells")) {
    for (const auto& e : fs::directory_iterator(fs::path(path) / "cells"))
      if (e.is_directory()) runs.push_back(e.path());
    std::sort(runs.begin(), runs.end());
  } else {
    runs.push_back(path);
  }
  for (const auto& dir : runs) {
    try {
      const RunSummary s = write_report(dir);
      if (!g.quiet)
        out << dir.string() << ": joint_epochs=" << s.joint_epochs << " final_sparsity=" << s.final_sparsity
            << " final_loss=" << s.final_loss << " stop_reason=" << s.stop_reason << "\n";
    } catch (const MetricsError& e) {
      err << "metrics error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const ConfigError& e) {
      err << "config error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const CheckpointError& e) {
      err << "checkpoint error: " << e.what() << "\n";
      return kExitUsage;
    }
  }
  return kExitOk;
}

/// Whether a comparison shows the expected outcome: from scratch only msrs
/// converges among dense/msrs/gmp/set/rigl; warm-started, every method does.
inline bool compare_expectation_met(const CompareReport& rep) {
  for (const auto& row : rep.rows) {
    if (rep.preset == "warm-start") {
      if (!row.converged) return false;
    } else if (row.method == Method::kMsrs) {
      if (!row.converged) return false;
    } else if (row.method != Method::kDenseMaskedGrads) {
      if (row.converged) return false;
    }
  }
  return true;
}

/// Every method on the pathological fixture; compare.csv and compare_runs.csv.
inline int cmd_compare(const std::string& preset_name, const CliGlobals& g, std::ostream& out,
                       std::ostream& err) {
  if (preset_name != "from-scratch" && preset_name != "warm-start") {
    err << "config error: compare preset must be from-scratch or warm-start, got '" << preset_name << "'\n";
    return kExitUsage;
  }
  const std::uint64_t s0 = g.seed.value_or(1);
  const std::vector<std::uint64_t> seeds = {s0, s0 + 1, s0 + 2};
  const CompareReport rep = run_compare(preset_name, seeds, worker_threads());
  const std::filesystem::path dir = g.out.empty() ? std::filesystem::path("runs") / ("compare-" + preset_name)
                                                  : std::filesystem::path(g.out);
  std::filesystem::create_directories(dir);
  report_detail::write_text(dir / "compare.csv", compare_csv(rep));
  report_detail::write_text(dir / "compare_runs.csv", compare_runs_csv(rep));
  if (!g.quiet) out << compare_csv(rep);
  for (const auto& r : rep.runs)
    if (r.status != "ok")
      err << method_name(r.method) << " seed=" << r.seed << " failed: " << r.error << "\n";
  if (!compare_expectation_met(rep)) {
    err << "compare: outcome differs from the expected pattern for " << preset_name << "\n";
    return kExitCheckFailed;
  }
  return kExitOk;
}

/// Every config key with its value under a preset, and its description.
inline int cmd_defaults(const std::string& preset_name, std::ostream& out, std::ostream& err) {
  try {
    out << documented_defaults(preset(preset_name));
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}

/// Parses argv and dispatches. argv[0] is the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Mask-learning sparse training lab", "msrs_lab"};
  app.require_subcommand(1);
  app.fallthrough();
  CliGlobals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "seed for every source of randomness");
  app.add_option("--out", g.out, "output directory");
  app.add_flag("--quiet", g.quiet, "suppress progress output");

  std::string config_path, lambdas, seeds_list, perturb, report_path, compare_preset, defaults_preset = "defaults";
  auto* train = app.add_subcommand("train", "train one configuration");
  train->add_option("config", config_path, "config file")->required();
  auto* sweep = app.add_subcommand("sweep", "lambda sweep over seeds");
  sweep->add_option("config", config_path, "config file")->required();
  auto* lambda_opt = sweep->add_option("--lambda", lambdas, "comma-separated lambda values");
  sweep->add_option("--seeds", seeds_list, "comma-separated seeds");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every primitive");
  gradcheck->add_option("--perturb", perturb, "scale the analytic gradient of this op (test hook)");
  auto* report = app.add_subcommand("report", "tables for a run or sweep directory");
  report->add_option("dir", report_path, "run or sweep directory")->required();
  auto* compare = app.add_subcommand("compare", "all methods on the pathological fixture");
  compare->add_option("preset", compare_preset, "from-scratch or warm-start")->required();
  auto* defaults = app.add_subcommand("defaults", "print every config key and its value");
  defaults->add_option("preset", defaults_preset, "preset name");

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }
  if (seed_opt->count() > 0) g.seed = seed;

  if (*train) return cmd_train(config_path, g, out, err);
  if (*sweep) {
    if (lambda_opt->count() == 0) {
      err << "config error: --lambda: at least one value is required\n";
      return kExitUsage;
    }
    return cmd_sweep(config_path, lambdas, seeds_list, g, out, err);
  }
  if (*gradcheck) return cmd_gradcheck(g, perturb, out, err);
  if (*report) return cmd_report(report_path, g, out, err);
  if (*compare) return cmd_compare(compare_preset, g, out, err);
  if (*defaults) return cmd_defaults(defaults_preset, out, err);
  return kExitUsage;
}

}  // namespace msrs
