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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "msrs/autodiff.hpp"
#include "msrs/checkpoint.hpp"
#include "msrs/mask.hpp"
#include "msrs/metrics.hpp"
#include "msrs/model.hpp"
#include "msrs/optim.hpp"
#include "msrs/rng.hpp"
#include "msrs/sparse_methods.hpp"
#include "msrs/tasks.hpp"
#include "msrs/tensor.hpp"

namespace msrs {

struct TaskConfig {
  std::string generator = "teacher";  // teacher | spirals | csv
  std::uint64_t seed = 7;
  std::size_t n = 256;
  std::size_t d_in = 16;
  double noise = 0.0;  // spirals
  int teacher_depth = 2;
  int teacher_width = 32;
  double teacher_gain = 2.0;
  std::string csv_path;
  bool csv_header = false;
  bool csv_classification = false;
};

inline Dataset make_dataset(const TaskConfig& t) {
  if (t.generator == "teacher") {
    TeacherSpec ts;
    ts.model.depth = t.teacher_depth;
    ts.model.width = t.teacher_width;
    ts.model.gain = t.teacher_gain;
    return gen_teacher_regression(t.seed, t.n, t.d_in, ts);
  }
  if (t.generator == "spirals") return gen_two_spirals(t.seed, t.n, t.noise);
  if (t.generator == "csv")
    return load_csv(t.csv_path, t.d_in,
                    t.csv_classification ? TargetKind::kClassification : TargetKind::kRegression,
                    t.csv_header);
  throw std::invalid_argument("task.generator must be teacher, spirals or csv, got '" +
                              t.generator + "'");
}

struct ExperimentConfig {
  ModelSpec model;
  TaskConfig task;
  SparseMethodConfig method;
  OptimizerConfig optim;
  int log_interval = 10;
  std::uint64_t seed = 1;
  std::string run_id = "run";

  void validate() const {
    model.validate();
    method.validate();
    optim.validate();
    if (log_interval < 1) throw std::invalid_argument("log.interval must be >= 1");
  }
};

struct StepEvent {
  std::string phase;
  std::size_t phase_step = 0;  // index into the phase's own schedule
  std::uint64_t global_step = 0;
  double lr_theta = 0.0;
  double lr_phi = 0.0;
};

struct RunOptions {
  // Warm start: copy these weights instead of a random init.
  const Model* init_model = nullptr;
  // Loss the converged flag is measured against; defaults to the first record.
  std::optional<double> reference_loss;
  // Masks for dense_masked_grads; derived by a joint phase when absent.
  std::optional<std::vector<BinaryMask>> fixed_masks;
  bool stop_after_joint = false;
  const Checkpoint* resume = nullptr;
  std::function<void(const StepEvent&)> on_step;
  std::function<void(const MetricRecord&, const Model&, const std::vector<BinaryMask>&)> on_record;
};

enum class RunStatus { kOk, kNumericalAbort };

struct RunResult {
  RunStatus status = RunStatus::kOk;
  std::string error;
  std::vector<MetricRecord> metrics;
  Model model;
  std::vector<BinaryMask> masks;
  int epochs_joint = 0;
  std::string stop_reason;  // "epsilon", "max_epochs", or empty for single-phase methods
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_sparsity = 0.0;
  Checkpoint checkpoint;

  bool converged() const {
    return status == RunStatus::kOk && std::isfinite(final_loss) && final_loss < 0.5 * initial_loss;
  }
};

/// L2 norm of each selected gradient. The default selection is the first
/// linear of every block.
inline std::map<std::string, double> grad_norm_probe(const std::map<std::string, Tensor>& grads,
                                                     const std::vector<std::string>& layers) {
  std::map<std::string, double> out;
  for (const auto& name : layers) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::out_of_range("grad_norm_probe: no gradient for " + name);
    out[name] = l2_norm(it->second);
  }
  return out;
}

inline std::vector<std::string> first_linear_of_blocks(const ModelSpec& spec) {
  std::vector<std::string> out;
  for (int k = 0; k < spec.depth; ++k) out.push_back("block" + std::to_string(k) + ".w1");
  return out;
}

/// Module name for a parameter name: "in", "block3", "head".
inline std::string module_of(const std::string& name) { return name.substr(0, name.find('.')); }

struct SparsityReport {
  struct Row {
    std::string layer;
    std::string module;
    std::size_t count = 0;
    double sparsity = 0.0;
  };
  std::vector<Row> layers;
  std::vector<std::pair<std::string, double>> module_average;  // in model order
  double global = 0.0;
};

/// Per-layer sparsity, mean per module, and the count-weighted global value.
/// Only prunable weights appear.
inline SparsityReport sparsity_report(const std::vector<std::string>& names,
                                      const std::vector<BinaryMask>& masks) {
  if (names.size() != masks.size())
    throw std::invalid_argument("sparsity_report: names and masks differ in length");
  SparsityReport r;
  std::vector<std::pair<std::string, std::vector<double>>> groups;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const double s = sparsity(masks[i]);
    r.layers.push_back({names[i], module_of(names[i]), masks[i].numel(), s});
    const std::string mod = module_of(names[i]);
    if (groups.empty() || groups.back().first != mod) groups.push_back({mod, {}});
    groups.back().second.push_back(s);
  }
  for (const auto& [mod, v] : groups)
    r.module_average.emplace_back(mod, std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()));
  r.global = sparsity(std::span<const BinaryMask>(masks));
  return r;
}

inline std::vector<std::string> prunable_names(const Model& m) {
  std::vector<std::string> out;
  for (const auto& p : m.params)
    if (p.prunable()) out.push_back(p.name);
  return out;
}

/// Report over a model's prunable layers, masks in parameter order.
inline SparsityReport sparsity_report(const Model& m, const std::vector<BinaryMask>& masks) {
  return sparsity_report(prunable_names(m), masks);
}

class Trainer {
 public:
  Trainer(ExperimentConfig cfg, const Dataset& data, RunOptions opt = {})
      : cfg_(std::move(cfg)), data_(data), opt_(std::move(opt)) {
    cfg_.validate();
    if (data_.inputs.cols() != std::size_t(cfg_.model.d_in))
      throw std::invalid_argument("model.d_in (" + std::to_string(cfg_.model.d_in) +
                                  ") does not match the data's " +
                                  std::to_string(data_.inputs.cols()) + " features");
    if (data_.kind == TargetKind::kRegression &&
        data_.targets.cols() != std::size_t(cfg_.model.d_out))
      throw std::invalid_argument("model.d_out does not match the regression target width");
    if (data_.kind == TargetKind::kClassification &&
        data_.num_classes() > std::size_t(cfg_.model.d_out))
      throw std::invalid_argument("model.d_out is smaller than the number of classes");
    steps_per_epoch_ = (data_.size() + std::size_t(cfg_.optim.batch_size) - 1) /
                       std::size_t(cfg_.optim.batch_size);
  }

  RunResult run() {
    init_model();
    try {
      if (opt_.resume) {
        restore(*opt_.resume);
        run_continue();
      } else {
        switch (cfg_.method.method) {
          case Method::kMsrs:
            run_joint();
            condense_masks();
            if (opt_.stop_after_joint) {
              result_.checkpoint = snapshot(Phase::kContinue);
              break;
            }
            run_continue();
            break;
          case Method::kDenseMaskedGrads:
            masks_ = opt_.fixed_masks ? *opt_.fixed_masks : derive_masks();
            check_masks(masks_);
            run_single();
            break;
          case Method::kSet:
          case Method::kRigl: {
            if (cfg_.method.sparse_init == SparseInit::kMagnitude) {
              std::vector<Tensor> w;
              for (auto pi : model_.prunable_indices()) w.push_back(model_.params[pi].value);
              masks_ = erk_magnitude_init(w, layer_inventory(model_), cfg_.method.target_sparsity);
            } else {
              masks_ = erk_init(layer_inventory(model_), cfg_.method.target_sparsity,
                                Rng::derive(cfg_.seed, 20));
            }
            std::size_t i = 0;
            for (auto pi : model_.prunable_indices())
              model_.params[pi].value = apply_mask(model_.params[pi].value, masks_[i++]);
            run_single();
            break;
          }
          default:
            run_single();
        }
      }
    } catch (const NumericalError& e) {
      result_.status = RunStatus::kNumericalAbort;
      result_.error = e.what();
    }
    finish();
    return std::move(result_);
  }

 private:
  enum class Phase { kTrain, kJoint, kContinue };

  static const char* phase_name(Phase p) {
    switch (p) {
      case Phase::kTrain: return "train";
      case Phase::kJoint: return "joint";
      case Phase::kContinue: return "continue";
    }
    return "?";
  }

  // --- setup -------------------------------------------------------------

  void init_model() {
    model_ = build_model(cfg_.model, Rng::derive(cfg_.seed, 10), cfg_.method.msrs);
    if (opt_.init_model) {
      for (auto& p : model_.params) {
        const Tensor& src = opt_.init_model->get(p.name).value;
        require_same_shape(src, p.value, "warm start");
        p.value = src;
        if (p.phi) p.phi = init_phi(p.value, cfg_.method.msrs);
      }
    }
    masks_.clear();
    for (auto pi : model_.prunable_indices())
      masks_.push_back(BinaryMask::ones(model_.params[pi].value.shape()));
  }

  void check_masks(const std::vector<BinaryMask>& masks) const {
    const auto idx = model_.prunable_indices();
    if (masks.size() != idx.size())
      throw std::invalid_argument("fixed masks: expected " + std::to_string(idx.size()) +
                                  " masks, got " + std::to_string(masks.size()));
    for (std::size_t i = 0; i < idx.size(); ++i)
      require_same_shape(masks[i].bits(), model_.params[idx[i]].value, "fixed masks");
  }

  std::vector<BinaryMask> derive_masks() const {
    ExperimentConfig c = cfg_;
    c.method.method = Method::kMsrs;
    RunOptions o;
    o.init_model = opt_.init_model;
    o.stop_after_joint = true;
    RunResult r = Trainer(c, data_, o).run();
    if (r.status != RunStatus::kOk)
      throw NumericalError("mask derivation for dense_masked_grads failed: " + r.error);
    return r.masks;
  }

  // --- modes ---------------------------------------------------------------

  WeightMode mode(Phase ph) const {
    if (ph == Phase::kJoint) return WeightMode::kLearned;
    if (ph == Phase::kContinue) return cfg_.method.dense_after ? WeightMode::kDense : WeightMode::kMasked;
    switch (cfg_.method.method) {
      case Method::kGmp:
      case Method::kSet:
      case Method::kRigl: return WeightMode::kMasked;
      default: return WeightMode::kDense;
    }
  }

  // Whether gradients (and decay) of prunable weights are gated by masks_.
  bool gated(Phase ph) const {
    if (ph == Phase::kJoint) return false;
    if (ph == Phase::kContinue) return !cfg_.method.dense_after;
    return cfg_.method.method != Method::kDense;
  }

  std::vector<BinaryMask> current_masks(Phase ph) const {
    if (ph == Phase::kJoint) return model_.phi_masks();
    return masks_;
  }

  // --- forward/backward ----------------------------------------------------

  struct Eval {
    double loss = 0.0;
    std::map<std::string, Tensor> grads;
  };

  Eval evaluate(Phase ph, const Dataset& batch, bool gate = true) const {
    ad::Graph g;
    ForwardOptions fo;
    fo.mode = mode(ph);
    fo.masks = &masks_;
    ad::Var out = forward(g, model_, batch.inputs, fo);
    ad::Var loss = batch.kind == TargetKind::kRegression ? ad::mse(out, batch.targets)
                                                         : ad::cross_entropy(out, batch.labels);
    Eval e{loss.value().item(), g.backward(loss)};
    if (gate && gated(ph)) {
      std::size_t i = 0;
      for (auto pi : model_.prunable_indices()) {
        Tensor& gr = e.grads.at(model_.params[pi].name);
        gr = apply_mask(gr, masks_[i++]);
      }
    }
    return e;
  }

  // --- phases --------------------------------------------------------------

  struct Schedule {
    std::size_t warmup = 0;
    std::size_t total = 0;
  };

  Schedule schedule(int epochs) const {
    return {std::size_t(cfg_.optim.warmup_epochs) * steps_per_epoch_,
            std::size_t(epochs) * steps_per_epoch_};
  }

  void reset_optimizers() {
    opt_theta_ = Optimizer(cfg_.optim);
    OptimizerConfig pc = cfg_.optim;
    pc.kind = cfg_.optim.phi_kind;
    opt_phi_ = Optimizer(pc);
  }

  std::vector<std::size_t> epoch_order(Phase ph, int epoch) const {
    std::vector<std::size_t> idx(data_.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(Rng::derive(Rng::derive(cfg_.seed, 100 + std::uint64_t(ph)), std::uint64_t(epoch)));
    rng.shuffle(idx);
    return idx;
  }

  // Runs up to `epochs` epochs; `after_epoch(e)` returns true to stop early.
  void run_epochs(Phase ph, int epochs, const std::function<bool(int)>& after_epoch) {
    reset_optimizers();
    const Schedule sch = schedule(epochs);
    std::size_t local = 0;
    log(ph, local, sch, std::nullopt);
    const auto bs = std::size_t(cfg_.optim.batch_size);
    for (int e = 1; e <= epochs; ++e) {
      const auto order = epoch_order(ph, e);
      for (std::size_t b = 0; b < order.size(); b += bs) {
        std::vector<std::size_t> idx(order.begin() + std::ptrdiff_t(b),
                                     order.begin() + std::ptrdiff_t(std::min(b + bs, order.size())));
        step(ph, take_rows(data_, idx), local, sch);
        ++local;
        ++global_step_;
        const bool epoch_end = b + bs >= order.size();
        if (!epoch_end && global_step_ % std::uint64_t(cfg_.log_interval) == 0)
          log(ph, local, sch, std::nullopt);
      }
      ++global_epoch_;
      if (ph != Phase::kJoint) log(ph, local, sch, std::nullopt);
      if (after_epoch(e)) return;
    }
  }

  void step(Phase ph, const Dataset& batch, std::size_t local, const Schedule& sch) {
    const double lr_t = lr_schedule(local, sch.warmup, sch.total, cfg_.optim.peak_lr_theta);
    const double lr_p = lr_schedule(local, sch.warmup, sch.total, cfg_.optim.peak_lr_phi);
    if (opt_.on_step) opt_.on_step({phase_name(ph), local, global_step_, lr_t, lr_p});

    if (ph == Phase::kTrain) before_step(local, sch);
    const bool pg = ph == Phase::kTrain && is_prune_grow_step(local);
    Eval e = evaluate(ph, batch, !pg);
    if (!std::isfinite(e.loss))
      throw NumericalError(std::string(phase_name(ph)) + " step " + std::to_string(global_step_) +
                           ": non-finite loss");
    if (pg) prune_grow(local, sch, e);

    std::map<std::string, Tensor> gt, gp;
    for (auto& [name, g] : e.grads) {
      if (name.ends_with(".phi"))
        gp.emplace(name, std::move(g));
      else
        gt.emplace(name, std::move(g));
    }
    clip_global_norm(gt, cfg_.optim.clip_norm);
    if (!gp.empty()) clip_global_norm(gp, cfg_.optim.clip_norm);

    const bool gate = gated(ph);
    std::size_t mi = 0;
    for (auto& p : model_.params) {
      const BinaryMask* decay = nullptr;
      if (p.prunable()) {
        if (gate) decay = &masks_[mi];
        ++mi;
      }
      opt_theta_.step(p.name, p.value, gt.at(p.name), lr_t, decay);
      if (ph == Phase::kJoint && p.phi) {
        opt_phi_.step(p.name + ".phi", *p.phi, gp.at(p.name + ".phi"), lr_p);
        apply_penalty(*p.phi, cfg_.method.msrs.lambda);
      }
    }
  }

  // GMP pruning events, applied before the step's gradient.
  void before_step(std::size_t local, const Schedule& sch) {
    if (cfg_.method.method != Method::kGmp) return;
    const double t0 = cfg_.method.gmp_begin * double(sch.total);
    const double span = (cfg_.method.gmp_end - cfg_.method.gmp_begin) * double(sch.total);
    const bool periodic = local % std::size_t(cfg_.method.update_interval) == 0;
    const bool last = !gmp_final_done_ && double(local) >= t0 + span;
    if (!periodic && !last) return;
    if (double(local) < t0) return;
    if (last) gmp_final_done_ = true;
    const double s = gmp_schedule(double(local), t0, span, 0.0, cfg_.method.target_sparsity);
    std::vector<Tensor> w;
    for (auto pi : model_.prunable_indices()) w.push_back(model_.params[pi].value);
    auto next = magnitude_prune(w, s, cfg_.method.gmp_scope);
    replace_masks(std::move(next));
  }

  bool is_prune_grow_step(std::size_t local) const {
    const Method m = cfg_.method.method;
    if (m != Method::kSet && m != Method::kRigl) return false;
    return local > 0 && local % std::size_t(cfg_.method.update_interval) == 0;
  }

  // SET/RigL event. `e` holds ungated gradients with respect to the effective
  // weights, dense over every position; they are gated by the new masks here.
  void prune_grow(std::size_t local, const Schedule& sch, Eval& e) {
    const double zeta = cfg_.method.zeta_cosine_decay
                            ? cosine_zeta(cfg_.method.prune_grow_fraction, double(local), double(sch.total))
                            : cfg_.method.prune_grow_fraction;
    std::vector<BinaryMask> next;
    std::size_t i = 0;
    Rng rng(Rng::derive(Rng::derive(cfg_.seed, 21), global_step_));
    for (auto pi : model_.prunable_indices()) {
      Parameter& p = model_.params[pi];
      if (masks_[i].popcount() == 0) {
        next.push_back(masks_[i++]);
        continue;
      }
      PruneGrowResult r = cfg_.method.method == Method::kSet
                              ? set_prune_grow(p.value, masks_[i], zeta, rng)
                              : rigl_prune_grow(p.value, e.grads.at(p.name), masks_[i], zeta);
      next.push_back(std::move(r.mask));
      ++i;
    }
    replace_masks(std::move(next));
    i = 0;
    for (auto pi : model_.prunable_indices()) {
      Tensor& g = e.grads.at(model_.params[pi].name);
      g = apply_mask(g, masks_[i++]);
    }
  }

  // Installs new masks, zeroing weights and optimizer moments wherever the
  // mask changed or is off.
  void replace_masks(std::vector<BinaryMask> next) {
    std::size_t i = 0;
    for (auto pi : model_.prunable_indices()) {
      Parameter& p = model_.params[pi];
      auto it = opt_theta_.states().find(p.name);
      for (std::size_t k = 0; k < p.value.numel(); ++k) {
        const bool changed = next[i].active(k) != masks_[i].active(k);
        if (!next[i].active(k)) p.value[k] = 0.0;
        if (changed && it != opt_theta_.states().end() && it->second.m.numel() > 0) {
          it->second.m[k] = 0.0;
          it->second.v[k] = 0.0;
        }
      }
      ++i;
    }
    masks_ = std::move(next);
  }

  void run_single() {
    if (cfg_.method.method == Method::kDenseMaskedGrads) check_masks(masks_);
    run_epochs(Phase::kTrain, cfg_.optim.total_epochs, [](int) { return false; });
  }

  void run_joint() {
    const MsrsHyper& h = cfg_.method.msrs;
    std::vector<BinaryMask> prev = model_.phi_masks();
    result_.stop_reason = "max_epochs";
    run_epochs(Phase::kJoint, h.max_joint_epochs, [&](int e) {
      std::vector<BinaryMask> cur = model_.phi_masks();
      const MaskDelta d = mask_delta(std::span<const BinaryMask>(prev), std::span<const BinaryMask>(cur));
      log(Phase::kJoint, std::size_t(e) * steps_per_epoch_, schedule(h.max_joint_epochs), d);
      result_.epochs_joint = e;
      prev = std::move(cur);
      // Two end-of-epoch masks are needed before they can be compared.
      if (e >= 2 && d.sparsity_diff < h.epsilon) {
        result_.stop_reason = "epsilon";
        return true;
      }
      return false;
    });
  }

  void condense_masks() {
    masks_ = model_.phi_masks();
    condensed_ = true;
    std::size_t i = 0;
    for (auto pi : model_.prunable_indices()) {
      Parameter& p = model_.params[pi];
      p.value = condense(p.value, masks_[i++]);
    }
  }

  void run_continue() {
    run_epochs(Phase::kContinue, cfg_.optim.total_epochs, [](int) { return false; });
  }

  // Joint-phase epoch ends are logged by run_joint, which knows the mask delta.
  void log(Phase ph, std::size_t local, const Schedule& sch, std::optional<MaskDelta> delta) {
    Eval e = evaluate(ph, data_);
    MetricRecord r;
    r.run_id = cfg_.run_id;
    r.phase = phase_name(ph);
    r.epoch = int(global_epoch_);
    r.step = global_step_;
    r.loss = e.loss;
    const auto masks = current_masks(ph);
    const auto names = prunable_names(model_);
    for (std::size_t i = 0; i < names.size(); ++i) {
      r.per_layer_sparsity[names[i]] = cfg_.method.method == Method::kDense ? 0.0 : sparsity(masks[i]);
      r.per_layer_grad_l2[names[i]] = l2_norm(e.grads.at(names[i]));
    }
    r.global_sparsity =
        cfg_.method.method == Method::kDense ? 0.0 : sparsity(std::span<const BinaryMask>(masks));
    if (delta) {
      r.mask_sparsity_diff = delta->sparsity_diff;
      r.mask_hamming_delta = delta->hamming;
    }
    r.lr_theta = lr_schedule(local, sch.warmup, sch.total, cfg_.optim.peak_lr_theta);
    if (ph == Phase::kJoint) {
      r.lr_phi = lr_schedule(local, sch.warmup, sch.total, cfg_.optim.peak_lr_phi);
      r.lambda = cfg_.method.msrs.lambda;
    }
    result_.metrics.push_back(r);
    if (opt_.on_record) opt_.on_record(r, model_, masks);
    if (!std::isfinite(e.loss))
      throw NumericalError(std::string(phase_name(ph)) + " step " + std::to_string(global_step_) +
                           ": non-finite loss");
  }

  // --- checkpoints ---------------------------------------------------------

  Checkpoint snapshot(Phase next) const {
    Checkpoint c;
    for (const auto& p : model_.params) {
      c.tensors.push_back({p.name, p.value});
      if (p.phi) c.tensors.push_back({p.name + ".phi", *p.phi});
    }
    const auto names = prunable_names(model_);
    for (std::size_t i = 0; i < masks_.size(); ++i)
      c.tensors.push_back({names[i] + ".mask", masks_[i].bits()});
    auto dump = [&](const char* prefix, const Optimizer& o) {
      for (const auto& [name, s] : o.states()) {
        if (s.m.numel() == 0) continue;
        c.optimizer.push_back({std::string(prefix) + name + ".m", s.m});
        c.optimizer.push_back({std::string(prefix) + name + ".v", s.v});
        c.counters.emplace_back(std::string(prefix) + name + ".t", double(s.t));
      }
    };
    dump("theta/", opt_theta_);
    dump("phi/", opt_phi_);
    c.counters.emplace_back("global_step", double(global_step_));
    c.counters.emplace_back("global_epoch", double(global_epoch_));
    c.counters.emplace_back("epochs_joint", double(result_.epochs_joint));
    c.counters.emplace_back("stop_reason", result_.stop_reason == "epsilon"      ? 1.0
                                           : result_.stop_reason == "max_epochs" ? 2.0
                                                                                 : 0.0);
    c.counters.emplace_back("next_phase", double(int(next)));
    c.counters.emplace_back("seed", double(cfg_.seed));
    return c;
  }

  void restore(const Checkpoint& c) {
    if (Phase(int(c.counter("next_phase"))) != Phase::kContinue)
      throw std::invalid_argument("checkpoint does not resume a continuation phase");
    for (auto& p : model_.params) {
      p.value = c.tensor(p.name);
      if (p.phi) p.phi = c.tensor(p.name + ".phi");
    }
    masks_.clear();
    for (const auto& n : prunable_names(model_)) masks_.push_back(BinaryMask(c.tensor(n + ".mask")));
    condensed_ = true;
    global_step_ = std::uint64_t(c.counter("global_step"));
    global_epoch_ = std::uint64_t(c.counter("global_epoch"));
    result_.epochs_joint = int(c.counter("epochs_joint"));
    const double sr = c.counter("stop_reason");
    result_.stop_reason = sr == 1.0 ? "epsilon" : sr == 2.0 ? "max_epochs" : "";
  }

  void finish() {
    result_.model = model_;
    result_.masks =
        cfg_.method.method == Method::kMsrs && !condensed_ ? model_.phi_masks() : masks_;
    if (!result_.metrics.empty()) {
      result_.initial_loss = opt_.reference_loss.value_or(result_.metrics.front().loss);
      result_.final_loss = result_.metrics.back().loss;
    } else {
      result_.initial_loss = opt_.reference_loss.value_or(0.0);
    }
    if (result_.status != RunStatus::kOk) result_.final_loss = std::nan("");
    result_.final_sparsity = cfg_.method.method == Method::kDense
                                 ? 0.0
                                 : sparsity(std::span<const BinaryMask>(result_.masks));
    if (result_.checkpoint.tensors.empty()) result_.checkpoint = snapshot(Phase::kTrain);
  }

  ExperimentConfig cfg_;
  const Dataset& data_;
  RunOptions opt_;
  Model model_;
  std::vector<BinaryMask> masks_;
  Optimizer opt_theta_;
  Optimizer opt_phi_;
  bool condensed_ = false;
  std::size_t steps_per_epoch_ = 1;
  std::uint64_t global_step_ = 0;
  std::uint64_t global_epoch_ = 0;
  bool gmp_final_done_ = false;
  RunResult result_;
};

inline RunResult run_experiment(const ExperimentConfig& cfg, const Dataset& data,
                                RunOptions opt = {}) {
  return Trainer(cfg, data, std::move(opt)).run();
}

}  // namespace msrs
