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

#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>

#include "msrs/mask.hpp"
#include "msrs/tensor.hpp"

namespace msrs {

enum class OptimizerKind { kAdamW, kSgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdamW;      // weights
  OptimizerKind phi_kind = OptimizerKind::kAdamW;  // mask logits
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double peak_lr_theta = 1e-3;
  double peak_lr_phi = 1e-3;
  double clip_norm = 5.0;
  int warmup_epochs = 1;
  int total_epochs = 30;
  int batch_size = 32;

  void validate() const {
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
      throw std::invalid_argument("optim.beta1/beta2 must be in [0,1)");
    if (!(clip_norm > 0)) throw std::invalid_argument("optim.clip_norm must be > 0");
    if (!(adam_eps > 0)) throw std::invalid_argument("optim.adam_eps must be > 0");
    if (weight_decay < 0) throw std::invalid_argument("optim.weight_decay must be >= 0");
    if (!(peak_lr_theta >= 0) || !(peak_lr_phi >= 0))
      throw std::invalid_argument("optim learning rates must be >= 0");
    if (warmup_epochs < 0) throw std::invalid_argument("optim.warmup_epochs must be >= 0");
    if (total_epochs < 1) throw std::invalid_argument("optim.total_epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("optim.batch_size must be >= 1");
  }
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::uint64_t t = 0;
};

/// One decoupled-weight-decay Adam update with bias correction:
///   p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
/// When `decay_mask` is given, decay only touches entries whose mask is 1.
inline void adamw_step(Tensor& param, const Tensor& grad, AdamState& s, double lr, double beta1,
                       double beta2, double eps, double weight_decay,
                       const BinaryMask* decay_mask = nullptr) {
  require_same_shape(param, grad, "adamw_step");
  if (!all_finite(grad)) throw NumericalError("adamw_step: non-finite gradient");
  if (s.m.numel() == 0) {
    s.m = Tensor(param.shape());
    s.v = Tensor(param.shape());
  }
  ++s.t;
  const double bc1 = 1.0 - std::pow(beta1, double(s.t));
  const double bc2 = 1.0 - std::pow(beta2, double(s.t));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g;
    s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * g * g;
    if (weight_decay != 0.0 && (!decay_mask || decay_mask->active(i)))
      param[i] *= 1.0 - lr * weight_decay;
    const double mhat = s.m[i] / bc1;
    const double vhat = s.v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

/// Plain gradient step, p <- p - lr g.
inline void sgd_step(Tensor& param, const Tensor& grad, double lr) {
  require_same_shape(param, grad, "sgd_step");
  if (!all_finite(grad)) throw NumericalError("sgd_step: non-finite gradient");
  for (std::size_t i = 0; i < param.numel(); ++i) param[i] -= lr * grad[i];
}

/// Keyed optimizer state for a set of named tensors.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(const OptimizerConfig& cfg) : cfg_(cfg) {}

  void step(const std::string& name, Tensor& param, const Tensor& grad, double lr,
            const BinaryMask* decay_mask = nullptr) {
    if (cfg_.kind == OptimizerKind::kSgd) {
      sgd_step(param, grad, lr);
      return;
    }
    adamw_step(param, grad, states_[name], lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps,
               cfg_.weight_decay, decay_mask);
  }

  void reset() { states_.clear(); }
  const OptimizerConfig& config() const { return cfg_; }
  std::map<std::string, AdamState>& states() { return states_; }
  const std::map<std::string, AdamState>& states() const { return states_; }

 private:
  OptimizerConfig cfg_;
  std::map<std::string, AdamState> states_;
};

/// Linear warmup to `peak`, then half-cosine decay to 0 at total_steps.
inline double lr_schedule(std::size_t step, std::size_t warmup_steps, std::size_t total_steps,
                          double peak) {
  if (step < warmup_steps) return peak * double(step) / double(warmup_steps);
  if (total_steps <= warmup_steps) return peak;
  const double frac =
      std::min(1.0, double(step - warmup_steps) / double(total_steps - warmup_steps));
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

/// Scales every gradient by clip_norm / g when the global L2 norm g exceeds
/// clip_norm. Returns g.
inline double clip_global_norm(std::map<std::string, Tensor>& grads, double clip_norm) {
  if (!(clip_norm > 0)) throw std::invalid_argument("clip_global_norm: clip_norm must be > 0");
  double sq = 0.0;
  for (const auto& [_, g] : grads)
    for (double v : g.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > clip_norm) {
    const double s = clip_norm / norm;
    for (auto& [_, g] : grads)
      for (double& v : g.data()) v *= s;
  }
  return norm;
}

}  // namespace msrs
