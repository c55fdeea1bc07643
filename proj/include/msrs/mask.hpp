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

// Learned weight masks.
//
// Every prunable weight matrix theta carries a matrix of mask logits phi of
// the same shape. The forward pass multiplies theta by a sharp sigmoid of phi
// (temperature l_fwd, effectively a step function), while the backward pass
// differentiates a soft sigmoid (temperature l_bwd) so that phi keeps
// receiving signal. A constant penalty lambda drags every logit towards the
// negative side. Once the logits settle, the sign of phi is the binary mask.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "msrs/autodiff.hpp"
#include "msrs/tensor.hpp"

namespace msrs {

/// Mask hyperparameters. Defaults are the large-scale recipe; desk-scale
/// presets override lambda (see config.hpp).
struct MsrsHyper {
  double mu = 1e-3;
  double rho = 5e-4;
  double varsigma = 1e-8;
  double lambda = 2e-10;
  double epsilon = 0.01;
  double l_fwd = 1e5;
  double l_bwd = 1.0;
  int max_joint_epochs = 10;

  void validate() const {
    if (!(varsigma > 0)) throw std::invalid_argument("msrs.varsigma must be > 0");
    if (!(lambda >= 0)) throw std::invalid_argument("msrs.lambda must be >= 0");
    if (!(epsilon > 0)) throw std::invalid_argument("msrs.epsilon must be > 0");
    if (!(l_bwd > 0) || !(l_fwd >= l_bwd))
      throw std::invalid_argument("msrs temperatures must satisfy l_fwd >= l_bwd > 0");
    if (max_joint_epochs < 1) throw std::invalid_argument("msrs.max_joint_epochs must be >= 1");
  }
};

/// A tensor whose entries are exactly 0.0 or 1.0.
class BinaryMask {
 public:
  BinaryMask() = default;

  explicit BinaryMask(Tensor bits) : bits_(std::move(bits)) {
    for (double v : bits_.data())
      if (v != 0.0 && v != 1.0) throw std::invalid_argument("binary mask entry not in {0,1}");
  }

  static BinaryMask ones(const Shape& s) { return BinaryMask(Tensor(s, 1.0), Unchecked{}); }
  static BinaryMask zeros(const Shape& s) { return BinaryMask(Tensor(s, 0.0), Unchecked{}); }

  const Tensor& bits() const { return bits_; }
  const Shape& shape() const { return bits_.shape(); }
  std::size_t numel() const { return bits_.numel(); }
  bool active(std::size_t i) const { return bits_[i] != 0.0; }
  void set(std::size_t i, bool on) { bits_[i] = on ? 1.0 : 0.0; }

  std::size_t popcount() const {
    std::size_t n = 0;
    for (double v : bits_.data()) n += v != 0.0;
    return n;
  }
  std::size_t zeros_count() const { return numel() - popcount(); }

  friend bool operator==(const BinaryMask& a, const BinaryMask& b) { return a.bits_ == b.bits_; }

 private:
  struct Unchecked {};
  BinaryMask(Tensor bits, Unchecked) : bits_(std::move(bits)) {}

  Tensor bits_;
};

inline Tensor apply_mask(const Tensor& t, const BinaryMask& m) {
  // Selects rather than multiplies so masked entries are +0.0, never -0.0.
  return zip(t, m.bits(), [](double v, double b) { return b != 0.0 ? v : 0.0; }, "apply_mask");
}

/// Weight matrix paired with its mask logits and the two temperatures.
struct MaskedParameter {
  Tensor theta;
  Tensor phi;
  double l_fwd = 1e5;
  double l_bwd = 1.0;

  MaskedParameter() = default;
  MaskedParameter(Tensor theta_, Tensor phi_, double l_fwd_, double l_bwd_)
      : theta(std::move(theta_)), phi(std::move(phi_)), l_fwd(l_fwd_), l_bwd(l_bwd_) {
    require_same_shape(theta, phi, "MaskedParameter");
    if (!(l_bwd > 0) || !(l_fwd >= l_bwd))
      throw std::invalid_argument("MaskedParameter: need l_fwd >= l_bwd > 0");
  }
};

/// phi_0 = (ln(|theta_0| + varsigma) / 2 + 1) * rho + mu, elementwise.
inline Tensor init_phi(const Tensor& theta0, const MsrsHyper& h) {
  if (!(h.varsigma > 0)) throw std::invalid_argument("init_phi: varsigma must be > 0");
  return map(theta0, [&](double w) {
    return (std::log(std::abs(w) + h.varsigma) / 2.0 + 1.0) * h.rho + h.mu;
  });
}

/// |theta_0| at which init_phi crosses zero: exp(-2 (1 + mu / rho)) - varsigma.
inline double init_phi_sign_threshold(const MsrsHyper& h) {
  return std::exp(-2.0 * (1.0 + h.mu / h.rho)) - h.varsigma;
}

inline Tensor relaxed_mask(const Tensor& phi, double l) {
  if (!(l > 0)) throw std::invalid_argument("relaxed_mask: temperature must be > 0");
  return map(phi, [l](double p) { return ad::sigmoid(l * p); });
}

/// theta * sigmoid(l_fwd * phi).
inline Tensor effective_weight(const MaskedParameter& mp) {
  return mp.theta * relaxed_mask(mp.phi, mp.l_fwd);
}

struct MaskedGrads {
  Tensor theta;
  Tensor phi;
};

/// Two-temperature backward through w = theta * m.
///
/// grad_theta uses the forward (sharp) mask; grad_phi uses the derivative
/// s (1 - s) of the soft mask s = sigmoid(l_bwd phi). With
/// `chain_temperature` the derivative also carries the factor l_bwd, which
/// makes the result the exact gradient of theta * sigmoid(l phi) when
/// l_fwd == l_bwd == l.
inline MaskedGrads masked_backward(const Tensor& upstream, const MaskedParameter& mp,
                                   bool chain_temperature = false) {
  require_same_shape(upstream, mp.theta, "masked_backward");
  MaskedGrads g{Tensor(mp.theta.shape()), Tensor(mp.theta.shape())};
  const double chain = chain_temperature ? mp.l_bwd : 1.0;
  for (std::size_t i = 0; i < upstream.numel(); ++i) {
    const double sf = ad::sigmoid(mp.l_fwd * mp.phi[i]);
    const double sb = ad::sigmoid(mp.l_bwd * mp.phi[i]);
    g.theta[i] = upstream[i] * sf;
    g.phi[i] = upstream[i] * mp.theta[i] * sb * (1.0 - sb) * chain;
  }
  return g;
}

/// Graph primitive for theta * sigmoid(l_fwd phi) with the two-temperature
/// backward of masked_backward().
inline ad::Var masked_weight(ad::Var theta, ad::Var phi, double l_fwd, double l_bwd,
                             bool chain_temperature = false) {
  MaskedParameter mp(theta.value(), phi.value(), l_fwd, l_bwd);
  Tensor w = effective_weight(mp);
  return theta.graph->apply(
      ad::Op::kMaskedWeight, std::move(w), {theta, phi},
      [mp = std::move(mp), chain_temperature](const Tensor& up, std::vector<Tensor*>& gi) {
        MaskedGrads g = masked_backward(up, mp, chain_temperature);
        add_inplace(*gi[0], g.theta);
        add_inplace(*gi[1], g.phi);
      });
}

/// lambda * sum of every logit.
inline double penalty_value(std::span<const Tensor> phis, double lambda) {
  if (!(lambda >= 0)) throw std::invalid_argument("penalty_value: lambda must be >= 0");
  double s = 0.0;
  for (const auto& p : phis) s += sum(p);
  return lambda * s;
}

/// Gradient of penalty_value with respect to any single logit.
inline double penalty_grad(double lambda) { return lambda; }

/// Subtracts lambda from every logit; applied once per optimizer step.
inline void apply_penalty(Tensor& phi, double lambda) {
  if (lambda == 0.0) return;
  for (double& p : phi.data()) p -= lambda;
}

/// 1 where phi >= 0, else 0. phi == 0 keeps the weight.
inline BinaryMask binarize(const Tensor& phi) {
  return BinaryMask(map(phi, [](double p) { return p >= 0.0 ? 1.0 : 0.0; }));
}

inline double sparsity(const BinaryMask& m) {
  return double(m.zeros_count()) / double(m.numel());
}

/// Global fraction of zeros across a collection, weighted by size.
inline double sparsity(std::span<const BinaryMask> masks) {
  std::size_t zeros = 0, total = 0;
  for (const auto& m : masks) {
    zeros += m.zeros_count();
    total += m.numel();
  }
  if (total == 0) throw std::invalid_argument("sparsity: empty mask collection");
  return double(zeros) / double(total);
}

struct MaskDelta {
  double sparsity_diff = 0.0;
  std::size_t hamming = 0;
};

inline MaskDelta mask_delta(const BinaryMask& prev, const BinaryMask& cur) {
  require_same_shape(prev.bits(), cur.bits(), "mask_delta");
  MaskDelta d;
  for (std::size_t i = 0; i < prev.numel(); ++i) d.hamming += prev.active(i) != cur.active(i);
  d.sparsity_diff = std::abs(sparsity(cur) - sparsity(prev));
  return d;
}

inline MaskDelta mask_delta(std::span<const BinaryMask> prev, std::span<const BinaryMask> cur) {
  if (prev.size() != cur.size()) throw ShapeError("mask_delta: collections differ in length");
  MaskDelta d;
  for (std::size_t i = 0; i < prev.size(); ++i) d.hamming += mask_delta(prev[i], cur[i]).hamming;
  d.sparsity_diff = std::abs(sparsity(cur) - sparsity(prev));
  return d;
}

}  // namespace msrs
