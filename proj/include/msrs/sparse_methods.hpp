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

// Baseline sparse-training building blocks: Erdos-Renyi-Kernel layer
// densities, gradual magnitude pruning, SET / RigL prune-and-grow, and the
// mask plumbing shared with learned-mask training.

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "msrs/mask.hpp"
#include "msrs/model.hpp"
#include "msrs/rng.hpp"
#include "msrs/tensor.hpp"

namespace msrs {

enum class Method { kDense, kMsrs, kGmp, kSet, kRigl, kDenseMaskedGrads };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::kDense: return "dense";
    case Method::kMsrs: return "msrs";
    case Method::kGmp: return "gmp";
    case Method::kSet: return "set";
    case Method::kRigl: return "rigl";
    case Method::kDenseMaskedGrads: return "dense_masked_grads";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::kDense, Method::kMsrs, Method::kGmp, Method::kSet, Method::kRigl,
                   Method::kDenseMaskedGrads})
    if (s == method_name(m)) return m;
  throw std::invalid_argument("unknown method '" + s + "'");
}

enum class PruneScope { kPerLayer, kGlobal };

// How SET/RigL place their initial active positions at ERK densities.
enum class SparseInit { kRandom, kMagnitude };

struct SparseMethodConfig {
  Method method = Method::kDense;
  double target_sparsity = 0.5;
  double prune_grow_fraction = 0.3;  // zeta
  bool zeta_cosine_decay = true;
  int update_interval = 100;
  PruneScope gmp_scope = PruneScope::kPerLayer;
  double gmp_begin = 0.0;  // fraction of training where the cubic ramp starts
  double gmp_end = 0.75;   // ... and where it reaches target_sparsity
  SparseInit sparse_init = SparseInit::kRandom;
  MsrsHyper msrs;
  bool dense_after = true;

  void validate() const {
    if (!(target_sparsity >= 0 && target_sparsity < 1))
      throw std::invalid_argument("method.target_sparsity must be in [0,1)");
    if (!(prune_grow_fraction >= 0 && prune_grow_fraction <= 1))
      throw std::invalid_argument("method.prune_grow_fraction must be in [0,1]");
    if (update_interval < 1) throw std::invalid_argument("method.update_interval must be >= 1");
    if (!(gmp_begin >= 0 && gmp_begin < gmp_end && gmp_end <= 1))
      throw std::invalid_argument("method.gmp_begin/gmp_end must satisfy 0 <= begin < end <= 1");
    msrs.validate();
  }
};

struct LayerShape {
  std::string name;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  std::size_t count = 0;
};

using LayerShapeInventory = std::vector<LayerShape>;

inline LayerShapeInventory layer_inventory(const Model& m) {
  LayerShapeInventory inv;
  for (const auto& p : m.params)
    if (p.prunable()) inv.push_back({p.name, p.fan_in(), p.fan_out(), p.value.numel()});
  return inv;
}

/// Per-layer ERK densities d_i = min(1, c (fan_in + fan_out) / (fan_in fan_out)).
/// c is re-solved after capping layers at density 1 until no density exceeds 1.
inline std::vector<double> erk_densities(const LayerShapeInventory& inv, double target_sparsity) {
  if (!(target_sparsity >= 0 && target_sparsity < 1))
    throw std::invalid_argument("erk: target sparsity must be in [0,1)");
  if (inv.empty()) throw std::invalid_argument("erk: empty layer inventory");
  double total = 0.0;
  for (const auto& l : inv) total += double(l.count);
  const double budget = (1.0 - target_sparsity) * total;
  std::vector<bool> capped(inv.size(), false);
  std::vector<double> dens(inv.size(), 1.0);
  while (true) {
    double remaining = budget, weight = 0.0;
    for (std::size_t i = 0; i < inv.size(); ++i) {
      if (capped[i])
        remaining -= double(inv[i].count);
      else
        weight += double(inv[i].fan_in + inv[i].fan_out);
    }
    if (weight == 0.0) {
      if (remaining < -1e-9) throw std::invalid_argument("erk: target sparsity infeasible");
      return dens;
    }
    const double c = remaining / weight;
    if (c < 0) throw std::invalid_argument("erk: target sparsity infeasible");
    bool changed = false;
    for (std::size_t i = 0; i < inv.size(); ++i) {
      if (capped[i]) continue;
      const double d = c * double(inv[i].fan_in + inv[i].fan_out) /
                       double(inv[i].fan_in * inv[i].fan_out);
      if (d > 1.0) {
        capped[i] = true;
        changed = true;
      }
      dens[i] = std::min(d, 1.0);
    }
    if (!changed) return dens;
  }
}

/// Random masks at ERK densities; round(d_i * count_i) active positions per layer.
inline std::vector<BinaryMask> erk_init(const LayerShapeInventory& inv, double target_sparsity,
                                        std::uint64_t seed) {
  const auto dens = erk_densities(inv, target_sparsity);
  Rng rng(seed);
  std::vector<BinaryMask> out;
  for (std::size_t i = 0; i < inv.size(); ++i) {
    const std::size_t active = std::size_t(std::llround(dens[i] * double(inv[i].count)));
    std::vector<std::size_t> idx(inv[i].count);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    BinaryMask m = BinaryMask::zeros({inv[i].fan_out, inv[i].fan_in});
    for (std::size_t k = 0; k < active; ++k) m.set(idx[k], true);
    out.push_back(std::move(m));
  }
  return out;
}

/// ERK densities, keeping the largest-|w| entries of each layer (ties by
/// ascending index). Used to sparsify pretrained weights.
inline std::vector<BinaryMask> erk_magnitude_init(const std::vector<Tensor>& weights,
                                                  const LayerShapeInventory& inv,
                                                  double target_sparsity) {
  if (weights.size() != inv.size())
    throw std::invalid_argument("erk_magnitude_init: weights and inventory differ in length");
  const auto dens = erk_densities(inv, target_sparsity);
  std::vector<BinaryMask> out;
  for (std::size_t l = 0; l < inv.size(); ++l) {
    const std::size_t active = std::size_t(std::llround(dens[l] * double(inv[l].count)));
    std::vector<std::size_t> idx(weights[l].numel());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(weights[l][a]) > std::abs(weights[l][b]);
    });
    BinaryMask m = BinaryMask::zeros(weights[l].shape());
    for (std::size_t k = 0; k < active; ++k) m.set(idx[k], true);
    out.push_back(std::move(m));
  }
  return out;
}

/// Cubic GMP ramp s_f + (s_i - s_f) (1 - (t - t0) / span)^3, t clamped to the window.
inline double gmp_schedule(double t, double t0, double span, double s_initial, double s_final) {
  if (!(span > 0)) return s_final;
  const double frac = std::clamp((t - t0) / span, 0.0, 1.0);
  return s_final + (s_initial - s_final) * std::pow(1.0 - frac, 3);
}

namespace detail {

/// Indices ordered by ascending magnitude, ties by ascending index.
inline std::vector<std::size_t> by_magnitude(const std::vector<double>& mag) {
  std::vector<std::size_t> idx(mag.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return mag[a] < mag[b]; });
  return idx;
}

}  // namespace detail

/// Zeros the round(target * count) smallest-|w| entries, per layer or over
/// the concatenation of all layers.
inline std::vector<BinaryMask> magnitude_prune(const std::vector<Tensor>& weights,
                                               double target_sparsity, PruneScope scope) {
  if (!(target_sparsity >= 0 && target_sparsity <= 1))
    throw std::invalid_argument("magnitude_prune: target sparsity must be in [0,1]");
  std::vector<BinaryMask> out;
  for (const auto& w : weights) out.push_back(BinaryMask::ones(w.shape()));
  if (scope == PruneScope::kPerLayer) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      std::vector<double> mag(weights[l].numel());
      for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(weights[l][i]);
      const auto k = std::size_t(std::llround(target_sparsity * double(mag.size())));
      auto order = detail::by_magnitude(mag);
      for (std::size_t i = 0; i < k; ++i) out[l].set(order[i], false);
    }
    return out;
  }
  std::vector<double> mag;
  std::vector<std::pair<std::size_t, std::size_t>> where;
  for (std::size_t l = 0; l < weights.size(); ++l)
    for (std::size_t i = 0; i < weights[l].numel(); ++i) {
      mag.push_back(std::abs(weights[l][i]));
      where.emplace_back(l, i);
    }
  const auto k = std::size_t(std::llround(target_sparsity * double(mag.size())));
  auto order = detail::by_magnitude(mag);
  for (std::size_t i = 0; i < k; ++i) out[where[order[i]].first].set(where[order[i]].second, false);
  return out;
}

struct PruneGrowResult {
  BinaryMask mask;
  std::size_t pruned = 0;
  std::size_t grown = 0;
  std::size_t regrown = 0;  // growth that fell back to just-pruned positions
};

namespace detail {

inline std::vector<std::size_t> prune_smallest_active(const Tensor& weights, BinaryMask& mask,
                                                      std::size_t k) {
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < mask.numel(); ++i)
    if (mask.active(i)) active.push_back(i);
  std::stable_sort(active.begin(), active.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(weights[a]) < std::abs(weights[b]);
  });
  active.resize(std::min(k, active.size()));
  for (auto i : active) mask.set(i, false);
  return active;
}

inline std::size_t prune_count(const BinaryMask& mask, double zeta) {
  if (!(zeta >= 0 && zeta <= 1)) throw std::invalid_argument("prune/grow: zeta must be in [0,1]");
  const std::size_t active = mask.popcount();
  if (active == 0) throw std::invalid_argument("prune/grow: mask has no active entry");
  return std::size_t(std::llround(zeta * double(active)));
}

}  // namespace detail

/// SET: drop the k smallest-magnitude active weights, grow k positions chosen
/// uniformly among those inactive before the drop. When fewer than k were
/// inactive, the rest regrow among the just-dropped positions, so the active
/// count never changes. Grown weights are set to 0.
inline PruneGrowResult set_prune_grow(Tensor& weights, const BinaryMask& mask, double zeta,
                                      Rng& rng) {
  require_same_shape(weights, mask.bits(), "set_prune_grow");
  const std::size_t k = detail::prune_count(mask, zeta);
  PruneGrowResult r{mask};
  if (k == 0) return r;
  std::vector<std::size_t> free;
  for (std::size_t i = 0; i < mask.numel(); ++i)
    if (!mask.active(i)) free.push_back(i);
  std::vector<std::size_t> dropped = detail::prune_smallest_active(weights, r.mask, k);
  r.pruned = dropped.size();
  rng.shuffle(free);
  if (free.size() < k) {
    rng.shuffle(dropped);
    r.regrown = k - free.size();
    free.insert(free.end(), dropped.begin(), dropped.begin() + std::ptrdiff_t(r.regrown));
  }
  r.grown = k;
  for (std::size_t j = 0; j < k; ++j) {
    r.mask.set(free[j], true);
    weights[free[j]] = 0.0;
  }
  return r;
}

/// RigL: drop as SET, grow the k formerly-inactive positions with the largest
/// |dense gradient|, ties by ascending index. When fewer than k were inactive,
/// the rest regrow among the just-dropped positions by the same rule. Grown
/// weights are set to 0.
inline PruneGrowResult rigl_prune_grow(Tensor& weights, const Tensor& dense_grads,
                                       const BinaryMask& mask, double zeta) {
  require_same_shape(weights, mask.bits(), "rigl_prune_grow");
  require_same_shape(weights, dense_grads, "rigl_prune_grow");
  const std::size_t k = detail::prune_count(mask, zeta);
  PruneGrowResult r{mask};
  if (k == 0) return r;
  std::vector<std::size_t> free;
  for (std::size_t i = 0; i < mask.numel(); ++i)
    if (!mask.active(i)) free.push_back(i);
  std::vector<std::size_t> dropped = detail::prune_smallest_active(weights, r.mask, k);
  r.pruned = dropped.size();
  auto by_grad = [&](std::size_t a, std::size_t b) {
    if (std::abs(dense_grads[a]) != std::abs(dense_grads[b]))
      return std::abs(dense_grads[a]) > std::abs(dense_grads[b]);
    return a < b;
  };
  std::sort(free.begin(), free.end(), by_grad);
  if (free.size() < k) {
    std::sort(dropped.begin(), dropped.end(), by_grad);
    r.regrown = k - free.size();
    free.insert(free.end(), dropped.begin(), dropped.begin() + std::ptrdiff_t(r.regrown));
  }
  r.grown = k;
  for (std::size_t j = 0; j < k; ++j) {
    r.mask.set(free[j], true);
    weights[free[j]] = 0.0;
  }
  return r;
}

/// zeta_t = zeta_0 (1 + cos(pi t / total)) / 2.
inline double cosine_zeta(double zeta0, double t, double total) {
  if (!(total > 0)) return zeta0;
  return zeta0 * 0.5 * (1.0 + std::cos(std::numbers::pi * std::clamp(t / total, 0.0, 1.0)));
}

/// Phase-two starting weights theta_j * m_*.
inline Tensor condense(const Tensor& theta, const BinaryMask& mask) {
  return apply_mask(theta, mask);
}

/// Zeroes the gradient of every masked-out weight (sparse continuation).
inline Tensor sparse_continue_step(const Tensor& grads, const BinaryMask& mask) {
  return apply_mask(grads, mask);
}

/// Gradient gating for a dense model with frozen learned masks; the weights
/// themselves are never zeroed.
inline Tensor dense_masked_grads_step(const Tensor& grads, const BinaryMask& fixed_mask) {
  return apply_mask(grads, fixed_mask);
}

}  // namespace msrs
