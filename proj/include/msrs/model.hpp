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
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "msrs/autodiff.hpp"
#include "msrs/mask.hpp"
#include "msrs/rng.hpp"
#include "msrs/tensor.hpp"

namespace msrs {

using ad::Activation;

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kGelu: return "gelu";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  if (s == "gelu") return Activation::kGelu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

enum class InitScheme { kUniform, kNormal };

/// Residual-MLP architecture. A residual block holds two linears,
/// y = x + D (W2 act(W1 x + b1) + b2); a plain block holds one,
/// y = act(W1 x + b1). An input projection and an output head wrap the blocks.
struct ModelSpec {
  int depth = 4;
  int width = 32;
  Activation activation = Activation::kTanh;
  bool residual = true;
  bool layerscale = false;
  double layerscale_init = 1e-4;
  bool normalization = false;
  int d_in = 16;
  int d_out = 1;
  InitScheme init = InitScheme::kUniform;
  double gain = 1.0;

  void validate() const {
    if (depth < 1) throw std::invalid_argument("model.depth must be >= 1");
    if (width < 1) throw std::invalid_argument("model.width must be >= 1");
    if (d_in < 1 || d_out < 1) throw std::invalid_argument("model.d_in/d_out must be >= 1");
    if (layerscale && !residual) throw std::invalid_argument("model.layerscale requires model.residual");
  }
};

enum class Role { kWeight, kBias, kNormGain, kNormBias, kLayerScale };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::kWeight: return "weight";
    case Role::kBias: return "bias";
    case Role::kNormGain: return "norm_gain";
    case Role::kNormBias: return "norm_bias";
    case Role::kLayerScale: return "layerscale";
  }
  return "?";
}

/// One trainable tensor. Only kWeight parameters are prunable and carry phi.
struct Parameter {
  std::string name;
  Role role = Role::kWeight;
  int block = -1;  // -1 for the input projection, depth for the head
  Tensor value;
  std::optional<Tensor> phi;

  bool prunable() const { return role == Role::kWeight; }
  std::size_t fan_in() const { return value.cols(); }
  std::size_t fan_out() const { return value.rows(); }
};

struct Model {
  ModelSpec spec;
  std::vector<Parameter> params;
  double l_fwd = 1e5;
  double l_bwd = 1.0;

  std::vector<std::size_t> prunable_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].prunable()) out.push_back(i);
    return out;
  }

  std::size_t prunable_count() const {
    std::size_t n = 0;
    for (const auto& p : params)
      if (p.prunable()) n += p.value.numel();
    return n;
  }

  const Parameter& get(const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return p;
    throw std::out_of_range("no parameter named " + name);
  }
  Parameter& get(const std::string& name) {
    return const_cast<Parameter&>(static_cast<const Model&>(*this).get(name));
  }

  MaskedParameter masked(const std::string& name) const {
    const Parameter& p = get(name);
    if (!p.phi) throw std::invalid_argument(name + " is not a masked parameter");
    return MaskedParameter(p.value, *p.phi, l_fwd, l_bwd);
  }

  /// Binarized current logits, one per prunable parameter, in parameter order.
  std::vector<BinaryMask> phi_masks() const {
    std::vector<BinaryMask> out;
    for (const auto& p : params)
      if (p.prunable()) out.push_back(p.phi ? binarize(*p.phi) : BinaryMask::ones(p.value.shape()));
    return out;
  }
};

namespace detail {

inline Tensor init_tensor(Shape shape, std::size_t fan_in, const ModelSpec& s, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = s.gain / std::sqrt(double(fan_in));
  for (double& v : t.data())
    v = s.init == InitScheme::kUniform ? rng.uniform(-bound, bound) : bound * rng.normal();
  return t;
}

}  // namespace detail

/// Builds and initializes a model. Every weight matrix gets phi = init_phi(theta0).
inline Model build_model(const ModelSpec& spec, std::uint64_t seed,
                         const MsrsHyper& hyper = MsrsHyper{}) {
  spec.validate();
  Rng rng(seed);
  Model m;
  m.spec = spec;
  m.l_fwd = hyper.l_fwd;
  m.l_bwd = hyper.l_bwd;
  const auto w = std::size_t(spec.width);
  auto linear = [&](const std::string& prefix, const std::string& suffix, int block,
                    std::size_t out, std::size_t in) {
    Parameter W{prefix + ".w" + suffix, Role::kWeight, block,
                detail::init_tensor({out, in}, in, spec, rng), std::nullopt};
    W.phi = init_phi(W.value, hyper);
    Parameter b{prefix + ".b" + suffix, Role::kBias, block,
                detail::init_tensor({out}, in, spec, rng), std::nullopt};
    m.params.push_back(std::move(W));
    m.params.push_back(std::move(b));
  };
  linear("in", "", -1, w, std::size_t(spec.d_in));
  for (int k = 0; k < spec.depth; ++k) {
    const std::string prefix = "block" + std::to_string(k);
    if (spec.normalization) {
      m.params.push_back({prefix + ".norm_g", Role::kNormGain, k, Tensor({w}, 1.0), std::nullopt});
      m.params.push_back({prefix + ".norm_b", Role::kNormBias, k, Tensor({w}, 0.0), std::nullopt});
    }
    linear(prefix, "1", k, w, w);
    if (spec.residual) {
      linear(prefix, "2", k, w, w);
      if (spec.layerscale)
        m.params.push_back({prefix + ".ls", Role::kLayerScale, k, Tensor({w}, spec.layerscale_init),
                            std::nullopt});
    }
  }
  linear("head", "", spec.depth, std::size_t(spec.d_out), w);
  return m;
}

/// How prunable weights enter the graph.
///  kDense:  theta as is.
///  kMasked: theta * fixed binary mask, registered as one leaf so the
///           returned gradient is dL/dW_eff over every position.
///  kLearned: theta * sigmoid(l_fwd phi) with the two-temperature backward;
///           gradients are returned for theta and for "<name>.phi".
enum class WeightMode { kDense, kMasked, kLearned };

struct ForwardOptions {
  WeightMode mode = WeightMode::kDense;
  const std::vector<BinaryMask>* masks = nullptr;  // one per prunable parameter
  bool chain_temperature = false;
};

inline ad::Var forward(ad::Graph& g, const Model& m, const Tensor& input,
                       const ForwardOptions& opt = {}) {
  if (input.ndim() != 2 || input.cols() != std::size_t(m.spec.d_in))
    throw ShapeError("forward: input " + shape_str(input.shape()) + " for d_in " +
                     std::to_string(m.spec.d_in));
  std::map<std::string, ad::Var> vars;
  std::size_t mask_idx = 0;
  for (const auto& p : m.params) {
    if (!p.prunable() || opt.mode == WeightMode::kDense) {
      vars.emplace(p.name, g.parameter(p.value, p.name));
    } else if (opt.mode == WeightMode::kMasked) {
      if (!opt.masks || mask_idx >= opt.masks->size())
        throw std::invalid_argument("forward: missing mask for " + p.name);
      vars.emplace(p.name, g.parameter(apply_mask(p.value, (*opt.masks)[mask_idx++]), p.name));
    } else {
      if (!p.phi) throw std::invalid_argument("forward: " + p.name + " has no logits");
      ad::Var th = g.parameter(p.value, p.name);
      ad::Var ph = g.parameter(*p.phi, p.name + ".phi");
      vars.emplace(p.name, masked_weight(th, ph, m.l_fwd, m.l_bwd, opt.chain_temperature));
    }
  }
  auto v = [&](const std::string& n) { return vars.at(n); };
  ad::Var h = ad::linear(g.constant(input), v("in.w"), v("in.b"));
  for (int k = 0; k < m.spec.depth; ++k) {
    const std::string p = "block" + std::to_string(k);
    ad::Var x = h;
    if (m.spec.normalization) x = ad::normalize(x, v(p + ".norm_g"), v(p + ".norm_b"));
    if (m.spec.residual) {
      std::optional<ad::Var> ls;
      if (m.spec.layerscale) ls = v(p + ".ls");
      // The trunk carries h; normalization only feeds the branch.
      ad::Var branch = ad::linear(ad::activate(ad::linear(x, v(p + ".w1"), v(p + ".b1")),
                                               m.spec.activation),
                                  v(p + ".w2"), v(p + ".b2"));
      if (ls) branch = ad::scale_columns(branch, *ls);
      h = ad::add(h, branch);
    } else {
      h = ad::activate(ad::linear(x, v(p + ".w1"), v(p + ".b1")), m.spec.activation);
    }
  }
  return ad::linear(h, v("head.w"), v("head.b"));
}

/// Forward without building a persistent graph; returns predictions.
inline Tensor predict(const Model& m, const Tensor& input, const ForwardOptions& opt = {}) {
  ad::Graph g;
  return forward(g, m, input, opt).value();
}

}  // namespace msrs
