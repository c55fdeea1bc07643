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
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msrs/autodiff.hpp"
#include "msrs/mask.hpp"
#include "msrs/rng.hpp"
#include "msrs/tensor.hpp"

namespace msrs {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  int cases = 100;
  double h = 1e-5;
  double tolerance = 1e-5;
  // Test hook: analytic gradients of this op are scaled by (1 + 1e-3).
  std::string perturb_op;
};

struct GradcheckResult {
  std::string op;
  int cases = 0;
  double max_rel_err = 0.0;
  bool pass = false;
};

namespace gradcheck_detail {

// Builds the op's output from leaf variables.
using Body = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

struct Case {
  std::vector<Tensor> inputs;
  Body body;
};

using Maker = std::function<Case(Rng&)>;

inline Tensor normal(Rng& r, Shape s, double scale = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = scale * r.normal();
  return t;
}

// Magnitudes in [0.2, 1.5] with random sign; keeps kinks (relu) out of reach of h.
inline Tensor away_from_zero(Rng& r, Shape s) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = (r.uniform() < 0.5 ? -1.0 : 1.0) * r.uniform(0.2, 1.5);
  return t;
}

// L = sum(w * out) for a fixed random w, so every output coordinate matters.
inline double scalar_loss(const Case& c, const std::vector<Tensor>& inputs, const Tensor& w,
                          std::vector<ad::Var>* leaves, ad::Graph& g, ad::Var* loss_out) {
  std::vector<ad::Var> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    vars.push_back(g.parameter(inputs[i], "x" + std::to_string(i)));
  ad::Var out = c.body(g, vars);
  ad::Var loss = out.value().numel() == 1 && w.numel() == 1
                     ? ad::scale(out, w[0])
                     : ad::sum(ad::mul(out, g.constant(w)));
  if (leaves) *leaves = vars;
  if (loss_out) *loss_out = loss;
  return loss.value().item();
}

inline std::vector<std::pair<std::string, Maker>> makers() {
  using ad::Var;
  using G = ad::Graph;
  using V = std::vector<Var>;
  std::vector<std::pair<std::string, Maker>> m;
  auto unary = [&m](std::string name, std::function<Var(Var)> f, bool kink) {
    m.emplace_back(name, [f, kink](Rng& r) {
      Tensor x = kink ? away_from_zero(r, {3, 4}) : normal(r, {3, 4});
      return Case{{x}, [f](G&, const V& v) { return f(v[0]); }};
    });
  };
  m.emplace_back("matmul", [](Rng& r) {
    return Case{{normal(r, {3, 4}), normal(r, {4, 2})},
                [](G&, const V& v) { return ad::matmul(v[0], v[1]); }};
  });
  m.emplace_back("transpose", [](Rng& r) {
    return Case{{normal(r, {3, 4})}, [](G&, const V& v) { return ad::transpose(v[0]); }};
  });
  m.emplace_back("add", [](Rng& r) {
    return Case{{normal(r, {3, 4}), normal(r, {3, 4})},
                [](G&, const V& v) { return ad::add(v[0], v[1]); }};
  });
  m.emplace_back("sub", [](Rng& r) {
    return Case{{normal(r, {3, 4}), normal(r, {3, 4})},
                [](G&, const V& v) { return ad::sub(v[0], v[1]); }};
  });
  m.emplace_back("mul", [](Rng& r) {
    return Case{{away_from_zero(r, {3, 4}), away_from_zero(r, {3, 4})},
                [](G&, const V& v) { return ad::mul(v[0], v[1]); }};
  });
  m.emplace_back("scale", [](Rng& r) {
    const double s = r.uniform(0.5, 2.0);
    return Case{{normal(r, {3, 4})}, [s](G&, const V& v) { return ad::scale(v[0], s); }};
  });
  unary("tanh", [](Var x) { return ad::tanh(x); }, false);
  unary("relu", [](Var x) { return ad::relu(x); }, true);
  unary("gelu", [](Var x) { return ad::gelu(x); }, false);
  unary("sigmoid", [](Var x) { return ad::sigmoid(x); }, false);
  m.emplace_back("add_bias", [](Rng& r) {
    return Case{{normal(r, {3, 4}), normal(r, {4})},
                [](G&, const V& v) { return ad::add_bias(v[0], v[1]); }};
  });
  m.emplace_back("scale_columns", [](Rng& r) {
    return Case{{normal(r, {3, 4}), normal(r, {4})},
                [](G&, const V& v) { return ad::scale_columns(v[0], v[1]); }};
  });
  m.emplace_back("normalize", [](Rng& r) {
    return Case{{normal(r, {3, 5}), normal(r, {5}), normal(r, {5})},
                [](G&, const V& v) { return ad::normalize(v[0], v[1], v[2]); }};
  });
  m.emplace_back("sum", [](Rng& r) {
    return Case{{normal(r, {3, 4})}, [](G&, const V& v) { return ad::sum(v[0]); }};
  });
  m.emplace_back("mse", [](Rng& r) {
    Tensor target = normal(r, {3, 2});
    return Case{{normal(r, {3, 2})}, [target](G&, const V& v) { return ad::mse(v[0], target); }};
  });
  m.emplace_back("cross_entropy", [](Rng& r) {
    std::vector<std::size_t> labels;
    for (int i = 0; i < 4; ++i) labels.push_back(std::size_t(r.below(3)));
    return Case{{normal(r, {4, 3})},
                [labels](G&, const V& v) { return ad::cross_entropy(v[0], labels); }};
  });
  // Both temperatures equal; with l = 1 the printed derivative is the exact one.
  m.emplace_back("masked_weight[l=1]", [](Rng& r) {
    return Case{{normal(r, {3, 4}), normal(r, {3, 4})},
                [](G&, const V& v) { return masked_weight(v[0], v[1], 1.0, 1.0); }};
  });
  // At l = 10 the exact derivative carries the factor l.
  m.emplace_back("masked_weight[l=10]", [](Rng& r) {
    return Case{{normal(r, {3, 4}), normal(r, {3, 4}, 0.1)},
                [](G&, const V& v) { return masked_weight(v[0], v[1], 10.0, 10.0, true); }};
  });
  m.emplace_back("residual_block", [](Rng& r) {
    return Case{{normal(r, {3, 4}), normal(r, {4, 4}, 0.5), normal(r, {4}), normal(r, {4, 4}, 0.5),
                 normal(r, {4}), normal(r, {4})},
                [](G&, const V& v) {
                  return ad::residual_block(v[0], v[1], v[2], v[3], v[4], ad::Activation::kTanh, v[5]);
                }};
  });
  return m;
}

}  // namespace gradcheck_detail

/// Names of every op the gradient check covers, in report order.
inline std::vector<std::string> gradcheck_ops() {
  std::vector<std::string> out;
  for (const auto& [name, _] : gradcheck_detail::makers()) out.push_back(name);
  return out;
}

/// Central finite differences against the analytic gradient of every input,
/// `cases` random draws per op.
inline std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opt = {}) {
  using namespace gradcheck_detail;
  std::vector<GradcheckResult> results;
  std::uint64_t op_index = 0;
  for (const auto& [name, make] : makers()) {
    GradcheckResult res{name, 0, 0.0, true};
    for (int k = 0; k < opt.cases; ++k) {
      Rng rng(Rng::derive(Rng::derive(opt.seed, op_index), std::uint64_t(k)));
      Case c = make(rng);
      ad::Graph g;
      std::vector<ad::Var> leaves;
      ad::Var loss;
      // Output shape is needed for w; evaluate once to get it.
      ad::Graph shape_graph;
      std::vector<ad::Var> sv;
      for (std::size_t i = 0; i < c.inputs.size(); ++i)
        sv.push_back(shape_graph.parameter(c.inputs[i], "x" + std::to_string(i)));
      const Shape out_shape = c.body(shape_graph, sv).shape();
      Tensor w = normal(rng, out_shape);
      scalar_loss(c, c.inputs, w, &leaves, g, &loss);
      ad::Gradients grads = g.backward(loss);
      for (std::size_t i = 0; i < c.inputs.size(); ++i) {
        Tensor analytic = grads.at("x" + std::to_string(i));
        if (name == opt.perturb_op) analytic = analytic * (1.0 + 1e-3);
        auto f = [&](const Tensor& xi) {
          std::vector<Tensor> in = c.inputs;
          in[i] = xi;
          ad::Graph fg;
          return scalar_loss(c, in, w, nullptr, fg, nullptr);
        };
        res.max_rel_err =
            std::max(res.max_rel_err, ad::finite_difference_check(f, c.inputs[i], analytic, opt.h));
      }
      ++res.cases;
    }
    res.pass = res.max_rel_err < opt.tolerance;
    results.push_back(res);
    ++op_index;
  }
  return results;
}

}  // namespace msrs
