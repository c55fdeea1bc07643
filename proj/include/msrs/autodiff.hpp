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

// Define-by-run reverse-mode differentiation over msrs::Tensor.
//
// A Graph is rebuilt for every training step. Each primitive appends one node
// holding its value, the ids of its inputs and a closure that scatters the
// node's gradient back into those inputs. Nodes are only ever appended, so the
// node order is already a topological order and backward() is a single reverse
// sweep.

#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msrs/tensor.hpp"

namespace msrs::ad {

enum class Op {
  kLeaf,
  kParameter,
  kMatmul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kTanh,
  kRelu,
  kGelu,
  kSigmoid,
  kAddBias,
  kScaleColumns,
  kNormalize,
  kSum,
  kMse,
  kCrossEntropy,
  kMaskedWeight,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kParameter: return "parameter";
    case Op::kMatmul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kGelu: return "gelu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kAddBias: return "add_bias";
    case Op::kScaleColumns: return "scale_columns";
    case Op::kNormalize: return "normalize";
    case Op::kSum: return "sum";
    case Op::kMse: return "mse";
    case Op::kCrossEntropy: return "cross_entropy";
    case Op::kMaskedWeight: return "masked_weight";
  }
  return "?";
}

class Graph;

/// Handle to a node in a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Adds the contribution of `upstream` into the gradient of every input.
using BackwardFn = std::function<void(const Tensor& upstream, std::vector<Tensor*>& input_grads)>;

struct Node {
  Op op = Op::kLeaf;
  Tensor value;
  std::vector<std::size_t> inputs;
  BackwardFn backward;
  std::optional<std::string> param_id;
};

using Gradients = std::map<std::string, Tensor>;

class Graph {
 public:
  Var constant(Tensor t) {
    Node n;
    n.value = std::move(t);
    return push(std::move(n));
  }

  Var parameter(Tensor t, std::string id) {
    Node n;
    n.op = Op::kParameter;
    n.value = std::move(t);
    n.param_id = std::move(id);
    return push(std::move(n));
  }

  /// Appends a primitive. Inputs must already exist in this graph.
  Var apply(Op op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    for (const auto& v : inputs) {
      if (v.graph != this) throw std::invalid_argument("input belongs to a different graph");
      n.inputs.push_back(v.id);
    }
    n.backward = std::move(backward);
    return push(std::move(n));
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar node. Every parameter in the graph gets an
  /// entry, zero-filled when the loss does not reach it.
  Gradients backward(Var loss, double seed = 1.0) const {
    if (loss.value().numel() != 1)
      throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    std::vector<std::optional<Tensor>> grads(nodes_.size());
    grads[loss.id] = Tensor(loss.shape(), seed);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (!grads[i] || !n.backward) continue;
      std::vector<Tensor*> slots;
      slots.reserve(n.inputs.size());
      for (std::size_t in : n.inputs) {
        if (!grads[in]) grads[in] = Tensor(nodes_[in].value.shape());
        slots.push_back(&*grads[in]);
      }
      n.backward(*grads[i], slots);
    }
    Gradients out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (!n.param_id) continue;
      Tensor g = grads[i] ? *grads[i] : Tensor(n.value.shape());
      auto [it, fresh] = out.emplace(*n.param_id, g);
      if (!fresh) add_inplace(it->second, g);
    }
    return out;
  }

 private:
  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph->node(id).value; }

namespace detail {

inline Graph& same_graph(const Var& a, const Var& b) {
  if (a.graph != b.graph) throw std::invalid_argument("operands belong to different graphs");
  return *a.graph;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }
inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace detail

/// Overflow-safe logistic function.
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var matmul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  Tensor av = a.value(), bv = b.value();
  Tensor out = msrs::matmul(av, bv);
  return g.apply(Op::kMatmul, std::move(out), {a, b},
                 [av, bv](const Tensor& up, std::vector<Tensor*>& gi) {
                   add_inplace(*gi[0], msrs::matmul(up, msrs::transpose(bv)));
                   add_inplace(*gi[1], msrs::matmul(msrs::transpose(av), up));
                 });
}

inline Var transpose(Var a) {
  return a.graph->apply(Op::kTranspose, msrs::transpose(a.value()), {a},
                        [](const Tensor& up, std::vector<Tensor*>& gi) {
                          add_inplace(*gi[0], msrs::transpose(up));
                        });
}

inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  return g.apply(Op::kAdd, a.value() + b.value(), {a, b},
                 [](const Tensor& up, std::vector<Tensor*>& gi) {
                   add_inplace(*gi[0], up);
                   add_inplace(*gi[1], up);
                 });
}

inline Var sub(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  return g.apply(Op::kSub, a.value() - b.value(), {a, b},
                 [](const Tensor& up, std::vector<Tensor*>& gi) {
                   add_inplace(*gi[0], up);
                   add_inplace(*gi[1], up * -1.0);
                 });
}

inline Var mul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  Tensor av = a.value(), bv = b.value();
  return g.apply(Op::kMul, av * bv, {a, b},
                 [av, bv](const Tensor& up, std::vector<Tensor*>& gi) {
                   add_inplace(*gi[0], up * bv);
                   add_inplace(*gi[1], up * av);
                 });
}

inline Var scale(Var a, double s) {
  return a.graph->apply(Op::kScale, a.value() * s, {a},
                        [s](const Tensor& up, std::vector<Tensor*>& gi) {
                          add_inplace(*gi[0], up * s);
                        });
}

inline Var tanh(Var a) {
  Tensor y = map(a.value(), [](double v) { return std::tanh(v); });
  return a.graph->apply(Op::kTanh, y, {a}, [y](const Tensor& up, std::vector<Tensor*>& gi) {
    add_inplace(*gi[0], zip(up, y, [](double u, double t) { return u * (1.0 - t * t); }));
  });
}

inline Var relu(Var a) {
  Tensor x = a.value();
  return a.graph->apply(Op::kRelu, map(x, [](double v) { return v > 0 ? v : 0.0; }), {a},
                        [x](const Tensor& up, std::vector<Tensor*>& gi) {
                          add_inplace(*gi[0],
                                      zip(up, x, [](double u, double v) { return v > 0 ? u : 0.0; }));
                        });
}

inline Var gelu(Var a) {
  Tensor x = a.value();
  return a.graph->apply(Op::kGelu, map(x, detail::gelu), {a},
                        [x](const Tensor& up, std::vector<Tensor*>& gi) {
                          add_inplace(*gi[0], zip(up, x, [](double u, double v) {
                                        return u * detail::gelu_grad(v);
                                      }));
                        });
}

inline Var sigmoid(Var a) {
  Tensor y = map(a.value(), [](double v) { return msrs::ad::sigmoid(v); });
  return a.graph->apply(Op::kSigmoid, y, {a}, [y](const Tensor& up, std::vector<Tensor*>& gi) {
    add_inplace(*gi[0], zip(up, y, [](double u, double s) { return u * s * (1.0 - s); }));
  });
}

/// x[m x n] + b[n], bias broadcast over rows.
inline Var add_bias(Var x, Var b) {
  Graph& g = detail::same_graph(x, b);
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (xv.ndim() != 2 || bv.numel() != xv.cols())
    throw ShapeError("add_bias: " + shape_str(xv.shape()) + " + " + shape_str(bv.shape()));
  Tensor out = xv;
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out.at(i, j) += bv[j];
  return g.apply(Op::kAddBias, std::move(out), {x, b},
                 [](const Tensor& up, std::vector<Tensor*>& gi) {
                   add_inplace(*gi[0], up);
                   Tensor& gb = *gi[1];
                   for (std::size_t i = 0; i < up.rows(); ++i)
                     for (std::size_t j = 0; j < up.cols(); ++j) gb[j] += up.at(i, j);
                 });
}

/// x[m x n] * diag(d), d of length n. Used for LayerScale.
inline Var scale_columns(Var x, Var d) {
  Graph& g = detail::same_graph(x, d);
  Tensor xv = x.value(), dv = d.value();
  if (xv.ndim() != 2 || dv.numel() != xv.cols())
    throw ShapeError("scale_columns: " + shape_str(xv.shape()) + " * diag" +
                     shape_str(dv.shape()));
  Tensor out = xv;
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out.at(i, j) *= dv[j];
  return g.apply(Op::kScaleColumns, std::move(out), {x, d},
                 [xv, dv](const Tensor& up, std::vector<Tensor*>& gi) {
                   Tensor& gx = *gi[0];
                   Tensor& gd = *gi[1];
                   for (std::size_t i = 0; i < up.rows(); ++i)
                     for (std::size_t j = 0; j < up.cols(); ++j) {
                       gx.at(i, j) += up.at(i, j) * dv[j];
                       gd[j] += up.at(i, j) * xv.at(i, j);
                     }
                 });
}

/// Per-row mean/variance normalization with learnable gain and bias.
inline Var normalize(Var x, Var gain, Var bias, double eps = 1e-5) {
  Graph& g = detail::same_graph(x, gain);
  const Tensor& xv = x.value();
  Tensor gv = gain.value();
  if (xv.ndim() != 2 || gv.numel() != xv.cols() || bias.value().numel() != xv.cols())
    throw ShapeError("normalize: " + shape_str(xv.shape()) + " with gain " +
                     shape_str(gv.shape()));
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor xhat({m, n});
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xv.at(i, j);
    mean /= double(n);
    for (std::size_t j = 0; j < n; ++j) var += (xv.at(i, j) - mean) * (xv.at(i, j) - mean);
    var /= double(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) xhat.at(i, j) = (xv.at(i, j) - mean) * inv_std[i];
  }
  Tensor out({m, n});
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = xhat.at(i, j) * gv[j] + bv[j];
  return g.apply(Op::kNormalize, std::move(out), {x, gain, bias},
                 [xhat, inv_std, gv](const Tensor& up, std::vector<Tensor*>& gi) {
                   const std::size_t m = up.rows(), n = up.cols();
                   for (std::size_t i = 0; i < m; ++i) {
                     double mean_dx = 0.0, mean_dx_xhat = 0.0;
                     for (std::size_t j = 0; j < n; ++j) {
                       const double dxh = up.at(i, j) * gv[j];
                       mean_dx += dxh;
                       mean_dx_xhat += dxh * xhat.at(i, j);
                       (*gi[1])[j] += up.at(i, j) * xhat.at(i, j);
                       (*gi[2])[j] += up.at(i, j);
                     }
                     mean_dx /= double(n);
                     mean_dx_xhat /= double(n);
                     for (std::size_t j = 0; j < n; ++j) {
                       const double dxh = up.at(i, j) * gv[j];
                       gi[0]->at(i, j) +=
                           inv_std[i] * (dxh - mean_dx - xhat.at(i, j) * mean_dx_xhat);
                     }
                   }
                 });
}

inline Var sum(Var a) {
  Shape s = a.shape();
  return a.graph->apply(Op::kSum, Tensor::scalar(msrs::sum(a.value())), {a},
                        [s](const Tensor& up, std::vector<Tensor*>& gi) {
                          add_inplace(*gi[0], Tensor(s, up.item()));
                        });
}

/// Mean of squared errors over every element of the batch.
inline Var mse(Var pred, const Tensor& target) {
  require_same_shape(pred.value(), target, "mse");
  Tensor diff = pred.value() - target;
  double acc = 0.0;
  for (double d : diff.data()) acc += d * d;
  const double n = double(diff.numel());
  return pred.graph->apply(Op::kMse, Tensor::scalar(acc / n), {pred},
                           [diff, n](const Tensor& up, std::vector<Tensor*>& gi) {
                             add_inplace(*gi[0], diff * (2.0 * up.item() / n));
                           });
}

/// Mean softmax cross-entropy; logits are batch x classes.
inline Var cross_entropy(Var logits, const std::vector<std::size_t>& labels) {
  const Tensor& z = logits.value();
  if (z.ndim() != 2 || z.rows() != labels.size())
    throw ShapeError("cross_entropy: logits " + shape_str(z.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t m = z.rows(), c = z.cols();
  Tensor probs({m, c});
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] >= c)
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) +
                              " out of range for " + std::to_string(c) + " classes");
    double mx = z.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z.at(i, j) - mx);
    for (std::size_t j = 0; j < c; ++j) probs.at(i, j) = std::exp(z.at(i, j) - mx) / s;
    loss += -(z.at(i, labels[i]) - mx - std::log(s));
  }
  return logits.graph->apply(Op::kCrossEntropy, Tensor::scalar(loss / double(m)), {logits},
                             [probs, labels](const Tensor& up, std::vector<Tensor*>& gi) {
                               const double k = up.item() / double(probs.rows());
                               Tensor& gz = *gi[0];
                               for (std::size_t i = 0; i < probs.rows(); ++i)
                                 for (std::size_t j = 0; j < probs.cols(); ++j)
                                   gz.at(i, j) +=
                                       k * (probs.at(i, j) - (j == labels[i] ? 1.0 : 0.0));
                             });
}

enum class Activation { kTanh, kRelu, kGelu };

inline Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::kTanh: return tanh(x);
    case Activation::kRelu: return relu(x);
    case Activation::kGelu: return gelu(x);
  }
  return x;
}

/// x[batch x in] . w[out x in]^T + b[out].
inline Var linear(Var x, Var w, Var b) { return add_bias(matmul(x, transpose(w)), b); }

/// y = x + D (act(x W1^T + b1) W2^T + b2), D = diag(layerscale) or identity.
inline Var residual_block(Var x, Var w1, Var b1, Var w2, Var b2, Activation act,
                          std::optional<Var> layerscale = std::nullopt) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 2 || w1.value().cols() != xv.cols() || w2.value().rows() != xv.cols())
    throw ShapeError("residual_block: input " + shape_str(xv.shape()) + " with w1 " +
                     shape_str(w1.shape()) + ", w2 " + shape_str(w2.shape()));
  Var branch = linear(activate(linear(x, w1, b1), act), w2, b2);
  if (layerscale) branch = scale_columns(branch, *layerscale);
  return add(x, branch);
}

/// Max over coordinates of |analytic - central FD| / (|analytic| + 1e-12).
inline double finite_difference_check(const std::function<double(const Tensor&)>& f,
                                      const Tensor& x, const Tensor& analytic, double h) {
  if (!(h > 0)) throw std::invalid_argument("finite_difference_check: h must be positive");
  require_same_shape(x, analytic, "finite_difference_check");
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    const double fd = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + 1e-12));
  }
  return worst;
}

}  // namespace msrs::ad
