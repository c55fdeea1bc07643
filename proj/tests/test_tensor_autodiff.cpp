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

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "msrs/autodiff.hpp"
#include "msrs/gradcheck.hpp"
#include "msrs/model.hpp"
#include "msrs/rng.hpp"
#include "msrs/tensor.hpp"

namespace msrs {
namespace {

Tensor random_tensor(Rng& r, Shape s, double scale = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = scale * r.normal();
  return t;
}

// Central differences with a step independent of the library's checker.
Tensor numeric_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor g(x.shape());
  Tensor p = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    p[i] = x[i] + h;
    const double fp = f(p);
    p[i] = x[i] - h;
    const double fm = f(p);
    p[i] = x[i];
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

double max_rel(const Tensor& a, const Tensor& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), 1e-8));
  return worst;
}

TEST(Tensor, DataLengthMatchesShape) {
  Tensor t({3, 4}, 2.0);
  EXPECT_EQ(t.numel(), 12u);
  EXPECT_EQ(t.data().size(), 12u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, MatmulIdentity) {
  Tensor out = matmul(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{3, 4}, {5, 6}}));
  EXPECT_EQ(out, Tensor::matrix({{3, 4}, {5, 6}}));
}

TEST(Tensor, MatmulDot) {
  EXPECT_EQ(matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}})), Tensor::matrix({{11}}));
}

TEST(Tensor, MatmulShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
}

TEST(Autodiff, MatmulBackwardMatchesFiniteDifferences) {
  ad::Graph g;
  auto a = g.parameter(Tensor::matrix({{1, 2}}), "a");
  auto b = g.parameter(Tensor::matrix({{3}, {4}}), "b");
  auto grads = g.backward(ad::sum(ad::matmul(a, b)));
  EXPECT_EQ(grads.at("a"), Tensor::matrix({{3, 4}}));
  EXPECT_EQ(grads.at("b"), Tensor::matrix({{1}, {2}}));
  auto fa = [](const Tensor& x) { return msrs::sum(matmul(x, Tensor::matrix({{3}, {4}}))); };
  auto fb = [](const Tensor& x) { return msrs::sum(matmul(Tensor::matrix({{1, 2}}), x)); };
  EXPECT_LT(max_rel(grads.at("a"), numeric_grad(fa, Tensor::matrix({{1, 2}}), 1e-6)), 1e-8);
  EXPECT_LT(max_rel(grads.at("b"), numeric_grad(fb, Tensor::matrix({{3}, {4}}), 1e-6)), 1e-8);
}

TEST(Autodiff, ActivationValues) {
  EXPECT_DOUBLE_EQ(ad::sigmoid(0.0), 0.5);
  ad::Graph g;
  auto x = g.parameter(Tensor::scalar(0.0), "x");
  auto y = ad::tanh(x);
  EXPECT_DOUBLE_EQ(y.value().item(), 0.0);
  EXPECT_DOUBLE_EQ(g.backward(ad::sum(y)).at("x").item(), 1.0);
}

TEST(Autodiff, SigmoidStableAtLargeArguments) {
  EXPECT_EQ(ad::sigmoid(1e5), 1.0);
  EXPECT_EQ(ad::sigmoid(-1e5), 0.0);
  EXPECT_TRUE(std::isfinite(ad::sigmoid(-1e308)));
}

TEST(Autodiff, GeluMatchesGaussianCdfAndFiniteDifferences) {
  const double cdf = 0.5 * (1 + std::erf(1.0 / std::numbers::sqrt2));
  EXPECT_NEAR(ad::detail::gelu(1.0), cdf, 1e-15);
  ad::Graph g;
  auto x = g.parameter(Tensor::scalar(1.0), "x");
  const double analytic = g.backward(ad::sum(ad::gelu(x))).at("x").item();
  const double h = 1e-5;
  const double fd = (ad::detail::gelu(1.0 + h) - ad::detail::gelu(1.0 - h)) / (2 * h);
  EXPECT_LT(std::abs(analytic - fd) / std::abs(analytic), 1e-5);
}

TEST(Autodiff, ResidualBlockZeroLayerScaleIsIdentity) {
  Rng r(3);
  ad::Graph g;
  Tensor xv = random_tensor(r, {3, 4});
  auto x = g.parameter(xv, "x");
  auto y = ad::residual_block(x, g.parameter(random_tensor(r, {4, 4}), "w1"),
                              g.parameter(random_tensor(r, {4}), "b1"),
                              g.parameter(random_tensor(r, {4, 4}), "w2"),
                              g.parameter(random_tensor(r, {4}), "b2"), ad::Activation::kTanh,
                              g.parameter(Tensor({4}, 0.0), "ls"));
  EXPECT_EQ(y.value(), xv);
  Tensor up = random_tensor(r, {3, 4});
  auto grads = g.backward(ad::sum(ad::mul(y, g.constant(up))));
  EXPECT_EQ(grads.at("x"), up);
}

TEST(Autodiff, ResidualBlockZeroWeightsIsIdentity) {
  Rng r(4);
  ad::Graph g;
  Tensor xv = random_tensor(r, {2, 4});
  auto y = ad::residual_block(g.parameter(xv, "x"), g.parameter(Tensor({4, 4}), "w1"),
                              g.parameter(Tensor({4}), "b1"), g.parameter(Tensor({4, 4}), "w2"),
                              g.parameter(Tensor({4}), "b2"), ad::Activation::kRelu);
  EXPECT_EQ(y.value(), xv);
}

TEST(Autodiff, ResidualBlockGradientsMatchFiniteDifferences) {
  Rng r(5);
  std::vector<Tensor> in = {random_tensor(r, {3, 4}), random_tensor(r, {4, 4}, 0.5), random_tensor(r, {4}),
                            random_tensor(r, {4, 4}, 0.5), random_tensor(r, {4})};
  auto loss = [&](const std::vector<Tensor>& v, ad::Graph& g, std::vector<ad::Var>* leaves) {
    std::vector<ad::Var> p;
    for (std::size_t i = 0; i < v.size(); ++i) p.push_back(g.parameter(v[i], "p" + std::to_string(i)));
    if (leaves) *leaves = p;
    return ad::sum(ad::tanh(ad::residual_block(p[0], p[1], p[2], p[3], p[4], ad::Activation::kGelu)));
  };
  ad::Graph g;
  auto grads = g.backward(loss(in, g, nullptr));
  for (std::size_t i = 0; i < in.size(); ++i) {
    auto f = [&](const Tensor& x) {
      auto v = in;
      v[i] = x;
      ad::Graph fg;
      return loss(v, fg, nullptr).value().item();
    };
    EXPECT_LT(ad::finite_difference_check(f, in[i], grads.at("p" + std::to_string(i)), 1e-5), 1e-5) << i;
  }
}

TEST(Autodiff, LossValues) {
  ad::Graph g;
  Tensor t = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(ad::mse(g.parameter(t, "p"), t).value().item(), 0.0);
  auto ce = ad::cross_entropy(g.parameter(Tensor({5, 4}, 0.7), "z"), {0, 1, 2, 3, 1});
  EXPECT_NEAR(ce.value().item(), std::log(4.0), 1e-12);
  EXPECT_NEAR(ce.value().item(), 1.386294, 1e-6);
}

TEST(Autodiff, MseGradientMatchesFiniteDifferences) {
  Rng r(6);
  Tensor pred = random_tensor(r, {3, 2}), target = random_tensor(r, {3, 2});
  ad::Graph g;
  auto grads = g.backward(ad::mse(g.parameter(pred, "p"), target));
  auto f = [&](const Tensor& x) {
    ad::Graph fg;
    return ad::mse(fg.parameter(x, "p"), target).value().item();
  };
  EXPECT_LT(ad::finite_difference_check(f, pred, grads.at("p"), 1e-5), 1e-5);
}

TEST(Autodiff, BackwardOfIdentityAndSquare) {
  ad::Graph g;
  auto th = g.parameter(Tensor::scalar(2.5), "t");
  EXPECT_EQ(g.backward(th).at("t").item(), 1.0);
  ad::Graph g2;
  auto v = g2.parameter(Tensor::vector({1, -2, 3}), "v");
  EXPECT_EQ(g2.backward(ad::sum(ad::mul(v, v))).at("v"), Tensor::vector({2, -4, 6}));
}

TEST(Autodiff, BackwardIsLinearInUpstream) {
  Rng r(7);
  Model m = build_model(ModelSpec{.depth = 2, .width = 5, .d_in = 3, .d_out = 2}, 11);
  Tensor x = random_tensor(r, {4, 3});
  ad::Graph g;
  auto loss = ad::sum(ad::tanh(forward(g, m, x)));
  auto g1 = g.backward(loss, 1.0);
  auto g2 = g.backward(loss, 2.0);
  for (const auto& [name, t] : g1)
    for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_NEAR(g2.at(name)[i], 2 * t[i], 1e-12);
}

TEST(Autodiff, ForwardAndBackwardAreDeterministic) {
  Rng r(8);
  Model m = build_model(ModelSpec{.depth = 3, .width = 6, .d_in = 3, .d_out = 1}, 12);
  Tensor x = random_tensor(r, {5, 3});
  auto run = [&] {
    ad::Graph g;
    auto out = forward(g, m, x);
    return std::make_pair(out.value(), g.backward(ad::sum(out)));
  };
  EXPECT_EQ(run(), run());
}

TEST(Autodiff, GradientsStayFinite) {
  Rng r(9);
  Model m = build_model(ModelSpec{.depth = 2, .width = 4, .normalization = true, .d_in = 3}, 13);
  ad::Graph g;
  auto out = forward(g, m, random_tensor(r, {6, 3}));
  EXPECT_TRUE(all_finite(out.value()));
  for (const auto& [_, t] : g.backward(ad::sum(out))) EXPECT_TRUE(all_finite(t));
}

TEST(FiniteDifference, QuadraticAndLinear) {
  auto sq = [](const Tensor& x) { return x[0] * x[0]; };
  EXPECT_LT(ad::finite_difference_check(sq, Tensor::scalar(3), Tensor::scalar(6), 1e-5), 1e-9);
  auto lin = [](const Tensor& x) { return msrs::sum(x); };
  EXPECT_LT(ad::finite_difference_check(lin, Tensor::vector({0.3, -2, 7}), Tensor::vector({1, 1, 1}), 1e-5),
            1e-9);
}

TEST(FiniteDifference, DetectsWrongGradient) {
  auto sq = [](const Tensor& x) { return x[0] * x[0]; };
  EXPECT_GT(ad::finite_difference_check(sq, Tensor::scalar(3), Tensor::scalar(6.01), 1e-5), 1e-3);
}

// Whole-model gradients: the 3-block residual MLP (with LayerScale and
// normalization) and a 2-block plain net, every parameter.
void check_model_gradients(const ModelSpec& spec, std::uint64_t seed) {
  Rng r(seed);
  Model m = build_model(spec, seed);
  Tensor x = random_tensor(r, {4, std::size_t(spec.d_in)});
  Tensor y = random_tensor(r, {4, std::size_t(spec.d_out)});
  ad::Graph g;
  auto grads = g.backward(ad::mse(forward(g, m, x), y));
  for (std::size_t pi = 0; pi < m.params.size(); ++pi) {
    auto f = [&](const Tensor& v) {
      Model c = m;
      c.params[pi].value = v;
      ad::Graph fg;
      return ad::mse(forward(fg, c, x), y).value().item();
    };
    const auto& p = m.params[pi];
    EXPECT_LT(ad::finite_difference_check(f, p.value, grads.at(p.name), 1e-5), 1e-5) << p.name;
  }
}

TEST(FiniteDifference, ThreeBlockResidualMlp) {
  check_model_gradients(ModelSpec{.depth = 3, .width = 4, .activation = Activation::kGelu, .residual = true,
                                  .layerscale = true, .layerscale_init = 0.5, .normalization = true,
                                  .d_in = 3, .d_out = 2},
                        21);
}

TEST(FiniteDifference, TwoBlockPlainNet) {
  check_model_gradients(ModelSpec{.depth = 2, .width = 5, .residual = false, .d_in = 3, .d_out = 1}, 22);
}

TEST(Gradcheck, EveryPrimitivePasses) {
  const auto results = run_gradcheck();
  EXPECT_EQ(results.size(), gradcheck_ops().size());
  for (const auto& r : results) {
    EXPECT_EQ(r.cases, 100) << r.op;
    EXPECT_TRUE(r.pass) << r.op << " " << r.max_rel_err;
  }
}

TEST(Gradcheck, PerturbedGradientIsCaught) {
  GradcheckOptions o;
  o.cases = 3;
  o.perturb_op = "matmul";
  for (const auto& r : run_gradcheck(o)) EXPECT_EQ(r.pass, r.op != "matmul") << r.op;
}

}  // namespace
}  // namespace msrs
