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
#include <vector>

#include "msrs/mask.hpp"
#include "msrs/rng.hpp"

namespace msrs {
namespace {

double scalar_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

TEST(InitPhi, WorkedValues) {
  MsrsHyper h;
  // Direct evaluation of the closed form.
  const double at0 = (std::log(1e-8) / 2 + 1) * 5e-4 + 1e-3;
  Tensor phi = init_phi(Tensor::vector({0.0, 1.0, std::exp(-2.0)}), h);
  EXPECT_NEAR(phi[0], -3.1051703e-3, 1e-9);
  EXPECT_NEAR(phi[0], at0, 1e-15);
  EXPECT_NEAR(phi[1], 1.5e-3, 1e-9);
  EXPECT_NEAR(phi[2], h.mu, 1e-9);
}

TEST(InitPhi, SignThreshold) {
  MsrsHyper h;
  const double t = init_phi_sign_threshold(h);
  EXPECT_NEAR(t, std::exp(-6.0) - 1e-8, 1e-18);
  EXPECT_NEAR(t, 2.4788e-3, 1e-7);
  // Bisection on the closed form finds the same root.
  double lo = 1e-4, hi = 1e-2;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (init_phi(Tensor::scalar(mid), h)[0] < 0 ? lo : hi) = mid;
  }
  EXPECT_NEAR(hi, t, 1e-15);
  const double below = std::nextafter(t, 0.0) * (1 - 1e-12);
  const double above = t * (1 + 1e-12);
  EXPECT_EQ(binarize(init_phi(Tensor::vector({below, -below}), h)).popcount(), 0u);
  EXPECT_EQ(binarize(init_phi(Tensor::vector({above, -above}), h)).popcount(), 2u);
}

TEST(InitPhi, MonotoneInMagnitude) {
  MsrsHyper h;
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    double a = r.uniform(0, 2), b = r.uniform(0, 2);
    if (a > b) std::swap(a, b);
    if (a == b) continue;
    Tensor p = init_phi(Tensor::vector({a, -b}), h);
    EXPECT_LT(p[0], p[1]);
  }
}

TEST(InitPhi, RejectsNonPositiveVarsigma) {
  MsrsHyper h;
  h.varsigma = 0;
  EXPECT_THROW(init_phi(Tensor::scalar(1), h), std::invalid_argument);
}

TEST(RelaxedMask, Values) {
  EXPECT_EQ(relaxed_mask(Tensor::scalar(0), 7.0)[0], 0.5);
  EXPECT_NEAR(relaxed_mask(Tensor::scalar(1e-4), 1e5)[0], 0.9999546, 1e-7);
  EXPECT_NEAR(relaxed_mask(Tensor::scalar(-1e-4), 1e5)[0], 4.53979e-5, 1e-10);
  EXPECT_NEAR(relaxed_mask(Tensor::scalar(1e-4), 1e5)[0], scalar_sigmoid(10.0), 1e-15);
}

TEST(RelaxedMask, MonotoneBoundedAndConsistentWithBinarize) {
  Rng r(2);
  for (double l : {0.5, 1.0, 10.0, 1e5}) {
    Tensor phi({200});
    for (double& v : phi.data()) v = r.normal() * 1e-3;
    phi[0] = 0.0;
    Tensor s = relaxed_mask(phi, l);
    BinaryMask b = binarize(phi);
    for (std::size_t i = 0; i < phi.numel(); ++i) {
      EXPECT_GE(s[i], 0.0);
      EXPECT_LE(s[i], 1.0);
      EXPECT_EQ(b.active(i), s[i] >= 0.5);
      for (std::size_t j = 0; j < phi.numel(); ++j)
        if (phi[i] < phi[j]) EXPECT_LE(s[i], s[j]);
    }
  }
}

TEST(EffectiveWeight, Values) {
  MaskedParameter mp(Tensor::vector({2, -3}), Tensor::vector({1e-4, -1e-4}), 1e5, 1.0);
  Tensor w = effective_weight(mp);
  EXPECT_NEAR(w[0], 1.9999092, 1e-7);
  EXPECT_NEAR(w[1], -1.36194e-4, 1e-9);
  MaskedParameter half(Tensor::vector({2, -3}), Tensor::vector({0, 0}), 1e5, 1.0);
  EXPECT_EQ(effective_weight(half), Tensor::vector({1, -1.5}));
  MaskedParameter zero(Tensor::vector({0, 0}), Tensor::vector({0.3, -0.3}), 1e5, 1.0);
  EXPECT_EQ(effective_weight(zero), Tensor::vector({0, 0}));
}

TEST(MaskedParameter, RejectsBadTemperaturesAndShapes) {
  EXPECT_THROW(MaskedParameter(Tensor({2}), Tensor({2}), 1.0, 10.0), std::invalid_argument);
  EXPECT_THROW(MaskedParameter(Tensor({2}), Tensor({3}), 1e5, 1.0), ShapeError);
}

TEST(MaskedBackward, WorkedValues) {
  MaskedParameter mp(Tensor::scalar(2), Tensor::scalar(0), 1.0, 1.0);
  MaskedGrads g = masked_backward(Tensor::scalar(1), mp);
  EXPECT_DOUBLE_EQ(g.phi[0], 0.5);
  EXPECT_DOUBLE_EQ(g.theta[0], 0.5);
  MaskedGrads z = masked_backward(Tensor::scalar(0), mp);
  EXPECT_EQ(z.phi[0], 0.0);
  EXPECT_EQ(z.theta[0], 0.0);
  MaskedParameter mp2(Tensor::scalar(1), Tensor::scalar(2), 1.0, 1.0);
  EXPECT_NEAR(masked_backward(Tensor::scalar(1), mp2).phi[0], 0.1049936, 1e-7);
  const double s2 = scalar_sigmoid(2.0);
  EXPECT_NEAR(masked_backward(Tensor::scalar(1), mp2).phi[0], s2 * (1 - s2), 1e-15);
}

TEST(MaskedBackward, TwoTemperatures) {
  // Sharp forward mask for theta, soft derivative for phi.
  MaskedParameter mp(Tensor::scalar(3), Tensor::scalar(2e-5), 1e5, 1.0);
  MaskedGrads g = masked_backward(Tensor::scalar(0.5), mp);
  EXPECT_NEAR(g.theta[0], 0.5 * scalar_sigmoid(2.0), 1e-15);
  const double s = scalar_sigmoid(2e-5);
  EXPECT_NEAR(g.phi[0], 0.5 * 3 * s * (1 - s), 1e-15);
}

TEST(MaskedBackward, MatchesFiniteDifferencesAtSmoothTemperatures) {
  Rng r(3);
  for (double l : {1.0, 10.0}) {
    Tensor theta({3, 4}), phi({3, 4}), up({3, 4});
    for (double& v : theta.data()) v = r.normal();
    for (double& v : phi.data()) v = 0.1 * r.normal();
    for (double& v : up.data()) v = r.normal();
    MaskedGrads g = masked_backward(up, MaskedParameter(theta, phi, l, l), l != 1.0);
    auto loss_theta = [&](const Tensor& t) { return sum(up * effective_weight(MaskedParameter(t, phi, l, l))); };
    auto loss_phi = [&](const Tensor& p) { return sum(up * effective_weight(MaskedParameter(theta, p, l, l))); };
    EXPECT_LT(ad::finite_difference_check(loss_theta, theta, g.theta, 1e-5), 1e-5);
    EXPECT_LT(ad::finite_difference_check(loss_phi, phi, g.phi, 1e-5), 1e-5);
  }
}

TEST(MaskedBackward, PrintedFormOmitsTemperatureFactor) {
  MaskedParameter mp(Tensor::scalar(1), Tensor::scalar(0.01), 10.0, 10.0);
  const double printed = masked_backward(Tensor::scalar(1), mp).phi[0];
  const double chained = masked_backward(Tensor::scalar(1), mp, true).phi[0];
  EXPECT_NEAR(chained, 10.0 * printed, 1e-15);
}

TEST(Penalty, Values) {
  std::vector<Tensor> none = {Tensor::vector({0.5, -0.5})};
  EXPECT_EQ(penalty_value(none, 0.0), 0.0);
  std::vector<Tensor> sym = {Tensor::vector({1, -1})};
  EXPECT_EQ(penalty_value(sym, 0.5), 0.0);
  std::vector<Tensor> two = {Tensor::vector({0.01, 0.02})};
  EXPECT_NEAR(penalty_value(two, 1e-3), 3e-5, 1e-18);
  EXPECT_EQ(penalty_grad(1e-3), 1e-3);
}

TEST(Penalty, DecrementsEveryEntryByLambda) {
  Tensor phi = Tensor::vector({0.01, 0.02});
  apply_penalty(phi, 1e-3);
  EXPECT_NEAR(phi[0], 0.009, 1e-15);
  EXPECT_NEAR(phi[1], 0.019, 1e-15);
  Tensor unchanged = Tensor::vector({0.3});
  apply_penalty(unchanged, 0.0);
  EXPECT_EQ(unchanged[0], 0.3);
}

TEST(Penalty, PureFlowMakesSparsityNonDecreasing) {
  Rng r(4);
  Tensor phi({500});
  for (double& v : phi.data()) v = 0.01 * r.normal();
  double prev = sparsity(binarize(phi));
  for (int step = 0; step < 100; ++step) {
    Tensor before = phi;
    apply_penalty(phi, 1e-4);
    for (std::size_t i = 0; i < phi.numel(); ++i) EXPECT_LT(phi[i], before[i]);
    const double s = sparsity(binarize(phi));
    EXPECT_GE(s, prev);
    prev = s;
  }
}

TEST(Binarize, Threshold) {
  EXPECT_EQ(binarize(Tensor::scalar(0.0)).popcount(), 1u);
  EXPECT_EQ(binarize(Tensor::scalar(-1e-12)).popcount(), 0u);
  EXPECT_EQ(binarize(Tensor::vector({0.3, -0.2, 0.0})).bits(), Tensor::vector({1, 0, 1}));
}

TEST(BinaryMask, RejectsNonBinaryEntries) {
  EXPECT_THROW(BinaryMask(Tensor::vector({1, 0.5})), std::invalid_argument);
}

TEST(Sparsity, Values) {
  EXPECT_EQ(sparsity(BinaryMask::ones({3, 3})), 0.0);
  EXPECT_EQ(sparsity(BinaryMask(Tensor::vector({1, 0, 0, 1}))), 0.5);
  Tensor a({10}, 1.0), b({90}, 1.0);
  for (int i = 0; i < 5; ++i) a[i] = 0;
  for (int i = 0; i < 45; ++i) b[i] = 0;
  std::vector<BinaryMask> ms = {BinaryMask(a), BinaryMask(b)};
  EXPECT_EQ(sparsity(std::span<const BinaryMask>(ms)), 0.5);
}

TEST(MaskDelta, Values) {
  BinaryMask m(Tensor::vector({1, 1, 0, 0}));
  MaskDelta same = mask_delta(m, m);
  EXPECT_EQ(same.sparsity_diff, 0.0);
  EXPECT_EQ(same.hamming, 0u);
  MaskDelta d = mask_delta(m, BinaryMask(Tensor::vector({1, 0, 0, 0})));
  EXPECT_EQ(d.sparsity_diff, 0.25);
  EXPECT_EQ(d.hamming, 1u);
}

TEST(MaskDelta, StoppingCriterionExample) {
  // 1000 entries: 310 zeros, then 315 zeros.
  Tensor a({1000}, 1.0), b({1000}, 1.0);
  for (int i = 0; i < 310; ++i) a[i] = 0;
  for (int i = 0; i < 315; ++i) b[i] = 0;
  MaskDelta d = mask_delta(BinaryMask(a), BinaryMask(b));
  EXPECT_NEAR(d.sparsity_diff, 0.005, 1e-15);
  EXPECT_LT(d.sparsity_diff, MsrsHyper{}.epsilon);
}

TEST(MsrsHyper, Validation) {
  MsrsHyper h;
  EXPECT_NO_THROW(h.validate());
  h.lambda = -1;
  EXPECT_THROW(h.validate(), std::invalid_argument);
  h = MsrsHyper{};
  h.epsilon = 0;
  EXPECT_THROW(h.validate(), std::invalid_argument);
  h = MsrsHyper{};
  h.l_fwd = 0.5;
  EXPECT_THROW(h.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace msrs
