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
#include <set>
#include <vector>

#include "msrs/sparse_methods.hpp"
#include "msrs/trainer.hpp"

namespace msrs {
namespace {

LayerShapeInventory two_layers() {
  return {{"a", 100, 100, 10000}, {"b", 10, 10, 100}};
}

TEST(Erk, SingleLayerDensityIsExact) {
  LayerShapeInventory inv = {{"a", 7, 5, 35}};
  const auto d = erk_densities(inv, 0.3);
  EXPECT_NEAR(d[0], 0.7, 1e-15);
}

TEST(Erk, TwoLayerWorkedExample) {
  // Oracle: solve c * (200/10000 * 10000 + 20/100 * 100) = 1010, i.e. 220 c = 1010.
  const double c = 1010.0 / 220.0;
  const auto d = erk_densities(two_layers(), 0.9);
  EXPECT_NEAR(c, 4.5909, 1e-4);
  EXPECT_NEAR(d[0], c * 200.0 / 10000.0, 1e-12);
  EXPECT_NEAR(d[1], c * 20.0 / 100.0, 1e-12);
  EXPECT_NEAR(d[0], 0.091818, 1e-6);
  EXPECT_NEAR(d[1], 0.91818, 1e-5);
  const auto masks = erk_init(two_layers(), 0.9, 5);
  EXPECT_EQ(masks[0].popcount(), 918u);
  EXPECT_EQ(masks[1].popcount(), 92u);
  EXPECT_NEAR(double(masks[0].popcount() + masks[1].popcount()), 1010.0, 2.0);
}

TEST(Erk, ZeroTargetIsDense) {
  for (double d : erk_densities(two_layers(), 0.0)) EXPECT_EQ(d, 1.0);
  for (const auto& m : erk_init(two_layers(), 0.0, 1)) EXPECT_EQ(m.zeros_count(), 0u);
}

TEST(Erk, CappedLayerIsDenseAndRestIsProportional) {
  LayerShapeInventory inv = {{"big", 200, 200, 40000}, {"mid", 100, 100, 10000}, {"tiny", 2, 2, 4}};
  const auto d = erk_densities(inv, 0.5);
  EXPECT_EQ(d[2], 1.0);
  EXPECT_NEAR(d[0] / d[1], (400.0 / 40000.0) / (200.0 / 10000.0), 1e-12);
  double nz = 0;
  for (std::size_t i = 0; i < inv.size(); ++i) nz += d[i] * double(inv[i].count);
  EXPECT_NEAR(nz, 0.5 * 50004, 1e-6);
}

TEST(Erk, MagnitudeInitKeepsLargestEntries) {
  LayerShapeInventory inv = {{"a", 2, 2, 4}};
  std::vector<Tensor> w = {Tensor::matrix({{0.9, -0.05}, {0.4, 0.01}})};
  const auto m = erk_magnitude_init(w, inv, 0.5);
  EXPECT_EQ(m[0].bits(), Tensor::matrix({{1, 0}, {1, 0}}));
}

TEST(Gmp, ScheduleEndpointsAndMidpoint) {
  EXPECT_EQ(gmp_schedule(10, 10, 100, 0.0, 0.4), 0.0);
  EXPECT_EQ(gmp_schedule(110, 10, 100, 0.0, 0.4), 0.4);
  EXPECT_NEAR(gmp_schedule(60, 10, 100, 0.0, 0.4), 0.35, 1e-15);
  EXPECT_NEAR(gmp_schedule(60, 10, 100, 0.0, 0.4), 0.4 * (1 - 0.125), 1e-15);
  EXPECT_EQ(gmp_schedule(500, 10, 100, 0.0, 0.4), 0.4);
}

TEST(Gmp, MagnitudePrune) {
  std::vector<Tensor> w = {Tensor::vector({0.9, -0.05, 0.4, 0.01})};
  EXPECT_EQ(magnitude_prune(w, 0.0, PruneScope::kPerLayer)[0].popcount(), 4u);
  EXPECT_EQ(magnitude_prune(w, 0.5, PruneScope::kPerLayer)[0].bits(), Tensor::vector({1, 0, 1, 0}));
  std::vector<Tensor> flat = {Tensor::vector({0.5, 0.5, 0.5})};
  EXPECT_EQ(magnitude_prune(flat, 1.0 / 3.0, PruneScope::kPerLayer)[0].bits(), Tensor::vector({0, 1, 1}));
}

TEST(Gmp, GlobalScopePoolsLayers) {
  std::vector<Tensor> w = {Tensor::vector({0.1, 0.2}), Tensor::vector({5, 6, 7, 8})};
  const auto m = magnitude_prune(w, 2.0 / 6.0, PruneScope::kGlobal);
  EXPECT_EQ(m[0].popcount(), 0u);
  EXPECT_EQ(m[1].popcount(), 4u);
}

TEST(Gmp, MasksNestUnderFixedWeights) {
  Rng r(3);
  std::vector<Tensor> w = {Tensor({20, 20})};
  for (double& v : w[0].data()) v = r.normal();
  BinaryMask prev = BinaryMask::ones({20, 20});
  for (int t = 0; t <= 100; t += 5) {
    const auto m = magnitude_prune(w, gmp_schedule(t, 0, 100, 0.0, 0.8), PruneScope::kPerLayer)[0];
    for (std::size_t i = 0; i < m.numel(); ++i)
      if (m.active(i)) EXPECT_TRUE(prev.active(i));
    prev = m;
  }
}

TEST(Set, WorkedExample) {
  Tensor w = Tensor::vector({0.9, -0.05, 0.4, 0.01, 0, 0});
  BinaryMask m(Tensor::vector({1, 1, 1, 1, 0, 0}));
  Rng rng(9);
  auto r = set_prune_grow(w, m, 0.5, rng);
  EXPECT_EQ(r.pruned, 2u);
  EXPECT_EQ(r.grown, 2u);
  EXPECT_FALSE(r.mask.active(1));
  EXPECT_FALSE(r.mask.active(3));
  EXPECT_TRUE(r.mask.active(0));
  EXPECT_TRUE(r.mask.active(2));
  EXPECT_TRUE(r.mask.active(4));
  EXPECT_TRUE(r.mask.active(5));
  EXPECT_EQ(r.mask.popcount(), 4u);
}

TEST(Set, ZeroFractionLeavesMaskUnchanged) {
  Tensor w = Tensor::vector({0.9, -0.05, 0.4, 0.01});
  BinaryMask m(Tensor::vector({1, 0, 1, 1}));
  Rng rng(1);
  auto r = set_prune_grow(w, m, 0.0, rng);
  EXPECT_EQ(r.mask.bits(), m.bits());
}

TEST(Rigl, GrowsLargestGradient) {
  Tensor w = Tensor::vector({0.9, 0.8, 0.05, 0, 0, 0});
  BinaryMask m(Tensor::vector({1, 1, 1, 0, 0, 0}));
  Tensor g = Tensor::vector({0, 0, 0, 0.1, 0.9, 0.5});
  auto r = rigl_prune_grow(w, g, m, 1.0 / 3.0);
  EXPECT_EQ(r.mask.bits(), Tensor::vector({1, 1, 0, 0, 1, 0}));
}

TEST(Rigl, TiesGrowLowestIndices) {
  Tensor w = Tensor::vector({0.9, 0.8, 0.05, 0.07, 0, 0, 0, 0});
  BinaryMask m(Tensor::vector({1, 1, 1, 1, 0, 0, 0, 0}));
  Tensor g({8}, 0.25);
  auto r = rigl_prune_grow(w, g, m, 0.5);
  EXPECT_EQ(r.mask.bits(), Tensor::vector({1, 1, 0, 0, 1, 1, 0, 0}));
}

TEST(PruneGrow, PopcountConservedOverThousandEvents) {
  Rng rng(42);
  Tensor w({16, 16});
  for (double& v : w.data()) v = rng.normal();
  BinaryMask set_mask = erk_init({{"l", 16, 16, 256}}, 0.6, 1)[0];
  BinaryMask rigl_mask = set_mask;
  const std::size_t count = set_mask.popcount();
  Tensor ws = w, wr = w;
  for (int e = 0; e < 1000; ++e) {
    const double zeta = rng.uniform();
    Tensor g({16, 16});
    for (double& v : g.data()) v = rng.normal();
    set_mask = set_prune_grow(ws, set_mask, zeta, rng).mask;
    rigl_mask = rigl_prune_grow(wr, g, rigl_mask, zeta).mask;
    ASSERT_EQ(set_mask.popcount(), count);
    ASSERT_EQ(rigl_mask.popcount(), count);
    for (double& v : ws.data()) v += 0.01 * rng.normal();
    for (double& v : wr.data()) v += 0.01 * rng.normal();
  }
}

TEST(PruneGrow, ConservedWhenFewPositionsAreFree) {
  Rng rng(7);
  Tensor w = Tensor::vector({0.3, 0.1, 0.2, 0.4, 0.5, 0});
  BinaryMask m(Tensor::vector({1, 1, 1, 1, 1, 0}));
  auto r = set_prune_grow(w, m, 0.8, rng);
  EXPECT_EQ(r.mask.popcount(), 5u);
  EXPECT_EQ(r.regrown, 3u);
  Tensor g = Tensor::vector({0, 0.9, 0.2, 0, 0, 0.4});
  auto q = rigl_prune_grow(w, g, m, 0.8);
  EXPECT_EQ(q.mask.popcount(), 5u);
}

TEST(SparseSteps, ApplyMaskExamples) {
  EXPECT_EQ(condense(Tensor::vector({1, 2, 3}), BinaryMask(Tensor::vector({1, 0, 1}))), Tensor::vector({1, 0, 3}));
  EXPECT_EQ(condense(Tensor::vector({1, 2}), BinaryMask::ones({2})), Tensor::vector({1, 2}));
  EXPECT_EQ(condense(Tensor::vector({1, 2}), BinaryMask::zeros({2})), Tensor::vector({0, 0}));
  EXPECT_EQ(sparse_continue_step(Tensor::vector({0.5, -0.5}), BinaryMask(Tensor::vector({0, 1}))),
            Tensor::vector({0, -0.5}));
  EXPECT_EQ(sparse_continue_step(Tensor::vector({0.5, -0.5}), BinaryMask::ones({2})), Tensor::vector({0.5, -0.5}));
  EXPECT_EQ(dense_masked_grads_step(Tensor::vector({1, 2}), BinaryMask(Tensor::vector({0, 1}))),
            Tensor::vector({0, 2}));
}

TEST(CosineZeta, DecaysToZero) {
  EXPECT_EQ(cosine_zeta(0.3, 0, 100), 0.3);
  EXPECT_NEAR(cosine_zeta(0.3, 50, 100), 0.15, 1e-15);
  EXPECT_NEAR(cosine_zeta(0.3, 100, 100), 0.0, 1e-15);
}

TEST(Method, NamesRoundTrip) {
  for (Method m : {Method::kDense, Method::kMsrs, Method::kGmp, Method::kSet, Method::kRigl,
                   Method::kDenseMaskedGrads})
    EXPECT_EQ(parse_method(method_name(m)), m);
  EXPECT_THROW(parse_method("chase"), std::invalid_argument);
}

TEST(SparseMethodConfig, Validation) {
  SparseMethodConfig c;
  EXPECT_NO_THROW(c.validate());
  c.target_sparsity = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SparseMethodConfig{};
  c.update_interval = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

// Small training runs that exercise each method inside the trainer.
ExperimentConfig small_config(Method m) {
  ExperimentConfig c;
  c.model = ModelSpec{.depth = 2, .width = 8, .d_in = 4, .d_out = 1};
  c.task.n = 64;
  c.task.d_in = 4;
  c.method.method = m;
  c.method.target_sparsity = 0.5;
  c.method.update_interval = 3;
  c.method.msrs.lambda = 1e-3;
  c.method.msrs.max_joint_epochs = 3;
  c.optim.total_epochs = 4;
  c.optim.batch_size = 16;
  c.log_interval = 2;
  return c;
}

TEST(TrainerMethods, SetAndRiglKeepActiveCountAndZeroInactive) {
  for (Method m : {Method::kSet, Method::kRigl}) {
    ExperimentConfig c = small_config(m);
    const Dataset d = make_dataset(c.task);
    std::optional<std::size_t> active;
    RunOptions o;
    o.on_record = [&](const MetricRecord&, const Model& model, const std::vector<BinaryMask>& masks) {
      std::size_t n = 0;
      const auto idx = model.prunable_indices();
      for (std::size_t i = 0; i < masks.size(); ++i) {
        n += masks[i].popcount();
        const Tensor& w = model.params[idx[i]].value;
        for (std::size_t k = 0; k < w.numel(); ++k)
          if (!masks[i].active(k)) ASSERT_EQ(w[k], 0.0);
      }
      if (!active) active = n;
      EXPECT_EQ(n, *active);
    };
    RunResult r = run_experiment(c, d, o);
    EXPECT_EQ(r.status, RunStatus::kOk);
    EXPECT_GT(r.final_sparsity, 0.3);
  }
}

TEST(TrainerMethods, GmpReachesTarget) {
  ExperimentConfig c = small_config(Method::kGmp);
  const Dataset d = make_dataset(c.task);
  RunResult r = run_experiment(c, d);
  EXPECT_NEAR(r.final_sparsity, 0.5, 0.02);
}

TEST(TrainerMethods, DenseMaskedGradsFreezesMaskedWeights) {
  ExperimentConfig c = small_config(Method::kDenseMaskedGrads);
  const Dataset d = make_dataset(c.task);
  Model init = build_model(c.model, Rng::derive(c.seed, 10), c.method.msrs);
  std::vector<BinaryMask> masks;
  Rng rng(5);
  for (auto pi : init.prunable_indices()) {
    Tensor bits(init.params[pi].value.shape());
    for (double& v : bits.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    masks.emplace_back(bits);
  }
  RunOptions o;
  o.fixed_masks = masks;
  RunResult r = run_experiment(c, d, o);
  const auto idx = init.prunable_indices();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor& before = init.params[idx[i]].value;
    const Tensor& after = r.model.params[idx[i]].value;
    for (std::size_t k = 0; k < before.numel(); ++k)
      if (!masks[i].active(k)) EXPECT_EQ(after[k], before[k]);
  }
}

TEST(TrainerMethods, DenseMaskedGradsWithAllOnesEqualsDense) {
  ExperimentConfig c = small_config(Method::kDenseMaskedGrads);
  const Dataset d = make_dataset(c.task);
  Model init = build_model(c.model, Rng::derive(c.seed, 10), c.method.msrs);
  RunOptions o;
  o.fixed_masks = init.phi_masks();
  for (auto& m : *o.fixed_masks) m = BinaryMask::ones(m.shape());
  RunResult masked = run_experiment(c, d, o);
  ExperimentConfig dc = c;
  dc.method.method = Method::kDense;
  RunResult dense = run_experiment(dc, d);
  ASSERT_EQ(masked.metrics.size(), dense.metrics.size());
  for (std::size_t i = 0; i < dense.metrics.size(); ++i)
    EXPECT_EQ(masked.metrics[i].loss, dense.metrics[i].loss);
}

TEST(TrainerMethods, DenseMaskedGradsAllZerosFreezesWeights) {
  ExperimentConfig c = small_config(Method::kDenseMaskedGrads);
  const Dataset d = make_dataset(c.task);
  Model init = build_model(c.model, Rng::derive(c.seed, 10), c.method.msrs);
  RunOptions o;
  o.fixed_masks = init.phi_masks();
  for (auto& m : *o.fixed_masks) m = BinaryMask::zeros(m.shape());
  RunResult r = run_experiment(c, d, o);
  for (auto pi : init.prunable_indices()) EXPECT_EQ(r.model.params[pi].value, init.params[pi].value);
}

}  // namespace
}  // namespace msrs
