// Copyright 2026 The PMP Authors. All Rights Reserved.
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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "pmp/errors.hpp"
#include "pmp/optim.hpp"
#include "pmp/trainer.hpp"
#include "assignment_oracle.hpp"
#include "test_util.hpp"

namespace pmp {
namespace {

double dice_of(const Tensor& probs, const Tensor& gt) {
  Tape tape;
  return dice_loss(tape.constant(probs), gt).value().item();
}

double bce_of(const Tensor& logits, const Tensor& gt) {
  Tape tape;
  return bce_loss(tape.constant(logits), gt).value().item();
}

TEST(DiceLoss, PerfectOverlapIsNearZero) {
  const Tensor gt = Tensor::matrix(1, 4, {1, 0, 1, 1});
  EXPECT_LE(dice_of(gt, gt), 1e-5);
}

TEST(DiceLoss, DisjointIsNearOne) {
  EXPECT_NEAR(dice_of(Tensor::matrix(1, 4, {1, 1, 0, 0}), Tensor::matrix(1, 4, {0, 0, 1, 1})),
              1.0, 1e-12);
}

TEST(DiceLoss, HalfProbabilities) {
  const double got =
      dice_of(Tensor({1, 4}, 0.5), Tensor::matrix(1, 4, {1, 0, 0, 0}));
  EXPECT_NEAR(got, 1.0 - 1.0 / (4 * 0.25 + 1 + 1e-6), 1e-12);
  EXPECT_NEAR(got, 0.5, 1e-6);
}

TEST(DiceLoss, ShapeMismatch) {
  EXPECT_THROW(dice_of(Tensor({1, 4}), Tensor({1, 3})), DimensionError);
}

TEST(BceLoss, Examples) {
  EXPECT_NEAR(bce_of(Tensor({1, 3}), Tensor({1, 3}, 1.0)), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce_of(Tensor({1, 1}, 40.0), Tensor({1, 1}, 1.0)), std::exp(-40.0), 1e-25);
  EXPECT_NEAR(bce_of(Tensor({1, 1}, -40.0), Tensor({1, 1}, 1.0)), 40.0, 1e-12);
  EXPECT_THROW(bce_of(Tensor({1, 2}), Tensor({2, 1})), DimensionError);
}

TEST(MatchingCost, UniformClassRow) {
  const Tensor logits({1, 3});
  const Tensor probs({1, 4}, 0.25);
  const std::vector<GtTarget> gts = {{{1, 0, 0}, 2}};
  const Tensor c = matching_cost(logits, probs, gts, {});
  const double dice = 1.0 - 2.0 * 0.5 / (3 * 0.25 + 1 + 1e-6);
  EXPECT_NEAR(c[0], 2.0 * 0.75 + 5.0 * std::log(2.0) + 5.0 * dice, 1e-12);
}

TEST(MatchingCost, MatchesScalarRecomputation) {
  Rng rng(11);
  const Tensor logits = testing::random_matrix(rng, 3, 5, 2.0);
  Tensor probs({3, 4});
  for (double& v : probs.data()) v = rng.uniform();
  std::vector<GtTarget> gts(2);
  gts[0] = {{1, 0, 1, 1, 0}, 1};
  gts[1] = {{0, 0, 0, 1, 1}, 2};
  const MatchCostConfig w{1.5, 4.0, 3.0};
  const Tensor c = matching_cost(logits, probs, gts, w);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double bce = 0.0, inter = 0.0, p2 = 0.0, g2 = 0.0;
      for (std::size_t p = 0; p < 5; ++p) {
        const double x = logits.at(i, p), y = gts[j].mask[p];
        bce += std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * y;
        const double s = 1.0 / (1.0 + std::exp(-x));
        inter += s * y;
        p2 += s * s;
        g2 += y * y;
      }
      const double dice = 1.0 - 2.0 * inter / (p2 + g2 + 1e-6);
      const double want = 1.5 * (1.0 - probs.at(i, gts[j].cls)) + 4.0 * bce / 5.0 + 3.0 * dice;
      EXPECT_NEAR(c.at(i, j), want, 1e-12);
    }
  }
}

TEST(MatchingCost, ClassOutsidePromptIsContractError) {
  const std::vector<GtTarget> gts = {{{1, 0}, 3}};
  EXPECT_THROW(matching_cost(Tensor({1, 2}), Tensor({1, 4}), gts, {}), ContractError);
}

TEST(Hungarian, TwoByTwo) {
  const auto a = hungarian(Tensor::matrix(2, 2, {1, 2, 3, 0}));
  EXPECT_EQ(a, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(assignment_cost(Tensor::matrix(2, 2, {1, 2, 3, 0}), a), 1.0);
}

TEST(Hungarian, DiagonalDominant) {
  Tensor c({5, 5}, 10.0);
  for (std::size_t i = 0; i < 5; ++i) c.at(i, i) = 0.0;
  EXPECT_EQ(hungarian(c), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Hungarian, MoreColumnsThanRowsIsContractError) {
  EXPECT_THROW(hungarian(Tensor({2, 3})), ContractError);
}

TEST(Hungarian, EqualsExhaustiveSearch) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(6);
    const std::size_t g = 1 + rng.index(n);
    Tensor c({n, g});
    // Small integer costs make ties common.
    for (double& v : c.data()) v = trial % 2 ? rng.normal() : static_cast<double>(rng.index(4));
    const auto got = hungarian(c);
    const auto want = testing::brute_force_assignment(c);
    EXPECT_EQ(assignment_cost(c, got), assignment_cost(c, want)) << "trial " << trial;
    EXPECT_EQ(got, want) << "trial " << trial;
  }
}

struct LossRig {
  Tape tape;
  std::vector<Prediction> preds;
  std::vector<GtTarget> gts;

  LossRig(std::size_t points, std::uint64_t seed, bool identical = false) {
    Rng rng(seed);
    const Tensor m0 = testing::random_matrix(rng, 4, 6, 2.0);
    const Tensor c0 = testing::random_matrix(rng, 4, 4);
    for (std::size_t i = 0; i < points; ++i) {
      Prediction p;
      p.mask_logits = tape.constant(identical ? m0 : testing::random_matrix(rng, 4, 6, 2.0));
      p.class_logits = tape.constant(identical ? c0 : testing::random_matrix(rng, 4, 4));
      preds.push_back(p);
    }
    gts = {{{1, 1, 0, 0, 0, 0}, 0}, {{0, 0, 1, 0, 1, 1}, 2}};
  }
};

TEST(TotalLoss, AuxOffUsesOnlyLastPoint) {
  LossRig rig(4, 13);
  LossConfig off;
  off.aux = false;
  const double all_off = total_loss(rig.preds, rig.gts, off).total.value().item();
  const double last = total_loss(std::span(rig.preds).last(1), rig.gts, {}).total.value().item();
  EXPECT_EQ(all_off, last);
}

TEST(TotalLoss, IdenticalPointsEqualOnePoint) {
  LossRig rig(3, 14, true);
  const double three = total_loss(rig.preds, rig.gts, {}).total.value().item();
  const double one = total_loss(std::span(rig.preds).first(1), rig.gts, {}).total.value().item();
  EXPECT_NEAR(three, one, 1e-14);
}

TEST(TotalLoss, NoTargetsIsNoObjectCrossEntropy) {
  LossRig rig(1, 15);
  const LossParts parts = total_loss(rig.preds, {}, {});
  const Tensor& logits = rig.preds[0].class_logits.value();
  double want = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double mx = -INFINITY, s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) mx = std::max(mx, logits.at(i, k));
    for (std::size_t k = 0; k < 4; ++k) s += std::exp(logits.at(i, k) - mx);
    want += -(logits.at(i, 3) - mx - std::log(s));
  }
  EXPECT_NEAR(parts.total.value().item(), 2.0 * want / 4.0, 1e-12);
  EXPECT_EQ(parts.ce, 0.0);
  EXPECT_EQ(parts.dice, 0.0);
}

TEST(TotalLoss, InvariantToTargetOrderAndNonnegative) {
  for (std::uint64_t seed = 20; seed < 30; ++seed) {
    LossRig rig(3, seed);
    const LossParts a = total_loss(rig.preds, rig.gts, {});
    std::vector<GtTarget> rev(rig.gts.rbegin(), rig.gts.rend());
    const LossParts b = total_loss(rig.preds, rev, {});
    EXPECT_NEAR(a.total.value().item(), b.total.value().item(), 1e-12);
    EXPECT_GE(a.cls, 0.0);
    EXPECT_GE(a.ce, 0.0);
    EXPECT_GE(a.dice, 0.0);
    EXPECT_LE(a.dice, 1.0);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore store;
  Tensor& w = store.add("w", {1, 3});
  w.set_requires_grad(true);
  w.grad()[0] = 2.0;
  w.grad()[1] = -0.5;
  w.grad()[2] = 0.0;
  Adam adam(AdamConfig{0.1});
  adam.step(store);
  // Bias correction makes the first step lr * g / (|g| + eps).
  EXPECT_NEAR(w[0], -0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(w[1], 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_EQ(w[2], 0.0);
}

TEST(Adam, SkipsFrozenTensors) {
  ParamStore store;
  Tensor& w = store.add("w", {1, 1});
  Adam adam;
  adam.step(store);
  EXPECT_EQ(w[0], 0.0);
}

class TrainerFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    gen_ = default_generator_config();
    gen_.image_size = 16;
    for (std::size_t i = 0; i < 12; ++i) scenes_.push_back(generate_scene(gen_, Split::kTrain, i));
    model_cfg_.decoder.queries = 6;
    model_cfg_.decoder.channels = 8;
    model_cfg_.decoder.embed_dim = 8;
    model_cfg_.decoder.rounds = 1;
    model_cfg_.decoder.ffn_hidden = 16;
    model_cfg_.sync_widths();
    bank_ = build_vocab(vocabulary_entries(gen_), 8, gen_.seed, compositions(gen_));
    pool_ = training_tokens(gen_);
  }

  GeneratorConfig gen_;
  std::vector<Scene> scenes_;
  ModelConfig model_cfg_;
  TextBank bank_;
  std::vector<std::string> pool_;
};

TEST_F(TrainerFixture, SamplesUseTrainingTokensOnly) {
  TrainConfig cfg;
  cfg.compound_prob = 1.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const Scene& s : scenes_) {
      Rng rng(seed);
      const TrainingSample t = make_training_sample(s, pool_, cfg, rng);
      std::size_t with_mask = 0;
      for (const auto& tok : t.prompt) {
        EXPECT_NE(std::find(pool_.begin(), pool_.end(), tok), pool_.end()) << tok;
        with_mask += s.gt_masks.count(tok);
      }
      EXPECT_EQ(t.targets.size(), with_mask);
      EXPECT_LE(t.prompt.size() - with_mask, cfg.negatives);
      for (const GtTarget& g : t.targets) {
        const Mask& m = s.gt_masks.at(t.prompt[g.cls]);
        EXPECT_TRUE(std::equal(m.bits.begin(), m.bits.end(), g.mask.begin()));
      }
    }
  }
}

TEST_F(TrainerFixture, DeterministicLossSequence) {
  TrainConfig cfg;
  cfg.epochs = 2;
  Model a(model_cfg_), b(model_cfg_);
  const auto ma = train(a, scenes_, bank_, pool_, cfg);
  const auto mb = train(b, scenes_, bank_, pool_, cfg);
  ASSERT_EQ(ma.size(), 2u);
  for (std::size_t e = 0; e < 2; ++e) EXPECT_EQ(format_metrics(ma[e]), format_metrics(mb[e]));
  EXPECT_EQ(a.params().checksum(), b.params().checksum());
}

TEST_F(TrainerFixture, MetricsLineFormat) {
  EpochMetrics m{3, 1.5, 0.25, 0.125, 0.0625};
  EXPECT_EQ(format_metrics(m), "epoch=3 loss=1.500000 cls=0.250000 ce=0.125000 dice=0.062500");
}

TEST_F(TrainerFixture, SmallStepDecreasesSampleLoss) {
  TrainConfig cfg;
  cfg.lr = 1e-4;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    Model model(model_cfg_);
    Rng rng(mix_seed(99, i));
    const TrainingSample t = make_training_sample(scenes_[i], pool_, cfg, rng);
    auto loss = [&](bool backward) {
      Tape tape;
      const ModelOutput out = model.forward(tape, scenes_[i].image, t.prompt, bank_);
      const LossParts parts = total_loss(out.decoded.predictions, t.targets, cfg.loss);
      if (backward) tape.backward(parts.total);
      return parts.total.value().item();
    };
    model.params().zero_grad();
    const double before = loss(true);
    Adam adam(AdamConfig{cfg.lr});
    adam.step(model.params());
    failures += !(loss(false) < before);
  }
  EXPECT_EQ(failures, 0u);
}

TEST_F(TrainerFixture, ConfigValidation) {
  TrainConfig cfg;
  cfg.batch = 0;
  Model model(model_cfg_);
  EXPECT_THROW(train(model, scenes_, bank_, pool_, cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.loss.weights.ce = -1.0;
  EXPECT_THROW(train(model, scenes_, bank_, pool_, cfg), ConfigError);
}

TEST_F(TrainerFixture, NonFiniteInputIsDivergence) {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 1e300;
  Model model(model_cfg_);
  std::size_t completed = 0;
  EXPECT_THROW(train(model, scenes_, bank_, pool_, cfg,
                     [&](const EpochMetrics&, const Model&) { ++completed; }),
               DivergenceError);
}

}  // namespace
}  // namespace pmp
