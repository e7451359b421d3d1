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

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pmp/autodiff.hpp"
#include "pmp/model.hpp"
#include "pmp/proposal_head.hpp"
#include "pmp/synth_scenes.hpp"
#include "pmp/text_bank.hpp"

namespace pmp {

struct MatchCostConfig {
  double cls = 2.0;
  double ce = 5.0;
  double dice = 5.0;
  void validate() const;
};

// 1 - 2 sum(p g) / (sum p^2 + sum g^2 + eps), eps = 1e-6, one value per row
// of `probs` (R x P) against the row of `gt` (R x P).
Var dice_loss_rows(const Var& probs, const Tensor& gt);
Var dice_loss(const Var& probs, const Tensor& gt);
// Mean per-pixel binary cross-entropy on logits.
Var bce_loss(const Var& logits, const Tensor& gt);

struct GtTarget {
  std::vector<double> mask;  // one value per pixel, 0 or 1
  std::size_t cls = 0;       // index into the prompt classes
};

// cost[i][j] = w_cls (1 - p_i[cls_j]) + w_ce bce(mask_i, gt_j)
//            + w_dice dice(mask_i, gt_j).
// mask_logits is R x P, class_probs is R x (K + 1). ContractError when a
// target class is not one of the K prompt classes.
Tensor matching_cost(const Tensor& mask_logits, const Tensor& class_probs,
                     std::span<const GtTarget> gts, const MatchCostConfig& cfg);

// Minimum-cost injective map from the G columns to the N rows of `cost`
// (result[j] = row of column j). Among assignments whose total is within
// 1e-9 (relative) of the optimum, the lexicographically smallest is chosen.
// ContractError when N < G.
std::vector<std::size_t> hungarian(const Tensor& cost);
// Total of an assignment, summed in column order.
double assignment_cost(const Tensor& cost, std::span<const std::size_t> assignment);

struct LossConfig {
  MatchCostConfig weights;
  // Weight of unmatched (no-object) proposals in the classification loss.
  double no_object_weight = 0.1;
  // Supervise every prediction point, or only the last.
  bool aux = true;
};

struct LossParts {
  Var total;
  double cls = 0.0;
  double ce = 0.0;
  double dice = 0.0;
};

// Mean over the supervised prediction points of
//   w_cls CE(class) + w_ce mean bce + w_dice mean dice
// after Hungarian matching at each point. Unmatched proposals target the
// no-object class. With no targets only the classification term remains.
LossParts total_loss(std::span<const Prediction> predictions,
                     std::span<const GtTarget> gts, const LossConfig& cfg);

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  // Negative tokens added to every training prompt.
  std::size_t negatives = 4;
  // Chance of training on a compound labeling when the scene has one.
  double compound_prob = 0.5;
  LossConfig loss;
  void validate() const;
};

struct TrainingSample {
  std::vector<std::string> prompt;
  std::vector<GtTarget> targets;
};

// Picks a labeling of the scene (simple, or one of its compound labelings),
// adds negatives drawn from `pool` tokens with no region in the scene, and
// shuffles. Targets follow the prompt order.
TrainingSample make_training_sample(const Scene& scene,
                                    std::span<const std::string> pool,
                                    const TrainConfig& cfg, Rng& rng);

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0, cls = 0.0, ce = 0.0, dice = 0.0;
};

std::string format_metrics(const EpochMetrics& m);

using EpochCallback = std::function<void(const EpochMetrics&, const Model&)>;

// Trains in place. Prompts use `pool` (the training vocabulary) for
// negatives. `on_epoch` runs after each completed epoch, before the next one
// can diverge. DivergenceError on a non-finite loss.
std::vector<EpochMetrics> train(Model& model, std::span<const Scene> scenes,
                                const TextBank& bank,
                                std::span<const std::string> pool,
                                const TrainConfig& cfg,
                                const EpochCallback& on_epoch = {},
                                std::ostream* log = nullptr);

}  // namespace pmp
