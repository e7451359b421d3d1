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
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pmp/image.hpp"
#include "pmp/model.hpp"
#include "pmp/stage_two.hpp"
#include "pmp/synth_scenes.hpp"
#include "pmp/tensor.hpp"
#include "pmp/text_bank.hpp"

namespace pmp {

// |a & b| / |a | b|; 1 when both are empty. DimensionError on size mismatch.
double iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
double iou(const Mask& a, const Mask& b);

// Per-class intersection and union counts summed over many label maps.
class MiouAccumulator {
 public:
  // `labels` holds an index into `classes` per pixel. A class without an
  // entry in `gt` has an empty ground truth for this map.
  void add(std::span<const std::size_t> labels, std::span<const std::string> classes,
           const std::map<std::string, Mask>& gt);
  // IoU of every class with at least one ground-truth pixel.
  std::map<std::string, double> per_class() const;
  // Mean of per_class(); 0 when no class has ground truth.
  double mean() const;

 private:
  struct Counts {
    std::size_t inter = 0, uni = 0, gt = 0;
  };
  std::map<std::string, Counts> counts_;
};

// Single label map: per-class IoU and their mean over classes present in
// the prediction or the ground truth.
struct MiouResult {
  std::map<std::string, double> per_class;
  double mean = 0.0;
};
MiouResult miou(std::span<const std::size_t> labels,
                std::span<const std::string> classes,
                const std::map<std::string, Mask>& gt);

// Mean over ground-truth masks of the best IoU of any proposal binarized at
// 0.5. `proposals` is R x P probabilities. 0 for an empty ground-truth list.
double proposal_recall(const Tensor& proposals, std::span<const Mask> gts);

struct EvalConfig {
  double lambda = 0.65;
  std::size_t negatives = 4;
  std::uint64_t seed = 5;
};

struct PromptEval {
  double miou = 0.0;         // over every class in the prompts
  double recall = 0.0;       // over every ground-truth mask in the prompts
  double target_iou = 0.0;   // compound classes only (compound prompts)
  double target_recall = 0.0;
  double proposals = 0.0;    // mean number of proposals per prompt
  std::size_t prompts = 0;
  std::map<std::string, double> per_class;
};

struct EvalResult {
  PromptEval simple;
  PromptEval compound;
};

// Runs both prompt families over `scenes`: each scene's simple labeling and
// each of its compound labelings, extended with negatives drawn from the
// vocabulary tokens that have no region in the scene.
EvalResult evaluate(const Model& model, const FrozenEncoder& encoder,
                    std::span<const Scene> scenes, const TextBank& bank,
                    const GeneratorConfig& data, const EvalConfig& cfg);

// Output of the two-stage pipeline for one image and prompt.
struct Segmentation {
  Tensor masks;       // R x P proposal probabilities
  Tensor stage1;      // R x (K + 1)
  Tensor stage2;      // R x K
  Tensor combined;    // R x (K + 1)
  std::vector<std::size_t> labels;  // index into the prompt per pixel
};
Segmentation segment(const Model& model, const FrozenEncoder& encoder,
                     const Image& image, std::span<const std::string> prompt,
                     const TextBank& bank, double lambda);

struct AblationRow {
  std::string strategy;
  EvalResult result;
};
// Tab-separated, one header row then one row per strategy.
void write_ablation_report(std::ostream& out, std::span<const AblationRow> rows);

}  // namespace pmp
