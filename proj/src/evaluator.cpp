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

#include "pmp/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "pmp/errors.hpp"
#include "pmp/rng.hpp"

namespace pmp {

namespace {

Tensor sigmoid_of(const Tensor& logits) {
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  return out;
}

std::vector<std::string> absent_tokens(const Scene& scene, const Vocabulary& vocab,
                                       const GeneratorConfig& data) {
  std::set<std::string> present = applicable_tokens(scene.objects, data);
  for (const auto& [tok, m] : scene.gt_masks) present.insert(tok);
  std::vector<std::string> out;
  for (const VocabEntry& e : vocab.entries()) {
    if (!present.count(e.token)) out.push_back(e.token);
  }
  return out;
}

struct FamilyStats {
  MiouAccumulator all, targets;
  double recall_sum = 0.0, target_recall_sum = 0.0, proposals = 0.0;
  std::size_t recall_n = 0, target_recall_n = 0, prompts = 0;

  PromptEval finish() const {
    PromptEval e;
    e.miou = all.mean();
    e.per_class = all.per_class();
    e.target_iou = targets.mean();
    e.recall = recall_n ? recall_sum / static_cast<double>(recall_n) : 0.0;
    e.target_recall =
        target_recall_n ? target_recall_sum / static_cast<double>(target_recall_n) : 0.0;
    e.proposals = prompts ? proposals / static_cast<double>(prompts) : 0.0;
    e.prompts = prompts;
    return e;
  }
};

}  // namespace

double iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) {
    throw DimensionError("iou: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + " pixels");
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

double iou(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionError("iou: masks of different sizes");
  }
  return iou(std::span(a.bits), std::span(b.bits));
}

void MiouAccumulator::add(std::span<const std::size_t> labels,
                          std::span<const std::string> classes,
                          const std::map<std::string, Mask>& gt) {
  for (std::size_t k = 0; k < classes.size(); ++k) {
    auto it = gt.find(classes[k]);
    const Mask* g = it == gt.end() ? nullptr : &it->second;
    if (g && g->bits.size() != labels.size()) {
      throw DimensionError("miou: label map and mask sizes differ");
    }
    Counts& c = counts_[classes[k]];
    for (std::size_t p = 0; p < labels.size(); ++p) {
      const bool pred = labels[p] == k;
      const bool truth = g && g->bits[p];
      c.inter += pred && truth;
      c.uni += pred || truth;
      c.gt += truth;
    }
  }
}

std::map<std::string, double> MiouAccumulator::per_class() const {
  std::map<std::string, double> out;
  for (const auto& [tok, c] : counts_) {
    if (c.gt == 0) continue;
    out[tok] = static_cast<double>(c.inter) / static_cast<double>(c.uni);
  }
  return out;
}

double MiouAccumulator::mean() const {
  const auto pc = per_class();
  if (pc.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [tok, v] : pc) s += v;
  return s / static_cast<double>(pc.size());
}

MiouResult miou(std::span<const std::size_t> labels,
                std::span<const std::string> classes,
                const std::map<std::string, Mask>& gt) {
  MiouResult r;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    auto it = gt.find(classes[k]);
    std::vector<std::uint8_t> pred(labels.size()), truth(labels.size(), 0);
    for (std::size_t p = 0; p < labels.size(); ++p) pred[p] = labels[p] == k;
    if (it != gt.end()) {
      if (it->second.bits.size() != labels.size()) {
        throw DimensionError("miou: label map and mask sizes differ");
      }
      truth = it->second.bits;
    }
    const bool any = std::find(pred.begin(), pred.end(), 1) != pred.end() ||
                     std::find(truth.begin(), truth.end(), 1) != truth.end();
    if (any) r.per_class[classes[k]] = iou(pred, truth);
  }
  double s = 0.0;
  for (const auto& [tok, v] : r.per_class) s += v;
  r.mean = r.per_class.empty() ? 0.0 : s / static_cast<double>(r.per_class.size());
  return r;
}

double proposal_recall(const Tensor& proposals, std::span<const Mask> gts) {
  if (gts.empty()) return 0.0;
  const std::size_t r = proposals.rows(), pixels = proposals.cols();
  std::vector<std::vector<std::uint8_t>> hard(r, std::vector<std::uint8_t>(pixels));
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t p = 0; p < pixels; ++p) hard[i][p] = proposals.at(i, p) >= 0.5;
  }
  double total = 0.0;
  for (const Mask& g : gts) {
    double best = 0.0;
    for (const auto& h : hard) best = std::max(best, iou(h, g.bits));
    total += best;
  }
  return total / static_cast<double>(gts.size());
}

Segmentation segment(const Model& model, const FrozenEncoder& encoder,
                     const Image& image, std::span<const std::string> prompt,
                     const TextBank& bank, double lambda) {
  if (prompt.empty()) throw ConfigError("segmentation needs at least one prompt token");
  Tape tape;
  const ModelOutput out = model.forward(tape, image, prompt, bank);
  const Prediction& last = out.decoded.predictions.back();
  Segmentation s;
  s.masks = sigmoid_of(last.mask_logits.value());
  s.stage1 = softmax_rows(tape.constant(last.class_logits.value())).value();
  const Tensor feats = encoder.features(image);
  const std::size_t r = s.masks.rows();
  Tensor pooled({r, feats.cols()});
  for (std::size_t i = 0; i < r; ++i) {
    const Tensor v = mask_pool(feats, s.masks.data().subspan(i * s.masks.cols(), s.masks.cols()));
    std::copy(v.data().begin(), v.data().end(), pooled.data().begin() + i * feats.cols());
  }
  s.stage2 = classify_stage2(pooled, class_embedding_matrix(prompt, bank), encoder.tau());
  s.combined = ensemble(s.stage1, s.stage2, lambda);
  s.labels = semantic_map(s.masks, s.combined);
  return s;
}

EvalResult evaluate(const Model& model, const FrozenEncoder& encoder,
                    std::span<const Scene> scenes, const TextBank& bank,
                    const GeneratorConfig& data, const EvalConfig& cfg) {
  FamilyStats simple, compound;
  for (const Scene& scene : scenes) {
    const std::vector<std::string> absent = absent_tokens(scene, bank.vocab, data);
    for (std::size_t pi = 0; pi < scene.prompts.size(); ++pi) {
      const PromptSet& labeling = scene.prompts[pi];
      const bool is_compound = labeling.kind == "compound";
      FamilyStats& stats = is_compound ? compound : simple;
      Rng rng(mix_seed(cfg.seed, (static_cast<std::uint64_t>(scene.split) << 40) +
                                     scene.index * 64 + pi));
      std::vector<std::string> negatives = absent;
      rng.shuffle(negatives);
      negatives.resize(std::min(cfg.negatives, negatives.size()));
      std::vector<std::string> prompt = labeling.tokens;
      prompt.insert(prompt.end(), negatives.begin(), negatives.end());
      rng.shuffle(prompt);

      const Segmentation seg = segment(model, encoder, scene.image, prompt, bank, cfg.lambda);
      std::map<std::string, Mask> gt;
      std::vector<Mask> gts, targets;
      for (const std::string& t : labeling.tokens) {
        const Mask& m = scene.gt_masks.at(t);
        gt[t] = m;
        gts.push_back(m);
        if (is_compound && bank.vocab.is_compound(bank.vocab.index(t))) {
          targets.push_back(m);
        }
      }
      stats.all.add(seg.labels, prompt, gt);
      stats.recall_sum += proposal_recall(seg.masks, gts) * static_cast<double>(gts.size());
      stats.recall_n += gts.size();
      if (!targets.empty()) {
        std::map<std::string, Mask> target_gt;
        for (const auto& [tok, m] : gt) {
          if (bank.vocab.is_compound(bank.vocab.index(tok))) target_gt[tok] = m;
        }
        std::vector<std::string> target_classes;
        for (const auto& [tok, m] : target_gt) target_classes.push_back(tok);
        // Restrict the label map to the compound classes for their own IoU.
        std::vector<std::size_t> remapped(seg.labels.size(), target_classes.size());
        for (std::size_t p = 0; p < seg.labels.size(); ++p) {
          const auto& tok = prompt[seg.labels[p]];
          auto it = std::find(target_classes.begin(), target_classes.end(), tok);
          if (it != target_classes.end()) {
            remapped[p] = static_cast<std::size_t>(it - target_classes.begin());
          }
        }
        stats.targets.add(remapped, target_classes, target_gt);
        stats.target_recall_sum +=
            proposal_recall(seg.masks, targets) * static_cast<double>(targets.size());
        stats.target_recall_n += targets.size();
      }
      stats.proposals += static_cast<double>(seg.masks.rows());
      ++stats.prompts;
    }
  }
  return {simple.finish(), compound.finish()};
}

void write_ablation_report(std::ostream& out, std::span<const AblationRow> rows) {
  out << "strategy\tproposals_simple\tproposals_compound\tsimple_miou\tsimple_recall"
         "\tcompound_miou\tcompound_recall\ttarget_iou\ttarget_recall\n";
  char buf[512];
  for (const AblationRow& r : rows) {
    const auto& s = r.result.simple;
    const auto& c = r.result.compound;
    std::snprintf(buf, sizeof(buf), "%s\t%.2f\t%.2f\t%.2f\t%.2f\t%.2f\t%.2f\t%.2f\t%.2f\n",
                  r.strategy.c_str(), s.proposals, c.proposals, 100 * s.miou,
                  100 * s.recall, 100 * c.miou, 100 * c.recall, 100 * c.target_iou,
                  100 * c.target_recall);
    out << buf;
  }
}

}  // namespace pmp
