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

#include "pmp/stage_two.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>

#include "pmp/backbone.hpp"
#include "pmp/errors.hpp"
#include "pmp/optim.hpp"
#include "pmp/rng.hpp"

namespace pmp {

namespace {

constexpr double kReluGain = 1.4142135623730951;

std::vector<double> pool_weights(std::span<const double> mask) {
  std::vector<double> w(mask.size(), 0.0);
  std::size_t hard = 0;
  for (double m : mask) hard += m >= 0.5;
  if (hard > 0) {
    for (std::size_t p = 0; p < mask.size(); ++p) {
      if (mask[p] >= 0.5) w[p] = 1.0 / static_cast<double>(hard);
    }
    return w;
  }
  const double total = std::accumulate(mask.begin(), mask.end(), 0.0);
  if (!(total > 0.0)) throw NumericError("mask_pool: mask is identically zero");
  for (std::size_t p = 0; p < mask.size(); ++p) w[p] = mask[p] / total;
  return w;
}

std::vector<double> mask_values(const Mask& m) {
  return std::vector<double>(m.bits.begin(), m.bits.end());
}

std::vector<std::string> simple_tokens(const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (!vocab.is_compound(i)) out.push_back(vocab.token(i));
  }
  return out;
}

Var cosine_logits(const Var& v, const Var& classes, const Var& scale) {
  return mul_scalar(matmul_nt(normalize_rows(v), normalize_rows(classes)), scale);
}

}  // namespace

FrozenEncoder::FrozenEncoder(const FrozenEncoderConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
  if (!(cfg.tau_init > 0.0)) throw ConfigError("stage-2 tau_init must be positive");
  Rng rng(mix_seed(seed, 0x5e11));
  conv1_ = Linear(store_, "clip.conv1", 27, cfg.hidden, rng, kReluGain);
  conv2_ = Linear(store_, "clip.conv2", 9 * cfg.hidden, cfg.hidden, rng, kReluGain);
  proj_ = Linear(store_, "clip.proj", cfg.hidden, cfg.embed_dim, rng);
  log_inv_tau_ = &store_.add("clip.log_inv_tau", {1, 1});
  (*log_inv_tau_)[0] = std::log(1.0 / cfg.tau_init);
}

Var FrozenEncoder::features(Tape& tape, const Image& image) const {
  const std::size_t h = image.height, w = image.width;
  Var x = tape.constant(image_matrix(image, false));
  x = relu(conv1_(tape, im2col3x3(x, h, w, 1)));
  x = relu(conv2_(tape, im2col3x3(x, h, w, 1)));
  return proj_(tape, x);
}

Tensor FrozenEncoder::features(const Image& image) const {
  Tape tape;
  return features(tape, image).value();
}

double FrozenEncoder::tau() const { return std::exp(-(*log_inv_tau_)[0]); }

void FrozenEncoder::freeze() {
  for (const std::string& n : store_.names()) store_.get(n).set_requires_grad(false);
  frozen_ = true;
}

FrozenEncoder pretrain_frozen_encoder(std::span<const Scene> scenes,
                                      const TextBank& bank,
                                      const FrozenEncoderConfig& enc_cfg,
                                      const PretrainConfig& cfg,
                                      std::ostream* log) {
  if (scenes.empty()) throw ConfigError("pretraining needs at least one scene");
  if (cfg.batch == 0) throw ConfigError("pretraining batch must be positive");
  FrozenEncoder enc(enc_cfg, cfg.seed);
  // Targets are simple tokens; every vocabulary entry competes as a class.
  const std::vector<std::string> targets = simple_tokens(bank.vocab);
  std::vector<std::string> all;
  for (const VocabEntry& e : bank.vocab.entries()) all.push_back(e.token);
  const Tensor cand_emb = class_embedding_matrix(all, bank);

  Adam adam({cfg.lr});
  Rng rng(mix_seed(cfg.seed, 0x9e7));
  std::vector<std::size_t> order(scenes.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t examples = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      std::size_t count = 0;
      for (std::size_t b = start; b < end; ++b) {
        for (const auto& tok : targets) count += scenes[order[b]].gt_masks.count(tok);
      }
      if (count == 0) continue;
      enc.params().zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const Scene& s = scenes[order[b]];
        Tape tape;
        Var feats = enc.features(tape, s.image);
        Var inv_tau = exp(tape.leaf(enc.log_inv_tau()));
        Var classes = tape.constant(cand_emb);
        std::vector<Var> pooled;
        std::vector<std::size_t> target;
        for (const auto& tok : targets) {
          auto it = s.gt_masks.find(tok);
          if (it == s.gt_masks.end()) continue;
          pooled.push_back(mask_pool(feats, mask_values(it->second)));
          target.push_back(bank.vocab.index(tok));
        }
        if (pooled.empty()) continue;
        Var logp = log_softmax_rows(cosine_logits(concat_rows(pooled), classes, inv_tau));
        Var nll = scale(sum(pick(logp, target)), -1.0);
        epoch_loss += nll.value().item();
        examples += target.size();
        tape.backward(scale(nll, 1.0 / static_cast<double>(count)));
      }
      adam.step(enc.params());
    }
    if (log) {
      *log << "pretrain epoch=" << epoch << " loss=" << std::setprecision(6)
           << epoch_loss / static_cast<double>(std::max<std::size_t>(examples, 1))
           << " tau=" << enc.tau() << "\n";
    }
  }
  enc.freeze();
  return enc;
}

double retrieval_accuracy(const FrozenEncoder& encoder,
                          std::span<const Scene> scenes, const TextBank& bank) {
  const std::vector<std::string> candidates = simple_tokens(bank.vocab);
  const Tensor cand_emb = class_embedding_matrix(candidates, bank);
  std::size_t total = 0, correct = 0;
  for (const Scene& s : scenes) {
    const Tensor feats = encoder.features(s.image);
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      if (candidates[k] == kBackgroundToken) continue;
      auto it = s.gt_masks.find(candidates[k]);
      if (it == s.gt_masks.end()) continue;
      const Tensor probs =
          classify_stage2(mask_pool(feats, mask_values(it->second)), cand_emb, 1.0);
      std::size_t best = 0;
      for (std::size_t j = 1; j < probs.cols(); ++j) {
        if (probs[j] > probs[best]) best = j;
      }
      correct += best == k;
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

Tensor mask_pool(const Tensor& features, std::span<const double> mask) {
  if (features.rows() != mask.size()) {
    throw DimensionError("mask_pool: " + std::to_string(mask.size()) +
                         " mask values for " + std::to_string(features.rows()) +
                         " feature rows");
  }
  const std::vector<double> w = pool_weights(mask);
  const std::size_t c = features.cols();
  Tensor out({1, c});
  for (std::size_t p = 0; p < w.size(); ++p) {
    if (w[p] == 0.0) continue;
    for (std::size_t j = 0; j < c; ++j) out[j] += w[p] * features.at(p, j);
  }
  return out;
}

Var mask_pool(const Var& features, std::span<const double> mask) {
  if (features.rows() != mask.size()) {
    throw DimensionError("mask_pool: mask does not match feature rows");
  }
  std::vector<double> w = pool_weights(mask);
  const std::size_t n = w.size();
  Tape& tape = *features.tape();
  return matmul(tape.constant(Tensor({1, n}, std::move(w))), features);
}

Tensor classify_stage2(const Tensor& v, const Tensor& class_emb, double tau) {
  if (!(tau > 0.0)) throw ConfigError("stage-2 temperature must be positive");
  Tape tape;
  Var logits = cosine_logits(tape.constant(v), tape.constant(class_emb),
                             tape.constant(Tensor::scalar(1.0 / tau)));
  return softmax_rows(logits).value();
}

Tensor ensemble(const Tensor& p, const Tensor& p_hat, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("ensemble weight must lie in [0, 1]");
  }
  const std::size_t k = p_hat.cols();
  if (p.rows() != p_hat.rows() || p.cols() != k + 1) {
    throw DimensionError("ensemble: stage-1 " + shape_string(p.shape()) +
                         " vs stage-2 " + shape_string(p_hat.shape()));
  }
  Tensor out(p.shape());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j <= k; ++j) {
      const double a = p.at(i, j);
      double v = a;
      if (j < k) {
        const double b = p_hat.at(i, j);
        v = (a == 0.0 && lambda > 0.0) || (b == 0.0 && lambda < 1.0)
                ? 0.0
                : std::pow(a, lambda) * std::pow(b, 1.0 - lambda);
      }
      out.at(i, j) = v;
      total += v;
    }
    if (total > 0.0) {
      for (std::size_t j = 0; j <= k; ++j) out.at(i, j) /= total;
    }
  }
  return out;
}

std::vector<std::size_t> semantic_map(const Tensor& masks, const Tensor& p_out) {
  if (masks.rows() != p_out.rows() || p_out.cols() < 2) {
    throw DimensionError("semantic_map: masks " + shape_string(masks.shape()) +
                         " vs class scores " + shape_string(p_out.shape()));
  }
  const std::size_t r = masks.rows(), pixels = masks.cols(), k = p_out.cols() - 1;
  std::vector<std::size_t> labels(pixels, 0);
  std::vector<double> score(k);
  for (std::size_t p = 0; p < pixels; ++p) {
    std::fill(score.begin(), score.end(), 0.0);
    for (std::size_t i = 0; i < r; ++i) {
      const double m = masks.at(i, p);
      for (std::size_t c = 0; c < k; ++c) score[c] += p_out.at(i, c) * m;
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (score[c] > score[best]) best = c;
    }
    labels[p] = best;
  }
  return labels;
}

}  // namespace pmp
