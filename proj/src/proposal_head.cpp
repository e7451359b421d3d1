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

#include "pmp/proposal_head.hpp"

#include <cmath>

#include "pmp/errors.hpp"

namespace pmp {

namespace {

const HeadConfig& checked(const HeadConfig& cfg) {
  if (!(cfg.tau_init > 0.0)) throw ConfigError("tau_init must be positive");
  return cfg;
}

}  // namespace

ProposalHead::ProposalHead(const HeadConfig& cfg, ParamStore& store, Rng& rng)
    : cfg_(checked(cfg)),
      hidden_(store, "head.hidden", cfg.channels, cfg.channels, rng, 1.4142135623730951),
      out_(store, "head.out", cfg.channels, cfg.embed_dim, rng) {
  no_object_ = &store.add_normal("head.no_object", {1, cfg.embed_dim}, rng, 1.0);
  logit_scale_ = &store.add("head.logit_scale", {1, 1});
  (*logit_scale_)[0] = std::log(1.0 / cfg.tau_init);
}

double ProposalHead::tau() const { return std::exp(-(*logit_scale_)[0]); }

Var ProposalHead::mask_embedding(Tape& tape, const Var& queries) const {
  return out_(tape, relu(hidden_(tape, queries)));
}

Prediction ProposalHead::predict(Tape& tape, const Var& queries,
                                 const Var& pixel_embed,
                                 const Var& class_emb) const {
  Prediction p;
  p.z = mask_embedding(tape, queries);
  p.mask_logits = mask_logits_from_embedding(p.z, pixel_embed);
  if (class_emb.valid()) {
    p.class_logits = stage1_logits(p.z, class_emb, tape.leaf(*no_object_),
                                   exp(tape.leaf(*logit_scale_)));
  }
  return p;
}

Var mask_logits_from_embedding(const Var& z, const Var& pixel_embed) {
  if (z.cols() != pixel_embed.cols()) {
    throw DimensionError("mask embedding width " + std::to_string(z.cols()) +
                         " does not match pixel embedding width " +
                         std::to_string(pixel_embed.cols()));
  }
  return matmul_nt(z, pixel_embed);
}

Var mask_from_embedding(const Var& z, const Var& pixel_embed) {
  return sigmoid(mask_logits_from_embedding(z, pixel_embed));
}

Var stage1_logits(const Var& z, const Var& class_emb, const Var& phi,
                  const Var& scale) {
  std::vector<Var> rows = {class_emb, phi};
  Var keys = normalize_rows(concat_rows(rows));
  return mul_scalar(matmul_nt(normalize_rows(z), keys), scale);
}

Tensor classify_stage1(const Tensor& z, const Tensor& class_emb,
                       const Tensor& phi, double tau) {
  if (!(tau > 0.0)) throw ConfigError("stage-1 temperature must be positive");
  Tape tape;
  Var logits = stage1_logits(tape.constant(z), tape.constant(class_emb),
                             tape.constant(phi), tape.constant(Tensor::scalar(1.0 / tau)));
  return softmax_rows(logits).value();
}

std::vector<std::uint8_t> attention_mask_next(const Tensor& mask_probs,
                                              MapSize full, MapSize level,
                                              double threshold) {
  if (mask_probs.cols() != full.area()) {
    throw DimensionError("attention_mask_next: masks do not cover the full grid");
  }
  const std::size_t r = mask_probs.rows();
  std::vector<std::uint8_t> keep(r * level.area());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t y = 0; y < level.height; ++y) {
      const std::size_t sy = y * full.height / level.height;
      for (std::size_t x = 0; x < level.width; ++x) {
        const std::size_t sx = x * full.width / level.width;
        keep[i * level.area() + y * level.width + x] =
            mask_probs.at(i, sy * full.width + sx) >= threshold;
      }
    }
  }
  return keep;
}

}  // namespace pmp
