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
#include <vector>

#include "pmp/autodiff.hpp"
#include "pmp/backbone.hpp"
#include "pmp/params.hpp"

namespace pmp {

struct HeadConfig {
  std::size_t channels = 32;
  std::size_t embed_dim = 32;
  // Initial stage-1 temperature; stored as log(1 / tau).
  double tau_init = 0.07;
};

// One prediction point: mask embeddings, mask logits over the full-resolution
// pixel grid, and (when classes are given) stage-1 logits over K classes plus
// the trailing no-object column.
struct Prediction {
  Var z;
  Var mask_logits;
  Var class_logits;
};

class ProposalHead {
 public:
  ProposalHead(const HeadConfig& cfg, ParamStore& store, Rng& rng);

  // Query state (R x C) -> mask embeddings z (R x N_c).
  Var mask_embedding(Tape& tape, const Var& queries) const;
  // class_emb is K x N_c; pass an invalid Var to skip classification.
  Prediction predict(Tape& tape, const Var& queries, const Var& pixel_embed,
                     const Var& class_emb) const;

  Tensor& no_object() const { return *no_object_; }
  Tensor& logit_scale() const { return *logit_scale_; }
  double tau() const;

 private:
  HeadConfig cfg_;
  Linear hidden_, out_;
  Tensor* no_object_ = nullptr;
  Tensor* logit_scale_ = nullptr;
};

// R x (H*W) logits <z_i, pixel_embed(p)>; sigmoid gives mask probabilities.
Var mask_logits_from_embedding(const Var& z, const Var& pixel_embed);
Var mask_from_embedding(const Var& z, const Var& pixel_embed);

// cos(z_i, t_k) * scale for the K classes and the no-object embedding phi.
Var stage1_logits(const Var& z, const Var& class_emb, const Var& phi,
                  const Var& scale);

// Softmax over [cos(z_i, t_1..t_K), cos(z_i, phi)] / tau. NumericError for a
// zero z row, ConfigError for tau <= 0.
Tensor classify_stage1(const Tensor& z, const Tensor& class_emb,
                       const Tensor& phi, double tau);

// Nearest-neighbor resample of R x (full) mask probabilities to the level
// grid, kept where probability >= threshold.
std::vector<std::uint8_t> attention_mask_next(const Tensor& mask_probs,
                                              MapSize full, MapSize level,
                                              double threshold = 0.5);

}  // namespace pmp
