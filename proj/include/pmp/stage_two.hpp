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
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pmp/autodiff.hpp"
#include "pmp/image.hpp"
#include "pmp/params.hpp"
#include "pmp/synth_scenes.hpp"
#include "pmp/text_bank.hpp"

namespace pmp {

struct FrozenEncoderConfig {
  std::size_t hidden = 16;
  std::size_t embed_dim = 32;
  double tau_init = 0.07;
};

// Full-resolution image encoder: two 3x3 convolutions with relu and a 1x1
// projection to the text embedding width, plus a log-parameterized
// temperature. Parameters stop receiving gradients once frozen.
class FrozenEncoder {
 public:
  FrozenEncoder(const FrozenEncoderConfig& cfg, std::uint64_t seed);

  Var features(Tape& tape, const Image& image) const;  // (H*W) x N_c
  Tensor features(const Image& image) const;

  double tau() const;
  Tensor& log_inv_tau() const { return *log_inv_tau_; }
  void freeze();
  bool frozen() const { return frozen_; }
  const FrozenEncoderConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  std::uint64_t checksum() const { return store_.checksum(); }

 private:
  FrozenEncoderConfig cfg_;
  ParamStore store_;
  Linear conv1_, conv2_, proj_;
  Tensor* log_inv_tau_ = nullptr;
  bool frozen_ = false;
};

struct PretrainConfig {
  std::size_t epochs = 3;
  std::size_t batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 7;
};

// Contrastive pretraining on (image, ground-truth mask, token) triples for
// every simple token of every scene: the mask-pooled feature is classified
// against every vocabulary embedding by cosine / tau. Returns a
// frozen encoder. ConfigError on an empty dataset.
FrozenEncoder pretrain_frozen_encoder(std::span<const Scene> scenes,
                                      const TextBank& bank,
                                      const FrozenEncoderConfig& enc_cfg,
                                      const PretrainConfig& cfg,
                                      std::ostream* log = nullptr);

// Fraction of shape-token masks whose pooled feature is closest to the right
// token among the non-compound vocabulary.
double retrieval_accuracy(const FrozenEncoder& encoder,
                          std::span<const Scene> scenes, const TextBank& bank);

// Mean feature over pixels with mask >= 0.5; if none, the mask-weighted
// average. NumericError when the mask is identically zero.
Tensor mask_pool(const Tensor& features, std::span<const double> mask);
Var mask_pool(const Var& features, std::span<const double> mask);

// Softmax over cosine(v_i, t_k) / tau for each row of v.
Tensor classify_stage2(const Tensor& v, const Tensor& class_emb, double tau);

// Row-wise p^lambda * p_hat^(1 - lambda) over the K real classes; the
// trailing no-object entry of p passes through; rows renormalized.
Tensor ensemble(const Tensor& p, const Tensor& p_hat, double lambda);

// Per-pixel argmax over the K real classes of sum_i p_out[i][k] * mask_i,
// ties to the lowest index. masks is R x P, p_out is R x (K + 1).
std::vector<std::size_t> semantic_map(const Tensor& masks, const Tensor& p_out);

}  // namespace pmp
