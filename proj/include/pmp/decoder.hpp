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
#include <string>
#include <string_view>
#include <vector>

#include "pmp/autodiff.hpp"
#include "pmp/backbone.hpp"
#include "pmp/params.hpp"
#include "pmp/proposal_head.hpp"

namespace pmp {

enum class Strategy { kNone, kPmp, kConcat, kConcatDrop, kTextAsQueries };

std::string strategy_name(Strategy s);
// Accepts none, pmp, concat, concat_drop, text_as_queries. ConfigError otherwise.
Strategy strategy_from_name(std::string_view name);

struct DecoderConfig {
  std::size_t queries = 16;    // N
  std::size_t channels = 32;   // C
  std::size_t embed_dim = 32;  // N_c, width of text embeddings
  std::size_t rounds = 3;      // L; the stack has 3 * rounds layers
  std::size_t ffn_hidden = 64;
  Strategy strategy = Strategy::kPmp;
  bool unscaled_logits = false;
  bool text_residual = false;
  bool query_pos = true;

  std::size_t layers() const { return 3 * rounds; }
  void validate() const;
};

// Collects every attention weight matrix computed in a forward pass.
struct AttentionProbe {
  std::vector<Tensor> weights;
};

struct DecodeResult {
  // Pre-decoder state followed by one state per layer.
  std::vector<Var> states;
  // Head output at each state (3 * rounds + 1 points).
  std::vector<Prediction> predictions;
};

class Decoder {
 public:
  Decoder(const DecoderConfig& cfg, ParamStore& store, Rng& rng);

  const DecoderConfig& config() const { return cfg_; }
  double logit_scale() const;

  // f_Q(x + pos) for `layer`; pos may be invalid.
  Var project_queries(Tape& tape, std::size_t layer, const Var& x,
                      const Var& pos) const;
  // softmax(q f_Kt(T)^T) f_Vt(T). ContractError when T is empty.
  Var text_cross_attention(Tape& tape, std::size_t layer, const Var& q,
                           const Var& text, AttentionProbe* probe = nullptr) const;
  // Masked cross-attention onto `level` with residual x_prev, then
  // self-attention and feed-forward, each with a residual. `keep` is
  // rows x level-positions, or null for full attention.
  Var standard_block(Tape& tape, std::size_t layer, const Var& q,
                     const Var& level, const std::vector<std::uint8_t>* keep,
                     const Var& x_prev, const Var& pos,
                     AttentionProbe* probe = nullptr) const;
  // Text projection f_Kt of `layer`, used by the concatenation strategies.
  Var text_keys(Tape& tape, std::size_t layer, const Var& text) const;

  // `text` is M x N_c or an invalid Var for M = 0. `class_emb` is passed to
  // the head at every prediction point (invalid to skip classification).
  DecodeResult decode(Tape& tape, const PixelFeatures& pix, const Var& text,
                      const ProposalHead& head, const Var& class_emb,
                      AttentionProbe* probe = nullptr) const;

  Tensor& query_features() const { return *query_feat_; }
  Tensor& query_positions() const { return *query_pos_; }

 private:
  struct Layer {
    Linear q, k, v, text_k, text_v;
    Linear self_q, self_k, self_v, self_out;
    Linear ffn1, ffn2;
  };

  DecoderConfig cfg_;
  std::vector<Layer> layers_;
  Tensor* query_feat_ = nullptr;
  Tensor* query_pos_ = nullptr;
};

}  // namespace pmp
