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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pmp/backbone.hpp"
#include "pmp/decoder.hpp"
#include "pmp/params.hpp"
#include "pmp/proposal_head.hpp"
#include "pmp/text_bank.hpp"

namespace pmp {

struct ModelConfig {
  BackboneConfig backbone;
  HeadConfig head;
  DecoderConfig decoder;
  std::uint64_t seed = 1;

  // Copies the shared widths (C, N_c) into the sub-configs.
  void sync_widths();
};

struct ModelOutput {
  PixelFeatures pixels;
  DecodeResult decoded;
};

// Trainable part of the pipeline: image encoder + pixel decoder, prompt
// conditioned decoder and proposal head, all in one parameter store.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  // `prompt` is both the text conditioning and the class list.
  ModelOutput forward(Tape& tape, const Image& image,
                      std::span<const std::string> prompt, const TextBank& bank,
                      AttentionProbe* probe = nullptr) const;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const ProposalHead& head() const { return head_; }
  const Decoder& decoder() const { return decoder_; }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  Backbone backbone_;
  ProposalHead head_;
  Decoder decoder_;
};

}  // namespace pmp
