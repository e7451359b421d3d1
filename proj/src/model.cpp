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

#include "pmp/model.hpp"

#include "pmp/errors.hpp"
#include "pmp/rng.hpp"

namespace pmp {

namespace {

ModelConfig synced(ModelConfig cfg) {
  cfg.sync_widths();
  return cfg;
}

template <class T>
T build(const auto& sub, ParamStore& store, std::uint64_t seed, std::uint64_t salt) {
  Rng rng(mix_seed(seed, salt));
  return T(sub, store, rng);
}

}  // namespace

void ModelConfig::sync_widths() {
  backbone.channels = head.channels = decoder.channels;
  backbone.embed_dim = head.embed_dim = decoder.embed_dim;
}

Model::Model(const ModelConfig& cfg)
    : cfg_(synced(cfg)),
      backbone_(build<Backbone>(cfg_.backbone, store_, cfg_.seed, 1)),
      head_(build<ProposalHead>(cfg_.head, store_, cfg_.seed, 2)),
      decoder_(build<Decoder>(cfg_.decoder, store_, cfg_.seed, 3)) {}

ModelOutput Model::forward(Tape& tape, const Image& image,
                           std::span<const std::string> prompt,
                           const TextBank& bank, AttentionProbe* probe) const {
  if (bank.table.dim() != cfg_.decoder.embed_dim) {
    throw ConfigError("text embedding width " + std::to_string(bank.table.dim()) +
                      " does not match model width " +
                      std::to_string(cfg_.decoder.embed_dim));
  }
  ModelOutput out;
  out.pixels = backbone_.forward(tape, image);
  Var text, classes;
  if (!prompt.empty()) {
    text = tape.constant(embed_prompt(prompt, bank).embeddings);
    classes = text;
  }
  out.decoded = decoder_.decode(tape, out.pixels, text, head_, classes, probe);
  return out;
}

}  // namespace pmp
