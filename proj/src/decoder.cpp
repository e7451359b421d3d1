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

#include "pmp/decoder.hpp"

#include <cmath>

#include "pmp/errors.hpp"

namespace pmp {

namespace {

constexpr double kReluGain = 1.4142135623730951;

Tensor sigmoid_values(const Tensor& logits) {
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  }
  return out;
}

Tensor attention_weights(const Tensor& q, const Tensor& k, double scale,
                         const std::vector<std::uint8_t>* keep) {
  Tape scratch;
  Var logits = pmp::scale(matmul_nt(scratch.constant(q), scratch.constant(k)), scale);
  return softmax_rows(logits, keep).value();
}

Var zero_rows(Tape& tape, std::size_t rows, std::size_t cols) {
  return tape.constant(Tensor({rows, cols}));
}

Var with_text_rows(Tape& tape, const Var& pos, std::size_t text_rows) {
  if (!pos.valid()) return pos;
  const Var parts[] = {pos, zero_rows(tape, text_rows, pos.cols())};
  return concat_rows(parts);
}

}  // namespace

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kNone: return "none";
    case Strategy::kPmp: return "pmp";
    case Strategy::kConcat: return "concat";
    case Strategy::kConcatDrop: return "concat_drop";
    case Strategy::kTextAsQueries: return "text_as_queries";
  }
  return "unknown";
}

Strategy strategy_from_name(std::string_view name) {
  for (Strategy s : {Strategy::kNone, Strategy::kPmp, Strategy::kConcat,
                     Strategy::kConcatDrop, Strategy::kTextAsQueries}) {
    if (strategy_name(s) == name) return s;
  }
  throw ConfigError("unknown decoding strategy '" + std::string(name) + "'");
}

void DecoderConfig::validate() const {
  if (queries == 0 || channels == 0 || embed_dim == 0 || rounds == 0 ||
      ffn_hidden == 0) {
    throw ConfigError("decoder dimensions must be positive");
  }
}

Decoder::Decoder(const DecoderConfig& cfg, ParamStore& store, Rng& rng)
    : cfg_(cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels, nc = cfg.embed_dim;
  // Residual branches start small so the state norm stays O(1) through the
  // stack; there is no normalization layer to do it.
  const double branch = 1.0 / std::sqrt(3.0 * static_cast<double>(cfg.layers()));
  query_feat_ = &store.add_normal("decoder.query", {cfg.queries, c}, rng, 1.0);
  query_pos_ = &store.add_normal("decoder.query_pos", {cfg.queries, c}, rng, 1.0);
  for (std::size_t l = 0; l < cfg.layers(); ++l) {
    const std::string p = "decoder.layer" + std::to_string(l) + ".";
    layers_.push_back(Layer{
        Linear(store, p + "q", c, c, rng),
        Linear(store, p + "k", c, c, rng),
        Linear(store, p + "v", c, c, rng, branch),
        Linear(store, p + "text_k", nc, c, rng),
        Linear(store, p + "text_v", nc, c, rng),
        Linear(store, p + "self_q", c, c, rng),
        Linear(store, p + "self_k", c, c, rng),
        Linear(store, p + "self_v", c, c, rng),
        Linear(store, p + "self_out", c, c, rng, branch),
        Linear(store, p + "ffn1", c, cfg.ffn_hidden, rng, kReluGain),
        Linear(store, p + "ffn2", cfg.ffn_hidden, c, rng, branch),
    });
  }
}

double Decoder::logit_scale() const {
  return cfg_.unscaled_logits ? 1.0
                              : 1.0 / std::sqrt(static_cast<double>(cfg_.channels));
}

Var Decoder::project_queries(Tape& tape, std::size_t layer, const Var& x,
                             const Var& pos) const {
  return layers_.at(layer).q(tape, pos.valid() ? add(x, pos) : x);
}

Var Decoder::text_keys(Tape& tape, std::size_t layer, const Var& text) const {
  return layers_.at(layer).text_k(tape, text);
}

Var Decoder::text_cross_attention(Tape& tape, std::size_t layer, const Var& q,
                                  const Var& text, AttentionProbe* probe) const {
  if (!text.valid() || text.rows() == 0) {
    throw ContractError("text_cross_attention needs at least one text token");
  }
  const Layer& p = layers_.at(layer);
  Var keys = p.text_k(tape, text);
  Var weights = softmax_rows(scale(matmul_nt(q, keys), logit_scale()));
  if (probe) probe->weights.push_back(weights.value());
  Var out = matmul(weights, p.text_v(tape, text));
  return cfg_.text_residual ? add(out, q) : out;
}

Var Decoder::standard_block(Tape& tape, std::size_t layer, const Var& q,
                            const Var& level,
                            const std::vector<std::uint8_t>* keep,
                            const Var& x_prev, const Var& pos,
                            AttentionProbe* probe) const {
  const Layer& p = layers_.at(layer);
  if (keep && keep->size() != q.rows() * level.rows()) {
    throw DimensionError("attention mask has " + std::to_string(keep->size()) +
                         " entries, expected " + std::to_string(q.rows()) + "x" +
                         std::to_string(level.rows()));
  }
  if (x_prev.rows() != q.rows()) {
    throw DimensionError("standard_block: residual rows do not match queries");
  }
  const double s = logit_scale();
  Var weights = softmax_rows(scale(matmul_nt(q, p.k(tape, level)), s), keep);
  if (probe) probe->weights.push_back(weights.value());
  Var x = add(matmul(weights, p.v(tape, level)), x_prev);

  Var xq = pos.valid() ? add(x, pos) : x;
  Var sq = p.self_q(tape, xq), sk = p.self_k(tape, xq);
  if (probe) probe->weights.push_back(attention_weights(sq.value(), sk.value(), s, nullptr));
  x = add(x, p.self_out(tape, set_attention(sq, sk, p.self_v(tape, x), s)));

  return add(x, p.ffn2(tape, relu(p.ffn1(tape, x))));
}

DecodeResult Decoder::decode(Tape& tape, const PixelFeatures& pix,
                             const Var& text, const ProposalHead& head,
                             const Var& class_emb, AttentionProbe* probe) const {
  const bool has_text = text.valid() && text.rows() > 0;
  Strategy strategy = cfg_.strategy;
  if (!has_text && strategy != Strategy::kNone) {
    if (strategy != Strategy::kPmp) {
      throw ConfigError("strategy " + strategy_name(strategy) +
                        " needs at least one text token");
    }
    strategy = Strategy::kNone;
  }
  if (has_text && text.cols() != cfg_.embed_dim) {
    throw DimensionError("text embeddings have width " + std::to_string(text.cols()) +
                         ", expected " + std::to_string(cfg_.embed_dim));
  }
  const std::size_t m = has_text ? text.rows() : 0;

  Var pos = cfg_.query_pos ? tape.leaf(*query_pos_) : Var{};
  Var x;
  switch (strategy) {
    case Strategy::kConcat: {
      const Var parts[] = {tape.leaf(*query_feat_), text_keys(tape, 0, text)};
      x = concat_rows(parts);
      pos = with_text_rows(tape, pos, m);
      break;
    }
    case Strategy::kTextAsQueries:
      x = text_keys(tape, 0, text);
      pos = Var{};
      break;
    default:
      x = tape.leaf(*query_feat_);
  }

  DecodeResult out;
  out.states.push_back(x);
  out.predictions.push_back(head.predict(tape, x, pix.pixel_embed, class_emb));
  for (std::size_t l = 0; l < cfg_.layers(); ++l) {
    const std::size_t lvl = l % 3;
    const Tensor probs = sigmoid_values(out.predictions.back().mask_logits.value());
    std::vector<std::uint8_t> keep =
        attention_mask_next(probs, pix.size, pix.sizes[lvl]);

    Var x_in = x, pos_in = pos;
    if (strategy == Strategy::kConcatDrop) {
      const Var parts[] = {x, text_keys(tape, l, text)};
      x_in = concat_rows(parts);
      pos_in = with_text_rows(tape, pos, m);
      keep.resize(keep.size() + m * pix.sizes[lvl].area(), 1);
    }
    Var q = project_queries(tape, l, x_in, pos_in);
    if (strategy == Strategy::kPmp) q = text_cross_attention(tape, l, q, text, probe);
    x = standard_block(tape, l, q, pix.levels[lvl], &keep, x_in, pos_in, probe);
    if (strategy == Strategy::kConcatDrop) x = slice_rows(x, 0, cfg_.queries);

    out.states.push_back(x);
    out.predictions.push_back(head.predict(tape, x, pix.pixel_embed, class_emb));
  }
  return out;
}

}  // namespace pmp
