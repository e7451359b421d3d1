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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "pmp/backbone.hpp"
#include "pmp/decoder.hpp"
#include "pmp/errors.hpp"
#include "pmp/gradcheck.hpp"
#include "decoder_rig.hpp"
#include "test_util.hpp"

namespace pmp {
namespace {

using testing::max_abs_diff;
using testing::random_matrix;
using testing::Rig;
using testing::lin;
using testing::reference_decoder;

TEST(TextCrossAttention, SingleTokenCopiesValueRow) {
  Rig rig(Strategy::kPmp, 1);
  Tape tape;
  Rng rng(7);
  Var q = tape.constant(random_matrix(rng, 4, 8));
  Var t = tape.constant(rig.text);
  const Tensor out = rig.decoder.text_cross_attention(tape, 2, q, t).value();
  const Tensor vt = lin(tape, rig.store, "decoder.layer2.text_v", t).value();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(out.at(i, c), vt.at(0, c), 1e-15);
  }
}

TEST(TextCrossAttention, TokenOrderDoesNotMatter) {
  Rig rig(Strategy::kPmp, 3);
  Tape tape;
  Rng rng(8);
  Var q = tape.constant(random_matrix(rng, 4, 8));
  Tensor swapped = rig.text;
  for (std::size_t c = 0; c < 6; ++c) std::swap(swapped.at(0, c), swapped.at(2, c));
  const Tensor a = rig.decoder.text_cross_attention(tape, 0, q, tape.constant(rig.text)).value();
  const Tensor b = rig.decoder.text_cross_attention(tape, 0, q, tape.constant(swapped)).value();
  EXPECT_LE(max_abs_diff(a, b), 1e-12);
}

TEST(TextCrossAttention, HandSetProjectionsMatchScalarOracle) {
  ParamStore store;
  Rng rng(9);
  DecoderConfig cfg;
  cfg.queries = 2;
  cfg.channels = 2;
  cfg.embed_dim = 2;
  cfg.rounds = 1;
  cfg.unscaled_logits = true;
  const Decoder dec(cfg, store, rng);
  store.get("decoder.layer0.text_k.w") = Tensor::matrix(2, 2, {1, 0, 0, 2});
  store.get("decoder.layer0.text_k.b") = Tensor::matrix(1, 2, {0, 0});
  store.get("decoder.layer0.text_v.w") = Tensor::matrix(2, 2, {0, 1, 1, 0});
  store.get("decoder.layer0.text_v.b") = Tensor::matrix(1, 2, {0.5, 0});
  const double q[2][2] = {{1, 0}, {0.5, -1}};
  const double t[2][2] = {{1, 1}, {-1, 0.5}};
  Tape tape;
  const Tensor out = dec.text_cross_attention(
                            tape, 0, tape.constant(Tensor::matrix(2, 2, {1, 0, 0.5, -1})),
                            tape.constant(Tensor::matrix(2, 2, {1, 1, -1, 0.5})))
                         .value();
  // keys: t * diag(1, 2); values: swap columns of t, then add (0.5, 0).
  const double k[2][2] = {{t[0][0], 2 * t[0][1]}, {t[1][0], 2 * t[1][1]}};
  const double v[2][2] = {{t[0][1] + 0.5, t[0][0]}, {t[1][1] + 0.5, t[1][0]}};
  for (int i = 0; i < 2; ++i) {
    const double s0 = q[i][0] * k[0][0] + q[i][1] * k[0][1];
    const double s1 = q[i][0] * k[1][0] + q[i][1] * k[1][1];
    const double w0 = std::exp(s0) / (std::exp(s0) + std::exp(s1)), w1 = 1.0 - w0;
    for (int c = 0; c < 2; ++c) {
      EXPECT_NEAR(out.at(i, c), w0 * v[0][c] + w1 * v[1][c], 1e-14);
    }
  }
}

TEST(TextCrossAttention, EmptyTextIsContractError) {
  Rig rig(Strategy::kPmp, 0);
  Tape tape;
  Var q = tape.constant(Tensor({4, 8}));
  EXPECT_THROW(rig.decoder.text_cross_attention(tape, 0, q, Var{}), ContractError);
}

TEST(StandardBlock, AllTrueMaskEqualsNoMask) {
  Rig rig(Strategy::kNone, 0);
  Tape tape;
  const PixelFeatures pix = rig.backbone.forward(tape, rig.image);
  Rng rng(10);
  Var q = tape.constant(random_matrix(rng, 4, 8));
  Var x = tape.constant(random_matrix(rng, 4, 8));
  const std::vector<std::uint8_t> all(4 * 16, 1), none(4 * 16, 0);
  const Tensor free = rig.decoder.standard_block(tape, 1, q, pix.levels[1], nullptr, x, Var{}).value();
  EXPECT_LE(max_abs_diff(free, rig.decoder.standard_block(tape, 1, q, pix.levels[1], &all, x, Var{}).value()), 1e-12);
  // An all-background row falls back to full attention.
  EXPECT_LE(max_abs_diff(free, rig.decoder.standard_block(tape, 1, q, pix.levels[1], &none, x, Var{}).value()), 1e-12);
}

TEST(StandardBlock, MaskLengthMismatchIsDimensionError) {
  Rig rig(Strategy::kNone, 0);
  Tape tape;
  const PixelFeatures pix = rig.backbone.forward(tape, rig.image);
  Var q = tape.constant(Tensor({4, 8}));
  const std::vector<std::uint8_t> wrong(4 * 15, 1);
  EXPECT_THROW(rig.decoder.standard_block(tape, 0, q, pix.levels[1], &wrong, q, Var{}),
               DimensionError);
}

TEST(StandardBlock, TwoQueriesThreePositionsMatchScalarOracle) {
  ParamStore store;
  Rng rng(11);
  DecoderConfig cfg;
  cfg.queries = 2;
  cfg.channels = 2;
  cfg.embed_dim = 2;
  cfg.rounds = 1;
  cfg.ffn_hidden = 2;
  cfg.unscaled_logits = true;
  const Decoder dec(cfg, store, rng);
  const std::string p = "decoder.layer0.";
  const auto ident = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const auto zero_b = Tensor::matrix(1, 2, {0, 0});
  for (const char* n : {"k", "v", "self_q", "self_k", "self_v", "self_out", "ffn1", "ffn2"}) {
    store.get(p + n + ".w") = ident;
    store.get(p + n + ".b") = zero_b;
  }
  store.get(p + "v.w") = Tensor::matrix(2, 2, {2, 0, 1, -1});
  store.get(p + "ffn2.w") = Tensor::matrix(2, 2, {0.5, 0, 0, -0.5});

  const double q[2][2] = {{1, 0}, {0, 1}};
  const double f[3][2] = {{1, 0}, {0, 1}, {1, 1}};
  const double xp[2][2] = {{0.1, 0.2}, {-0.3, 0.4}};
  const std::vector<std::uint8_t> keep = {1, 0, 1, 0, 0, 0};
  Tape tape;
  const Tensor out =
      dec.standard_block(tape, 0, tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})),
                         tape.constant(Tensor::matrix(3, 2, {1, 0, 0, 1, 1, 1})), &keep,
                         tape.constant(Tensor::matrix(2, 2, {0.1, 0.2, -0.3, 0.4})), Var{})
          .value();

  double x[2][2];
  for (int i = 0; i < 2; ++i) {
    double w[3], tot = 0.0;
    const bool any = keep[i * 3] || keep[i * 3 + 1] || keep[i * 3 + 2];
    for (int j = 0; j < 3; ++j) {
      const bool on = !any || keep[i * 3 + j];
      w[j] = on ? std::exp(q[i][0] * f[j][0] + q[i][1] * f[j][1]) : 0.0;
      tot += w[j];
    }
    for (int c = 0; c < 2; ++c) {
      double s = 0.0;
      for (int j = 0; j < 3; ++j) {
        const double v = c == 0 ? 2 * f[j][0] + f[j][1] : -f[j][1];
        s += w[j] / tot * v;
      }
      x[i][c] = s + xp[i][c];
    }
  }
  double y[2][2];
  for (int i = 0; i < 2; ++i) {
    const double s0 = std::exp(x[i][0] * x[0][0] + x[i][1] * x[0][1]);
    const double s1 = std::exp(x[i][0] * x[1][0] + x[i][1] * x[1][1]);
    for (int c = 0; c < 2; ++c) y[i][c] = x[i][c] + (s0 * x[0][c] + s1 * x[1][c]) / (s0 + s1);
  }
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(out.at(i, 0), y[i][0] + 0.5 * std::max(y[i][0], 0.0), 1e-13);
    EXPECT_NEAR(out.at(i, 1), y[i][1] - 0.5 * std::max(y[i][1], 0.0), 1e-13);
  }
}

TEST(DecodeStack, NineLayersPlusInitialUnderPmp) {
  Rig rig(Strategy::kPmp, 3);
  Tape tape;
  const DecodeResult r = rig.run(tape);
  ASSERT_EQ(r.states.size(), 10u);
  ASSERT_EQ(r.predictions.size(), 10u);
  for (const Var& s : r.states) EXPECT_EQ(s.value().shape(), (Shape{4, 8}));
}

TEST(DecodeStack, OutputRowCountsPerStrategy) {
  const std::pair<Strategy, std::size_t> cases[] = {
      {Strategy::kConcat, 4 + 3}, {Strategy::kConcatDrop, 4},
      {Strategy::kTextAsQueries, 3}, {Strategy::kPmp, 4}, {Strategy::kNone, 4}};
  for (const auto& [strategy, rows] : cases) {
    Rig rig(strategy, 3);
    Tape tape;
    const DecodeResult r = rig.run(tape);
    for (const Var& s : r.states) EXPECT_EQ(s.rows(), rows) << strategy_name(strategy);
    EXPECT_EQ(r.predictions.back().mask_logits.rows(), rows);
  }
}

TEST(DecodeStack, PmpWithoutTextEqualsNoneBitwise) {
  Rig pmp(Strategy::kPmp, 0, 21), none(Strategy::kNone, 0, 21);
  Tape t1, t2;
  const DecodeResult a = pmp.run(t1), b = none.run(t2);
  for (std::size_t l = 0; l < a.states.size(); ++l) {
    EXPECT_EQ(a.states[l].value(), b.states[l].value());
  }
}

TEST(DecodeStack, TextStrategiesNeedText) {
  for (Strategy s : {Strategy::kConcat, Strategy::kConcatDrop, Strategy::kTextAsQueries}) {
    Rig rig(s, 0);
    Tape tape;
    EXPECT_THROW(rig.run(tape), ConfigError) << strategy_name(s);
  }
}

TEST(DecodeStack, NoneMatchesReferenceDecoderBitwise) {
  for (std::uint64_t seed : {1, 2, 3}) {
    Rig rig(Strategy::kNone, 2, seed);
    Tape tape;
    const DecodeResult r = rig.run(tape);
    const std::vector<Tensor> ref = reference_decoder(rig);
    ASSERT_EQ(ref.size(), r.states.size());
    for (std::size_t l = 0; l < ref.size(); ++l) EXPECT_EQ(r.states[l].value(), ref[l]);
  }
}

TEST(DecodeStack, AttentionRowsSumToOne) {
  for (Strategy s : {Strategy::kPmp, Strategy::kConcat, Strategy::kConcatDrop,
                     Strategy::kTextAsQueries, Strategy::kNone}) {
    Rig rig(s, 3);
    Tape tape;
    AttentionProbe probe;
    rig.run(tape, &probe);
    EXPECT_GE(probe.weights.size(), 18u);
    for (const Tensor& w : probe.weights) {
      for (std::size_t i = 0; i < w.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) sum += w.at(i, j);
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
    }
  }
}

TEST(DecodeStack, TextOrderInvariance) {
  Rig rig(Strategy::kPmp, 3, 5);
  Tape t1;
  const DecodeResult a = rig.run(t1);
  for (std::size_t c = 0; c < 6; ++c) {
    std::swap(rig.text.at(0, c), rig.text.at(2, c));
    std::swap(rig.text.at(1, c), rig.text.at(2, c));
  }
  Tape t2;
  const DecodeResult b = rig.run(t2);
  for (std::size_t l = 0; l < a.states.size(); ++l) {
    EXPECT_LE(max_abs_diff(a.states[l].value(), b.states[l].value()), 1e-12);
  }
}

TEST(DecodeStack, QueryPermutationEquivarianceIsExact) {
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  for (Strategy s : {Strategy::kPmp, Strategy::kNone}) {
    Rig rig(s, 3, 8);
    Tape t1;
    const DecodeResult a = rig.run(t1);
    for (const char* name : {"decoder.query", "decoder.query_pos"}) {
      Tensor& t = rig.store.get(name);
      const Tensor orig = t;
      for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t c = 0; c < 8; ++c) t.at(i, c) = orig.at(perm[i], c);
      }
    }
    Tape t2;
    const DecodeResult b = rig.run(t2);
    for (std::size_t l = 0; l < a.states.size(); ++l) {
      for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t c = 0; c < 8; ++c) {
          EXPECT_EQ(b.states[l].value().at(i, c), a.states[l].value().at(perm[i], c));
        }
      }
    }
  }
}

TEST(DecodeStack, GradientMatchesFiniteDifferences) {
  Rig rig(Strategy::kPmp, 3, 12);
  // Key biases shift every logit of a softmax row equally, so their exact
  // gradient is zero and a relative comparison is meaningless; they are
  // checked separately below.
  auto is_key_bias = [](const std::string& n) {
    return (n.size() > 4 && n.compare(n.size() - 4, 4, ".k.b") == 0) ||
           n.find("_k.b") != std::string::npos;
  };
  std::vector<Tensor*> params, key_biases;
  for (const auto& n : rig.store.names()) {
    if (n.rfind("decoder.", 0) != 0) continue;
    (is_key_bias(n) ? key_biases : params).push_back(&rig.store.get(n));
  }
  Rng rng(13);
  const Tensor w = random_matrix(rng, 4, 8);
  auto loss = [&](Tape& t) {
    const DecodeResult r = rig.run(t);
    Var acc = sum(mul(r.states[1], t.constant(w)));
    for (std::size_t l = 2; l < r.states.size(); ++l) {
      acc = add(acc, sum(mul(r.states[l], t.constant(w))));
    }
    return acc;
  };
  EXPECT_LE(finite_diff_check(loss, params, 3e-4, Stencil::kFivePoint), 1e-5);
  for (Tensor* b : key_biases) {
    for (double g : b->grad()) EXPECT_LE(std::abs(g), 1e-12);
  }
}

TEST(DecodeStack, InputGradientMatchesFiniteDifferences) {
  Rig rig(Strategy::kPmp, 3, 4);
  Tensor* inputs[] = {&rig.store.get("decoder.query"),
                      &rig.store.get("decoder.query_pos"), &rig.text};
  Rng rng(14);
  const Tensor w = random_matrix(rng, 4, 8);
  const double err = finite_diff_check(
      [&](Tape& t) { return sum(mul(rig.run(t).states.back(), t.constant(w))); },
      inputs, 1e-5);
  EXPECT_LE(err, 1e-5);
}

TEST(DecoderParams, CountDependsOnlyOnDimensions) {
  for (std::size_t n : {2, 5}) {
    ParamStore store;
    Rng rng(n);
    DecoderConfig cfg;
    cfg.queries = n;
    cfg.channels = 8;
    cfg.embed_dim = 6;
    cfg.ffn_hidden = 16;
    const Decoder dec(cfg, store, rng);
    const std::size_t c = 8, nc = 6, f = 16;
    const std::size_t per_layer =
        7 * (c * c + c) + 2 * (nc * c + c) + (c * f + f) + (f * c + c);
    EXPECT_EQ(store.parameter_count(), 2 * n * c + 9 * per_layer);
  }
}

TEST(StrategyName, RoundTrip) {
  for (Strategy s : {Strategy::kPmp, Strategy::kConcat, Strategy::kConcatDrop,
                     Strategy::kTextAsQueries, Strategy::kNone}) {
    EXPECT_EQ(strategy_from_name(strategy_name(s)), s);
  }
  EXPECT_THROW(strategy_from_name("mixed"), ConfigError);
}

}  // namespace
}  // namespace pmp
