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

#include "pmp/backbone.hpp"

#include <cmath>

#include "pmp/errors.hpp"

namespace pmp {

namespace {
constexpr double kReluGain = 1.4142135623730951;
}  // namespace

Tensor image_matrix(const Image& image, bool coord_channels) {
  image.validate();
  const std::size_t h = image.height, w = image.width;
  const std::size_t c = coord_channels ? 5 : 3;
  Tensor out({h * w, c});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double* row = out.data().data() + (y * w + x) * c;
      for (std::size_t k = 0; k < 3; ++k) row[k] = image.at(y, x, k);
      if (coord_channels) {
        row[3] = (static_cast<double>(y) + 0.5) / static_cast<double>(h) * 2.0 - 1.0;
        row[4] = (static_cast<double>(x) + 0.5) / static_cast<double>(w) * 2.0 - 1.0;
      }
    }
  }
  return out;
}

Backbone::Backbone(const BackboneConfig& cfg, ParamStore& store, Rng& rng)
    : cfg_(cfg) {
  const std::size_t in = cfg.coord_channels ? 5 : 3;
  const std::size_t c = cfg.channels;
  conv1_ = Linear(store, "backbone.conv1", 9 * in, c, rng, kReluGain);
  conv2_ = Linear(store, "backbone.conv2", 9 * c, c, rng, kReluGain);
  conv3_ = Linear(store, "backbone.conv3", 9 * c, c, rng, kReluGain);
  lateral0_ = Linear(store, "pixel.lateral0", c, c, rng);
  lateral1_ = Linear(store, "pixel.lateral1", c, c, rng);
  lateral2_ = Linear(store, "pixel.lateral2", in, c, rng);
  embed_ = Linear(store, "pixel.embed", c, cfg.embed_dim, rng);
}

EncoderOutput Backbone::encode(Tape& tape, const Image& image) const {
  EncoderOutput out;
  out.size = {image.height, image.width};
  const std::size_t h = image.height, w = image.width;
  out.input = tape.constant(image_matrix(image, cfg_.coord_channels));
  out.stage1 = relu(conv1_(tape, im2col3x3(out.input, h, w, 2)));
  Var s2 = relu(conv2_(tape, im2col3x3(out.stage1, h / 2, w / 2, 2)));
  out.features = relu(conv3_(tape, im2col3x3(s2, h / 4, w / 4, 1)));
  return out;
}

PixelFeatures Backbone::pixel_decode(Tape& tape, const EncoderOutput& enc) const {
  const std::size_t h = enc.size.height, w = enc.size.width;
  if (enc.features.rows() != (h / 4) * (w / 4)) {
    throw DimensionError("pixel_decode: features do not match the input size");
  }
  PixelFeatures pf;
  pf.size = enc.size;
  pf.sizes = {MapSize{h / 4, w / 4}, MapSize{h / 2, w / 2}, MapSize{h, w}};
  pf.levels[0] = lateral0_(tape, enc.features);
  pf.levels[1] = relu(add(upsample2x(pf.levels[0], h / 4, w / 4),
                          lateral1_(tape, enc.stage1)));
  pf.levels[2] = relu(add(upsample2x(pf.levels[1], h / 2, w / 2),
                          lateral2_(tape, enc.input)));
  pf.pixel_embed = embed_(tape, pf.levels[2]);
  return pf;
}

}  // namespace pmp
