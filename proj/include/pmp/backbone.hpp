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

#include <array>
#include <cstddef>

#include "pmp/autodiff.hpp"
#include "pmp/image.hpp"
#include "pmp/params.hpp"

namespace pmp {

struct BackboneConfig {
  std::size_t channels = 32;   // C
  std::size_t embed_dim = 32;  // N_c, width of the per-pixel mask embedding
  // Appends normalized (y, x) coordinates to the input pixels.
  bool coord_channels = false;
};

struct MapSize {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t area() const { return height * width; }
  friend bool operator==(const MapSize&, const MapSize&) = default;
};

// Encoder stages, each a (rows = pixels) x channels map.
struct EncoderOutput {
  Var input;     // H x W
  Var stage1;    // H/2 x W/2
  Var features;  // f_I, H/4 x W/4
  MapSize size;  // input size
};

struct PixelFeatures {
  // Coarse to fine: H/4, H/2, H.
  std::array<Var, 3> levels;
  std::array<MapSize, 3> sizes;
  Var pixel_embed;  // (H*W) x N_c
  MapSize size;
};

// Image encoder E_I (three 3x3 convolutions, strides 2, 2, 1) and pixel
// decoder E_P (nearest upsampling with 1x1 skip projections).
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, ParamStore& store, Rng& rng);

  EncoderOutput encode(Tape& tape, const Image& image) const;
  PixelFeatures pixel_decode(Tape& tape, const EncoderOutput& enc) const;
  PixelFeatures forward(Tape& tape, const Image& image) const {
    return pixel_decode(tape, encode(tape, image));
  }
  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  Linear conv1_, conv2_, conv3_;
  Linear lateral0_, lateral1_, lateral2_;
  Linear embed_;
};

// (H*W) x 3 pixel matrix, plus two coordinate columns when requested.
Tensor image_matrix(const Image& image, bool coord_channels);

}  // namespace pmp
