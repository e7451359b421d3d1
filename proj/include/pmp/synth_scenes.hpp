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
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "pmp/image.hpp"
#include "pmp/text_bank.hpp"

namespace pmp {

enum class ShapeKind { kRectangle, kDisk, kTriangle, kStriped };
inline constexpr std::array<ShapeKind, 4> kAllShapeKinds = {
    ShapeKind::kRectangle, ShapeKind::kDisk, ShapeKind::kTriangle,
    ShapeKind::kStriped};
inline constexpr std::string_view kBackgroundToken = "background";

std::string_view kind_token(ShapeKind kind);
ShapeKind kind_from_token(std::string_view token);

enum class RecipeKind { kUnion, kTopHalf, kBottomHalf, kLeftHalf, kRightHalf };

// A token whose region is derived from object masks: the union of two
// simple tokens' masks, or a fixed half of every object of one kind.
struct CompoundRecipe {
  std::string token;
  RecipeKind kind = RecipeKind::kUnion;
  std::vector<std::string> parts;
};

// "name=union(a,b)", "name=top(a)", "name=bottom(a)", "name=left(a)",
// "name=right(a)".
CompoundRecipe parse_recipe(std::string_view text);
std::string format_recipe(const CompoundRecipe& recipe);

enum class Split { kTrain, kVal, kTest };
std::string_view split_name(Split split);
Split split_from_name(std::string_view name);

struct GeneratorConfig {
  std::uint64_t seed = 42;
  std::size_t image_size = 32;
  int min_objects = 2;
  int max_objects = 5;
  int max_retries = 200;
  std::vector<CompoundRecipe> compounds;
  // Compound tokens that may only appear in val/test prompts.
  std::set<std::string> held_out;
  std::size_t train_count = 2000;
  std::size_t val_count = 100;
  std::size_t test_count = 300;

  std::size_t count(Split split) const;
  // ConfigError on unknown recipe parts, unknown held-out tokens, bad sizes.
  void validate() const;
};

GeneratorConfig default_generator_config();

struct SceneObject {
  ShapeKind kind = ShapeKind::kRectangle;
  std::array<double, 3> color{};
  // Bounding box, half-open: rows [y0, y1), columns [x0, x1).
  std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  Mask mask;
};

struct PromptSet {
  std::string kind;  // "simple" or "compound"
  std::vector<std::string> tokens;
};

struct Scene {
  Split split = Split::kTrain;
  std::size_t index = 0;
  Image image;
  std::vector<SceneObject> objects;
  std::map<std::string, Mask> gt_masks;
  std::vector<PromptSet> prompts;
};

// Background first, then shape kinds, then compound tokens in recipe order.
std::vector<VocabEntry> vocabulary_entries(const GeneratorConfig& cfg);
std::vector<Composition> compositions(const GeneratorConfig& cfg);
// Every non-held-out token.
std::vector<std::string> training_tokens(const GeneratorConfig& cfg);
// Tokens whose ground-truth region would be nonempty for these objects,
// held-out compounds included.
std::set<std::string> applicable_tokens(const std::vector<SceneObject>& objects,
                                        const GeneratorConfig& cfg);
Mask compound_mask(const CompoundRecipe& recipe,
                   const std::vector<SceneObject>& objects, std::size_t height,
                   std::size_t width);

// Deterministic per (cfg.seed, split, index). GenerationError names the scene
// when objects cannot be placed within the retry budget.
Scene generate_scene(const GeneratorConfig& cfg, Split split, std::size_t index);

// Writes <dir>/scene_XXXXX/{image.ppm, masks/<token>.pgm, meta.json} and
// <dir>/manifest.json. Returns the manifest checksum.
std::uint64_t generate_split(const GeneratorConfig& cfg, Split split,
                             const std::filesystem::path& dir);
std::vector<Scene> load_split(const std::filesystem::path& dir);

}  // namespace pmp
