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

#include "pmp/synth_scenes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "pmp/errors.hpp"
#include "pmp/rng.hpp"

namespace pmp {

using nlohmann::json;

std::string_view kind_token(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kRectangle: return "rectangle";
    case ShapeKind::kDisk: return "disk";
    case ShapeKind::kTriangle: return "triangle";
    case ShapeKind::kStriped: return "striped";
  }
  return "";
}

ShapeKind kind_from_token(std::string_view token) {
  for (ShapeKind k : kAllShapeKinds) {
    if (kind_token(k) == token) return k;
  }
  throw LookupError("unknown shape kind '" + std::string(token) + "'");
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "";
}

Split split_from_name(std::string_view name) {
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    if (split_name(s) == name) return s;
  }
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

namespace {

const std::map<std::string, RecipeKind, std::less<>>& recipe_kinds() {
  static const std::map<std::string, RecipeKind, std::less<>> kinds = {
      {"union", RecipeKind::kUnion},    {"top", RecipeKind::kTopHalf},
      {"bottom", RecipeKind::kBottomHalf}, {"left", RecipeKind::kLeftHalf},
      {"right", RecipeKind::kRightHalf}};
  return kinds;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

CompoundRecipe parse_recipe(std::string_view text) {
  const auto eq = text.find('=');
  const auto open = text.find('(');
  const auto close = text.rfind(')');
  if (eq == std::string_view::npos || open == std::string_view::npos ||
      close == std::string_view::npos || !(eq < open && open < close)) {
    throw ConfigError("bad compound recipe '" + std::string(text) + "'");
  }
  CompoundRecipe r;
  r.token = trim(text.substr(0, eq));
  const std::string kind = trim(text.substr(eq + 1, open - eq - 1));
  auto it = recipe_kinds().find(kind);
  if (it == recipe_kinds().end()) {
    throw ConfigError("unknown recipe kind '" + kind + "'");
  }
  r.kind = it->second;
  std::string_view args = text.substr(open + 1, close - open - 1);
  while (!args.empty()) {
    const auto comma = args.find(',');
    r.parts.push_back(trim(args.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    args.remove_prefix(comma + 1);
  }
  const std::size_t want = r.kind == RecipeKind::kUnion ? 2 : 1;
  if (r.parts.size() != want || r.token.empty()) {
    throw ConfigError("recipe '" + std::string(text) + "' needs " +
                      std::to_string(want) + " part(s)");
  }
  return r;
}

std::string format_recipe(const CompoundRecipe& recipe) {
  std::string kind;
  for (const auto& [name, k] : recipe_kinds()) {
    if (k == recipe.kind) kind = name;
  }
  std::string out = recipe.token + "=" + kind + "(";
  for (std::size_t i = 0; i < recipe.parts.size(); ++i) {
    if (i) out += ",";
    out += recipe.parts[i];
  }
  return out + ")";
}

std::size_t GeneratorConfig::count(Split split) const {
  switch (split) {
    case Split::kTrain: return train_count;
    case Split::kVal: return val_count;
    case Split::kTest: return test_count;
  }
  return 0;
}

void GeneratorConfig::validate() const {
  if (image_size == 0 || image_size % 4 != 0 || image_size < 16) {
    throw ConfigError("image_size must be a multiple of 4 and at least 16");
  }
  if (min_objects < 1 || max_objects < min_objects) {
    throw ConfigError("object count range is empty");
  }
  std::set<std::string> names;
  for (const CompoundRecipe& r : compounds) {
    if (!names.insert(r.token).second || r.token == kBackgroundToken) {
      throw ConfigError("duplicate compound token '" + r.token + "'");
    }
    for (const std::string& p : r.parts) kind_from_token(p);
    if (r.kind == RecipeKind::kUnion && r.parts[0] == r.parts[1]) {
      throw ConfigError("union recipe '" + r.token + "' repeats a part");
    }
  }
  for (const std::string& h : held_out) {
    if (names.count(h) == 0) {
      throw ConfigError("held-out token '" + h + "' is not a compound token");
    }
  }
}

GeneratorConfig default_generator_config() {
  GeneratorConfig cfg;
  for (const char* r :
       {"roundbox=union(disk,rectangle)", "roundwedge=union(disk,triangle)",
        "roundstripe=union(disk,striped)", "boxwedge=union(rectangle,triangle)",
        "boxstripe=union(rectangle,striped)",
        "wedgestripe=union(triangle,striped)"}) {
    cfg.compounds.push_back(parse_recipe(r));
  }
  cfg.held_out = {"roundwedge", "boxwedge", "boxstripe"};
  return cfg;
}

std::vector<VocabEntry> vocabulary_entries(const GeneratorConfig& cfg) {
  std::vector<VocabEntry> out = {{std::string(kBackgroundToken), false}};
  for (ShapeKind k : kAllShapeKinds) out.push_back({std::string(kind_token(k)), false});
  for (const CompoundRecipe& r : cfg.compounds) out.push_back({r.token, true});
  return out;
}

std::vector<Composition> compositions(const GeneratorConfig& cfg) {
  std::vector<Composition> out;
  for (const CompoundRecipe& r : cfg.compounds) {
    Composition c{r.token, r.parts};
    if (r.kind != RecipeKind::kUnion) {
      std::string side;
      for (const auto& [name, k] : recipe_kinds()) {
        if (k == r.kind) side = name;
      }
      c.parts.push_back("side:" + side);
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<std::string> training_tokens(const GeneratorConfig& cfg) {
  std::vector<std::string> out;
  for (const VocabEntry& e : vocabulary_entries(cfg)) {
    if (cfg.held_out.count(e.token) == 0) out.push_back(e.token);
  }
  return out;
}

namespace {

bool has_kind(const std::vector<SceneObject>& objects, std::string_view token) {
  return std::any_of(objects.begin(), objects.end(), [&](const SceneObject& o) {
    return kind_token(o.kind) == token;
  });
}

Mask kind_mask(const std::vector<SceneObject>& objects, std::string_view token,
               std::size_t h, std::size_t w) {
  Mask m(h, w);
  for (const SceneObject& o : objects) {
    if (kind_token(o.kind) == token) m = mask_or(m, o.mask);
  }
  return m;
}

}  // namespace

std::set<std::string> applicable_tokens(const std::vector<SceneObject>& objects,
                                        const GeneratorConfig& cfg) {
  std::set<std::string> out = {std::string(kBackgroundToken)};
  for (const SceneObject& o : objects) out.insert(std::string(kind_token(o.kind)));
  for (const CompoundRecipe& r : cfg.compounds) {
    if (std::all_of(r.parts.begin(), r.parts.end(),
                    [&](const std::string& p) { return has_kind(objects, p); })) {
      out.insert(r.token);
    }
  }
  return out;
}

Mask compound_mask(const CompoundRecipe& recipe,
                   const std::vector<SceneObject>& objects, std::size_t height,
                   std::size_t width) {
  if (recipe.kind == RecipeKind::kUnion) {
    return mask_or(kind_mask(objects, recipe.parts[0], height, width),
                   kind_mask(objects, recipe.parts[1], height, width));
  }
  Mask out(height, width);
  for (const SceneObject& o : objects) {
    if (kind_token(o.kind) != recipe.parts[0]) continue;
    // Twice the box center, so the comparison stays in integers.
    const std::size_t cy2 = o.y0 + o.y1, cx2 = o.x0 + o.x1;
    for (std::size_t y = o.y0; y < o.y1; ++y) {
      for (std::size_t x = o.x0; x < o.x1; ++x) {
        if (!o.mask.at(y, x)) continue;
        bool keep = false;
        switch (recipe.kind) {
          case RecipeKind::kTopHalf: keep = 2 * y + 1 < cy2; break;
          case RecipeKind::kBottomHalf: keep = 2 * y + 1 >= cy2; break;
          case RecipeKind::kLeftHalf: keep = 2 * x + 1 < cx2; break;
          case RecipeKind::kRightHalf: keep = 2 * x + 1 >= cx2; break;
          case RecipeKind::kUnion: break;
        }
        if (keep) out.at(y, x) = 1;
      }
    }
  }
  return out;
}

namespace {

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h + 360.0, 360.0) / 60.0;
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  return {quantize(r + m), quantize(g + m), quantize(b + m)};
}

double base_hue(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kRectangle: return 220.0;
    case ShapeKind::kDisk: return 0.0;
    case ShapeKind::kTriangle: return 120.0;
    case ShapeKind::kStriped: return 50.0;
  }
  return 0.0;
}

// Rasterizes a shape of random size into a mask with its box at (oy, ox).
SceneObject sample_shape(ShapeKind kind, Rng& rng, std::size_t size) {
  SceneObject o;
  o.kind = kind;
  std::size_t h = 0, w = 0;
  switch (kind) {
    case ShapeKind::kRectangle:
    case ShapeKind::kStriped:
      h = static_cast<std::size_t>(rng.integer(5, 10));
      w = static_cast<std::size_t>(rng.integer(5, 10));
      break;
    case ShapeKind::kDisk:
      h = w = static_cast<std::size_t>(rng.integer(6, 11));
      break;
    case ShapeKind::kTriangle:
      h = static_cast<std::size_t>(rng.integer(6, 10));
      w = static_cast<std::size_t>(rng.integer(7, 11));
      break;
  }
  o.y0 = rng.index(size - h + 1);
  o.x0 = rng.index(size - w + 1);
  o.y1 = o.y0 + h;
  o.x1 = o.x0 + w;
  o.mask = Mask(size, size);
  for (std::size_t y = o.y0; y < o.y1; ++y) {
    for (std::size_t x = o.x0; x < o.x1; ++x) {
      const double py = static_cast<double>(y - o.y0) + 0.5;
      const double px = static_cast<double>(x - o.x0) + 0.5;
      bool inside = true;
      if (kind == ShapeKind::kDisk) {
        const double r = static_cast<double>(h) / 2.0;
        inside = (py - r) * (py - r) + (px - r) * (px - r) <= r * r;
      } else if (kind == ShapeKind::kTriangle) {
        // Apex at the top center, base along the bottom edge.
        const double half = static_cast<double>(w) / 2.0 * py / static_cast<double>(h);
        inside = std::abs(px - static_cast<double>(w) / 2.0) <= half + 0.25;
      }
      o.mask.at(y, x) = inside ? 1 : 0;
    }
  }
  return o;
}

bool overlaps_with_gap(const SceneObject& cand, const std::vector<SceneObject>& placed,
                       std::size_t size) {
  for (const SceneObject& o : placed) {
    for (std::size_t y = cand.y0; y < cand.y1; ++y) {
      for (std::size_t x = cand.x0; x < cand.x1; ++x) {
        if (!cand.mask.at(y, x)) continue;
        for (std::size_t dy = 0; dy < 3; ++dy) {
          for (std::size_t dx = 0; dx < 3; ++dx) {
            const std::size_t yy = y + dy, xx = x + dx;
            if (yy < 1 || xx < 1 || yy > size || xx > size) continue;
            if (o.mask.at(yy - 1, xx - 1)) return true;
          }
        }
      }
    }
  }
  return false;
}

}  // namespace

Scene generate_scene(const GeneratorConfig& cfg, Split split, std::size_t index) {
  const std::size_t n = cfg.image_size;
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(split) * 1000003ULL + index));
  Scene scene;
  scene.split = split;
  scene.index = index;

  const int count = rng.integer(cfg.min_objects, cfg.max_objects);
  // A crowded layout can leave no room for the last objects; start the
  // layout over a few times before giving up.
  constexpr int kLayoutRestarts = 20;
  bool complete = false;
  int failed_at = 0;
  for (int layout = 0; layout < kLayoutRestarts && !complete; ++layout) {
    scene.objects.clear();
    complete = true;
    for (int k = 0; k < count && complete; ++k) {
      const ShapeKind kind = kAllShapeKinds[rng.index(kAllShapeKinds.size())];
      bool placed = false;
      for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
        SceneObject cand = sample_shape(kind, rng, n);
        if (overlaps_with_gap(cand, scene.objects, n)) continue;
        for (int c = 0; c < 50; ++c) {
          cand.color = hsv_to_rgb(base_hue(kind) + rng.uniform(-18.0, 18.0),
                                  rng.uniform(0.6, 1.0), rng.uniform(0.65, 1.0));
          const bool distinct = std::all_of(
              scene.objects.begin(), scene.objects.end(), [&](const SceneObject& o) {
                double d = 0.0;
                for (int ch = 0; ch < 3; ++ch) {
                  d = std::max(d, std::abs(o.color[ch] - cand.color[ch]));
                }
                return d >= 0.06;
              });
          if (distinct) break;
        }
        scene.objects.push_back(std::move(cand));
        placed = true;
      }
      if (!placed) {
        complete = false;
        failed_at = k;
      }
    }
  }
  if (!complete) {
    throw GenerationError("cannot place object " + std::to_string(failed_at) +
                          " in " + std::string(split_name(split)) + " scene " +
                          std::to_string(index));
  }

  // Gray textured background, then the shapes.
  Image& img = scene.image = Image(n, n);
  const double gray = rng.uniform(0.3, 0.6);
  const double tint = rng.uniform(-0.03, 0.03);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double pattern = ((x + y) % 4 < 2) ? 0.03 : -0.03;
      const double noise = rng.uniform(-0.03, 0.03);
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(y, x, c) = quantize(gray + pattern + noise + (c == 2 ? tint : 0.0));
      }
    }
  }
  for (const SceneObject& o : scene.objects) {
    for (std::size_t y = o.y0; y < o.y1; ++y) {
      for (std::size_t x = o.x0; x < o.x1; ++x) {
        if (!o.mask.at(y, x)) continue;
        const bool dark = o.kind == ShapeKind::kStriped && ((x - o.x0) / 2) % 2 == 1;
        for (std::size_t c = 0; c < 3; ++c) {
          img.at(y, x, c) = dark ? quantize(o.color[c] * 0.35) : o.color[c];
        }
      }
    }
  }

  // Ground truth and prompt labelings.
  Mask background(n, n);
  for (std::size_t i = 0; i < background.bits.size(); ++i) {
    background.bits[i] = std::none_of(scene.objects.begin(), scene.objects.end(),
                                      [&](const SceneObject& o) { return o.mask.bits[i]; });
  }
  std::vector<std::string> simple = {std::string(kBackgroundToken)};
  scene.gt_masks[std::string(kBackgroundToken)] = background;
  for (ShapeKind k : kAllShapeKinds) {
    const std::string tok(kind_token(k));
    if (!has_kind(scene.objects, tok)) continue;
    simple.push_back(tok);
    scene.gt_masks[tok] = kind_mask(scene.objects, tok, n, n);
  }
  scene.prompts.push_back({"simple", simple});
  for (const CompoundRecipe& r : cfg.compounds) {
    const bool held = cfg.held_out.count(r.token) != 0;
    if ((split == Split::kTrain) == held) continue;
    if (!std::all_of(r.parts.begin(), r.parts.end(),
                     [&](const std::string& p) { return has_kind(scene.objects, p); })) {
      continue;
    }
    scene.gt_masks[r.token] = compound_mask(r, scene.objects, n, n);
    std::vector<std::string> labeling;
    for (const std::string& t : simple) {
      if (std::find(r.parts.begin(), r.parts.end(), t) == r.parts.end()) {
        labeling.push_back(t);
      }
    }
    labeling.push_back(r.token);
    scene.prompts.push_back({"compound", labeling});
  }
  return scene;
}

namespace {

std::string scene_dir_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05zu", index);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::uint64_t generate_split(const GeneratorConfig& cfg, Split split,
                             const std::filesystem::path& dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::uint64_t checksum = 1469598103934665603ULL;
  json names = json::array();
  for (std::size_t i = 0; i < cfg.count(split); ++i) {
    const Scene scene = generate_scene(cfg, split, i);
    const fs::path sdir = dir / scene_dir_name(i);
    fs::create_directories(sdir / "masks", ec);
    if (ec) throw IoError("cannot create " + sdir.string() + ": " + ec.message());
    write_ppm(sdir / "image.ppm", scene.image);
    json meta;
    meta["index"] = i;
    meta["split"] = std::string(split_name(split));
    meta["tokens"] = json::object();
    for (const auto& [token, mask] : scene.gt_masks) {
      const std::string file = "masks/" + token + ".pgm";
      write_pgm(sdir / file, mask);
      meta["tokens"][token] = file;
    }
    meta["prompts"] = json::array();
    for (const PromptSet& p : scene.prompts) {
      meta["prompts"].push_back({{"kind", p.kind}, {"tokens", p.tokens}});
    }
    meta["objects"] = json::array();
    for (const SceneObject& o : scene.objects) {
      meta["objects"].push_back({{"kind", std::string(kind_token(o.kind))},
                                 {"color", o.color},
                                 {"box", {o.y0, o.x0, o.y1, o.x1}}});
    }
    write_text_file(sdir / "meta.json", meta.dump(1) + "\n");
    for (const char* f : {"meta.json", "image.ppm"}) {
      checksum = fnv1a64(read_file_bytes(sdir / f), checksum);
    }
    for (const auto& [token, mask] : scene.gt_masks) {
      checksum = fnv1a64(read_file_bytes(sdir / "masks" / (token + ".pgm")), checksum);
    }
    names.push_back(scene_dir_name(i));
  }
  json manifest;
  manifest["split"] = std::string(split_name(split));
  manifest["count"] = cfg.count(split);
  manifest["seed"] = cfg.seed;
  manifest["image_size"] = cfg.image_size;
  manifest["scenes"] = names;
  manifest["compounds"] = json::array();
  for (const CompoundRecipe& r : cfg.compounds) {
    const bool held = cfg.held_out.count(r.token) != 0;
    if (split == Split::kTrain && held) continue;
    manifest["compounds"].push_back(format_recipe(r));
  }
  manifest["checksum"] = hex64(checksum);
  write_text_file(dir / "manifest.json", manifest.dump(1) + "\n");
  return checksum;
}

std::vector<Scene> load_split(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_text_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError((dir / "manifest.json").string() + ": " + e.what());
  }
  const Split split = split_from_name(manifest.at("split").get<std::string>());
  std::vector<Scene> scenes;
  for (const auto& name : manifest.at("scenes")) {
    const auto sdir = dir / name.get<std::string>();
    json meta;
    try {
      meta = json::parse(read_text_file(sdir / "meta.json"));
    } catch (const json::exception& e) {
      throw IoError((sdir / "meta.json").string() + ": " + e.what());
    }
    Scene s;
    s.split = split;
    s.index = meta.at("index").get<std::size_t>();
    s.image = read_ppm(sdir / "image.ppm");
    for (const auto& [token, file] : meta.at("tokens").items()) {
      s.gt_masks[token] = read_pgm(sdir / file.get<std::string>());
    }
    for (const auto& p : meta.at("prompts")) {
      s.prompts.push_back({p.at("kind").get<std::string>(),
                           p.at("tokens").get<std::vector<std::string>>()});
    }
    for (const auto& o : meta.at("objects")) {
      SceneObject obj;
      obj.kind = kind_from_token(o.at("kind").get<std::string>());
      obj.color = o.at("color").get<std::array<double, 3>>();
      const auto box = o.at("box").get<std::array<std::size_t, 4>>();
      obj.y0 = box[0];
      obj.x0 = box[1];
      obj.y1 = box[2];
      obj.x1 = box[3];
      s.objects.push_back(std::move(obj));
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace pmp
