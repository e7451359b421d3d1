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

#include "pmp/run_config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "pmp/errors.hpp"
#include "pmp/image.hpp"

namespace pmp {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = std::min(s.find(sep, start), s.size());
    std::string item = trim(s.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    start = end + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError("not a number: '" + text + "'");
  return v;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("not a boolean: '" + text + "'");
}

struct Binding {
  ConfigKey key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Builds a binding from an accessor returning a reference to the field.
template <typename Access>
Binding field(std::string key, std::string help, Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<RunConfig&>()))>;
  Binding b{{std::move(key), std::move(help)}, {}, {}};
  b.get = [access](const RunConfig& c) -> std::string {
    const T& v = access(const_cast<RunConfig&>(c));
    if constexpr (std::is_same_v<T, bool>) {
      return v ? "true" : "false";
    } else if constexpr (std::is_same_v<T, double>) {
      return format_double(v);
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      return v.string();
    } else if constexpr (std::is_same_v<T, Strategy>) {
      return std::string(strategy_name(v));
    } else {
      return std::to_string(v);
    }
  };
  b.set = [access](RunConfig& c, const std::string& text) {
    T& v = access(c);
    if constexpr (std::is_same_v<T, bool>) {
      v = parse_bool(text);
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      v = text;
    } else if constexpr (std::is_same_v<T, Strategy>) {
      v = strategy_from_name(text);
    } else {
      v = parse_number<T>(text);
    }
  };
  return b;
}

#define PMP_FIELD(key, help, expr) field(key, help, [](RunConfig& c) -> auto& { return expr; })

std::vector<Binding> bindings() {
  std::vector<Binding> b = {
      PMP_FIELD("data_dir", "dataset directory", c.data_dir),
      PMP_FIELD("out_dir", "directory for checkpoints, logs and reports", c.out_dir),
      PMP_FIELD("data.seed", "scene generator seed", c.data.seed),
      PMP_FIELD("data.image_size", "scene height and width in pixels", c.data.image_size),
      PMP_FIELD("data.min_objects", "fewest objects per scene", c.data.min_objects),
      PMP_FIELD("data.max_objects", "most objects per scene", c.data.max_objects),
      PMP_FIELD("data.max_retries", "placement attempts per object", c.data.max_retries),
      PMP_FIELD("data.train_count", "training scenes", c.data.train_count),
      PMP_FIELD("data.val_count", "validation scenes", c.data.val_count),
      PMP_FIELD("data.test_count", "test scenes", c.data.test_count),
  };
  b.push_back({{"data.compounds", "compound recipes, ';' separated"},
               [](const RunConfig& c) {
                 std::string s;
                 for (const auto& r : c.data.compounds) {
                   if (!s.empty()) s += "; ";
                   s += format_recipe(r);
                 }
                 return s;
               },
               [](RunConfig& c, const std::string& text) {
                 c.data.compounds.clear();
                 for (const auto& r : split_list(text, ';')) {
                   c.data.compounds.push_back(parse_recipe(r));
                 }
               }});
  b.push_back({{"data.held_out", "compound tokens kept out of training, ',' separated"},
               [](const RunConfig& c) {
                 std::string s;
                 for (const auto& t : c.data.held_out) s += (s.empty() ? "" : ",") + t;
                 return s;
               },
               [](RunConfig& c, const std::string& text) {
                 const auto items = split_list(text, ',');
                 c.data.held_out = std::set<std::string>(items.begin(), items.end());
               }});
  for (Binding x : {
           PMP_FIELD("text.seed", "seed of the token embedding table", c.text.seed),
           PMP_FIELD("text.blend", "weight of a compound's own direction", c.text.blend),
           PMP_FIELD("encoder.hidden", "frozen encoder hidden channels", c.encoder.hidden),
           PMP_FIELD("encoder.tau_init", "initial encoder temperature", c.encoder.tau_init),
           PMP_FIELD("pretrain.epochs", "encoder pretraining epochs", c.pretrain.epochs),
           PMP_FIELD("pretrain.batch", "encoder pretraining batch size", c.pretrain.batch),
           PMP_FIELD("pretrain.lr", "encoder pretraining learning rate", c.pretrain.lr),
           PMP_FIELD("pretrain.seed", "encoder pretraining seed", c.pretrain.seed),
           PMP_FIELD("model.seed", "model initialization seed", c.model.seed),
           PMP_FIELD("model.queries", "learned queries", c.model.decoder.queries),
           PMP_FIELD("model.channels", "decoder width", c.model.decoder.channels),
           PMP_FIELD("model.embed_dim", "mask and text embedding width", c.model.decoder.embed_dim),
           PMP_FIELD("model.rounds", "decoder rounds over the three levels", c.model.decoder.rounds),
           PMP_FIELD("model.ffn_hidden", "feed-forward hidden width", c.model.decoder.ffn_hidden),
           PMP_FIELD("model.strategy", "none, pmp, concat, concat_drop or text_as_queries",
                     c.model.decoder.strategy),
           PMP_FIELD("model.unscaled_logits", "skip the 1/sqrt(C) logit scale",
                     c.model.decoder.unscaled_logits),
           PMP_FIELD("model.text_residual", "add a residual around text attention",
                     c.model.decoder.text_residual),
           PMP_FIELD("model.query_pos", "add query positions before projection",
                     c.model.decoder.query_pos),
           PMP_FIELD("model.coord_channels", "append pixel coordinates to the image",
                     c.model.backbone.coord_channels),
           PMP_FIELD("model.tau_init", "initial first-stage temperature", c.model.head.tau_init),
           PMP_FIELD("train.epochs", "training epochs", c.train.epochs),
           PMP_FIELD("train.batch", "training batch size", c.train.batch),
           PMP_FIELD("train.lr", "Adam learning rate", c.train.lr),
           PMP_FIELD("train.seed", "sampling seed", c.train.seed),
           PMP_FIELD("train.negatives", "negative tokens per training prompt", c.train.negatives),
           PMP_FIELD("train.compound_prob", "chance of a compound training labeling",
                     c.train.compound_prob),
           PMP_FIELD("train.cost_cls", "classification weight", c.train.loss.weights.cls),
           PMP_FIELD("train.cost_ce", "mask cross-entropy weight", c.train.loss.weights.ce),
           PMP_FIELD("train.cost_dice", "mask dice weight", c.train.loss.weights.dice),
           PMP_FIELD("train.no_object_weight", "weight of unmatched proposals",
                     c.train.loss.no_object_weight),
           PMP_FIELD("train.aux", "supervise every decoder layer", c.train.loss.aux),
           PMP_FIELD("eval.lambda", "first-stage exponent of the ensemble", c.eval.lambda),
           PMP_FIELD("eval.negatives", "negative tokens per evaluation prompt", c.eval.negatives),
           PMP_FIELD("eval.seed", "evaluation prompt seed", c.eval.seed),
       }) {
    b.push_back(std::move(x));
  }
  b.push_back({{"ablate.strategies", "strategies compared by ablate, ',' separated"},
               [](const RunConfig& c) {
                 std::string s;
                 for (Strategy st : c.ablation) {
                   s += (s.empty() ? "" : ",") + std::string(strategy_name(st));
                 }
                 return s;
               },
               [](RunConfig& c, const std::string& text) {
                 c.ablation.clear();
                 for (const auto& t : split_list(text, ',')) {
                   c.ablation.push_back(strategy_from_name(t));
                 }
               }});
  return b;
}

#undef PMP_FIELD

}  // namespace

void RunConfig::validate() const {
  data.validate();
  model.decoder.validate();
  train.validate();
  if (model.backbone.channels != model.decoder.channels ||
      model.backbone.embed_dim != model.decoder.embed_dim ||
      model.head.channels != model.decoder.channels ||
      model.head.embed_dim != model.decoder.embed_dim) {
    throw ConfigError("model widths are inconsistent");
  }
  if (!(text.blend >= 0.0)) throw ConfigError("text.blend must be nonnegative");
  if (!(encoder.tau_init > 0.0) || !(model.head.tau_init > 0.0)) {
    throw ConfigError("temperatures must be positive");
  }
  if (encoder.hidden == 0) throw ConfigError("encoder.hidden must be positive");
  if (pretrain.batch == 0 || !(pretrain.lr > 0.0)) {
    throw ConfigError("pretrain batch and learning rate must be positive");
  }
  if (eval.lambda < 0.0 || eval.lambda > 1.0) throw ConfigError("eval.lambda must lie in [0, 1]");
  if (ablation.empty()) throw ConfigError("ablate.strategies is empty");
}

std::vector<ConfigKey> run_config_keys() {
  std::vector<ConfigKey> out;
  for (const Binding& b : bindings()) out.push_back(b.key);
  return out;
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  std::map<std::string, const Binding*> by_key;
  const auto table = bindings();
  for (const Binding& b : table) by_key[b.key.key] = &b;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string where = "line " + std::to_string(lineno) + ": ";
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "repeated key '" + key + "'");
    try {
      it->second->set(cfg, value);
    } catch (const std::exception& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  cfg.model.sync_widths();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text_file(path));
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const Binding& b : bindings()) out += b.key.key + " = " + b.get(cfg) + "\n";
  return out;
}

std::uint64_t run_config_hash(const RunConfig& cfg) {
  const std::string text = format_run_config(cfg);
  return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

TextBank build_text_bank(const RunConfig& cfg) {
  return build_vocab(vocabulary_entries(cfg.data), cfg.model.decoder.embed_dim, cfg.text.seed,
                     compositions(cfg.data), cfg.text.blend);
}

}  // namespace pmp
