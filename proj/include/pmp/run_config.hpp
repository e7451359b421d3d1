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
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pmp/evaluator.hpp"
#include "pmp/model.hpp"
#include "pmp/stage_two.hpp"
#include "pmp/synth_scenes.hpp"
#include "pmp/text_bank.hpp"
#include "pmp/trainer.hpp"

namespace pmp {

struct TextBankConfig {
  std::uint64_t seed = 42;
  double blend = 0.5;
};

// Every tunable of a run. Files are `key = value` lines with `#` comments;
// keys not listed by run_config_keys() are rejected.
struct RunConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "out";
  GeneratorConfig data = default_generator_config();
  TextBankConfig text;
  FrozenEncoderConfig encoder;
  PretrainConfig pretrain;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::vector<Strategy> ablation = {Strategy::kPmp, Strategy::kConcat,
                                    Strategy::kConcatDrop,
                                    Strategy::kTextAsQueries, Strategy::kNone};

  // ConfigError on inconsistent values.
  void validate() const;
};

struct ConfigKey {
  std::string key;
  std::string help;
};
std::vector<ConfigKey> run_config_keys();

// ConfigError with the line number on syntax errors, unknown keys, repeated
// keys and unparsable values.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

// One `key = value` line per key in run_config_keys() order. Parsing the
// result yields the same configuration.
std::string format_run_config(const RunConfig& cfg);

// Stable hash of format_run_config(cfg).
std::uint64_t run_config_hash(const RunConfig& cfg);

TextBank build_text_bank(const RunConfig& cfg);

}  // namespace pmp
