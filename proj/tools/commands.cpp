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

#include "commands.hpp"

#include <CLI11.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "pmp/checkpoint.hpp"
#include "pmp/errors.hpp"
#include "pmp/evaluator.hpp"
#include "pmp/image.hpp"
#include "pmp/run_config.hpp"
#include "pmp/stage_two.hpp"
#include "pmp/synth_scenes.hpp"
#include "pmp/trainer.hpp"

namespace pmp::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string strategy;
  std::string checkpoint;
  std::string encoder;
  std::string image;
  std::string prompt;
  std::string out;
  bool eval_only = false;
};

RunConfig effective_config(const Options& opt) {
  RunConfig cfg = opt.config.empty() ? RunConfig{} : load_run_config(opt.config);
  if (!opt.strategy.empty()) cfg.model.decoder.strategy = strategy_from_name(opt.strategy);
  cfg.model.sync_widths();
  cfg.validate();
  return cfg;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void echo_config(const fs::path& path, const RunConfig& cfg) {
  ensure_dir(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  write_text_file(path, format_run_config(cfg));
}

fs::path split_dir(const RunConfig& cfg, Split split) {
  return cfg.data_dir / std::string(split_name(split));
}

std::string strategy_tag(const RunConfig& cfg) {
  return std::string(strategy_name(cfg.model.decoder.strategy));
}

fs::path model_path(const RunConfig& cfg, Strategy s) {
  return cfg.out_dir / ("model-" + std::string(strategy_name(s)) + ".ckpt");
}

fs::path encoder_path(const RunConfig& cfg, const Options& opt) {
  return opt.encoder.empty() ? cfg.out_dir / "encoder.ckpt" : fs::path(opt.encoder);
}

FrozenEncoderConfig encoder_config(const RunConfig& cfg) {
  FrozenEncoderConfig e = cfg.encoder;
  e.embed_dim = cfg.model.decoder.embed_dim;
  return e;
}

FrozenEncoder load_encoder(const RunConfig& cfg, const fs::path& path) {
  FrozenEncoder enc(encoder_config(cfg), cfg.pretrain.seed);
  load_checkpoint(path, enc.params());
  enc.freeze();
  return enc;
}

Model load_model(const RunConfig& cfg, const fs::path& path) {
  Model model(cfg.model);
  load_checkpoint(path, model.params());
  return model;
}

void write_report(const fs::path& path, std::ostream& out, std::span<const AblationRow> rows) {
  std::ostringstream table;
  write_ablation_report(table, rows);
  out << table.str();
  write_text_file(path, table.str());
}

int gen_data(const Options& opt, std::ostream& out) {
  const RunConfig cfg = effective_config(opt);
  ensure_dir(cfg.data_dir);
  echo_config(cfg.data_dir / "config.txt", cfg);
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    const std::uint64_t sum = generate_split(cfg.data, s, split_dir(cfg, s));
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s scenes=%zu checksum=%016llx\n",
                  std::string(split_name(s)).c_str(), cfg.data.count(s),
                  static_cast<unsigned long long>(sum));
    out << buf;
  }
  return kOk;
}

int pretrain_clip(const Options& opt, std::ostream& out) {
  const RunConfig cfg = effective_config(opt);
  ensure_dir(cfg.out_dir);
  echo_config(cfg.out_dir / "pretrain.config", cfg);
  const TextBank bank = build_text_bank(cfg);
  const auto train = load_split(split_dir(cfg, Split::kTrain));
  std::ostringstream log;
  FrozenEncoder enc = pretrain_frozen_encoder(train, bank, encoder_config(cfg), cfg.pretrain, &log);
  const auto test = load_split(split_dir(cfg, Split::kTest));
  char buf[64];
  std::snprintf(buf, sizeof(buf), "retrieval_accuracy=%.4f\n", retrieval_accuracy(enc, test, bank));
  log << buf;
  write_text_file(cfg.out_dir / "pretrain.log", log.str());
  save_checkpoint(encoder_path(cfg, opt), enc.params());
  out << log.str();
  return kOk;
}

int train_cmd(const Options& opt, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = effective_config(opt);
  ensure_dir(cfg.out_dir);
  const std::string tag = strategy_tag(cfg);
  echo_config(cfg.out_dir / ("train-" + tag + ".config"), cfg);
  const TextBank bank = build_text_bank(cfg);
  const auto scenes = load_split(split_dir(cfg, Split::kTrain));
  const fs::path ckpt = opt.checkpoint.empty() ? model_path(cfg, cfg.model.decoder.strategy)
                                               : fs::path(opt.checkpoint);
  const fs::path log_path = cfg.out_dir / ("train-" + tag + ".log");
  Model model(cfg.model);
  save_checkpoint(ckpt, model.params());
  write_text_file(log_path, "");
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot open " + log_path.string());
  auto on_epoch = [&](const EpochMetrics& m, const Model& current) {
    const std::string line = format_metrics(m) + "\n";
    log << line << std::flush;
    out << line << std::flush;
    save_checkpoint(ckpt, current.params());
  };
  try {
    train(model, scenes, bank, training_tokens(cfg.data), cfg.train, on_epoch, nullptr);
  } catch (const DivergenceError& e) {
    err << "pmp: " << e.what() << "; last good checkpoint kept at " << ckpt.string() << "\n";
    return kDivergence;
  }
  return kOk;
}

EvalResult evaluate_checkpoint(const RunConfig& cfg, const fs::path& model_file,
                               const FrozenEncoder& enc, std::span<const Scene> scenes,
                               const TextBank& bank) {
  const Model model = load_model(cfg, model_file);
  return evaluate(model, enc, scenes, bank, cfg.data, cfg.eval);
}

int eval_cmd(const Options& opt, std::ostream& out) {
  const RunConfig cfg = effective_config(opt);
  ensure_dir(cfg.out_dir);
  const std::string tag = strategy_tag(cfg);
  echo_config(cfg.out_dir / ("eval-" + tag + ".config"), cfg);
  const TextBank bank = build_text_bank(cfg);
  const FrozenEncoder enc = load_encoder(cfg, encoder_path(cfg, opt));
  const auto scenes = load_split(split_dir(cfg, Split::kTest));
  const fs::path ckpt = opt.checkpoint.empty() ? model_path(cfg, cfg.model.decoder.strategy)
                                               : fs::path(opt.checkpoint);
  const std::vector<AblationRow> rows{{tag, evaluate_checkpoint(cfg, ckpt, enc, scenes, bank)}};
  write_report(cfg.out_dir / ("eval-" + tag + ".tsv"), out, rows);
  return kOk;
}

int ablate(const Options& opt, std::ostream& out, std::ostream& err) {
  const RunConfig base = effective_config(opt);
  if (!opt.eval_only) {
    for (Strategy s : base.ablation) {
      Options o = opt;
      o.strategy = std::string(strategy_name(s));
      o.checkpoint.clear();
      std::ostringstream quiet;
      if (const int code = train_cmd(o, quiet, err); code != kOk) return code;
    }
  }
  ensure_dir(base.out_dir);
  echo_config(base.out_dir / "ablation.config", base);
  const TextBank bank = build_text_bank(base);
  const FrozenEncoder enc = load_encoder(base, encoder_path(base, opt));
  const auto scenes = load_split(split_dir(base, Split::kTest));
  for (Strategy s : base.ablation) {
    if (!fs::exists(model_path(base, s))) {
      throw ConfigError("no checkpoint for strategy " + std::string(strategy_name(s)) + " at " +
                        model_path(base, s).string());
    }
  }
  std::vector<AblationRow> rows;
  for (Strategy s : base.ablation) {
    RunConfig cfg = base;
    cfg.model.decoder.strategy = s;
    rows.push_back({std::string(strategy_name(s)),
                    evaluate_checkpoint(cfg, model_path(cfg, s), enc, scenes, bank)});
  }
  write_report(base.out_dir / "ablation.tsv", out, rows);
  return kOk;
}

constexpr std::array<std::array<double, 3>, 8> kPalette = {{
    {0.90, 0.10, 0.10}, {0.10, 0.70, 0.10}, {0.15, 0.35, 0.95}, {0.95, 0.80, 0.10},
    {0.80, 0.20, 0.85}, {0.10, 0.80, 0.85}, {0.95, 0.55, 0.15}, {0.55, 0.55, 0.55},
}};

int segment_cmd(const Options& opt, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = effective_config(opt);
  const TextBank bank = build_text_bank(cfg);
  std::vector<std::string> warnings;
  const auto prompt = tokenize_prompt(opt.prompt, bank.vocab, default_stopwords(), &warnings);
  for (const auto& w : warnings) err << "pmp: " << w << "\n";
  if (prompt.empty()) throw ConfigError("prompt has no known class tokens after filtering");
  const Image image = read_ppm(opt.image);
  const fs::path ckpt = opt.checkpoint.empty() ? model_path(cfg, cfg.model.decoder.strategy)
                                               : fs::path(opt.checkpoint);
  const Model model = load_model(cfg, ckpt);
  const FrozenEncoder enc = load_encoder(cfg, encoder_path(cfg, opt));
  const Segmentation seg = segment(model, enc, image, prompt, bank, cfg.eval.lambda);

  const fs::path dir = opt.out.empty() ? cfg.out_dir / "segment" : fs::path(opt.out);
  ensure_dir(dir);
  echo_config(dir / "segment.config", cfg);
  std::vector<std::uint8_t> levels(seg.labels.size());
  Image overlay = image;
  for (std::size_t k = 0; k < prompt.size(); ++k) {
    Mask m(image.height, image.width);
    for (std::size_t p = 0; p < seg.labels.size(); ++p) m.bits[p] = seg.labels[p] == k;
    write_pgm(dir / (prompt[k] + ".pgm"), m);
    out << prompt[k] << ".pgm pixels=" << m.count() << "\n";
  }
  for (std::size_t p = 0; p < seg.labels.size(); ++p) {
    levels[p] = static_cast<std::uint8_t>(std::min<std::size_t>(seg.labels[p], 255));
    const auto& color = kPalette[seg.labels[p] % kPalette.size()];
    for (std::size_t c = 0; c < 3; ++c) {
      overlay.rgb[p * 3 + c] = 0.5 * image.rgb[p * 3 + c] + 0.5 * color[c];
    }
  }
  write_pgm_levels(dir / "labels.pgm", image.height, image.width, levels);
  write_ppm(dir / "overlay.ppm", overlay);
  return kOk;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prompt-conditioned mask proposals for open-vocabulary segmentation", "pmp"};
  app.require_subcommand(1);
  Options opt;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", opt.config, "run configuration (key = value lines)");
  };
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic scene splits");
  auto* pre = app.add_subcommand("pretrain-clip", "pretrain and freeze the image-text encoder");
  auto* trn = app.add_subcommand("train", "train the proposal model");
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  auto* seg = app.add_subcommand("segment", "segment one image from a free-text prompt");
  auto* abl = app.add_subcommand("ablate", "train and compare text strategies");
  for (auto* cmd : {gen, pre, trn, evl, seg, abl}) add_config(cmd);
  for (auto* cmd : {trn, evl, seg}) {
    cmd->add_option("--strategy", opt.strategy, "override model.strategy");
    cmd->add_option("--checkpoint", opt.checkpoint, "model checkpoint path");
  }
  for (auto* cmd : {pre, evl, seg, abl}) {
    cmd->add_option("--encoder", opt.encoder, "frozen encoder checkpoint path");
  }
  seg->add_option("--image", opt.image, "input PPM image")->required();
  seg->add_option("--prompt", opt.prompt, "class names or a sentence")->required();
  seg->add_option("--out", opt.out, "output directory");
  abl->add_flag("--eval-only", opt.eval_only, "evaluate existing checkpoints only");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "pmp: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (*gen) return gen_data(opt, out);
    if (*pre) return pretrain_clip(opt, out);
    if (*trn) return train_cmd(opt, out, err);
    if (*evl) return eval_cmd(opt, out);
    if (*seg) return segment_cmd(opt, out, err);
    if (*abl) return ablate(opt, out, err);
  } catch (const ChecksumError& e) {
    err << "pmp: " << e.what() << "\n";
    return kChecksumError;
  } catch (const NumericError& e) {
    err << "pmp: " << e.what() << "\n";
    return kDivergence;
  } catch (const IoError& e) {
    err << "pmp: " << e.what() << "\n";
    return kIoError;
  } catch (const ConfigError& e) {
    err << "pmp: " << e.what() << "\n";
    return kConfigError;
  } catch (const LookupError& e) {
    err << "pmp: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "pmp: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace pmp::cli
