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

// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. The training experiment caches its
// artifacts under --cache, keyed by the hash of the run configuration, so
// reruns only repeat the evaluation.

#include <CLI11.hpp>

#include <sys/resource.h>
#include <sys/wait.h>
#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "assignment_oracle.hpp"
#include "decoder_rig.hpp"
#include "pmp/checkpoint.hpp"
#include "pmp/errors.hpp"
#include "pmp/gradcheck.hpp"
#include "pmp/image.hpp"
#include "pmp/model.hpp"
#include "pmp/proposal_head.hpp"
#include "pmp/run_config.hpp"
#include "pmp/stage_two.hpp"
#include "test_util.hpp"

namespace pmp {
namespace {

namespace fs = std::filesystem;
using testing::Rig;

// Tolerances and budgets.
constexpr double kGradStep = 1e-5;
constexpr double kGradRelTol = 1e-5;
constexpr double kWeightAbsTol = 1e-8;
constexpr double kGradSeconds = 60.0;
constexpr double kRowSumTol = 1e-12;
constexpr double kTextPermTol = 1e-12;
constexpr double kEnsembleTol = 1e-4;
constexpr double kRetrievalMin = 0.90;
constexpr double kTrainSeconds = 15 * 60.0;
constexpr long kTrainMemoryKb = 1024L * 1024L;
constexpr double kCompoundRecallGain = 5.0;
constexpr double kCompoundMiouGain = 3.0;
constexpr double kSimpleMiouBand = 2.0;

// Training length of the directional experiment, sized to the time budget.
constexpr std::size_t kExperimentEpochs = 8;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. Full PMP stack, central differences with h = 1e-5 on the stack inputs
// (learned query features, query positions and text embeddings) and on
// every decoder weight.
Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_input = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rig rig(Strategy::kPmp, 3, seed, 4, 8, 8);
    Tensor* inputs[] = {&rig.store.get("decoder.query"), &rig.store.get("decoder.query_pos"),
                        &rig.text};
    Rng rng(mix_seed(seed, 77));
    const Tensor w = testing::random_matrix(rng, 4, 8);
    worst_input = std::max(
        worst_input,
        finite_diff_check([&](Tape& t) { return sum(mul(rig.run(t).states.back(), t.constant(w))); },
                          inputs, kGradStep));
  }
  // Weights: a tiny gradient next to a loss of order 100 is below the
  // rounding floor eps * |loss| / h of a central difference, so each
  // coordinate must satisfy |analytic - numeric| <= atol + rtol * |numeric|.
  double worst_weight_rel = 0.0, worst_weight_ratio = 0.0, key_bias_grad = 0.0;
  for (std::uint64_t seed = 11; seed <= 12; ++seed) {
    Rig rig(Strategy::kPmp, 3, seed, 4, 8, 8);
    std::vector<Tensor*> weights, key_biases;
    for (const auto& n : rig.store.names()) {
      if (n.rfind("decoder.", 0) != 0) continue;
      // Key biases shift a whole softmax row; their exact gradient is zero.
      const bool key_bias = n.size() > 4 && (n.compare(n.size() - 4, 4, ".k.b") == 0 ||
                                             n.find("_k.b") != std::string::npos);
      (key_bias ? key_biases : weights).push_back(&rig.store.get(n));
    }
    Rng rng(mix_seed(seed, 78));
    const Tensor w = testing::random_matrix(rng, 4, 8);
    auto loss = [&](Tape& t) {
      const DecodeResult r = rig.run(t);
      Var acc = sum(mul(r.states[1], t.constant(w)));
      for (std::size_t l = 2; l < r.states.size(); ++l) {
        acc = add(acc, sum(mul(r.states[l], t.constant(w))));
      }
      return acc;
    };
    for (const FiniteDiffPoint& pt : finite_diff_points(loss, weights, kGradStep)) {
      const double diff = std::abs(pt.analytic - pt.numeric);
      worst_weight_rel = std::max(
          worst_weight_rel, diff / (std::abs(pt.analytic) + std::abs(pt.numeric) + 1e-12));
      worst_weight_ratio =
          std::max(worst_weight_ratio, diff / (kWeightAbsTol + kGradRelTol * std::abs(pt.numeric)));
    }
    for (Tensor* b : key_biases) {
      for (double g : b->grad()) key_bias_grad = std::max(key_bias_grad, std::abs(g));
    }
  }
  const double secs = seconds_since(t0);
  return {worst_input <= kGradRelTol && worst_weight_ratio <= 1.0 && key_bias_grad <= 1e-12 &&
              secs < kGradSeconds,
          "inputs max_rel=" + fmt("%.2e", worst_input) + " weights max_rel=" +
              fmt("%.2e", worst_weight_rel) + " max |diff|/(1e-8 + 1e-5 |fd|)=" +
              fmt("%.3f", worst_weight_ratio) + " key_bias_grad=" + fmt("%.1e", key_bias_grad) +
              " time=" + fmt("%.1fs", secs)};
}

// 2. Attention rows, text order and query order on random instances.
Outcome attention_invariants() {
  double worst_row = 0.0, worst_text = 0.0;
  std::size_t equivariance_breaks = 0;
  Rng meta(2024);
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t n = 1 + meta.index(6), m = 1 + meta.index(5);
    Rig rig(Strategy::kPmp, m, 1000 + inst, n, 8, 8);
    AttentionProbe probe;
    Tape t1;
    const DecodeResult a = rig.run(t1, &probe);
    for (const Tensor& w : probe.weights) {
      for (std::size_t i = 0; i < w.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) s += w.at(i, j);
        worst_row = std::max(worst_row, std::abs(s - 1.0));
      }
    }
    // Text permutation.
    std::vector<std::size_t> tperm(m);
    std::iota(tperm.begin(), tperm.end(), 0);
    meta.shuffle(tperm);
    const Tensor text = rig.text;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t c = 0; c < text.cols(); ++c) rig.text.at(i, c) = text.at(tperm[i], c);
    }
    Tape t2;
    const DecodeResult b = rig.run(t2);
    for (std::size_t l = 0; l < a.states.size(); ++l) {
      worst_text = std::max(worst_text, testing::max_abs_diff(a.states[l].value(), b.states[l].value()));
      worst_text = std::max(worst_text, testing::max_abs_diff(a.predictions[l].mask_logits.value(),
                                                              b.predictions[l].mask_logits.value()));
    }
    rig.text = text;
    // Query permutation.
    std::vector<std::size_t> qperm(n);
    std::iota(qperm.begin(), qperm.end(), 0);
    meta.shuffle(qperm);
    for (const char* name : {"decoder.query", "decoder.query_pos"}) {
      Tensor& t = rig.store.get(name);
      const Tensor orig = t;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < t.cols(); ++c) t.at(i, c) = orig.at(qperm[i], c);
      }
    }
    Tape t3;
    const DecodeResult q = rig.run(t3);
    for (std::size_t l = 0; l < a.states.size(); ++l) {
      const Tensor& sa = a.states[l].value();
      const Tensor& sq = q.states[l].value();
      const Tensor& ma = a.predictions[l].mask_logits.value();
      const Tensor& mq = q.predictions[l].mask_logits.value();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < sa.cols(); ++c) equivariance_breaks += sq.at(i, c) != sa.at(qperm[i], c);
        for (std::size_t p = 0; p < ma.cols(); ++p) equivariance_breaks += mq.at(i, p) != ma.at(qperm[i], p);
      }
    }
  }
  return {worst_row <= kRowSumTol && worst_text <= kTextPermTol && equivariance_breaks == 0,
          "1000 instances: max |row sum - 1|=" + fmt("%.1e", worst_row) +
              " text-permutation max diff=" + fmt("%.1e", worst_text) +
              " query-permutation mismatches=" + std::to_string(equivariance_breaks)};
}

// 3. NONE against the independent reference, PMP without text against NONE.
Outcome baseline_equivalence() {
  std::size_t ref_mismatch = 0, empty_mismatch = 0;
  for (int inst = 0; inst < 100; ++inst) {
    Rig none(Strategy::kNone, 0, 5000 + inst, 4, 8, 8);
    Tape tape;
    const DecodeResult r = none.run(tape);
    const std::vector<Tensor> ref = testing::reference_decoder(none);
    ref_mismatch += ref.size() != r.states.size();
    for (std::size_t l = 0; l < std::min(ref.size(), r.states.size()); ++l) {
      ref_mismatch += !(r.states[l].value() == ref[l]);
    }
    Rig pmp(Strategy::kPmp, 0, 5000 + inst, 4, 8, 8);
    Tape t2;
    const DecodeResult p = pmp.run(t2);
    for (std::size_t l = 0; l < p.states.size(); ++l) {
      empty_mismatch += !(p.states[l].value() == r.states[l].value());
      empty_mismatch += !(p.predictions[l].mask_logits.value() == r.predictions[l].mask_logits.value());
    }
  }
  return {ref_mismatch == 0 && empty_mismatch == 0,
          "100 instances: reference mismatches=" + std::to_string(ref_mismatch) +
              " pmp(M=0) vs none mismatches=" + std::to_string(empty_mismatch)};
}

// 4. Mask-embedding counts per strategy.
Outcome shape_contract() {
  Rng meta(404);
  std::size_t bad = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 1 + meta.index(8), m = 1 + meta.index(6);
    const std::pair<Strategy, std::size_t> cases[] = {{Strategy::kConcat, n + m},
                                                      {Strategy::kConcatDrop, n},
                                                      {Strategy::kTextAsQueries, m},
                                                      {Strategy::kPmp, n},
                                                      {Strategy::kNone, n}};
    for (const auto& [s, rows] : cases) {
      Rig rig(s, m, 7000 + inst, n, 8, 8);
      Tape tape;
      const DecodeResult r = rig.run(tape);
      for (const Prediction& p : r.predictions) bad += p.mask_logits.rows() != rows;
    }
  }
  return {bad == 0, "50 random (N, M): N+M / N / M / N / N rows, violations=" + std::to_string(bad)};
}

// 5. Hungarian against exhaustive search.
Outcome matching_oracle() {
  Rng rng(55);
  std::size_t bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(6);
    const std::size_t g = 1 + rng.index(n);
    Tensor c({n, g});
    for (double& v : c.data()) v = trial % 2 ? rng.normal() : static_cast<double>(rng.index(4));
    bad += hungarian(c) != testing::brute_force_assignment(c);
  }
  return {bad == 0, "200 matrices up to 6x6, mismatches=" + std::to_string(bad)};
}

// 6. Scalar checks of both classification stages and the ensemble.
Outcome scalar_checks() {
  bool ok = true;
  std::string detail;
  const double e = std::exp(1.0);
  {
    // One class, z equal to its embedding, no-object orthogonal, tau = 1.
    const Tensor p = classify_stage1(Tensor::matrix(1, 2, {1, 0}), Tensor::matrix(1, 2, {1, 0}),
                                     Tensor::matrix(1, 2, {0, 1}), 1.0);
    const double err = std::max(std::abs(p[0] - e / (e + 1)), std::abs(p[1] - 1 / (e + 1)));
    ok &= err <= 1e-12;
    detail += "stage1 err=" + fmt("%.1e", err);
  }
  {
    const Tensor p = classify_stage2(Tensor::matrix(1, 2, {1, 0}), Tensor::matrix(2, 2, {1, 0, 0, 1}), 1.0);
    const double err = std::max(std::abs(p[0] - e / (e + 1)), std::abs(p[1] - 1 / (e + 1)));
    ok &= err <= 1e-12;
    detail += " stage2 err=" + fmt("%.1e", err);
  }
  {
    const Tensor out = ensemble(Tensor::matrix(1, 2, {0.8, 0.2}), Tensor::matrix(1, 1, {0.2}), 0.65);
    // Undo the renormalization: the no-object entry passes through.
    const double raw = out[0] * 0.2 / out[1];
    ok &= std::abs(raw - 0.4925) <= kEnsembleTol;
    detail += " ensemble=" + fmt("%.6f", raw);
  }
  std::size_t argmax_breaks = 0;
  Rng rng(66);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = 2 + rng.index(6);
    Tensor p({1, k + 1}), q({1, k});
    for (double& v : p.data()) v = rng.uniform();
    for (double& v : q.data()) v = rng.uniform();
    auto argmax = [k](const Tensor& x) {
      std::size_t b = 0;
      for (std::size_t j = 1; j < k; ++j) {
        if (x[j] > x[b]) b = j;
      }
      return b;
    };
    argmax_breaks += argmax(ensemble(p, q, 1.0)) != argmax(p);
    argmax_breaks += argmax(ensemble(p, q, 0.0)) != argmax(q);
  }
  ok &= argmax_breaks == 0;
  detail += " lambda 1/0 argmax mismatches=" + std::to_string(argmax_breaks);
  return {ok, detail};
}

// Runs the pmp binary with stdout and stderr sent to `log`.
struct ChildResult {
  int code = -1;
  double seconds = 0.0;
  long maxrss_kb = 0;
};

ChildResult run_tool(const std::string& tool, const std::vector<std::string>& args,
                     const fs::path& log) {
  std::vector<std::string> argv_s = {tool};
  argv_s.insert(argv_s.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_s) argv.push_back(a.data());
  argv.push_back(nullptr);
  const auto t0 = std::chrono::steady_clock::now();
  const pid_t pid = fork();
  if (pid < 0) throw IoError("fork failed");
  if (pid == 0) {
    const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd >= 0) {
      ::dup2(fd, 1);
      ::dup2(fd, 2);
      ::close(fd);
    }
    ::execv(tool.c_str(), argv.data());
    _exit(127);
  }
  int status = 0;
  rusage usage{};
  ::wait4(pid, &status, 0, &usage);
  ChildResult r;
  r.seconds = seconds_since(t0);
  r.maxrss_kb = usage.ru_maxrss;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  return r;
}

void must(const ChildResult& r, const std::string& what, const fs::path& log) {
  if (r.code != 0) {
    throw std::runtime_error(what + " exited with " + std::to_string(r.code) + ", see " +
                             log.string());
  }
}

std::map<std::string, std::map<std::string, double>> read_report(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string col;
    while (std::getline(h, col, '\t')) header.push_back(col);
  }
  std::map<std::string, std::map<std::string, double>> rows;
  while (std::getline(in, line)) {
    std::istringstream r(line);
    std::string cell, name;
    std::getline(r, name, '\t');
    for (std::size_t i = 1; i < header.size() && std::getline(r, cell, '\t'); ++i) {
      rows[name][header[i]] = std::stod(cell);
    }
  }
  return rows;
}

struct Experiment {
  double retrieval = 0.0;
  std::map<Strategy, ChildResult> training;
  std::map<std::string, std::map<std::string, double>> report;
};

std::string experiment_config_text() {
  std::ostringstream c;
  c << "data.seed = 42\n"
       "data.image_size = 32\n"
       "data.train_count = 2000\n"
       "data.test_count = 300\n"
       "train.epochs = "
    << kExperimentEpochs << "\n";
  return c.str();
}

Experiment run_experiment(const std::string& tool, const fs::path& cache) {
  RunConfig cfg = parse_run_config(experiment_config_text());
  cfg.data_dir.clear();
  cfg.out_dir.clear();
  char key[32];
  std::snprintf(key, sizeof(key), "%016llx",
                static_cast<unsigned long long>(run_config_hash(cfg)));
  const fs::path root = cache / key;
  fs::create_directories(root);
  cfg.data_dir = root / "data";
  cfg.out_dir = root / "out";
  const fs::path config = root / "run.cfg";
  write_text_file(config, format_run_config(cfg));
  const std::vector<std::string> with_config = {"-c", config.string()};
  auto args = [&](std::vector<std::string> a) {
    a.insert(a.end(), with_config.begin(), with_config.end());
    return a;
  };

  if (!fs::exists(cfg.data_dir / "test" / "manifest.json")) {
    std::cerr << "acceptance: generating scenes in " << cfg.data_dir << "\n";
    must(run_tool(tool, args({"gen-data"}), root / "gen-data.out"), "gen-data", root / "gen-data.out");
  }
  if (!fs::exists(cfg.out_dir / "encoder.ckpt")) {
    std::cerr << "acceptance: pretraining the frozen encoder\n";
    must(run_tool(tool, args({"pretrain-clip"}), root / "pretrain.out"), "pretrain-clip",
         root / "pretrain.out");
  }
  Experiment ex;
  {
    const std::string log = read_text_file(cfg.out_dir / "pretrain.log");
    const auto pos = log.rfind("retrieval_accuracy=");
    ex.retrieval = pos == std::string::npos ? 0.0 : std::stod(log.substr(pos + 19));
  }
  for (Strategy s : cfg.ablation) {
    const std::string name(strategy_name(s));
    const fs::path usage = cfg.out_dir / ("train-" + name + ".usage");
    ChildResult r;
    if (fs::exists(usage)) {
      std::istringstream in(read_text_file(usage));
      in >> r.code >> r.seconds >> r.maxrss_kb;
    } else {
      std::cerr << "acceptance: training " << name << "\n";
      const fs::path out = root / ("train-" + name + ".out");
      r = run_tool(tool, args({"train", "--strategy", name}), out);
      must(r, "train " + name, out);
      write_text_file(usage, std::to_string(r.code) + " " + fmt("%.3f", r.seconds) + " " +
                                 std::to_string(r.maxrss_kb) + "\n");
    }
    ex.training[s] = r;
  }
  std::cerr << "acceptance: evaluating all strategies\n";
  must(run_tool(tool, args({"ablate", "--eval-only"}), root / "ablate.out"), "ablate",
       root / "ablate.out");
  ex.report = read_report(cfg.out_dir / "ablation.tsv");
  std::cerr << read_text_file(cfg.out_dir / "ablation.tsv");
  return ex;
}

// 7. Directional experiment, PMP against NONE.
Outcome directional(const Experiment& ex) {
  const auto& pmp = ex.report.at("pmp");
  const auto& none = ex.report.at("none");
  const double d_recall = pmp.at("compound_recall") - none.at("compound_recall");
  const double d_miou = pmp.at("compound_miou") - none.at("compound_miou");
  const double d_simple = pmp.at("simple_miou") - none.at("simple_miou");
  bool budget = true;
  std::string usage;
  for (Strategy s : {Strategy::kPmp, Strategy::kNone}) {
    const ChildResult& r = ex.training.at(s);
    budget &= r.seconds <= kTrainSeconds && r.maxrss_kb <= kTrainMemoryKb;
    usage += std::string(" ") + std::string(strategy_name(s)) + "=" + fmt("%.0fs", r.seconds) + "/" +
             fmt("%.0fMB", static_cast<double>(r.maxrss_kb) / 1024.0);
  }
  const bool pass = ex.retrieval >= kRetrievalMin && budget && d_recall >= kCompoundRecallGain &&
                    d_miou >= kCompoundMiouGain && std::abs(d_simple) <= kSimpleMiouBand;
  return {pass, "retrieval=" + fmt("%.3f", ex.retrieval) + " compound recall " +
                    fmt("%.2f", pmp.at("compound_recall")) + " vs " + fmt("%.2f", none.at("compound_recall")) +
                    " (" + fmt("%+.2f", d_recall) + ", need >= 5) compound mIoU " +
                    fmt("%.2f", pmp.at("compound_miou")) + " vs " + fmt("%.2f", none.at("compound_miou")) +
                    " (" + fmt("%+.2f", d_miou) + ", need >= 3) simple mIoU " +
                    fmt("%.2f", pmp.at("simple_miou")) + " vs " + fmt("%.2f", none.at("simple_miou")) +
                    " (" + fmt("%+.2f", d_simple) + ", need |.| <= 2) train" + usage};
}

// 8. PMP compound mIoU against the other text strategies.
Outcome ablation_order(const Experiment& ex) {
  const double pmp = ex.report.at("pmp").at("compound_miou");
  bool ok = true;
  std::string detail = "compound mIoU pmp=" + fmt("%.2f", pmp);
  for (const char* other : {"concat", "concat_drop", "text_as_queries"}) {
    const double v = ex.report.at(other).at("compound_miou");
    ok &= pmp >= v;
    detail += std::string(" ") + other + "=" + fmt("%.2f", v);
  }
  return {ok, detail};
}

// 9. Reproducibility of logs and reports, checkpoint round trip and the
// corrupted-checkpoint exit code.
Outcome determinism(const std::string& tool, const fs::path& cache) {
  const fs::path root = cache / ("determinism-" + std::to_string(::getpid()));
  fs::remove_all(root);
  std::vector<std::string> diffs;
  std::map<std::string, std::string> first;
  for (const char* run : {"a", "b"}) {
    const fs::path dir = root / run;
    fs::create_directories(dir);
    std::ostringstream c;
    c << "data_dir = " << (dir / "data").string() << "\nout_dir = " << (dir / "out").string()
      << "\ndata.image_size = 16\ndata.train_count = 24\ndata.val_count = 2\n"
         "data.test_count = 8\ndata.max_objects = 3\npretrain.epochs = 1\ntrain.epochs = 2\nmodel.queries = 6\n"
         "model.channels = 8\nmodel.embed_dim = 8\nmodel.rounds = 1\nmodel.ffn_hidden = 16\n";
    write_text_file(dir / "run.cfg", c.str());
    for (const char* cmd : {"gen-data", "pretrain-clip", "train", "eval"}) {
      const fs::path out = dir / (std::string(cmd) + ".out");
      must(run_tool(tool, {cmd, "-c", (dir / "run.cfg").string()}, out), cmd, out);
    }
    for (const char* f : {"pretrain.log", "train-pmp.log", "eval-pmp.tsv", "model-pmp.ckpt",
                          "encoder.ckpt"}) {
      const auto bytes = read_file_bytes(dir / "out" / f);
      const std::string s(bytes.begin(), bytes.end());
      if (first.count(f) == 0) {
        first[f] = s;
      } else if (first[f] != s) {
        diffs.push_back(f);
      }
    }
  }
  const fs::path out = root / "a" / "out";
  ModelConfig mc = load_run_config(root / "a" / "run.cfg").model;
  Model model(mc);
  load_checkpoint(out / "model-pmp.ckpt", model.params());
  save_checkpoint(out / "resaved.ckpt", model.params());
  const bool round_trip = read_file_bytes(out / "resaved.ckpt") == read_file_bytes(out / "model-pmp.ckpt");
  auto bytes = read_file_bytes(out / "model-pmp.ckpt");
  bytes[bytes.size() / 3] ^= 0x04;
  write_file_bytes(out / "corrupt.ckpt", bytes);
  const ChildResult bad = run_tool(
      tool, {"eval", "-c", (root / "a" / "run.cfg").string(), "--checkpoint", (out / "corrupt.ckpt").string()},
      root / "corrupt.out");
  std::string detail = "reruns identical=" + std::string(diffs.empty() ? "yes" : "no");
  for (const auto& d : diffs) detail += " differs:" + d;
  detail += " round-trip=" + std::string(round_trip ? "bit-exact" : "differs") +
            " corrupted exit=" + std::to_string(bad.code);
  const bool pass = diffs.empty() && round_trip && bad.code == 4;
  if (pass) fs::remove_all(root);
  return {pass, detail};
}

}  // namespace
}  // namespace pmp

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::string cache = "acceptance_cache";
  std::string tool;
  std::vector<int> only;
  app.add_option("--cache", cache, "artifact cache directory");
  app.add_option("--pmp", tool, "path to the pmp binary")->required();
  app.add_option("--only", only, "criteria to run");
  CLI11_PARSE(app, argc, argv);
  std::filesystem::create_directories(cache);

  auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };
  bool all = true;
  auto report = [&](int n, const char* name, const std::function<pmp::Outcome()>& f) {
    if (!wanted(n)) return;
    pmp::Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all &= o.pass;
    std::cout << "criterion " << n << " " << name << ": " << (o.pass ? "PASS" : "FAIL") << " "
              << o.detail << std::endl;
  };
  report(1, "gradient-check", pmp::gradient_check);
  report(2, "attention-invariants", pmp::attention_invariants);
  report(3, "baseline-equivalence", pmp::baseline_equivalence);
  report(4, "strategy-shapes", pmp::shape_contract);
  report(5, "matching-oracle", pmp::matching_oracle);
  report(6, "scalar-checks", pmp::scalar_checks);
  std::optional<pmp::Experiment> ex;
  auto experiment = [&]() -> const pmp::Experiment& {
    if (!ex) ex = pmp::run_experiment(tool, cache);
    return *ex;
  };
  report(7, "directional-experiment", [&] { return pmp::directional(experiment()); });
  report(8, "ablation-order", [&] { return pmp::ablation_order(experiment()); });
  report(9, "determinism-and-formats", [&] { return pmp::determinism(tool, cache); });
  return all ? 0 : 1;
}
