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

#include "pmp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "pmp/errors.hpp"
#include "pmp/optim.hpp"
#include "pmp/rng.hpp"

namespace pmp {

namespace {

constexpr double kDiceEps = 1e-6;

// Shortest augmenting path assignment for an n x m matrix with n <= m.
// Returns the column of each row.
std::vector<std::size_t> solve_assignment(const std::vector<double>& a,
                                          std::size_t n, std::size_t m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) col[p[j] - 1] = j - 1;
  }
  return col;
}

// Optimal cost of matching columns [first, G) to the rows not in `taken`.
double best_completion(const Tensor& cost, std::size_t first,
                       const std::vector<char>& taken) {
  const std::size_t g = cost.cols();
  if (first == g) return 0.0;
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < cost.rows(); ++r) {
    if (!taken[r]) rows.push_back(r);
  }
  const std::size_t n = g - first, m = rows.size();
  std::vector<double> a(n * m);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < m; ++k) a[j * m + k] = cost.at(rows[k], first + j);
  }
  const auto col = solve_assignment(a, n, m);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) total += a[j * m + col[j]];
  return total;
}

std::vector<double> mask_values(const Mask& m) {
  return std::vector<double>(m.bits.begin(), m.bits.end());
}

}  // namespace

void MatchCostConfig::validate() const {
  if (cls < 0.0 || ce < 0.0 || dice < 0.0) {
    throw ConfigError("loss weights must be nonnegative");
  }
}

void TrainConfig::validate() const {
  loss.weights.validate();
  if (batch == 0) throw ConfigError("batch size must be positive");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (compound_prob < 0.0 || compound_prob > 1.0) {
    throw ConfigError("compound_prob must lie in [0, 1]");
  }
  if (loss.no_object_weight < 0.0) throw ConfigError("no_object_weight must be nonnegative");
}

Var dice_loss_rows(const Var& probs, const Tensor& gt) {
  if (probs.value().shape() != gt.shape()) {
    throw DimensionError("dice: prediction " + shape_string(probs.value().shape()) +
                         " vs target " + shape_string(gt.shape()));
  }
  Tape& tape = *probs.tape();
  Tensor g2({gt.rows(), 1});
  for (std::size_t i = 0; i < gt.rows(); ++i) {
    double s = kDiceEps;
    for (std::size_t p = 0; p < gt.cols(); ++p) s += gt.at(i, p) * gt.at(i, p);
    g2[i] = s;
  }
  Var num = sum_cols(mul(probs, tape.constant(gt)));
  Var den = add(sum_cols(mul(probs, probs)), tape.constant(std::move(g2)));
  return shift(scale(div(num, den), -2.0), 1.0);
}

Var dice_loss(const Var& probs, const Tensor& gt) {
  return mean(dice_loss_rows(probs, gt));
}

Var bce_loss(const Var& logits, const Tensor& gt) {
  if (logits.value().shape() != gt.shape()) {
    throw DimensionError("bce: prediction " + shape_string(logits.value().shape()) +
                         " vs target " + shape_string(gt.shape()));
  }
  return mean(bce_with_logits(logits, gt));
}

Tensor matching_cost(const Tensor& mask_logits, const Tensor& class_probs,
                     std::span<const GtTarget> gts, const MatchCostConfig& cfg) {
  const std::size_t r = mask_logits.rows(), pixels = mask_logits.cols();
  const std::size_t k = class_probs.cols() - 1;
  if (class_probs.rows() != r) throw DimensionError("matching_cost: row counts differ");
  for (const GtTarget& g : gts) {
    if (g.cls >= k) {
      throw ContractError("target class " + std::to_string(g.cls) +
                          " is not one of the " + std::to_string(k) + " prompt classes");
    }
    if (g.mask.size() != pixels) throw DimensionError("matching_cost: mask size differs");
  }
  std::vector<double> softplus(r, 0.0), sq(r, 0.0);
  Tensor probs({r, pixels});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t p = 0; p < pixels; ++p) {
      const double x = mask_logits.at(i, p);
      softplus[i] += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
      const double s = 1.0 / (1.0 + std::exp(-x));
      probs.at(i, p) = s;
      sq[i] += s * s;
    }
  }
  Tensor cost({r, gts.size()});
  for (std::size_t j = 0; j < gts.size(); ++j) {
    const auto& g = gts[j].mask;
    const double g2 = std::inner_product(g.begin(), g.end(), g.begin(), 0.0);
    for (std::size_t i = 0; i < r; ++i) {
      double xg = 0.0, pg = 0.0;
      for (std::size_t p = 0; p < pixels; ++p) {
        xg += mask_logits.at(i, p) * g[p];
        pg += probs.at(i, p) * g[p];
      }
      const double bce = (softplus[i] - xg) / static_cast<double>(pixels);
      const double dice = 1.0 - 2.0 * pg / (sq[i] + g2 + kDiceEps);
      cost.at(i, j) = cfg.cls * (1.0 - class_probs.at(i, gts[j].cls)) +
                      cfg.ce * bce + cfg.dice * dice;
    }
  }
  return cost;
}

double assignment_cost(const Tensor& cost, std::span<const std::size_t> assignment) {
  double total = 0.0;
  for (std::size_t j = 0; j < assignment.size(); ++j) total += cost.at(assignment[j], j);
  return total;
}

std::vector<std::size_t> hungarian(const Tensor& cost) {
  const std::size_t n = cost.rows(), g = cost.cols();
  if (n < g) {
    throw ContractError("hungarian: " + std::to_string(g) + " targets for " +
                        std::to_string(n) + " proposals");
  }
  cost.check_finite("hungarian cost");
  if (g == 0) return {};
  std::vector<char> taken(n, 0);
  const double opt = best_completion(cost, 0, taken);
  const double limit = opt + 1e-9 * (1.0 + std::abs(opt));
  std::vector<std::size_t> out(g);
  double prefix = 0.0;
  for (std::size_t j = 0; j < g; ++j) {
    bool fixed = false;
    for (std::size_t r = 0; r < n && !fixed; ++r) {
      if (taken[r]) continue;
      taken[r] = 1;
      const double total = prefix + cost.at(r, j) + best_completion(cost, j + 1, taken);
      if (total <= limit) {
        out[j] = r;
        prefix += cost.at(r, j);
        fixed = true;
      } else {
        taken[r] = 0;
      }
    }
    if (!fixed) throw NumericError("hungarian: lost the optimum while fixing columns");
  }
  return out;
}

LossParts total_loss(std::span<const Prediction> predictions,
                     std::span<const GtTarget> gts, const LossConfig& cfg) {
  if (predictions.empty()) throw ContractError("total_loss needs a prediction");
  const std::size_t first = cfg.aux ? 0 : predictions.size() - 1;
  const auto& w = cfg.weights;
  LossParts parts;
  std::vector<Var> terms;
  for (std::size_t pt = first; pt < predictions.size(); ++pt) {
    const Prediction& pred = predictions[pt];
    if (!pred.class_logits.valid()) throw ContractError("total_loss needs class logits");
    Tape& tape = *pred.class_logits.tape();
    const std::size_t r = pred.class_logits.rows();
    const std::size_t k = pred.class_logits.cols() - 1;
    const std::size_t pixels = pred.mask_logits.cols();

    std::vector<std::size_t> assignment;
    if (!gts.empty()) {
      Tensor probs = softmax_rows(tape.constant(pred.class_logits.value())).value();
      assignment = hungarian(matching_cost(pred.mask_logits.value(), probs, gts, w));
    }
    std::vector<std::size_t> target(r, k);
    Tensor weight({r, 1}, cfg.no_object_weight);
    for (std::size_t j = 0; j < assignment.size(); ++j) {
      target[assignment[j]] = gts[j].cls;
      weight[assignment[j]] = 1.0;
    }
    double weight_sum = 0.0;
    for (double v : weight.data()) weight_sum += v;
    Var picked = pick(log_softmax_rows(pred.class_logits), target);
    Var cls = scale(sum(mul(picked, tape.constant(std::move(weight)))),
                    weight_sum > 0.0 ? -1.0 / weight_sum : 0.0);
    Var term = scale(cls, w.cls);
    parts.cls += cls.value().item();

    if (!assignment.empty()) {
      std::vector<std::ptrdiff_t> rows(assignment.begin(), assignment.end());
      Tensor gt({gts.size(), pixels});
      for (std::size_t j = 0; j < gts.size(); ++j) {
        std::copy(gts[j].mask.begin(), gts[j].mask.end(), gt.data().begin() + j * pixels);
      }
      Var sel = gather_rows(pred.mask_logits, rows);
      Var ce = bce_loss(sel, gt);
      Var dice = dice_loss(sigmoid(sel), gt);
      term = add(term, add(scale(ce, w.ce), scale(dice, w.dice)));
      parts.ce += ce.value().item();
      parts.dice += dice.value().item();
    }
    terms.push_back(term);
  }
  const double inv = 1.0 / static_cast<double>(terms.size());
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  parts.total = scale(total, inv);
  parts.cls *= inv;
  parts.ce *= inv;
  parts.dice *= inv;
  return parts;
}

TrainingSample make_training_sample(const Scene& scene,
                                    std::span<const std::string> pool,
                                    const TrainConfig& cfg, Rng& rng) {
  const PromptSet* labeling = nullptr;
  std::vector<const PromptSet*> compounds;
  for (const PromptSet& p : scene.prompts) {
    if (p.kind == "simple") {
      labeling = &p;
    } else if (std::all_of(p.tokens.begin(), p.tokens.end(), [&](const std::string& t) {
                 return std::find(pool.begin(), pool.end(), t) != pool.end();
               })) {
      compounds.push_back(&p);
    }
  }
  if (!labeling) throw ContractError("scene has no simple labeling");
  if (!compounds.empty() && rng.uniform() < cfg.compound_prob) {
    labeling = compounds[rng.index(compounds.size())];
  }
  std::vector<std::string> absent;
  for (const std::string& t : pool) {
    if (!scene.gt_masks.count(t)) absent.push_back(t);
  }
  rng.shuffle(absent);
  TrainingSample s;
  s.prompt = labeling->tokens;
  for (std::size_t i = 0; i < std::min(cfg.negatives, absent.size()); ++i) {
    s.prompt.push_back(absent[i]);
  }
  rng.shuffle(s.prompt);
  for (std::size_t k = 0; k < s.prompt.size(); ++k) {
    auto it = scene.gt_masks.find(s.prompt[k]);
    if (it != scene.gt_masks.end()) s.targets.push_back({mask_values(it->second), k});
  }
  return s;
}

std::string format_metrics(const EpochMetrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "epoch=%zu loss=%.6f cls=%.6f ce=%.6f dice=%.6f",
                m.epoch, m.loss, m.cls, m.ce, m.dice);
  return buf;
}

std::vector<EpochMetrics> train(Model& model, std::span<const Scene> scenes,
                                const TextBank& bank,
                                std::span<const std::string> pool,
                                const TrainConfig& cfg, const EpochCallback& on_epoch,
                                std::ostream* log) {
  cfg.validate();
  if (scenes.empty()) throw ConfigError("training needs at least one scene");
  Adam adam({cfg.lr});
  ParamStore& store = model.params();
  std::vector<EpochMetrics> history;
  std::vector<std::size_t> order(scenes.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(mix_seed(cfg.seed, 0x0de0 + epoch));
    order_rng.shuffle(order);
    EpochMetrics m;
    m.epoch = epoch;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
        const std::size_t end = std::min(order.size(), start + cfg.batch);
        store.zero_grad();
        for (std::size_t b = start; b < end; ++b) {
          const Scene& scene = scenes[order[b]];
          Rng rng(mix_seed(cfg.seed, epoch * 1000003ULL + order[b]));
          const TrainingSample sample = make_training_sample(scene, pool, cfg, rng);
          Tape tape;
          const ModelOutput out = model.forward(tape, scene.image, sample.prompt, bank);
          const LossParts parts =
              total_loss(out.decoded.predictions, sample.targets, cfg.loss);
          tape.backward(scale(parts.total, 1.0 / static_cast<double>(end - start)));
          m.loss += parts.total.value().item();
          m.cls += parts.cls;
          m.ce += parts.ce;
          m.dice += parts.dice;
        }
        for (const std::string& n : store.names()) {
          for (double g : store.get(n).grad()) {
            if (!std::isfinite(g)) throw NumericError("gradient of " + n + " is not finite");
          }
        }
        adam.step(store);
      }
    } catch (const NumericError& e) {
      throw DivergenceError("training diverged in epoch " + std::to_string(epoch) +
                            ": " + e.what());
    }
    const double inv = 1.0 / static_cast<double>(scenes.size());
    m.loss *= inv;
    m.cls *= inv;
    m.ce *= inv;
    m.dice *= inv;
    history.push_back(m);
    if (log) *log << format_metrics(m) << "\n" << std::flush;
    if (on_epoch) on_epoch(m, model);
  }
  return history;
}

}  // namespace pmp
