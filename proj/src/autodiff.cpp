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

#include <algorithm>
#include <cmath>
#include <string>

#include "pmp/autodiff.hpp"
#include "pmp/errors.hpp"

namespace pmp {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::leaf(Tensor& t) {
  Node node;
  node.value = t;
  node.value.set_requires_grad(false);
  node.leaf = t.requires_grad() ? &t : nullptr;
  node.needs_grad = t.requires_grad();
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor t) {
  t.set_requires_grad(false);
  Node node;
  node.value = std::move(t);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, bool needs_grad, Backward backward,
                 std::string_view op) {
  value.check_finite(op);
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  if (needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw ContractError("loss recorded on another tape");
  if (nodes_[loss.id()].value.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        shape_string(nodes_[loss.id()].value.shape()));
  }
  for (auto& node : nodes_) node.grad.clear();
  grad(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.backward) {
      std::vector<double> upstream = std::move(node.grad);
      node.backward(*this, upstream);
      node.grad = std::move(upstream);
    }
    if (node.leaf != nullptr) {
      auto dst = node.leaf->grad();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
    }
  }
}

// --- kernels ------------------------------------------------------------

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  if (n >= 8) {
    std::vector<double> bt(k * n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    }
    gemm_nn(m, k, n, a, bt.data(), c);
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] += s;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw ContractError("operands recorded on different tapes");
  }
  return *a.tape();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shapes " +
                         shape_string(a.value().shape()) + " and " +
                         shape_string(b.value().shape()) + " differ");
  }
}

Tensor like(const Var& a) { return Tensor({a.rows(), a.cols()}); }

template <typename Fwd, typename Bwd>
Var unary(const Var& a, const char* op, Fwd fwd, Bwd bwd) {
  Tape& tape = *a.tape();
  const std::size_t ia = a.id();
  Tensor out = like(a);
  const auto x = a.value().data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  const std::size_t self = tape.size();
  return tape.record(
      std::move(out), tape.needs_grad(ia),
      [ia, self, bwd](Tape& t, std::span<const double> g) {
        const auto x = t.value(ia).data();
        const auto y = t.value(self).data();
        auto gx = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * bwd(x[i], y[i]);
      },
      op);
}

}  // namespace

// --- linear algebra ---------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions of " +
                         shape_string(a.value().shape()) + " and " +
                         shape_string(b.value().shape()) + " disagree");
  }
  Tensor out({m, n});
  gemm_nn(m, k, n, a.value().data().data(), b.value().data().data(),
          out.data().data());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      std::move(out), tape.needs_grad(ia) || tape.needs_grad(ib),
      [ia, ib, m, k, n](Tape& t, std::span<const double> g) {
        if (t.needs_grad(ia)) {
          gemm_nt(m, n, k, g.data(), t.value(ib).data().data(),
                  t.grad(ia).data());
        }
        if (t.needs_grad(ib)) {
          gemm_tn(k, m, n, t.value(ia).data().data(), g.data(),
                  t.grad(ib).data());
        }
      },
      "matmul");
}

Var matmul_nt(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions of " +
                         shape_string(a.value().shape()) + " and " +
                         shape_string(b.value().shape()) + "^T disagree");
  }
  Tensor out({m, n});
  gemm_nt(m, k, n, a.value().data().data(), b.value().data().data(),
          out.data().data());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      std::move(out), tape.needs_grad(ia) || tape.needs_grad(ib),
      [ia, ib, m, k, n](Tape& t, std::span<const double> g) {
        if (t.needs_grad(ia)) {
          gemm_nn(m, n, k, g.data(), t.value(ib).data().data(),
                  t.grad(ia).data());
        }
        if (t.needs_grad(ib)) {
          gemm_tn(n, m, k, g.data(), t.value(ia).data().data(),
                  t.grad(ib).data());
        }
      },
      "matmul_nt");
}

// --- elementwise --------------------------------------------------------

Var add(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a, b, "add");
  Tensor out = like(a);
  const auto x = a.value().data(), y = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      std::move(out), tape.needs_grad(ia) || tape.needs_grad(ib),
      [ia, ib](Tape& t, std::span<const double> g) {
        for (std::size_t id : {ia, ib}) {
          if (!t.needs_grad(id)) continue;
          auto d = t.grad(id);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
      },
      "add");
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a, b, "sub");
  Tensor out = like(a);
  const auto x = a.value().data(), y = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      std::move(out), tape.needs_grad(ia) || tape.needs_grad(ib),
      [ia, ib](Tape& t, std::span<const double> g) {
        if (t.needs_grad(ia)) {
          auto d = t.grad(ia);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (t.needs_grad(ib)) {
          auto d = t.grad(ib);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
        }
      },
      "sub");
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a, b, "mul");
  Tensor out = like(a);
  const auto x = a.value().data(), y = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      std::move(out), tape.needs_grad(ia) || tape.needs_grad(ib),
      [ia, ib](Tape& t, std::span<const double> g) {
        if (t.needs_grad(ia)) {
          auto d = t.grad(ia);
          const auto y = t.value(ib).data();
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
        }
        if (t.needs_grad(ib)) {
          auto d = t.grad(ib);
          const auto x = t.value(ia).data();
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x[i];
        }
      },
      "mul");
}

Var div(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a, b, "div");
  Tensor out = like(a);
  const auto x = a.value().data(), y = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (y[i] == 0.0) throw NumericError("div: division by zero");
    o[i] = x[i] / y[i];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      std::move(out), tape.needs_grad(ia) || tape.needs_grad(ib),
      [ia, ib](Tape& t, std::span<const double> g) {
        const auto x = t.value(ia).data(), y = t.value(ib).data();
        if (t.needs_grad(ia)) {
          auto d = t.grad(ia);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] / y[i];
        }
        if (t.needs_grad(ib)) {
          auto d = t.grad(ib);
          for (std::size_t i = 0; i < g.size(); ++i) {
            d[i] -= g[i] * x[i] / (y[i] * y[i]);
          }
        }
      },
      "div");
}

Var add_row(const Var& a, const Var& row) {
  Tape& tape = same_tape(a, row);
  const std::size_t m = a.rows(), n = a.cols();
  if (row.rows() != 1 || row.cols() != n) {
    throw DimensionError("add_row: row " + shape_string(row.value().shape()) +
                         " does not broadcast over " +
                         shape_string(a.value().shape()));
  }
  Tensor out = like(a);
  const auto x = a.value().data(), r = row.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = x[i * n + j] + r[j];
  }
  const std::size_t ia = a.id(), ir = row.id();
  return tape.record(
      std::move(out), tape.needs_grad(ia) || tape.needs_grad(ir),
      [ia, ir, m, n](Tape& t, std::span<const double> g) {
        if (t.needs_grad(ia)) {
          auto d = t.grad(ia);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (t.needs_grad(ir)) {
          auto d = t.grad(ir);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) d[j] += g[i * n + j];
          }
        }
      },
      "add_row");
}

Var scale(const Var& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Var shift(const Var& a, double offset) {
  return unary(
      a, "shift", [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, const Var& s) {
  Tape& tape = same_tape(a, s);
  if (s.value().size() != 1) {
    throw DimensionError("mul_scalar: factor has shape " +
                         shape_string(s.value().shape()));
  }
  const double f = s.value()[0];
  Tensor out = like(a);
  const auto x = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * f;
  const std::size_t ia = a.id(), is = s.id();
  return tape.record(
      std::move(out), tape.needs_grad(ia) || tape.needs_grad(is),
      [ia, is](Tape& t, std::span<const double> g) {
        const double f = t.value(is)[0];
        const auto x = t.value(ia).data();
        if (t.needs_grad(ia)) {
          auto d = t.grad(ia);
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * f;
        }
        if (t.needs_grad(is)) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
          t.grad(is)[0] += acc;
        }
      },
      "mul_scalar");
}

Var relu(const Var& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(const Var& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(
      a, "log",
      [](double x) {
        if (x <= 0.0) throw NumericError("log of non-positive value");
        return std::log(x);
      },
      [](double x, double) { return 1.0 / x; });
}

// --- reductions and normalizations ----------------------------------------

Var softmax_rows(const Var& a, const std::vector<std::uint8_t>* keep) {
  Tape& tape = *a.tape();
  const std::size_t m = a.rows(), n = a.cols();
  if (keep != nullptr && keep->size() != m * n) {
    throw DimensionError("softmax_rows: mask has " +
                         std::to_string(keep->size()) + " entries for " +
                         shape_string(a.value().shape()));
  }
  a.value().check_finite("softmax_rows input");
  Tensor out = like(a);
  const auto x = a.value().data();
  auto y = out.data();
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    bool masked = false;
    if (keep != nullptr) {
      for (std::size_t j = 0; j < n; ++j) {
        if ((*keep)[i * n + j]) {
          masked = true;
          break;
        }
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = x[i * n + j];
      if (masked && !(*keep)[i * n + j]) row[j] += -1e9;
    }
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = row[j] / s;
  }
  const std::size_t ia = a.id();
  const std::size_t self = tape.size();
  return tape.record(
      std::move(out), tape.needs_grad(ia),
      [ia, self, m, n](Tape& t, std::span<const double> g) {
        const auto y = t.value(self).data();
        auto d = t.grad(ia);
        for (std::size_t i = 0; i < m; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
          for (std::size_t j = 0; j < n; ++j) {
            d[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
          }
        }
      },
      "softmax_rows");
}

Var log_softmax_rows(const Var& a) {
  Tape& tape = *a.tape();
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = like(a);
  const auto x = a.value().data();
  auto y = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data() + i * n;
    const double mx = *std::max_element(xi, xi + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(xi[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = xi[j] - lse;
  }
  const std::size_t ia = a.id();
  const std::size_t self = tape.size();
  return tape.record(
      std::move(out), tape.needs_grad(ia),
      [ia, self, m, n](Tape& t, std::span<const double> g) {
        const auto y = t.value(self).data();
        auto d = t.grad(ia);
        for (std::size_t i = 0; i < m; ++i) {
          double gs = 0.0;
          for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
          for (std::size_t j = 0; j < n; ++j) {
            d[i * n + j] += g[i * n + j] - std::exp(y[i * n + j]) * gs;
          }
        }
      },
      "log_softmax_rows");
}

Var sum(const Var& a) {
  Tape& tape = *a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return tape.record(
      Tensor::scalar(s), tape.needs_grad(ia),
      [ia](Tape& t, std::span<const double> g) {
        auto d = t.grad(ia);
        for (double& v : d) v += g[0];
      },
      "sum");
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_cols(const Var& a) {
  Tape& tape = *a.tape();
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({m, 1});
  const auto x = a.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x[i * n + j];
    out[i] = s;
  }
  const std::size_t ia = a.id();
  return tape.record(
      std::move(out), tape.needs_grad(ia),
      [ia, m, n](Tape& t, std::span<const double> g) {
        auto d = t.grad(ia);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) d[i * n + j] += g[i];
        }
      },
      "sum_cols");
}

Var normalize_rows(const Var& a) {
  Tape& tape = *a.tape();
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = like(a);
  std::vector<double> norms(m);
  const auto x = a.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x[i * n + j] * x[i * n + j];
    if (s == 0.0) {
      throw NumericError("normalize_rows: row " + std::to_string(i) +
                         " has zero norm");
    }
    norms[i] = std::sqrt(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] / norms[i];
  }
  const std::size_t ia = a.id();
  const std::size_t self = tape.size();
  return tape.record(
      std::move(out), tape.needs_grad(ia),
      [ia, self, m, n, norms = std::move(norms)](Tape& t,
                                                 std::span<const double> g) {
        const auto y = t.value(self).data();
        auto d = t.grad(ia);
        for (std::size_t i = 0; i < m; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
          for (std::size_t j = 0; j < n; ++j) {
            d[i * n + j] += (g[i * n + j] - y[i * n + j] * dot) / norms[i];
          }
        }
      },
      "normalize_rows");
}

// --- structural -----------------------------------------------------------

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  Tape& tape = *parts[0].tape();
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  bool needs = false;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    if (p.tape() != &tape) throw ContractError("concat_rows across tapes");
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column counts " + std::to_string(n) +
                           " and " + std::to_string(p.cols()) + " differ");
    }
    offsets.push_back(m * n);
    ids.push_back(p.id());
    m += p.rows();
    needs = needs || tape.needs_grad(p.id());
  }
  Tensor out({m, n});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + offsets[k]);
  }
  return tape.record(
      std::move(out), needs,
      [ids = std::move(ids), offsets = std::move(offsets)](
          Tape& t, std::span<const double> g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.needs_grad(ids[k])) continue;
          auto d = t.grad(ids[k]);
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[offsets[k] + i];
        }
      },
      "concat_rows");
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  Tape& tape = *a.tape();
  const std::size_t n = a.cols();
  if (begin + count > a.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " +
                         shape_string(a.value().shape()));
  }
  Tensor out({count, n});
  const auto x = a.value().data();
  std::copy(x.begin() + begin * n, x.begin() + (begin + count) * n,
            out.data().begin());
  const std::size_t ia = a.id();
  return tape.record(
      std::move(out), tape.needs_grad(ia),
      [ia, begin, n](Tape& t, std::span<const double> g) {
        auto d = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) d[begin * n + i] += g[i];
      },
      "slice_rows");
}

Var gather_rows(const Var& a, std::span<const std::ptrdiff_t> index) {
  Tape& tape = *a.tape();
  const std::size_t n = a.cols();
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
  Tensor out({index.size(), n});
  const auto x = a.value().data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(index[i]) +
                           " outside " + shape_string(a.value().shape()));
    }
    if (index[i] < 0) continue;
    std::copy_n(x.begin() + index[i] * n, n, out.data().begin() + i * n);
  }
  const std::size_t ia = a.id();
  return tape.record(
      std::move(out), tape.needs_grad(ia),
      [ia, n, idx = std::vector<std::ptrdiff_t>(index.begin(), index.end())](
          Tape& t, std::span<const double> g) {
        auto d = t.grad(ia);
        for (std::size_t i = 0; i < idx.size(); ++i) {
          if (idx[i] < 0) continue;
          double* dst = d.data() + idx[i] * n;
          const double* src = g.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
        }
      },
      "gather_rows");
}

Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  Tape& tape = *a.tape();
  if (rows * cols != a.value().size()) {
    throw DimensionError("reshape: " + shape_string(a.value().shape()) +
                         " to [" + std::to_string(rows) + "x" +
                         std::to_string(cols) + "]");
  }
  Tensor out = a.value();
  out.reshape({rows, cols});
  const std::size_t ia = a.id();
  return tape.record(
      std::move(out), tape.needs_grad(ia),
      [ia](Tape& t, std::span<const double> g) {
        auto d = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      },
      "reshape");
}

Var im2col3x3(const Var& a, std::size_t h, std::size_t w, std::size_t stride) {
  const std::size_t c = a.cols();
  if (a.rows() != h * w) {
    throw DimensionError("im2col3x3: " + shape_string(a.value().shape()) +
                         " is not a " + std::to_string(h) + "x" +
                         std::to_string(w) + " map");
  }
  if (stride == 0) throw ContractError("im2col3x3: zero stride");
  const std::size_t ho = (h - 1) / stride + 1, wo = (w - 1) / stride + 1;
  std::vector<std::ptrdiff_t> index(ho * wo * 9, -1);
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - 1;
          const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - 1;
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) ||
              ix >= static_cast<std::ptrdiff_t>(w)) {
            continue;
          }
          index[(oy * wo + ox) * 9 + ky * 3 + kx] =
              iy * static_cast<std::ptrdiff_t>(w) + ix;
        }
      }
    }
  }
  return reshape(gather_rows(a, index), ho * wo, 9 * c);
}

Var upsample2x(const Var& a, std::size_t h, std::size_t w) {
  if (a.rows() != h * w) {
    throw DimensionError("upsample2x: " + shape_string(a.value().shape()) +
                         " is not a " + std::to_string(h) + "x" +
                         std::to_string(w) + " map");
  }
  std::vector<std::ptrdiff_t> index(4 * h * w);
  for (std::size_t y = 0; y < 2 * h; ++y) {
    for (std::size_t x = 0; x < 2 * w; ++x) {
      index[y * 2 * w + x] = static_cast<std::ptrdiff_t>((y / 2) * w + x / 2);
    }
  }
  return gather_rows(a, index);
}

Var pick(const Var& a, std::span<const std::size_t> column) {
  Tape& tape = *a.tape();
  const std::size_t m = a.rows(), n = a.cols();
  if (column.size() != m) {
    throw DimensionError("pick: " + std::to_string(column.size()) +
                         " columns for " + std::to_string(m) + " rows");
  }
  Tensor out({m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    if (column[i] >= n) throw DimensionError("pick: column out of range");
    out[i] = a.value()[i * n + column[i]];
  }
  const std::size_t ia = a.id();
  return tape.record(
      std::move(out), tape.needs_grad(ia),
      [ia, n, col = std::vector<std::size_t>(column.begin(), column.end())](
          Tape& t, std::span<const double> g) {
        auto d = t.grad(ia);
        for (std::size_t i = 0; i < col.size(); ++i) d[i * n + col[i]] += g[i];
      },
      "pick");
}

Var bce_with_logits(const Var& logits, const Tensor& targets) {
  Tape& tape = *logits.tape();
  if (targets.size() != logits.value().size()) {
    throw DimensionError("bce_with_logits: logits " +
                         shape_string(logits.value().shape()) + " vs targets " +
                         shape_string(targets.shape()));
  }
  Tensor out = like(logits);
  const auto x = logits.value().data();
  const auto y = targets.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::max(x[i], 0.0) - x[i] * y[i] +
             std::log1p(std::exp(-std::abs(x[i])));
  }
  const std::size_t ia = logits.id();
  return tape.record(
      std::move(out), tape.needs_grad(ia),
      [ia, tgt = std::vector<double>(y.begin(), y.end())](
          Tape& t, std::span<const double> g) {
        const auto x = t.value(ia).data();
        auto d = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i]))
                                       : std::exp(x[i]) / (1.0 + std::exp(x[i]));
          d[i] += g[i] * (s - tgt[i]);
        }
      },
      "bce_with_logits");
}

namespace {

double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double v : terms) s += v;
  return s;
}

}  // namespace

Var set_attention(const Var& q, const Var& k, const Var& v, double scale) {
  Tape& tape = same_tape(q, k);
  same_tape(k, v);
  const std::size_t n = q.rows(), d = q.cols(), m = k.rows(), dv = v.cols();
  if (k.cols() != d || v.rows() != m) {
    throw DimensionError("set_attention: q " + shape_string(q.value().shape()) +
                         ", k " + shape_string(k.value().shape()) + ", v " +
                         shape_string(v.value().shape()));
  }
  const auto qd = q.value().data(), kd = k.value().data(), vd = v.value().data();
  std::vector<double> attn(n * m);
  std::vector<double> terms(m);
  Tensor out({n, dv});
  for (std::size_t i = 0; i < n; ++i) {
    double* ai = attn.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) s += qd[i * d + p] * kd[j * d + p];
      ai[j] = s * scale;
    }
    const double mx = m ? *std::max_element(ai, ai + m) : 0.0;
    for (std::size_t j = 0; j < m; ++j) terms[j] = ai[j] = std::exp(ai[j] - mx);
    const double denom = sorted_sum(terms);
    for (std::size_t j = 0; j < m; ++j) ai[j] /= denom;
    for (std::size_t c = 0; c < dv; ++c) {
      for (std::size_t j = 0; j < m; ++j) terms[j] = ai[j] * vd[j * dv + c];
      out[i * dv + c] = sorted_sum(terms);
    }
  }
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  const bool needs = tape.needs_grad(iq) || tape.needs_grad(ik) ||
                     tape.needs_grad(iv);
  return tape.record(
      std::move(out), needs,
      [iq, ik, iv, n, d, m, dv, scale, attn = std::move(attn)](
          Tape& t, std::span<const double> g) {
        const auto qd = t.value(iq).data(), kd = t.value(ik).data(),
                   vd = t.value(iv).data();
        if (t.needs_grad(iv)) {
          gemm_tn(m, n, dv, attn.data(), g.data(), t.grad(iv).data());
        }
        if (!t.needs_grad(iq) && !t.needs_grad(ik)) return;
        std::vector<double> da(n * m, 0.0);
        gemm_nt(n, dv, m, g.data(), vd.data(), da.data());
        for (std::size_t i = 0; i < n; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < m; ++j) dot += attn[i * m + j] * da[i * m + j];
          for (std::size_t j = 0; j < m; ++j) {
            da[i * m + j] = scale * attn[i * m + j] * (da[i * m + j] - dot);
          }
        }
        if (t.needs_grad(iq)) gemm_nn(n, m, d, da.data(), kd.data(), t.grad(iq).data());
        if (t.needs_grad(ik)) gemm_tn(m, n, d, da.data(), qd.data(), t.grad(ik).data());
      },
      "set_attention");
}

}  // namespace pmp
