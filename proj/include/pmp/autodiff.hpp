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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "pmp/tensor.hpp"

namespace pmp {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// lives and has not been cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Ordered record of one forward pass. Records are appended in evaluation
// order, so every record's inputs precede it and a reverse sweep is a valid
// topological order for backpropagation.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::span<const double>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Gradients reaching a leaf are added into `t.grad()` when t requires grad.
  // The tensor must outlive the tape.
  Var leaf(Tensor& t);
  Var constant(Tensor t);
  Var record(Tensor value, bool needs_grad, Backward backward,
             std::string_view op);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(const Var& v) const { return nodes_[v.id()].needs_grad; }
  // Gradient buffer of a record; allocated on first touch.
  std::span<double> grad(std::size_t id);

  // Seeds d(loss)/d(loss) = 1 and sweeps in reverse. Leaf gradients
  // accumulate across calls until the caller zeroes them.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    Tensor* leaf = nullptr;
    bool needs_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// --- primitive ops ----------------------------------------------------------
// All ops treat operands as rows() x cols() matrices and throw DimensionError
// on incompatible extents. Results are checked for finiteness.

Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
// a + row broadcast over rows; row is 1 x a.cols().
Var add_row(const Var& a, const Var& row);
Var scale(const Var& a, double factor);
Var shift(const Var& a, double offset);
// a * s for a 1x1 s.
Var mul_scalar(const Var& a, const Var& s);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);

// Row-wise softmax with the row maximum subtracted first. `keep`, when
// given, is rows*cols flags; dropped entries get -1e9 added to their logit.
// A row with no kept entry is left unmasked.
Var softmax_rows(const Var& a, const std::vector<std::uint8_t>* keep = nullptr);
Var log_softmax_rows(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
// rows x 1
Var sum_cols(const Var& a);
// Each row divided by its l2 norm; a zero row is a NumericError.
Var normalize_rows(const Var& a);

Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
// out row i = a row index[i], or zeros when index[i] < 0.
Var gather_rows(const Var& a, std::span<const std::ptrdiff_t> index);
Var reshape(const Var& a, std::size_t rows, std::size_t cols);

// (h*w) x c map -> (ho*wo) x (9*c) patches of a zero-padded 3x3 window.
Var im2col3x3(const Var& a, std::size_t h, std::size_t w, std::size_t stride);
// (h*w) x c map -> (2h*2w) x c nearest-neighbor upsampling.
Var upsample2x(const Var& a, std::size_t h, std::size_t w);

// rows x 1 column of a[i, column[i]].
Var pick(const Var& a, std::span<const std::size_t> column);

// Elementwise binary cross-entropy of logits against {0,1}-valued targets,
// in the overflow-safe form max(x,0) - x*y + log(1 + exp(-|x|)).
Var bce_with_logits(const Var& logits, const Tensor& targets);

// Attention over a set: softmax(scale * q k^T) v where every sum over keys
// is accumulated in a canonical (sorted) order, so permuting the key/value
// rows together leaves each output row bit-identical.
Var set_attention(const Var& q, const Var& k, const Var& v, double scale);

// --- raw kernels ---------------------------------------------------------
// c (m x n) += a (m x k) * b (k x n)
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c);
// c (m x n) += a (m x k) * b^T, b is n x k
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c);
// c (m x n) += a^T * b, a is k x m, b is k x n
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c);

}  // namespace pmp
