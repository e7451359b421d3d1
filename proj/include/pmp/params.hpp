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

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pmp/autodiff.hpp"
#include "pmp/rng.hpp"
#include "pmp/tensor.hpp"

namespace pmp {

// Named trainable tensors with stable addresses, kept in registration order
// (which is also checkpoint order).
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Tensor& add(const std::string& name, Shape shape);
  Tensor& add_normal(const std::string& name, Shape shape, Rng& rng,
                     double stddev);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return items_.count(name) != 0; }
  const std::vector<std::string>& names() const { return order_; }
  std::size_t parameter_count() const;
  void zero_grad();
  // Payload checksum over names and values in registration order.
  std::uint64_t checksum() const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::unique_ptr<Tensor>> items_;
};

// y = x W + b, W is in x out.
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in,
         std::size_t out, Rng& rng, double gain = 1.0);

  Var operator()(Tape& tape, const Var& x) const;
  std::size_t in() const { return weight_->rows(); }
  std::size_t out() const { return weight_->cols(); }
  Tensor& weight() const { return *weight_; }
  Tensor& bias() const { return *bias_; }

 private:
  Tensor* weight_ = nullptr;
  Tensor* bias_ = nullptr;
};

}  // namespace pmp
