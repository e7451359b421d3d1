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

#include "pmp/params.hpp"

#include <cmath>
#include <cstring>

#include "pmp/errors.hpp"
#include "pmp/image.hpp"

namespace pmp {

Tensor& ParamStore::add(const std::string& name, Shape shape) {
  if (items_.count(name)) throw ContractError("parameter '" + name + "' exists");
  auto t = std::make_unique<Tensor>(std::move(shape));
  t->set_requires_grad(true);
  Tensor& ref = *t;
  items_.emplace(name, std::move(t));
  order_.push_back(name);
  return ref;
}

Tensor& ParamStore::add_normal(const std::string& name, Shape shape, Rng& rng,
                               double stddev) {
  Tensor& t = add(name, std::move(shape));
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = items_.find(name);
  if (it == items_.end()) throw LookupError("no parameter '" + name + "'");
  return *it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = items_.find(name);
  if (it == items_.end()) throw LookupError("no parameter '" + name + "'");
  return *it->second;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t->size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : items_) t->zero_grad();
}

std::uint64_t ParamStore::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const std::string& name : order_) {
    h = fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(name.data()),
                          name.size()),
                h);
    const auto data = items_.at(name)->data();
    h = fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(data.data()),
                          data.size() * sizeof(double)),
                h);
  }
  return h;
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in,
               std::size_t out, Rng& rng, double gain)
    : weight_(&store.add_normal(name + ".w", {in, out}, rng,
                                gain / std::sqrt(static_cast<double>(in)))),
      bias_(&store.add(name + ".b", {1, out})) {}

Var Linear::operator()(Tape& tape, const Var& x) const {
  return add_row(matmul(x, tape.leaf(*weight_)), tape.leaf(*bias_));
}

}  // namespace pmp
