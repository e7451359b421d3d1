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

#include <functional>
#include <span>
#include <vector>

#include "pmp/autodiff.hpp"

namespace pmp {

// Maximum over coordinates of
//   |analytic - central| / (|analytic| + |central| + 1e-12)
// where `central` is the central difference with step h.
using ScalarFn = std::function<Var(Tape&, const Var&)>;
double finite_diff_check(const ScalarFn& f, const Tensor& x, double h);

// Same measure over every coordinate of several parameter tensors. `f`
// records its loss on the given tape, reading the parameters as leaves.
// The five-point stencil (error O(h^4)) allows a larger step, which keeps
// rounding noise small next to tiny gradient entries of deep graphs.
enum class Stencil { kThreePoint, kFivePoint };
using ClosedScalarFn = std::function<Var(Tape&)>;
double finite_diff_check(const ClosedScalarFn& f, std::span<Tensor* const> params,
                         double h, Stencil stencil = Stencil::kThreePoint);
// Both derivative estimates for every coordinate, parameters in order.
struct FiniteDiffPoint {
  double analytic = 0.0;
  double numeric = 0.0;
};
std::vector<FiniteDiffPoint> finite_diff_points(const ClosedScalarFn& f,
                                               std::span<Tensor* const> params, double h,
                                               Stencil stencil = Stencil::kThreePoint);

}  // namespace pmp
