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

#include "pmp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "pmp/errors.hpp"

namespace pmp {

namespace {

double relative_error(double analytic, double central) {
  return std::abs(analytic - central) /
         (std::abs(analytic) + std::abs(central) + 1e-12);
}

}  // namespace

double finite_diff_check(const ScalarFn& f, const Tensor& x, double h) {
  Tensor probe = x;
  probe.set_requires_grad(true);
  auto loss_at = [&f](const Tensor& at) {
    Tape tape;
    Tensor copy = at;
    return f(tape, tape.constant(copy)).value().item();
  };
  std::vector<double> analytic;
  {
    Tape tape;
    Var loss = f(tape, tape.leaf(probe));
    tape.backward(loss);
    analytic.assign(probe.grad().begin(), probe.grad().end());
  }
  double worst = 0.0;
  Tensor moved = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = moved[i];
    moved[i] = orig + h;
    const double up = loss_at(moved);
    moved[i] = orig - h;
    const double down = loss_at(moved);
    moved[i] = orig;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * h)));
  }
  return worst;
}

std::vector<FiniteDiffPoint> finite_diff_points(const ClosedScalarFn& f,
                                               std::span<Tensor* const> params, double h,
                                               Stencil stencil) {
  for (Tensor* p : params) {
    if (!p->requires_grad()) p->set_requires_grad(true);
    p->zero_grad();
  }
  {
    Tape tape;
    Var loss = f(tape);
    tape.backward(loss);
  }
  auto loss_now = [&f] {
    Tape tape;
    return f(tape).value().item();
  };
  std::vector<FiniteDiffPoint> points;
  for (Tensor* p : params) {
    const std::vector<double> analytic(p->grad().begin(), p->grad().end());
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double orig = (*p)[i];
      auto at = [&](double offset) {
        (*p)[i] = orig + offset;
        return loss_now();
      };
      const double near = at(h) - at(-h);
      const double central =
          stencil == Stencil::kFivePoint
              ? (8.0 * near - (at(2 * h) - at(-2 * h))) / (12 * h)
              : near / (2 * h);
      (*p)[i] = orig;
      points.push_back({analytic[i], central});
    }
  }
  return points;
}

double finite_diff_check(const ClosedScalarFn& f, std::span<Tensor* const> params,
                         double h, Stencil stencil) {
  double worst = 0.0;
  for (const FiniteDiffPoint& pt : finite_diff_points(f, params, h, stencil)) {
    worst = std::max(worst, relative_error(pt.analytic, pt.numeric));
  }
  return worst;
}

}  // namespace pmp
