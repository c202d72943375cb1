// Copyright 2026 The Authors.
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

#include <span>

#include "pcore/dataset.hpp"
#include "pcore/model.hpp"
#include "pcore/numeric.hpp"
#include "pcore/selection.hpp"

namespace pcore {

// Sum of per-sample gradients over `indices` (or the whole dataset when
// empty), accumulated in index order.
inline Vector gradient_sum(const ModelState& state, const Dataset& ds,
                           std::span<const std::size_t> indices = {},
                           std::span<const double> weights = {}) {
  Vector acc = Vector::Zero(state.spec.param_count());
  const std::size_t count = indices.empty() ? ds.size() : indices.size();
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t i = indices.empty() ? r : indices[r];
    const double w = weights.empty() ? 1.0 : weights[r];
    acc += w * per_sample_grad(state, ds, i);
  }
  return acc;
}

struct GradientMatch {
  // || mean_S grad - (1/|S'|) sum_{S'} gamma_j grad_j ||
  double verbatim = 0.0;
  // (1/|S|) || sum_S grad - sum_{S'} gamma_j grad_j ||
  double normalized = 0.0;
};

inline GradientMatch gradient_match_error(const ModelState& state,
                                          const Coreset& coreset,
                                          const Dataset& ds,
                                          const Vector* full_sum = nullptr) {
  require(coreset.size() > 0, "gradient_match_error: empty coreset");
  const Vector full = full_sum ? *full_sum : gradient_sum(state, ds);
  const auto idx = coreset.indices();
  const auto w = coreset.weights();
  const Vector sub = gradient_sum(state, ds, idx, w);
  const auto n = static_cast<double>(ds.size());
  const auto m = static_cast<double>(coreset.size());
  return {(full / n - sub / m).norm(), (full - sub).norm() / n};
}

}  // namespace pcore
