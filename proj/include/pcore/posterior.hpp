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

//
// Weight-space posteriors used to smooth the selection objective.
//
// sigma is a per-coordinate standard deviation for the spherical kind and a
// covariance scale for the Hessian-inverse kind: delta ~ N(0, sigma (H + rI)^-1).
//

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcore/dataset.hpp"
#include "pcore/error.hpp"
#include "pcore/model.hpp"
#include "pcore/numeric.hpp"

namespace pcore {

enum class PosteriorKind { kSpherical, kHessianInverse, kEnsemble };

inline const char* posterior_kind_name(PosteriorKind k) {
  switch (k) {
    case PosteriorKind::kSpherical: return "spherical";
    case PosteriorKind::kHessianInverse: return "hessian_inverse";
    case PosteriorKind::kEnsemble: return "ensemble";
  }
  return "?";
}

inline PosteriorKind parse_posterior_kind(const std::string& s) {
  if (s == "spherical") return PosteriorKind::kSpherical;
  if (s == "hessian_inverse") return PosteriorKind::kHessianInverse;
  if (s == "ensemble") return PosteriorKind::kEnsemble;
  throw Error(ErrorKind::kConfig, "unknown posterior kind '" + s + "'");
}

struct PosteriorSpec {
  PosteriorKind kind = PosteriorKind::kSpherical;
  double sigma = 0.01;
  int num_samples = 4;
  ParamGroup target_group = ParamGroup::kNormalization;
  std::optional<double> ridge;  // Hessian-inverse; default 1e-3 tr(H) / dim
  std::vector<std::uint64_t> ensemble_seeds;
  // Replace sigma by sqrt(1 / (M sqrt(T) d_group)) at train time.
  bool theory_schedule = false;

  // Single unperturbed evaluation: the unsmoothed gradient-matching baseline.
  static PosteriorSpec point() {
    PosteriorSpec p;
    p.sigma = 0.0;
    p.num_samples = 1;
    p.target_group = ParamGroup::kAll;
    return p;
  }
};

inline void validate(const PosteriorSpec& p, const ModelSpec& model) {
  require(p.num_samples >= 1, "posterior: num_samples must be >= 1");
  require(p.sigma >= 0.0 && std::isfinite(p.sigma), "posterior: sigma must be >= 0");
  require_group(model, p.target_group);
  if (p.kind == PosteriorKind::kHessianInverse) {
    require(p.target_group == ParamGroup::kAll,
            "posterior: hessian_inverse requires target_group = all");
    require(!p.ridge || *p.ridge > 0.0, "posterior: ridge must be > 0");
  }
  if (p.kind == PosteriorKind::kEnsemble) {
    require(p.ensemble_seeds.size() >= 1, "posterior: ensemble needs seeds");
  }
}

// Spherical Gaussian perturbation on the target group; other coordinates are
// copied unchanged.
inline std::vector<ModelState> draw_perturbed(const PosteriorSpec& p,
                                              const ModelState& state,
                                              RngStream& rng) {
  validate(p, state.spec);
  require(p.kind == PosteriorKind::kSpherical,
          "draw_perturbed: only the spherical kind is sampled here");
  std::vector<ModelState> out(static_cast<std::size_t>(p.num_samples), state);
  if (p.sigma == 0.0) return out;
  const GroupRange r = state.range(p.target_group);
  for (auto& s : out) {
    for (Index j = 0; j < r.size; ++j) s.params[r.offset + j] += p.sigma * rng.normal();
  }
  return out;
}

// Draws M vectors delta ~ N(0, scale (H + ridge I)^-1) through the
// eigendecomposition of H. Negative curvature is clipped to zero before the
// ridge is added; ridge may be zero only when H itself is positive definite.
inline std::vector<Vector> gaussian_from_precision(const Matrix& h, double ridge,
                                                   double scale, int num_samples,
                                                   RngStream& rng) {
  require(ridge >= 0.0, "gaussian_from_precision: ridge must be >= 0");
  require(scale >= 0.0, "gaussian_from_precision: scale must be >= 0");
  require(num_samples >= 1, "gaussian_from_precision: num_samples must be >= 1");
  const SymEig e = sym_eig(h);
  const Index p = h.rows();
  Vector inv_sd(p);
  for (Index i = 0; i < p; ++i) {
    const double lam = std::max(e.values[i], 0.0) + ridge;
    require(lam > 0.0, "gaussian_from_precision: precision is singular",
            ErrorKind::kInvalidArgument);
    inv_sd[i] = std::sqrt(scale / lam);
  }
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(num_samples));
  for (int m = 0; m < num_samples; ++m) {
    if (scale == 0.0) {
      out.push_back(Vector::Zero(p));
      continue;
    }
    Vector z(p);
    for (Index i = 0; i < p; ++i) z[i] = inv_sd[i] * rng.normal();
    out.push_back(e.vectors * z);
  }
  return out;
}

inline double default_ridge(const Matrix& h) {
  return h.rows() == 0 ? 1e-3 : 1e-3 * h.trace() / static_cast<double>(h.rows());
}

inline std::vector<ModelState> hessian_inverse_sampler(
    const ModelState& state, const Dataset& ds,
    std::span<const std::size_t> subsample, double ridge, double scale,
    int num_samples, RngStream& rng) {
  require(ridge > 0.0, "hessian_inverse_sampler: ridge must be > 0");
  const Matrix h = hessian(state, ds, subsample);
  const auto deltas = gaussian_from_precision(h, ridge, scale, num_samples, rng);
  std::vector<ModelState> out;
  out.reserve(deltas.size());
  for (const auto& delta : deltas) out.emplace_back(state.spec, state.params + delta);
  return out;
}

// sigma such that sigma^2 * d = 1 / (M sqrt(T)).
inline double theory_sigma(int num_samples, int horizon, Index group_dim) {
  require(num_samples >= 1 && horizon >= 1 && group_dim >= 1,
          "theory_sigma: arguments must be positive");
  return std::sqrt(1.0 / (num_samples * std::sqrt(static_cast<double>(horizon)) *
                          static_cast<double>(group_dim)));
}

// How per-state gradient features are combined into a distance.
enum class Aggregation {
  kMeanOfNorms,  // E_delta || g_i - g_j ||
  kNormOfMean,   // || E g_i - E g_j ||, used by the ensemble posterior
};

// A posterior ready to be sampled around a model state. Ensemble members are
// trained beforehand (see ensemble_posterior in trainer.hpp).
struct Posterior {
  PosteriorSpec spec;
  std::vector<ModelState> members;

  Aggregation aggregation() const {
    return spec.kind == PosteriorKind::kEnsemble ? Aggregation::kNormOfMean
                                                 : Aggregation::kMeanOfNorms;
  }

  // The M states at which features are evaluated. `pool` is the subsample
  // the Hessian-inverse kind builds its curvature from.
  std::vector<ModelState> sample(const ModelState& state, const Dataset& ds,
                                 std::span<const std::size_t> pool,
                                 RngStream& rng) const {
    switch (spec.kind) {
      case PosteriorKind::kSpherical:
        return draw_perturbed(spec, state, rng);
      case PosteriorKind::kHessianInverse: {
        validate(spec, state.spec);
        const Matrix h = hessian(state, ds, pool);
        const double ridge = spec.ridge.value_or(default_ridge(h));
        require(ridge > 0.0, "hessian posterior: ridge must be > 0");
        const auto deltas =
            gaussian_from_precision(h, ridge, spec.sigma, spec.num_samples, rng);
        std::vector<ModelState> out;
        for (const auto& delta : deltas) out.emplace_back(state.spec, state.params + delta);
        return out;
      }
      case PosteriorKind::kEnsemble:
        require(!members.empty(), "ensemble posterior has no trained members");
        for (const auto& m : members) {
          require(m.spec == state.spec, "ensemble member spec mismatch");
        }
        return members;
    }
    return {};
  }
};

}  // namespace pcore
