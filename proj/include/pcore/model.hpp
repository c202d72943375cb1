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
// Small differentiable classifiers with analytic per-sample gradients.
//
// Parameters live in one flat vector partitioned into three contiguous
// groups, always in the order core | normalization | output:
//
//   SoftmaxRegression(d, k):  output = W (k x (d+1)), bias in the last column.
//   Mlp(d, h, k):             core   = W1 (h x (d+1)),
//                             normalization = gain (h) then bias (h),
//                             output = W2 (k x (h+1)).
//
// The Mlp computes z = W1 [x;1], standardizes z across its h entries, applies
// gain and bias, then tanh, then the linear output layer and softmax.
//

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcore/dataset.hpp"
#include "pcore/error.hpp"
#include "pcore/numeric.hpp"

namespace pcore {

enum class ModelKind { kSoftmaxRegression, kMlp };

enum class ParamGroup { kAll, kCore, kNormalization, kOutput };

inline const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kAll: return "all";
    case ParamGroup::kCore: return "core";
    case ParamGroup::kNormalization: return "normalization";
    case ParamGroup::kOutput: return "output";
  }
  return "?";
}

inline ParamGroup parse_group(const std::string& s) {
  if (s == "all" || s == "full") return ParamGroup::kAll;
  if (s == "core") return ParamGroup::kCore;
  if (s == "normalization") return ParamGroup::kNormalization;
  if (s == "output") return ParamGroup::kOutput;
  throw Error(ErrorKind::kConfig, "unknown parameter group '" + s + "'");
}

struct GroupRange {
  Index offset = 0;
  Index size = 0;
};

// Variance floor for the standardization layer.
inline constexpr double kNormVarianceFloor = 1e-8;
inline constexpr Index kHessianBudget = 512;

struct ModelSpec {
  ModelKind kind = ModelKind::kSoftmaxRegression;
  Index input_dim = 0;
  Index hidden = 0;  // Mlp only
  int num_classes = 0;

  static ModelSpec softmax(Index d, int k) {
    require(d >= 1 && k >= 2, "softmax spec: need d >= 1 and k >= 2");
    return {ModelKind::kSoftmaxRegression, d, 0, k};
  }
  static ModelSpec mlp(Index d, Index h, int k) {
    require(d >= 1 && h >= 1 && k >= 2, "mlp spec: need d, h >= 1 and k >= 2");
    return {ModelKind::kMlp, d, h, k};
  }

  Index core_size() const {
    return kind == ModelKind::kMlp ? hidden * (input_dim + 1) : 0;
  }
  Index norm_size() const { return kind == ModelKind::kMlp ? 2 * hidden : 0; }
  Index output_in() const { return kind == ModelKind::kMlp ? hidden : input_dim; }
  Index output_size() const { return num_classes * (output_in() + 1); }
  Index param_count() const { return core_size() + norm_size() + output_size(); }

  GroupRange group_range(ParamGroup g) const {
    switch (g) {
      case ParamGroup::kAll: return {0, param_count()};
      case ParamGroup::kCore: return {0, core_size()};
      case ParamGroup::kNormalization: return {core_size(), norm_size()};
      case ParamGroup::kOutput: return {core_size() + norm_size(), output_size()};
    }
    return {};
  }

  bool operator==(const ModelSpec&) const = default;
};

struct ModelState {
  ModelSpec spec;
  Vector params;

  ModelState() = default;
  ModelState(ModelSpec s, Vector p) : spec(s), params(std::move(p)) {
    require(params.size() == spec.param_count(),
            "model state: parameter length does not match spec");
  }
  explicit ModelState(ModelSpec s)
      : spec(s), params(Vector::Zero(s.param_count())) {}

  GroupRange range(ParamGroup g) const { return spec.group_range(g); }
  auto group(ParamGroup g) {
    const GroupRange r = range(g);
    return params.segment(r.offset, r.size);
  }
  auto group(ParamGroup g) const {
    const GroupRange r = range(g);
    return params.segment(r.offset, r.size);
  }
};

inline void require_group(const ModelSpec& spec, ParamGroup g) {
  if (spec.group_range(g).size == 0) {
    throw Error(ErrorKind::kInvalidArgument,
                std::string("parameter group '") + group_name(g) +
                    "' is empty for this model");
  }
}

// Default initialization: softmax regression starts at zero; the Mlp uses
// scaled Gaussian weights, unit gain and zero biases.
inline ModelState init_state(const ModelSpec& spec, RngStream& rng) {
  ModelState s(spec);
  if (spec.kind == ModelKind::kSoftmaxRegression) return s;
  const Index d = spec.input_dim, h = spec.hidden;
  const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
  for (Index j = 0; j < h; ++j) {
    for (Index t = 0; t < d; ++t) s.params[j * (d + 1) + t] = s1 * rng.normal();
  }
  const Index norm = spec.core_size();
  for (Index j = 0; j < h; ++j) s.params[norm + j] = 1.0;
  const Index out = norm + spec.norm_size();
  const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
  for (int c = 0; c < spec.num_classes; ++c) {
    for (Index j = 0; j < h; ++j) s.params[out + c * (h + 1) + j] = s2 * rng.normal();
  }
  return s;
}

// ---------------------------------------------------------------------------
// Forward / backward for a single sample.

namespace detail {

using ConstRowMap = Eigen::Map<const RowMatrix>;

struct Forward {
  Vector logits;
  Vector probs;
  // Mlp intermediates.
  Vector zhat;     // standardized pre-activations
  Vector act;      // tanh outputs
  double scale = 1.0;
  bool floored = false;
};

template <typename Row>
Forward forward(const ModelState& st, const Row& x) {
  const ModelSpec& sp = st.spec;
  const Index d = sp.input_dim;
  require(x.size() == d, "model: input dimension mismatch");
  Forward f;
  const Index k = sp.num_classes;
  if (sp.kind == ModelKind::kSoftmaxRegression) {
    ConstRowMap w(st.params.data(), k, d + 1);
    f.logits = w.leftCols(d) * x.transpose() + w.col(d);
  } else {
    const Index h = sp.hidden;
    ConstRowMap w1(st.params.data(), h, d + 1);
    const Vector z = w1.leftCols(d) * x.transpose() + w1.col(d);
    double mu = 0.0;
    for (Index j = 0; j < h; ++j) mu += z[j];
    mu /= static_cast<double>(h);
    double var = 0.0;
    for (Index j = 0; j < h; ++j) var += (z[j] - mu) * (z[j] - mu);
    var /= static_cast<double>(h);
    f.floored = var < kNormVarianceFloor;
    f.scale = std::sqrt(f.floored ? kNormVarianceFloor : var);
    f.zhat = (z.array() - mu) / f.scale;
    const auto gain = st.params.segment(sp.core_size(), h);
    const auto bias = st.params.segment(sp.core_size() + h, h);
    f.act = (gain.array() * f.zhat.array() + bias.array()).tanh();
    ConstRowMap w2(st.params.data() + sp.core_size() + sp.norm_size(), k, h + 1);
    f.logits = w2.leftCols(h) * f.act + w2.col(h);
  }
  const double mx = f.logits.maxCoeff();
  f.probs = (f.logits.array() - mx).exp();
  double z = 0.0;
  for (Index c = 0; c < k; ++c) z += f.probs[c];
  f.probs /= z;
  return f;
}

inline double cross_entropy(const Forward& f, int y) {
  const double mx = f.logits.maxCoeff();
  double z = 0.0;
  for (Index c = 0; c < f.logits.size(); ++c) z += std::exp(f.logits[c] - mx);
  return -(f.logits[y] - mx - std::log(z));
}

// Writes the gradient restricted to `g` into out (length = group size).
template <typename Row>
void backward(const ModelState& st, const Row& x, int y, const Forward& f,
              ParamGroup g, Eigen::Ref<Vector> out) {
  const ModelSpec& sp = st.spec;
  const Index d = sp.input_dim;
  const Index k = sp.num_classes;
  Vector r = f.probs;
  r[y] -= 1.0;

  const GroupRange want = sp.group_range(g);
  const auto put = [&](Index global, double v) {
    const Index local = global - want.offset;
    if (local >= 0 && local < want.size) out[local] = v;
  };
  const auto wants = [&](ParamGroup part) {
    const GroupRange pr = sp.group_range(part);
    return pr.size > 0 && pr.offset < want.offset + want.size &&
           want.offset < pr.offset + pr.size;
  };

  if (sp.kind == ModelKind::kSoftmaxRegression) {
    for (Index c = 0; c < k; ++c) {
      for (Index t = 0; t < d; ++t) put(c * (d + 1) + t, r[c] * x[t]);
      put(c * (d + 1) + d, r[c]);
    }
    return;
  }

  const Index h = sp.hidden;
  const Index out_off = sp.core_size() + sp.norm_size();
  if (wants(ParamGroup::kOutput)) {
    for (Index c = 0; c < k; ++c) {
      for (Index j = 0; j < h; ++j) put(out_off + c * (h + 1) + j, r[c] * f.act[j]);
      put(out_off + c * (h + 1) + h, r[c]);
    }
  }
  if (!wants(ParamGroup::kNormalization) && !wants(ParamGroup::kCore)) return;

  ConstRowMap w2(st.params.data() + out_off, k, h + 1);
  const Vector da = w2.leftCols(h).transpose() * r;
  const Vector du = da.array() * (1.0 - f.act.array().square());
  const Index norm_off = sp.core_size();
  if (wants(ParamGroup::kNormalization)) {
    for (Index j = 0; j < h; ++j) {
      put(norm_off + j, du[j] * f.zhat[j]);
      put(norm_off + h + j, du[j]);
    }
  }
  if (!wants(ParamGroup::kCore)) return;

  const auto gain = st.params.segment(norm_off, h);
  const Vector dzhat = du.array() * gain.array();
  double m1 = 0.0, m2 = 0.0;
  for (Index j = 0; j < h; ++j) {
    m1 += dzhat[j];
    m2 += dzhat[j] * f.zhat[j];
  }
  m1 /= static_cast<double>(h);
  m2 /= static_cast<double>(h);
  for (Index j = 0; j < h; ++j) {
    double dz = dzhat[j] - m1;
    if (!f.floored) dz -= f.zhat[j] * m2;
    dz /= f.scale;
    for (Index t = 0; t < d; ++t) put(j * (d + 1) + t, dz * x[t]);
    put(j * (d + 1) + d, dz);
  }
}

inline void check_weights(std::span<const std::size_t> indices,
                          std::span<const double> weights) {
  require(!indices.empty(), "empty index list");
  if (weights.empty()) return;
  require(weights.size() == indices.size(), "weights not aligned with indices");
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0.0 && std::isfinite(w), "weights must be finite and nonnegative");
    total += w;
  }
  require(total > 0.0, "weights sum to zero");
}

}  // namespace detail

inline Vector logits(const ModelState& st, const Dataset& ds, std::size_t i) {
  return detail::forward(st, ds.row(i)).logits;
}

// Argmax with ties resolved toward the lowest class id.
inline int predict(const ModelState& st, const Dataset& ds, std::size_t i) {
  const Vector z = logits(st, ds, i);
  Index best = 0;
  for (Index c = 1; c < z.size(); ++c) {
    if (z[c] > z[best]) best = c;
  }
  return static_cast<int>(best);
}

inline double sample_loss(const ModelState& st, const Dataset& ds, std::size_t i) {
  require(i < ds.size(), "sample index out of range");
  return detail::cross_entropy(detail::forward(st, ds.row(i)), ds.labels[i]);
}

// Weighted mean cross-entropy: sum w_i l_i / sum w_i. Empty weights means
// uniform.
inline double loss(const ModelState& st, const Dataset& ds,
                   std::span<const std::size_t> indices,
                   std::span<const double> weights = {}) {
  detail::check_weights(indices, weights);
  double num = 0.0, den = 0.0;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const double w = weights.empty() ? 1.0 : weights[r];
    if (w == 0.0) continue;
    num += w * sample_loss(st, ds, indices[r]);
    den += w;
  }
  return num / den;
}

inline Vector per_sample_grad(const ModelState& st, const Dataset& ds,
                              std::size_t i, ParamGroup g = ParamGroup::kAll) {
  require(i < ds.size(), "sample index out of range");
  require_group(st.spec, g);
  const auto f = detail::forward(st, ds.row(i));
  Vector out(st.spec.group_range(g).size);
  detail::backward(st, ds.row(i), ds.labels[i], f, g, out);
  return out;
}

// Gradient of the weighted mean loss over the batch, full parameter length.
inline Vector batch_grad(const ModelState& st, const Dataset& ds,
                         std::span<const std::size_t> indices,
                         std::span<const double> weights = {}) {
  detail::check_weights(indices, weights);
  const Index p = st.spec.param_count();
  Vector acc = Vector::Zero(p);
  Vector g(p);
  double den = 0.0;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const double w = weights.empty() ? 1.0 : weights[r];
    if (w == 0.0) continue;
    const std::size_t i = indices[r];
    require(i < ds.size(), "sample index out of range");
    const auto f = detail::forward(st, ds.row(i));
    detail::backward(st, ds.row(i), ds.labels[i], f, ParamGroup::kAll, g);
    acc += w * g;
    den += w;
  }
  return acc / den;
}

// Central finite differences of the single-sample loss.
inline Vector fd_sample_grad(const ModelState& st, const Dataset& ds, std::size_t i,
                             double step = 1e-5) {
  ModelState probe = st;
  Vector g(st.params.size());
  for (Index j = 0; j < g.size(); ++j) {
    const double w0 = st.params[j];
    probe.params[j] = w0 + step;
    const double lp = sample_loss(probe, ds, i);
    probe.params[j] = w0 - step;
    const double lm = sample_loss(probe, ds, i);
    probe.params[j] = w0;
    g[j] = (lp - lm) / (2.0 * step);
  }
  return g;
}

// Central differences of batch_grad, symmetrized.
inline Matrix fd_hessian(const ModelState& st, const Dataset& ds,
                         std::span<const std::size_t> indices,
                         std::span<const double> weights = {},
                         double step = 1e-5) {
  const Index p = st.spec.param_count();
  require(p <= kHessianBudget, "hessian: parameter count exceeds 512",
          ErrorKind::kBudget);
  Matrix h(p, p);
  ModelState probe = st;
  for (Index j = 0; j < p; ++j) {
    const double w0 = st.params[j];
    probe.params[j] = w0 + step;
    const Vector gp = batch_grad(probe, ds, indices, weights);
    probe.params[j] = w0 - step;
    const Vector gm = batch_grad(probe, ds, indices, weights);
    probe.params[j] = w0;
    h.col(j) = (gp - gm) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

// Softmax regression: sum_i w_i (diag(p_i) - p_i p_i^T) (x) x~_i x~_i^T / sum w_i
// with x~ = [x; 1]. Mlp: finite differences.
inline Matrix hessian(const ModelState& st, const Dataset& ds,
                      std::span<const std::size_t> indices,
                      std::span<const double> weights = {}) {
  const Index p = st.spec.param_count();
  require(p <= kHessianBudget, "hessian: parameter count exceeds 512",
          ErrorKind::kBudget);
  detail::check_weights(indices, weights);
  if (st.spec.kind == ModelKind::kMlp) return fd_hessian(st, ds, indices, weights);

  const Index d = st.spec.input_dim;
  const Index k = st.spec.num_classes;
  Matrix h = Matrix::Zero(p, p);
  Vector xt(d + 1);
  double den = 0.0;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const double w = weights.empty() ? 1.0 : weights[r];
    if (w == 0.0) continue;
    const std::size_t i = indices[r];
    const auto f = detail::forward(st, ds.row(i));
    xt.head(d) = ds.row(i).transpose();
    xt[d] = 1.0;
    const Matrix xx = xt * xt.transpose();
    for (Index a = 0; a < k; ++a) {
      for (Index b = 0; b < k; ++b) {
        const double c = (a == b ? f.probs[a] : 0.0) - f.probs[a] * f.probs[b];
        h.block(a * (d + 1), b * (d + 1), d + 1, d + 1) += (w * c) * xx;
      }
    }
    den += w;
  }
  return h / den;
}

// ---------------------------------------------------------------------------

inline nlohmann::json spec_to_json(const ModelSpec& s) {
  nlohmann::json j;
  j["kind"] = s.kind == ModelKind::kMlp ? "mlp" : "softmax";
  j["input_dim"] = s.input_dim;
  if (s.kind == ModelKind::kMlp) j["hidden"] = s.hidden;
  j["num_classes"] = s.num_classes;
  return j;
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    const auto d = j.at("input_dim").get<Index>();
    const int k = j.at("num_classes").get<int>();
    if (kind == "softmax") return ModelSpec::softmax(d, k);
    if (kind == "mlp") return ModelSpec::mlp(d, j.at("hidden").get<Index>(), k);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("model spec: ") + e.what());
  }
  throw Error(ErrorKind::kFormat, "model spec: unknown kind");
}

inline std::vector<unsigned char> serialize_state(const ModelState& st) {
  nlohmann::json h;
  h["format"] = "pcore.model";
  h["version"] = 1;
  h["spec"] = spec_to_json(st.spec);
  h["param_count"] = st.spec.param_count();
  for (ParamGroup g : {ParamGroup::kCore, ParamGroup::kNormalization,
                       ParamGroup::kOutput}) {
    const GroupRange r = st.spec.group_range(g);
    h["groups"][group_name(g)] = {r.offset, r.size};
  }
  h["layout"] = "params:f64le[param_count]";
  std::vector<unsigned char> blob;
  blob.reserve(static_cast<std::size_t>(st.params.size()) * 8);
  for (Index i = 0; i < st.params.size(); ++i) detail::append_le_f64(blob, st.params[i]);
  return detail::pack_container(h, blob);
}

inline ModelState deserialize_state(std::span<const unsigned char> bytes) {
  const auto [h, blob] = detail::unpack_container(bytes);
  if (h.value("format", "") != "pcore.model") {
    throw Error(ErrorKind::kFormat, "not a model container");
  }
  const ModelSpec spec = spec_from_json(h.at("spec"));
  const auto p = static_cast<std::size_t>(spec.param_count());
  if (blob.size() != p * 8) throw Error(ErrorKind::kFormat, "model blob size mismatch");
  Vector params(static_cast<Index>(p));
  for (std::size_t i = 0; i < p; ++i) params[static_cast<Index>(i)] = detail::read_le_f64(blob, i * 8);
  return ModelState(spec, std::move(params));
}

inline void save_state(const ModelState& st, const std::string& path) {
  detail::write_file(path, serialize_state(st));
}

inline ModelState load_state(const std::string& path) {
  const auto bytes = detail::read_file(path);
  return deserialize_state(bytes);
}

}  // namespace pcore
