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
// Numeric core: dense carriers, counter-based random streams and small
// symmetric eigenproblems.
//

#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numbers>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "pcore/error.hpp"

namespace pcore {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

// Counter-based generator: draw k of a stream is mix64(key + k * golden), so
// the sequence is a pure function of the seed. Child streams are keyed by
// (parent key, label) and do not advance the parent.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed)
      : seed_(seed), key_(detail::mix64(seed ^ 0x6A09E667F3BCC909ULL)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGolden);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; consumes exactly two draws.
  double normal() {
    const double u1 =
        (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Unbiased integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    require(n > 0, "uniform_index: empty range");
    const std::uint64_t limit = -n % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t x = next_u64();
      const unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
      if (static_cast<std::uint64_t>(m) >= limit) {
        return static_cast<std::uint64_t>(m >> 64);
      }
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  RngStream child(std::uint64_t label) const {
    return RngStream(detail::mix64(key_ ^ detail::mix64(label + detail::kGolden)));
  }
  RngStream child(std::string_view label) const {
    return child(detail::fnv1a(label));
  }
  RngStream child(std::string_view label, std::uint64_t index) const {
    return child(label).child(index);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline Vector sample_gaussian(RngStream& rng, Index dim, double stddev) {
  require(stddev >= 0.0, "sample_gaussian: negative standard deviation");
  require(dim >= 1, "sample_gaussian: dim must be >= 1");
  Vector v(dim);
  for (Index i = 0; i < dim; ++i) v[i] = stddev * rng.normal();
  return v;
}

inline bool all_finite(const Eigen::Ref<const Matrix>& a) {
  return a.allFinite();
}

// Sequential-order sum, independent of vectorization width.
inline double ordered_sum(const Eigen::Ref<const Vector>& v) {
  double s = 0.0;
  for (Index i = 0; i < v.size(); ++i) s += v[i];
  return s;
}

inline double max_asymmetry(const Matrix& a) {
  require(a.rows() == a.cols(), "matrix is not square");
  return a.rows() == 0 ? 0.0 : (a - a.transpose()).cwiseAbs().maxCoeff();
}

// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const Eigen::Ref<const Matrix>& a,
                             const Eigen::Ref<const Matrix>& b, double floor = 1e-12) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

struct SymEig {
  Vector values;   // ascending
  Matrix vectors;  // columns are eigenvectors
};

inline constexpr Index kMaxEigenSize = 512;

inline SymEig sym_eig(const Matrix& a) {
  require(a.rows() == a.cols(), "sym_eig: matrix is not square");
  require(a.rows() <= kMaxEigenSize, "sym_eig: matrix exceeds 512x512",
          ErrorKind::kBudget);
  const double asym = max_asymmetry(a);
  if (asym > 1e-10) {
    throw Error(ErrorKind::kInvalidArgument,
                "sym_eig: matrix not symmetric (max |A - A^T| = " +
                    std::to_string(asym) + ")");
  }
  if (a.rows() == 0) return {Vector(0), Matrix(0, 0)};
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a);
  require(solver.info() == Eigen::Success, "sym_eig: solver failed");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

inline double spectral_norm(const Matrix& a) {
  const SymEig e = sym_eig(a);
  return e.values.size() == 0 ? 0.0 : e.values.cwiseAbs().maxCoeff();
}

inline double trace_square(const Matrix& a) {
  const SymEig e = sym_eig(a);
  double s = 0.0;
  for (Index i = 0; i < e.values.size(); ++i) s += e.values[i] * e.values[i];
  return s;
}

// Runs fn(i) for i in [0, n). Work is split into contiguous blocks; callers
// write results into per-index slots so the output does not depend on the
// thread count.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t t = std::min<std::size_t>(threads, n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(t);
  pool.reserve(t);
  for (std::size_t w = 0; w < t; ++w) {
    const std::size_t lo = n * w / t;
    const std::size_t hi = n * (w + 1) / t;
    pool.emplace_back([lo, hi, w, &fn, &errors] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace pcore
