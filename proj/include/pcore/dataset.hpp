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
// Classification datasets: synthetic blobs, IDX ingestion, label corruption
// and train/test splits.
//

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcore/error.hpp"
#include "pcore/numeric.hpp"

namespace pcore {

struct Dataset {
  RowMatrix features;  // n x d, one sample per row
  std::vector<int> labels;
  int num_classes = 0;
  // Present iff the labels were corrupted; the pre-corruption labels.
  std::optional<std::vector<int>> original_labels;
  std::size_t corruption_count = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  Index dim() const { return features.cols(); }
  auto row(std::size_t i) const { return features.row(static_cast<Index>(i)); }

  std::vector<std::size_t> all_indices() const {
    std::vector<std::size_t> idx(size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
  }
};

inline void validate(const Dataset& ds) {
  require(ds.features.rows() == static_cast<Index>(ds.labels.size()),
          "dataset: feature rows do not match label count");
  require(ds.num_classes >= 1, "dataset: num_classes must be >= 1");
  for (int y : ds.labels) {
    require(y >= 0 && y < ds.num_classes, "dataset: label out of range");
  }
  if (ds.original_labels) {
    require(ds.original_labels->size() == ds.labels.size(),
            "dataset: original label count mismatch");
    std::size_t flips = 0;
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
      flips += ds.labels[i] != (*ds.original_labels)[i];
    }
    require(flips == ds.corruption_count,
            "dataset: corruption count does not match label differences");
  }
}

// Gaussian blobs around unit-norm class means. Means are the first k basis
// vectors when d >= k and otherwise equally spaced on the unit circle spanned
// by the first two coordinates. Sample i has label i mod k.
inline Dataset gen_blobs(int num_classes, std::size_t n, Index d, double spread,
                         std::uint64_t seed) {
  require(d >= 1, "gen_blobs: d must be >= 1");
  require(num_classes >= 1, "gen_blobs: num_classes must be >= 1");
  require(n >= static_cast<std::size_t>(num_classes),
          "gen_blobs: n must be >= num_classes");
  require(spread > 0.0, "gen_blobs: spread must be > 0");
  require(d >= 2 || num_classes <= 2,
          "gen_blobs: d = 1 supports at most two classes");

  RowMatrix means = RowMatrix::Zero(num_classes, d);
  for (int c = 0; c < num_classes; ++c) {
    if (d >= num_classes) {
      means(c, c) = 1.0;
    } else if (d == 1) {
      means(c, 0) = c == 0 ? 1.0 : -1.0;
    } else {
      const double a = 2.0 * std::numbers::pi * c / num_classes;
      means(c, 0) = std::cos(a);
      means(c, 1) = std::sin(a);
    }
  }

  Dataset ds;
  ds.num_classes = num_classes;
  ds.name = "blobs";
  ds.features.resize(static_cast<Index>(n), d);
  ds.labels.resize(n);
  RngStream rng = RngStream(seed).child("blobs");
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % num_classes);
    ds.labels[i] = y;
    for (Index j = 0; j < d; ++j) {
      ds.features(static_cast<Index>(i), j) = means(y, j) + spread * rng.normal();
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// IDX (big-endian) images/labels.

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(std::span<const unsigned char> b,
                               std::size_t off, const std::string& path) {
  if (b.size() < off + 4) {
    throw IdxError(IdxFailure::kTruncated, "truncated IDX header in " + path);
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

inline void write_file(const std::string& path,
                       std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path);
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

inline Dataset parse_idx(std::span<const unsigned char> images,
                         std::span<const unsigned char> labels,
                         const std::string& images_name = "images",
                         const std::string& labels_name = "labels") {
  using detail::read_be32;
  if (read_be32(images, 0, images_name) != kIdxImageMagic) {
    throw IdxError(IdxFailure::kBadMagic, "bad image magic in " + images_name);
  }
  if (read_be32(labels, 0, labels_name) != kIdxLabelMagic) {
    throw IdxError(IdxFailure::kBadMagic, "bad label magic in " + labels_name);
  }
  const std::uint32_t count = read_be32(images, 4, images_name);
  const std::uint32_t rows = read_be32(images, 8, images_name);
  const std::uint32_t cols = read_be32(images, 12, images_name);
  const std::uint32_t label_count = read_be32(labels, 4, labels_name);
  if (count != label_count) {
    throw IdxError(IdxFailure::kCountMismatch,
                   "image count " + std::to_string(count) +
                       " != label count " + std::to_string(label_count));
  }
  const std::size_t d = std::size_t{rows} * cols;
  if (images.size() < 16 + std::size_t{count} * d) {
    throw IdxError(IdxFailure::kTruncated, "truncated image data in " + images_name);
  }
  if (labels.size() < 8 + std::size_t{count}) {
    throw IdxError(IdxFailure::kTruncated, "truncated label data in " + labels_name);
  }

  Dataset ds;
  ds.name = "idx";
  ds.features.resize(count, static_cast<Index>(d));
  ds.labels.resize(count);
  int max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      ds.features(static_cast<Index>(i), static_cast<Index>(j)) =
          images[16 + i * d + j] / 255.0;
    }
    ds.labels[i] = labels[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = count == 0 ? 1 : max_label + 1;
  return ds;
}

inline Dataset load_idx(const std::string& images_path,
                        const std::string& labels_path) {
  const auto images = detail::read_file(images_path);
  const auto labels = detail::read_file(labels_path);
  return parse_idx(images, labels, images_path, labels_path);
}

// Encodes a dataset with features in [0, 1] back into IDX bytes. rows * cols
// must equal the feature dimension.
inline std::pair<std::vector<unsigned char>, std::vector<unsigned char>>
encode_idx(const Dataset& ds, std::uint32_t rows, std::uint32_t cols) {
  require(static_cast<Index>(rows) * cols == ds.dim(),
          "encode_idx: rows * cols != feature dimension");
  require(ds.num_classes <= 256, "encode_idx: labels must fit in a byte");
  std::vector<unsigned char> img, lab;
  detail::put_be32(img, kIdxImageMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(ds.size()));
  detail::put_be32(img, rows);
  detail::put_be32(img, cols);
  for (Index i = 0; i < ds.features.rows(); ++i) {
    for (Index j = 0; j < ds.features.cols(); ++j) {
      const double v = std::clamp(ds.features(i, j), 0.0, 1.0);
      img.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  }
  detail::put_be32(lab, kIdxLabelMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (int y : ds.labels) lab.push_back(static_cast<unsigned char>(y));
  return {std::move(img), std::move(lab)};
}

inline void write_idx(const Dataset& ds, std::uint32_t rows, std::uint32_t cols,
                      const std::string& images_path,
                      const std::string& labels_path) {
  const auto [img, lab] = encode_idx(ds, rows, cols);
  detail::write_file(images_path, img);
  detail::write_file(labels_path, lab);
}

// ---------------------------------------------------------------------------

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.name = ds.name;
  out.features.resize(static_cast<Index>(indices.size()), ds.dim());
  out.labels.resize(indices.size());
  if (ds.original_labels) out.original_labels.emplace(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    require(i < ds.size(), "subset: index out of range");
    out.features.row(static_cast<Index>(r)) = ds.row(i);
    out.labels[r] = ds.labels[i];
    if (ds.original_labels) {
      (*out.original_labels)[r] = (*ds.original_labels)[i];
      out.corruption_count += out.labels[r] != (*out.original_labels)[r];
    }
  }
  return out;
}

// Flips exactly floor(ratio * n) labels, chosen uniformly without
// replacement; each flipped label is uniform over the other k - 1 classes.
inline Dataset corrupt_labels(const Dataset& ds, double ratio,
                              std::uint64_t seed) {
  require(ratio >= 0.0 && ratio <= 1.0, "corrupt_labels: ratio outside [0, 1]");
  require(!(ds.num_classes < 2 && ratio > 0.0),
          "corrupt_labels: need at least two classes to flip labels");
  require(!(ds.original_labels && ratio > 0.0),
          "corrupt_labels: dataset is already corrupted");
  Dataset out = ds;
  const std::size_t n = ds.size();
  const auto flips = static_cast<std::size_t>(std::floor(ratio * n));
  if (flips == 0) return out;

  RngStream rng = RngStream(seed).child("corrupt");
  std::vector<std::size_t> order = ds.all_indices();
  // Partial Fisher-Yates: the first `flips` slots are a uniform sample.
  for (std::size_t i = 0; i < flips; ++i) {
    const std::size_t j = i + rng.uniform_index(n - i);
    std::swap(order[i], order[j]);
  }
  out.original_labels = ds.labels;
  const auto k = static_cast<std::uint64_t>(ds.num_classes);
  for (std::size_t i = 0; i < flips; ++i) {
    const std::size_t idx = order[i];
    const int y = ds.labels[idx];
    const int r = static_cast<int>(rng.uniform_index(k - 1));
    out.labels[idx] = r < y ? r : r + 1;
  }
  out.corruption_count = flips;
  out.name = ds.name + "+corrupt";
  return out;
}

struct Split {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

inline Split split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0,
          "split: train_fraction must be in (0, 1)");
  std::vector<std::size_t> order = ds.all_indices();
  RngStream rng = RngStream(seed).child("split");
  rng.shuffle(order);
  const auto n_train =
      static_cast<std::size_t>(std::floor(train_fraction * ds.size()));
  Split s;
  s.train_indices.assign(order.begin(), order.begin() + n_train);
  s.test_indices.assign(order.begin() + n_train, order.end());
  s.train = subset(ds, s.train_indices);
  s.test = subset(ds, s.test_indices);
  return s;
}

// ---------------------------------------------------------------------------
// Binary container shared by datasets and model states: one line of JSON
// header, then a little-endian blob whose layout the header describes.

namespace detail {

inline void append_le_f64(std::vector<unsigned char>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
}

inline void append_le_i32(std::vector<unsigned char>& out, std::int32_t v) {
  const auto u = static_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>(u >> (8 * b)));
}

inline double read_le_f64(std::span<const unsigned char> b, std::size_t off) {
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= std::uint64_t{b[off + k]} << (8 * k);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

inline std::int32_t read_le_i32(std::span<const unsigned char> b, std::size_t off) {
  std::uint32_t u = 0;
  for (int k = 0; k < 4; ++k) u |= std::uint32_t{b[off + k]} << (8 * k);
  return static_cast<std::int32_t>(u);
}

inline std::vector<unsigned char> pack_container(const nlohmann::json& header,
                                                 std::span<const unsigned char> blob) {
  const std::string h = header.dump();
  std::vector<unsigned char> out(h.begin(), h.end());
  out.push_back('\n');
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

inline std::pair<nlohmann::json, std::span<const unsigned char>> unpack_container(
    std::span<const unsigned char> bytes) {
  const auto nl = std::find(bytes.begin(), bytes.end(), static_cast<unsigned char>(0x0a));
  if (nl == bytes.end()) throw Error(ErrorKind::kFormat, "container: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin(), nl);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("container header: ") + e.what());
  }
  return {header, bytes.subspan(static_cast<std::size_t>(nl - bytes.begin()) + 1)};
}

}  // namespace detail

inline std::vector<unsigned char> serialize_dataset(const Dataset& ds) {
  nlohmann::json h;
  h["format"] = "pcore.dataset";
  h["version"] = 1;
  h["name"] = ds.name;
  h["n"] = ds.size();
  h["d"] = ds.dim();
  h["num_classes"] = ds.num_classes;
  h["corruption_count"] = ds.corruption_count;
  h["has_original_labels"] = ds.original_labels.has_value();
  h["layout"] = {"features:f64le[n*d] row-major", "labels:i32le[n]",
                 "original_labels:i32le[n] if has_original_labels"};
  std::vector<unsigned char> blob;
  for (Index i = 0; i < ds.features.rows(); ++i) {
    for (Index j = 0; j < ds.features.cols(); ++j) {
      detail::append_le_f64(blob, ds.features(i, j));
    }
  }
  for (int y : ds.labels) detail::append_le_i32(blob, y);
  if (ds.original_labels) {
    for (int y : *ds.original_labels) detail::append_le_i32(blob, y);
  }
  return detail::pack_container(h, blob);
}

inline Dataset deserialize_dataset(std::span<const unsigned char> bytes) {
  const auto [h, blob] = detail::unpack_container(bytes);
  if (h.value("format", "") != "pcore.dataset") {
    throw Error(ErrorKind::kFormat, "not a dataset container");
  }
  Dataset ds;
  std::size_t n = 0;
  Index d = 0;
  bool has_original = false;
  try {
    ds.name = h.at("name").get<std::string>();
    n = h.at("n").get<std::size_t>();
    d = h.at("d").get<Index>();
    ds.num_classes = h.at("num_classes").get<int>();
    ds.corruption_count = h.at("corruption_count").get<std::size_t>();
    has_original = h.at("has_original_labels").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("dataset header: ") + e.what());
  }
  const std::size_t need =
      n * static_cast<std::size_t>(d) * 8 + n * 4 * (has_original ? 2 : 1);
  if (blob.size() != need) throw Error(ErrorKind::kFormat, "dataset blob size mismatch");
  ds.features.resize(static_cast<Index>(n), d);
  std::size_t off = 0;
  for (Index i = 0; i < ds.features.rows(); ++i) {
    for (Index j = 0; j < d; ++j, off += 8) ds.features(i, j) = detail::read_le_f64(blob, off);
  }
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i, off += 4) ds.labels[i] = detail::read_le_i32(blob, off);
  if (has_original) {
    ds.original_labels.emplace(n);
    for (std::size_t i = 0; i < n; ++i, off += 4) {
      (*ds.original_labels)[i] = detail::read_le_i32(blob, off);
    }
  }
  validate(ds);
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  detail::write_file(path, serialize_dataset(ds));
}

inline Dataset load_dataset(const std::string& path) {
  const auto bytes = detail::read_file(path);
  return deserialize_dataset(bytes);
}

}  // namespace pcore
