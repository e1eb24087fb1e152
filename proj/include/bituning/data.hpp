/*
 * Copyright 2026 The bituning Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bituning/tensor.hpp"

namespace bituning {

struct Dataset {
  Tensor features;          // N x in
  std::vector<int> labels;  // in [0, classes)
  std::vector<std::size_t> ids;  // 0..N-1
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t input_dim() const { return features.cols(); }

  /// Rows at `index`, in that order, with ids renumbered densely.
  Dataset subset(std::span<const std::size_t> index) const {
    const std::size_t in = features.cols();
    std::vector<double> x;
    x.reserve(index.size() * in);
    Dataset out;
    out.classes = classes;
    for (std::size_t r : index) {
      const auto row = features.row(r);
      x.insert(x.end(), row.begin(), row.end());
      out.labels.push_back(labels[r]);
    }
    out.features = Tensor({index.size(), in}, std::move(x), "dataset");
    out.ids.resize(index.size());
    std::iota(out.ids.begin(), out.ids.end(), std::size_t{0});
    return out;
  }

  std::vector<std::vector<std::size_t>> rows_by_class() const {
    std::vector<std::vector<std::size_t>> by(classes);
    for (std::size_t i = 0; i < labels.size(); ++i) by[static_cast<std::size_t>(labels[i])].push_back(i);
    return by;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> n(classes, 0);
    for (int y : labels) ++n[static_cast<std::size_t>(y)];
    return n;
  }
};

inline void validate(const Dataset& ds) {
  if (ds.size() == 0) throw ConfigError("dataset is empty");
  if (ds.features.rows() != ds.size() || ds.ids.size() != ds.size()) throw DimensionError("dataset columns disagree");
  for (int y : ds.labels)
    if (y < 0 || static_cast<std::size_t>(y) >= ds.classes) throw DimensionError("dataset label out of range");
  ds.features.check_finite("dataset");
}

namespace detail {

inline Dataset assemble(std::vector<double> x, std::vector<int> labels, std::size_t in, std::size_t classes) {
  Dataset ds;
  const std::size_t n = labels.size();
  ds.features = Tensor({n, in}, std::move(x), "dataset");
  ds.labels = std::move(labels);
  ds.ids.resize(n);
  std::iota(ds.ids.begin(), ds.ids.end(), std::size_t{0});
  ds.classes = classes;
  validate(ds);
  return ds;
}

}  // namespace detail

/// Isotropic Gaussian clusters. Class means are the vertices of a regular
/// simplex (pairwise distance `separation`) centred at the origin, embedded in
/// the first C-1 coordinates. Rows are emitted class by class.
inline Dataset make_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double separation,
                          double noise, std::uint64_t seed) {
  if (classes < 2 || per_class < 1) throw ConfigError("make_blobs needs classes >= 2 and per_class >= 1");
  if (dim + 1 < classes) throw ConfigError("make_blobs needs dim >= classes - 1");
  if (!(noise >= 0.0) || !std::isfinite(separation)) throw ConfigError("make_blobs: bad separation or noise");
  // Helmert rows 1..C-1 form an orthonormal basis orthogonal to (1,...,1); the
  // standard basis vectors projected onto it are sqrt(2) apart.
  const double s = separation / std::numbers::sqrt2;
  std::vector<std::vector<double>> means(classes, std::vector<double>(dim, 0.0));
  for (std::size_t k = 1; k < classes; ++k) {
    const double norm = std::sqrt(static_cast<double>(k * (k + 1)));
    for (std::size_t c = 0; c < classes; ++c) {
      double h = 0.0;
      if (c < k) h = 1.0 / norm;
      else if (c == k) h = -static_cast<double>(k) / norm;
      means[c][k - 1] = s * h;
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x;
  std::vector<int> y;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t j = 0; j < dim; ++j) x.push_back(means[c][j] + noise * gauss(rng));
      y.push_back(static_cast<int>(c));
    }
  }
  return detail::assemble(std::move(x), std::move(y), dim, classes);
}

/// Concentric 2-D rings: class c sits at radius c + 1, uniform angle, Gaussian radial noise.
inline Dataset make_rings(std::size_t classes, std::size_t per_class, double noise, std::uint64_t seed) {
  if (classes < 2 || per_class < 1) throw ConfigError("make_rings needs classes >= 2 and per_class >= 1");
  if (!(noise >= 0.0)) throw ConfigError("make_rings: noise must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x;
  std::vector<int> y;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const double a = angle(rng);
      const double r = static_cast<double>(c + 1) + noise * gauss(rng);
      x.push_back(r * std::cos(a));
      x.push_back(r * std::sin(a));
      y.push_back(static_cast<int>(c));
    }
  }
  return detail::assemble(std::move(x), std::move(y), 2, classes);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
bool parse_number(std::string_view cell, T& out) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size() && !cell.empty();
}

}  // namespace detail

struct DelimitedOptions {
  char delimiter = ',';
  std::size_t label_column = 0;
  bool has_header = false;
};

/// Reads a rectangular numeric table. Features are the non-label columns in
/// file order; labels are re-indexed densely in order of first appearance.
/// Blank lines are skipped.
inline Dataset load_delimited(const std::string& path, const DelimitedOptions& opt) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::string line;
  std::size_t line_no = 0, width = 0;
  std::vector<double> x;
  std::vector<int> labels;
  std::map<long long, int> dense;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && opt.has_header) continue;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line, opt.delimiter);
    if (width == 0) {
      width = cells.size();
      if (opt.label_column >= width) {
        throw ConfigError("label column " + std::to_string(opt.label_column) + " outside " +
                          std::to_string(width) + " columns");
      }
      if (width < 2) throw ConfigError("delimited input needs at least one feature column");
    } else if (cells.size() != width) {
      throw RaggedRowError(line_no, cells.size(), width);
    }
    for (std::size_t c = 0; c < width; ++c) {
      if (c == opt.label_column) {
        long long raw = 0;
        if (!detail::parse_number(cells[c], raw)) throw NonNumericCellError(line_no, c, std::string(cells[c]));
        auto [it, inserted] = dense.try_emplace(raw, static_cast<int>(dense.size()));
        labels.push_back(it->second);
      } else {
        double v = 0.0;
        if (!detail::parse_number(cells[c], v) || !std::isfinite(v)) {
          throw NonNumericCellError(line_no, c, std::string(cells[c]));
        }
        x.push_back(v);
      }
    }
  }
  if (in.bad()) throw IoError("read failed for " + path);
  if (labels.empty()) throw ConfigError("no data rows in " + path);
  return detail::assemble(std::move(x), std::move(labels), width - 1, dense.size());
}

/// Number of examples kept from a class of n at `rate`: ceil(rate * n), at least 1.
/// A 1e-9 slack absorbs products like 0.7 * 10 = 7.000000000000001.
inline std::size_t kept_per_class(double rate, std::size_t n) {
  const auto k = static_cast<std::size_t>(std::ceil(rate * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(k, std::min<std::size_t>(1, n), n);
}

/// Keeps ceil(rate * n_c) examples of every class, drawn uniformly without
/// replacement. Kept rows stay in their original relative order.
inline Dataset subsample_per_class(const Dataset& ds, double rate, std::uint64_t seed) {
  if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("sampling rate must lie in (0, 1], got " + std::to_string(rate));
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> keep;
  for (auto& rows : ds.rows_by_class()) {
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(kept_per_class(rate, rows.size()));
    keep.insert(keep.end(), rows.begin(), rows.end());
  }
  std::sort(keep.begin(), keep.end());
  return ds.subset(keep);
}

struct Split {
  Dataset train;
  Dataset validation;
};

/// Per-class shuffle, then round(train_fraction * n_c) rows of each class go to
/// training (at least 1, and at most n_c - 1 so validation sees the class when
/// it has two or more rows). train_fraction = 1 validates on the training set.
inline Split stratified_split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train_fraction must lie in (0, 1]");
  if (train_fraction == 1.0) return Split{ds, ds};
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train, val;
  for (auto& rows : ds.rows_by_class()) {
    if (rows.empty()) continue;
    std::shuffle(rows.begin(), rows.end(), rng);
    auto k = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(rows.size())));
    k = std::clamp<std::size_t>(k, 1, rows.size() > 1 ? rows.size() - 1 : 1);
    train.insert(train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(k));
    val.insert(val.end(), rows.begin() + static_cast<std::ptrdiff_t>(k), rows.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return Split{ds.subset(train), val.empty() ? ds.subset(train) : ds.subset(val)};
}

}  // namespace bituning
