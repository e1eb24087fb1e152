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

// Small helpers shared by the unit suites.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "bituning/bituning.hpp"

namespace bituning::testing {

inline Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  return detail::random_matrix(r, c, rng, lo, hi);
}

inline std::vector<double> unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

inline KeyEntry entry(std::vector<double> h, std::vector<double> z, int label) {
  return KeyEntry{unit(std::move(h)), unit(std::move(z)), label};
}

/// Entry whose h and z both point along axis `axis` of R^dim.
inline KeyEntry axis_entry(std::size_t dim, std::size_t axis, int label) {
  std::vector<double> v(dim, 0.0);
  v[axis] = 1.0;
  return KeyEntry{v, v, label};
}

inline KeyBatch batch_of(const KeyEntry& query, const std::vector<KeyEntry>& sampled) {
  std::vector<const KeyEntry*> ptrs;
  for (const auto& e : sampled) ptrs.push_back(&e);
  return make_key_batch(query, ptrs);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

/// A tiny labelled set for trainer tests: two well-separated 2-D clusters.
inline Dataset two_clusters(std::size_t per_class, std::uint64_t seed = 3) {
  return make_blobs(2, per_class, 2, 6.0, 0.3, seed);
}

inline TrainConfig small_config(const Dataset& train) {
  TrainConfig cfg;
  cfg.dims.input = train.input_dim();
  cfg.dims.classes = train.classes;
  cfg.dims.hidden = {8};
  cfg.dims.feature = 6;
  cfg.dims.projection = 5;
  cfg.queue_size = 4;
  cfg.keys_per_class = 2;
  cfg.batch_size = 4;
  cfg.iterations = 5;
  cfg.optimizer.base_lr = 0.001;
  cfg.seed = 11;
  return cfg;
}

}  // namespace bituning::testing
