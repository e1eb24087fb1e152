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

#include <cmath>
#include <cstddef>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bituning/tensor.hpp"

namespace bituning {

// Tolerance on the unit-norm invariant of stored keys.
inline constexpr double kUnitNormTolerance = 1e-9;

struct KeyEntry {
  std::vector<double> h;  // unit vector in R^d
  std::vector<double> z;  // unit vector in R^L
  int label = 0;
};

inline void validate_entry(const KeyEntry& e, std::size_t classes) {
  if (e.label < 0 || static_cast<std::size_t>(e.label) >= classes) {
    throw DimensionError("key label " + std::to_string(e.label) + " outside [0, " + std::to_string(classes) + ")");
  }
  if (std::abs(l2_norm(e.h) - 1.0) > kUnitNormTolerance || std::abs(l2_norm(e.z) - 1.0) > kUnitNormTolerance) {
    throw DegenerateInputError("key entry is not unit norm");
  }
}

/// Contrast keys for one query. Row 0 is the query's own key, rows 1..K are sampled.
struct KeyBatch {
  Tensor h_keys;  // (K+1) x d
  Tensor z_keys;  // (K+1) x L
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t negatives_and_positives() const noexcept { return labels.size() - 1; }

  /// Indicator of the positive set S_i = { j : labels[j] == label }.
  std::vector<double> positive_mask(int label) const {
    std::vector<double> m(labels.size());
    for (std::size_t j = 0; j < labels.size(); ++j) m[j] = labels[j] == label ? 1.0 : 0.0;
    return m;
  }
  std::size_t positive_count(int label) const {
    std::size_t n = 0;
    for (int l : labels) n += l == label;
    return n;
  }
};

inline KeyBatch make_key_batch(const KeyEntry& query, std::span<const KeyEntry* const> sampled) {
  const std::size_t d = query.h.size(), L = query.z.size(), rows = sampled.size() + 1;
  std::vector<double> h, z;
  h.reserve(rows * d);
  z.reserve(rows * L);
  std::vector<int> labels;
  labels.reserve(rows);
  auto push = [&](const KeyEntry& e) {
    if (e.h.size() != d || e.z.size() != L) throw DimensionError("key entry widths differ within a batch");
    h.insert(h.end(), e.h.begin(), e.h.end());
    z.insert(z.end(), e.z.begin(), e.z.end());
    labels.push_back(e.label);
  };
  push(query);
  for (const KeyEntry* e : sampled) push(*e);
  return KeyBatch{Tensor({rows, d}, std::move(h), "key batch"), Tensor({rows, L}, std::move(z), "key batch"),
                  std::move(labels)};
}

namespace detail {

inline std::size_t uniform_index(std::size_t n, std::mt19937_64& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace detail

/// One bounded FIFO of keys per class; pushing past capacity evicts the oldest.
class MocoQueues {
 public:
  MocoQueues(std::size_t classes, std::size_t queue_size) : queues_(classes), queue_size_(queue_size) {
    if (classes == 0 || queue_size == 0) throw ConfigError("queues need classes >= 1 and queue_size >= 1");
  }

  void push(KeyEntry entry) {
    validate_entry(entry, queues_.size());
    auto& q = queues_[static_cast<std::size_t>(entry.label)];
    q.push_back(std::move(entry));
    if (q.size() > queue_size_) q.pop_front();
  }

  void enqueue(std::span<const KeyEntry> entries) {
    for (const auto& e : entries) push(e);
  }

  /// Draws keys_per_class entries with replacement from every non-empty class
  /// buffer (classes in index order) and prepends `query` at row 0.
  KeyBatch sample(std::size_t keys_per_class, const KeyEntry& query, std::mt19937_64& rng) const {
    if (keys_per_class == 0) throw ConfigError("keys_per_class must be >= 1");
    if (empty()) throw EmptyPoolError("every class queue is empty; run the warm-up pass first");
    std::vector<const KeyEntry*> picked;
    for (const auto& q : queues_) {
      if (q.empty()) continue;
      for (std::size_t s = 0; s < keys_per_class; ++s) picked.push_back(&q[detail::uniform_index(q.size(), rng)]);
    }
    return make_key_batch(query, picked);
  }

  const std::deque<KeyEntry>& buffer(std::size_t c) const { return queues_.at(c); }
  std::size_t classes() const noexcept { return queues_.size(); }
  std::size_t queue_size() const noexcept { return queue_size_; }

  bool empty() const {
    for (const auto& q : queues_)
      if (!q.empty()) return false;
    return true;
  }
  bool full() const {
    for (const auto& q : queues_)
      if (q.size() < queue_size_) return false;
    return true;
  }

 private:
  std::vector<std::deque<KeyEntry>> queues_;
  std::size_t queue_size_;
};

enum class BankSampling { kPerClass, kUniform };

/// One momentum-mixed key snapshot per training example.
class MemoryBank {
 public:
  MemoryBank(std::vector<int> labels, std::size_t classes, double momentum = 0.5,
             BankSampling sampling = BankSampling::kPerClass)
      : labels_(std::move(labels)), slots_(labels_.size()), classes_(classes), momentum_(momentum),
        sampling_(sampling) {
    if (labels_.empty()) throw ConfigError("memory bank over an empty dataset");
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("bank momentum must lie in [0, 1]");
    for (int l : labels_)
      if (l < 0 || static_cast<std::size_t>(l) >= classes) throw DimensionError("bank label out of range");
  }

  /// Stores a snapshot verbatim when the slot is empty, otherwise mixes it in.
  void initialize(std::size_t id, KeyEntry entry) {
    check_id(id);
    entry.label = labels_[id];
    validate_entry(entry, classes_);
    if (!slots_[id]) {
      slots_[id] = std::move(entry);
    } else {
      mix(id, entry.h, entry.z);
    }
  }

  /// snapshot <- m * snapshot + (1 - m) * new, then renormalized, for each row of h and z.
  void update(std::span<const std::size_t> ids, const Tensor& h, const Tensor& z) {
    if (h.rows() != ids.size() || z.rows() != ids.size()) throw DimensionError("bank_update: row count != ids");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      check_id(ids[i]);
      if (!slots_[ids[i]]) {
        KeyEntry e{std::vector<double>(h.row(i).begin(), h.row(i).end()),
                   std::vector<double>(z.row(i).begin(), z.row(i).end()), labels_[ids[i]]};
        validate_entry(e, classes_);
        slots_[ids[i]] = std::move(e);
      } else {
        mix(ids[i], h.row(i), z.row(i));
      }
    }
  }

  KeyBatch sample(std::size_t count_per_class, const KeyEntry& query, std::mt19937_64& rng) const {
    if (count_per_class == 0) throw ConfigError("keys_per_class must be >= 1");
    std::vector<std::vector<std::size_t>> by_class(classes_);
    std::vector<std::size_t> all;
    for (std::size_t id = 0; id < slots_.size(); ++id) {
      if (!slots_[id]) continue;
      by_class[static_cast<std::size_t>(labels_[id])].push_back(id);
      all.push_back(id);
    }
    if (all.empty()) throw EmptyPoolError("memory bank holds no snapshots; run the warm-up pass first");
    std::vector<const KeyEntry*> picked;
    if (sampling_ == BankSampling::kPerClass) {
      for (const auto& ids : by_class) {
        if (ids.empty()) continue;
        for (std::size_t s = 0; s < count_per_class; ++s) picked.push_back(&*slots_[ids[detail::uniform_index(ids.size(), rng)]]);
      }
    } else {
      std::size_t present = 0;
      for (const auto& ids : by_class) present += !ids.empty();
      for (std::size_t s = 0; s < count_per_class * present; ++s)
        picked.push_back(&*slots_[all[detail::uniform_index(all.size(), rng)]]);
    }
    return make_key_batch(query, picked);
  }

  std::size_t size() const noexcept { return slots_.size(); }
  double momentum() const noexcept { return momentum_; }
  bool initialized(std::size_t id) const { return slots_.at(id).has_value(); }
  bool complete() const {
    for (const auto& s : slots_)
      if (!s) return false;
    return true;
  }
  bool empty() const {
    for (const auto& s : slots_)
      if (s) return false;
    return true;
  }
  const KeyEntry& entry(std::size_t id) const {
    check_id(id);
    if (!slots_[id]) throw EmptyPoolError("snapshot " + std::to_string(id) + " not initialized");
    return *slots_[id];
  }

 private:
  void check_id(std::size_t id) const {
    if (id >= slots_.size()) {
      throw DimensionError("example id " + std::to_string(id) + " outside bank of " + std::to_string(slots_.size()));
    }
  }

  static void mix_normalize(std::vector<double>& slot, std::span<const double> fresh, double m) {
    if (fresh.size() != slot.size()) throw DimensionError("bank_update: key width differs");
    for (std::size_t j = 0; j < slot.size(); ++j) slot[j] = m * slot[j] + (1.0 - m) * fresh[j];
    const double norm = l2_norm(slot);
    if (!(norm >= 1e-12)) throw DegenerateInputError("memory bank snapshot collapsed to zero norm");
    for (double& v : slot) v /= norm;
  }

  void mix(std::size_t id, std::span<const double> h, std::span<const double> z) {
    KeyEntry& e = *slots_[id];
    mix_normalize(e.h, h, momentum_);
    mix_normalize(e.z, z, momentum_);
  }

  std::vector<int> labels_;
  std::vector<std::optional<KeyEntry>> slots_;
  std::size_t classes_;
  double momentum_;
  BankSampling sampling_;
};

/// Either key generator; both honour the same sampling contract.
using KeyPool = std::variant<MocoQueues, MemoryBank>;

inline KeyBatch sample_keys(const KeyPool& pool, std::size_t keys_per_class, const KeyEntry& query,
                            std::mt19937_64& rng) {
  return std::visit([&](const auto& p) { return p.sample(keys_per_class, query, rng); }, pool);
}

inline bool pool_empty(const KeyPool& pool) {
  return std::visit([](const auto& p) { return p.empty(); }, pool);
}

}  // namespace bituning
