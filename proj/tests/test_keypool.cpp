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

#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <map>

#include "bituning/bituning.hpp"
#include "test_util.hpp"

using namespace bituning;
using bituning::testing::axis_entry;
using bituning::testing::entry;

namespace {

// Distinct unit keys: entry number k points along axis k of R^dim.
KeyEntry tagged(std::size_t k, int label, std::size_t dim = 16) { return axis_entry(dim, k, label); }

std::size_t tag_of(const KeyEntry& e) {
  for (std::size_t j = 0; j < e.h.size(); ++j)
    if (e.h[j] == 1.0) return j;
  return e.h.size();
}

std::size_t tag_of_row(const Tensor& t, std::size_t r) {
  for (std::size_t j = 0; j < t.cols(); ++j)
    if (t(r, j) == 1.0) return j;
  return t.cols();
}

TEST(MocoQueues, EvictsOldestPastCapacity) {
  MocoQueues q(1, 2);
  q.push(tagged(0, 0));
  q.push(tagged(1, 0));
  q.push(tagged(2, 0));
  ASSERT_EQ(q.buffer(0).size(), 2u);
  EXPECT_EQ(tag_of(q.buffer(0)[0]), 1u);
  EXPECT_EQ(tag_of(q.buffer(0)[1]), 2u);
}

TEST(MocoQueues, FirstPushGivesLengthOne) {
  MocoQueues q(3, 4);
  EXPECT_TRUE(q.empty());
  q.push(tagged(0, 2));
  EXPECT_EQ(q.buffer(2).size(), 1u);
  EXPECT_EQ(q.buffer(0).size(), 0u);
  EXPECT_FALSE(q.empty());
}

TEST(MocoQueues, RejectsOutOfRangeLabelAndNonUnitKeys) {
  MocoQueues q(2, 4);
  EXPECT_THROW(q.push(tagged(0, 2)), DimensionError);
  EXPECT_THROW(q.push(tagged(0, -1)), DimensionError);
  EXPECT_THROW(q.push(KeyEntry{{2.0, 0.0}, {1.0, 0.0}, 0}), DegenerateInputError);
}

TEST(MocoQueues, InterleavedPushesMatchReferenceReplay) {
  // Reference model: one std::deque per class, trimmed to capacity.
  const std::size_t classes = 3, cap = 3;
  MocoQueues q(classes, cap);
  std::vector<std::deque<std::size_t>> ref(classes);
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
  for (std::size_t k = 0; k < 40; ++k) {
    const int label = pick(rng);
    q.push(tagged(k, label, 40));
    ref[static_cast<std::size_t>(label)].push_back(k);
    if (ref[static_cast<std::size_t>(label)].size() > cap) ref[static_cast<std::size_t>(label)].pop_front();
    for (std::size_t c = 0; c < classes; ++c) {
      ASSERT_EQ(q.buffer(c).size(), ref[c].size());
      for (std::size_t i = 0; i < ref[c].size(); ++i) {
        EXPECT_EQ(tag_of(q.buffer(c)[i]), ref[c][i]);
        EXPECT_EQ(q.buffer(c)[i].label, static_cast<int>(c));
        EXPECT_NEAR(l2_norm(q.buffer(c)[i].h), 1.0, 1e-9);
      }
    }
  }
}

TEST(MocoQueues, SingleEntryIsSampledWithReplacement) {
  MocoQueues q(1, 4);
  q.push(tagged(3, 0));
  std::mt19937_64 rng(1);
  const KeyBatch kb = q.sample(2, tagged(7, 0), rng);
  ASSERT_EQ(kb.size(), 3u);
  EXPECT_EQ(tag_of_row(kb.h_keys, 0), 7u);
  EXPECT_EQ(tag_of_row(kb.h_keys, 1), 3u);
  EXPECT_EQ(tag_of_row(kb.h_keys, 2), 3u);
}

TEST(MocoQueues, KeysPerClassTimesClassesPlusQuery) {
  MocoQueues q(3, 2);
  for (std::size_t k = 0; k < 6; ++k) q.push(tagged(k, static_cast<int>(k % 3)));
  ASSERT_TRUE(q.full());
  std::mt19937_64 rng(2);
  const KeyBatch kb = q.sample(2, tagged(10, 1), rng);
  EXPECT_EQ(kb.size(), 7u);
  EXPECT_EQ(kb.h_keys.rows(), 7u);
  EXPECT_EQ(kb.z_keys.rows(), 7u);
  EXPECT_EQ(kb.negatives_and_positives(), 6u);
  std::map<int, int> hist;
  for (std::size_t j = 1; j < kb.size(); ++j) ++hist[kb.labels[j]];
  EXPECT_EQ(hist, (std::map<int, int>{{0, 2}, {1, 2}, {2, 2}}));
}

TEST(MocoQueues, EmptyClassesAreSkipped) {
  MocoQueues q(3, 2);
  q.push(tagged(0, 2));
  std::mt19937_64 rng(3);
  EXPECT_EQ(q.sample(3, tagged(1, 0), rng).size(), 4u);
}

TEST(MocoQueues, EmptyPoolIsAnError) {
  MocoQueues q(2, 2);
  std::mt19937_64 rng(4);
  EXPECT_THROW(q.sample(1, tagged(0, 0), rng), EmptyPoolError);
}

TEST(MocoQueues, SameSeedSameBatch) {
  MocoQueues q(2, 8);
  for (std::size_t k = 0; k < 16; ++k) q.push(tagged(k, static_cast<int>(k % 2), 20));
  std::mt19937_64 a(9), b(9);
  const KeyBatch x = q.sample(3, tagged(19, 0, 20), a), y = q.sample(3, tagged(19, 0, 20), b);
  EXPECT_EQ(x.h_keys, y.h_keys);
  EXPECT_EQ(x.z_keys, y.z_keys);
  EXPECT_EQ(x.labels, y.labels);
}

TEST(KeyBatch, SlotZeroIsAlwaysPositive) {
  MocoQueues q(3, 4);
  std::mt19937_64 fill(5);
  for (std::size_t k = 0; k < 12; ++k) q.push(tagged(k, static_cast<int>(fill() % 3)));
  for (std::uint64_t s = 0; s < 50; ++s) {
    std::mt19937_64 rng(s);
    const int y = static_cast<int>(s % 3);
    const KeyBatch kb = q.sample(2, tagged(15, y), rng);
    EXPECT_EQ(kb.labels[0], y);
    EXPECT_EQ(kb.positive_mask(y)[0], 1.0);
    EXPECT_GE(kb.positive_count(y), 1u);
  }
}

TEST(MemoryBank, ZeroMomentumReplaces) {
  MemoryBank bank({0}, 1, 0.0);
  bank.initialize(0, entry({1, 0}, {1, 0}, 0));
  bank.update(std::vector<std::size_t>{0}, Tensor::matrix({{0.6, 0.8}}), Tensor::matrix({{0, 1}}));
  EXPECT_EQ(bank.entry(0).h, (std::vector<double>{0.6, 0.8}));
  EXPECT_EQ(bank.entry(0).z, (std::vector<double>{0.0, 1.0}));
}

TEST(MemoryBank, UnitMomentumKeeps) {
  MemoryBank bank({0}, 1, 1.0);
  bank.initialize(0, entry({1, 0}, {0, 1}, 0));
  bank.update(std::vector<std::size_t>{0}, Tensor::matrix({{0, 1}}), Tensor::matrix({{1, 0}}));
  EXPECT_EQ(bank.entry(0).h, (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(bank.entry(0).z, (std::vector<double>{0.0, 1.0}));
}

TEST(MemoryBank, HalfMixOfOrthogonalKeys) {
  MemoryBank bank({0}, 1, 0.5);
  bank.initialize(0, entry({1, 0}, {1, 0}, 0));
  bank.update(std::vector<std::size_t>{0}, Tensor::matrix({{0, 1}}), Tensor::matrix({{0, 1}}));
  const double r = 1.0 / std::sqrt(2.0);
  for (double v : bank.entry(0).h) EXPECT_NEAR(v, r, 1e-12);
  for (double v : bank.entry(0).z) EXPECT_NEAR(v, r, 1e-12);
}

TEST(MemoryBank, EntriesStayUnitNormUnderRandomUpdates) {
  const std::vector<int> labels{0, 1, 0, 1, 2};
  MemoryBank bank(labels, 3, 0.5);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  auto random_unit_rows = [&](std::size_t n, std::size_t d) {
    std::vector<double> v(n * d);
    for (double& x : v) x = g(rng);
    Tape t;
    return row_l2_normalize(t.constant(Tensor({n, d}, v))).value();
  };
  const std::vector<std::size_t> all{0, 1, 2, 3, 4};
  for (int step = 0; step < 30; ++step) {
    bank.update(all, random_unit_rows(5, 4), random_unit_rows(5, 3));
    for (std::size_t id : all) {
      EXPECT_NEAR(l2_norm(bank.entry(id).h), 1.0, 1e-12);
      EXPECT_NEAR(l2_norm(bank.entry(id).z), 1.0, 1e-12);
      EXPECT_EQ(bank.entry(id).label, labels[id]);
    }
  }
}

TEST(MemoryBank, RejectsUnknownIds) {
  MemoryBank bank({0, 1}, 2);
  EXPECT_THROW(bank.update(std::vector<std::size_t>{2}, Tensor::matrix({{1, 0}}), Tensor::matrix({{1, 0}})),
               DimensionError);
  EXPECT_THROW(bank.initialize(5, entry({1, 0}, {1, 0}, 0)), DimensionError);
}

TEST(MemoryBank, OppositeKeysCollapseToZeroIsAnError) {
  MemoryBank bank({0}, 1, 0.5);
  bank.initialize(0, entry({1, 0}, {1, 0}, 0));
  EXPECT_THROW(bank.update(std::vector<std::size_t>{0}, Tensor::matrix({{-1, 0}}), Tensor::matrix({{0, 1}})),
               DegenerateInputError);
}

TEST(MemoryBank, OneItemPerClassGivesDeterministicBatch) {
  MemoryBank bank({0, 1, 2}, 3);
  for (std::size_t id = 0; id < 3; ++id) bank.initialize(id, tagged(id, static_cast<int>(id)));
  std::mt19937_64 rng(7);
  const KeyBatch kb = bank.sample(1, tagged(9, 1), rng);
  ASSERT_EQ(kb.size(), 4u);
  EXPECT_EQ(kb.labels, (std::vector<int>{1, 0, 1, 2}));
  for (std::size_t r = 1; r < 4; ++r) EXPECT_EQ(tag_of_row(kb.h_keys, r), r - 1);
}

TEST(MemoryBank, PerClassHistogramIsExact) {
  std::vector<int> labels;
  for (int i = 0; i < 30; ++i) labels.push_back(i < 20 ? 0 : (i < 27 ? 1 : 2));
  MemoryBank bank(labels, 3);
  for (std::size_t id = 0; id < labels.size(); ++id) bank.initialize(id, tagged(id, labels[id], 32));
  for (std::uint64_t s = 0; s < 20; ++s) {
    std::mt19937_64 rng(s);
    const KeyBatch kb = bank.sample(3, tagged(31, 0, 32), rng);
    std::map<int, int> hist;
    for (std::size_t j = 1; j < kb.size(); ++j) ++hist[kb.labels[j]];
    EXPECT_EQ(hist, (std::map<int, int>{{0, 3}, {1, 3}, {2, 3}}));
  }
}

TEST(MemoryBank, SameSeedSameBatch) {
  MemoryBank bank({0, 1, 0, 1}, 2);
  for (std::size_t id = 0; id < 4; ++id) bank.initialize(id, tagged(id, static_cast<int>(id % 2)));
  std::mt19937_64 a(8), b(8);
  const KeyBatch x = bank.sample(2, tagged(9, 0), a), y = bank.sample(2, tagged(9, 0), b);
  EXPECT_EQ(x.h_keys, y.h_keys);
  EXPECT_EQ(x.labels, y.labels);
}

TEST(MemoryBank, SamplesOnlyInitializedSnapshots) {
  MemoryBank bank({0, 0, 1}, 2);
  std::mt19937_64 rng(10);
  EXPECT_THROW(bank.sample(1, tagged(9, 0), rng), EmptyPoolError);
  bank.initialize(1, tagged(1, 0));
  const KeyBatch kb = bank.sample(4, tagged(9, 0), rng);
  EXPECT_EQ(kb.size(), 5u);
  for (std::size_t r = 1; r < kb.size(); ++r) EXPECT_EQ(tag_of_row(kb.h_keys, r), 1u);
  EXPECT_FALSE(bank.complete());
}

TEST(MemoryBank, UniformSamplingKeepsBatchSize) {
  MemoryBank bank({0, 0, 0, 1}, 2, 0.5, BankSampling::kUniform);
  for (std::size_t id = 0; id < 4; ++id) bank.initialize(id, tagged(id, id < 3 ? 0 : 1));
  std::mt19937_64 rng(11);
  EXPECT_EQ(bank.sample(2, tagged(9, 1), rng).size(), 5u);
}

TEST(KeyPool, BothGeneratorsShareTheSamplingContract) {
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  KeyPool queues = MocoQueues(3, 4);
  KeyPool bank = MemoryBank(labels, 3);
  for (std::size_t id = 0; id < labels.size(); ++id) {
    std::get<MocoQueues>(queues).push(tagged(id, labels[id]));
    std::get<MemoryBank>(bank).initialize(id, tagged(id, labels[id]));
  }
  for (const KeyPool* pool : {&queues, &bank}) {
    EXPECT_FALSE(pool_empty(*pool));
    std::mt19937_64 a(12), b(12);
    const KeyBatch x = sample_keys(*pool, 2, tagged(9, 2), a);
    const KeyBatch y = sample_keys(*pool, 2, tagged(9, 2), b);
    EXPECT_EQ(x.size(), 7u);
    EXPECT_EQ(x.h_keys.cols(), 16u);
    EXPECT_EQ(x.labels[0], 2);
    EXPECT_EQ(x.h_keys, y.h_keys);
  }
}

}  // namespace
