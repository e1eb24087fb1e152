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
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "bituning/data.hpp"
#include "bituning/keypool.hpp"
#include "bituning/losses.hpp"
#include "bituning/model.hpp"
#include "bituning/optimizer.hpp"

namespace bituning {

enum class KeyGeneratorKind { kMoco, kMemoryBank };

// kPass: one gradient-free pass fills the pool before training.
// kDelay: no warm-up; contrastive terms switch on once the pool is full.
enum class WarmupMode { kPass, kDelay };

struct TrainConfig {
  ModelDims dims;  // input and classes must agree with the training set
  double tau = 0.07;
  std::size_t queue_size = 32;
  std::size_t keys_per_class = 4;
  double momentum = 0.999;
  double bank_momentum = 0.5;
  KeyGeneratorKind key_generator = KeyGeneratorKind::kMoco;
  BankSampling bank_sampling = BankSampling::kPerClass;
  LossWeights weights;
  CceVariant cce_variant = CceVariant::kLiteral;
  Prototypes prototypes = Prototypes::kRaw;
  Reduction reduction = Reduction::kSum;
  OptimizerConfig optimizer;
  std::size_t iterations = 2000;
  std::size_t batch_size = 32;
  std::size_t log_every = 1;
  std::size_t eval_every = 100;
  WarmupMode warmup = WarmupMode::kPass;
  bool record_wall_time = false;
  std::uint64_t seed = 0;
};

/// Independent random stream `stream` derived from the run seed.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

struct Batch {
  Tensor x;
  std::vector<int> y;
  std::vector<std::size_t> ids;  // example ids within the training set
};

inline Batch make_batch(const Dataset& ds, std::span<const std::size_t> rows) {
  Batch b;
  std::vector<double> x;
  for (std::size_t r : rows) {
    const auto row = ds.features.row(r);
    x.insert(x.end(), row.begin(), row.end());
    b.y.push_back(ds.labels[r]);
    b.ids.push_back(ds.ids[r]);
  }
  b.x = Tensor({rows.size(), ds.input_dim()}, std::move(x), "batch");
  return b;
}

/// Epoch-wise reshuffled mini-batches; a short final chunk starts the next epoch early.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::mt19937_64 rng)
      : order_(n), batch_(std::min(batch_size, n)), rng_(std::move(rng)) {
    if (n == 0 || batch_size == 0) throw ConfigError("batch sampler needs data and batch_size >= 1");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    cursor_ = n;
  }

  std::vector<std::size_t> next() {
    if (cursor_ + batch_ > order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    std::vector<std::size_t> rows(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                  order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
    cursor_ += batch_;
    return rows;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

/// Everything one run mutates.
struct TrainState {
  ModelParams params;
  MomentumTwin twin;
  KeyPool pool;
  SgdMomentum optimizer;
  std::mt19937_64 key_rng;
  std::size_t iteration = 0;
};

inline KeyPool make_pool(const TrainConfig& cfg, const Dataset& train) {
  if (cfg.key_generator == KeyGeneratorKind::kMoco) return MocoQueues(cfg.dims.classes, cfg.queue_size);
  return MemoryBank(train.labels, cfg.dims.classes, cfg.bank_momentum, cfg.bank_sampling);
}

inline void check_compatible(const TrainConfig& cfg, const Dataset& ds) {
  validate(ds);
  if (ds.input_dim() != cfg.dims.input || ds.classes != cfg.dims.classes) {
    throw ConfigError("dataset has " + std::to_string(ds.input_dim()) + " features / " + std::to_string(ds.classes) +
                      " classes, model expects " + std::to_string(cfg.dims.input) + " / " +
                      std::to_string(cfg.dims.classes));
  }
}

inline TrainState init_state(const TrainConfig& cfg, const Dataset& train) {
  check_compatible(cfg, train);
  auto init_rng = make_rng(cfg.seed, 0);
  ModelParams params = init_params(cfg.dims, init_rng);
  MomentumTwin twin = init_twin(params, cfg.momentum);
  SgdMomentum opt(params, cfg.optimizer);
  return TrainState{std::move(params), std::move(twin), make_pool(cfg, train), std::move(opt), make_rng(cfg.seed, 2), 0};
}

inline KeyEntry key_entry(const KeyOutputs& keys, std::size_t row, int label) {
  const auto h = keys.h.row(row), z = keys.z.row(row);
  return KeyEntry{{h.begin(), h.end()}, {z.begin(), z.end()}, label};
}

/// Gradient-free pass through the twin that seeds the key pool.
///
/// Queue mode visits, for each class, its last min(queue_size, n_c) rows, in
/// dataset order (at most queue_size * C rows), so every queue ends up holding
/// the newest queue_size entries of its class. Bank mode visits all N rows;
/// already-initialized snapshots are mixed with the bank momentum.
inline void warmup(TrainState& state, const Dataset& train, const TrainConfig& cfg) {
  if (train.size() == 0) throw ConfigError("warm-up over an empty dataset");
  std::vector<std::size_t> rows;
  if (std::holds_alternative<MocoQueues>(state.pool)) {
    for (const auto& cls : train.rows_by_class()) {
      const std::size_t take = std::min(cfg.queue_size, cls.size());
      rows.insert(rows.end(), cls.end() - static_cast<std::ptrdiff_t>(take), cls.end());
    }
    std::sort(rows.begin(), rows.end());
  } else {
    rows.resize(train.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
  }
  const Batch b = make_batch(train, rows);
  const KeyOutputs keys = forward_key(state.twin, b.x);
  if (auto* queues = std::get_if<MocoQueues>(&state.pool)) {
    for (std::size_t i = 0; i < rows.size(); ++i) queues->push(key_entry(keys, i, b.y[i]));
  } else {
    auto& bank = std::get<MemoryBank>(state.pool);
    for (std::size_t i = 0; i < rows.size(); ++i) bank.initialize(b.ids[i], key_entry(keys, i, b.y[i]));
  }
}

inline bool pool_ready(const TrainState& state, const TrainConfig& cfg) {
  if (cfg.warmup == WarmupMode::kPass) return true;
  if (const auto* q = std::get_if<MocoQueues>(&state.pool)) return q->full();
  return std::get<MemoryBank>(state.pool).complete();
}

/// One optimization step:
///   (1) query forward  (2) key forward through the twin  (3) per-query key batches,
///   slot 0 = the query's own key  (4) losses, backward, SGD update
///   (5) momentum update of the twin  (6) enqueue keys / update bank snapshots.
inline LossTerms train_step(TrainState& state, const Batch& batch, const TrainConfig& cfg) {
  ++state.iteration;
  const std::size_t b = batch.y.size();
  Tape tape;
  QueryPass q = forward_query(tape, state.params, batch.x);
  const KeyOutputs keys = forward_key(state.twin, batch.x);

  const bool contrastive = cfg.weights.contrastive() && pool_ready(state, cfg);
  std::vector<KeyBatch> key_batches;
  if (contrastive) {
    key_batches.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
      key_batches.push_back(sample_keys(state.pool, cfg.keys_per_class, key_entry(keys, i, batch.y[i]), state.key_rng));
    }
  }

  const Temperature tau(cfg.tau);
  LossGraph graph;
  LossWeights weights = cfg.weights;
  if (weights.ce != 0.0) graph.ce = ce_loss(q.logits, batch.y, cfg.reduction);
  std::optional<Var> h_norm;
  if (contrastive && weights.cce != 0.0) {
    h_norm = row_l2_normalize(q.h);
    graph.cce = cce_loss(*h_norm, batch.y, q.params.classifier, key_batches, tau, cfg.cce_variant, cfg.reduction,
                         cfg.prototypes);
  }
  if (contrastive && weights.ccl != 0.0) graph.ccl = ccl_loss(q.z, batch.y, key_batches, tau, cfg.reduction);
  if (!contrastive) weights.cce = weights.ccl = 0.0;

  LossTerms terms;
  if (weights.any()) {
    TotalLoss total = bituning_total(graph, weights);
    tape.backward(total.total);
    std::vector<Tensor> grads;
    for (const Var& v : q.params.all()) grads.push_back(tape.grad(v));
    state.optimizer.step(state.params, grads, state.iteration);
    terms = total.terms;
  }
  momentum_update(state.twin, state.params);

  if (auto* queues = std::get_if<MocoQueues>(&state.pool)) {
    for (std::size_t i = 0; i < b; ++i) queues->push(key_entry(keys, i, batch.y[i]));
  } else {
    const Tensor hq = h_norm ? h_norm->value() : row_l2_normalize(q.h).value();
    std::get<MemoryBank>(state.pool).update(batch.ids, hq, q.z.value());
  }
  return terms;
}

/// Top-1 accuracy of the classifier path.
inline double evaluate(const ModelParams& params, const Dataset& ds) {
  if (ds.size() == 0) throw ConfigError("evaluate on an empty dataset");
  const auto pred = predict(params, ds.features);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == ds.labels[i];
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

struct MetricRow {
  std::size_t iteration = 0;
  std::optional<LossTerms> losses;
  std::optional<double> val_acc;
  std::optional<double> wall_ms;
};

struct TrainRun {
  TrainConfig config;
  std::vector<MetricRow> log;
  ModelParams params;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  double wall_ms = 0.0;
};

/// Warm-up (unless delayed), then `iterations` steps. Losses are logged every
/// log_every steps, validation accuracy at iteration 0, every eval_every steps
/// and at the last step.
inline TrainRun fit(const TrainConfig& cfg, const Dataset& train, const Dataset& validation) {
  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };
  check_compatible(cfg, validation);
  TrainState state = init_state(cfg, train);
  if (cfg.warmup == WarmupMode::kPass && (cfg.weights.contrastive() || cfg.key_generator == KeyGeneratorKind::kMemoryBank)) {
    warmup(state, train, cfg);
  }
  BatchSampler sampler(train.size(), cfg.batch_size, make_rng(cfg.seed, 1));

  TrainRun run;
  run.config = cfg;
  auto timed = [&](MetricRow row) {
    if (cfg.record_wall_time) row.wall_ms = elapsed_ms();
    run.log.push_back(row);
  };
  double acc = evaluate(state.params, validation);
  run.best_accuracy = acc;
  timed(MetricRow{0, std::nullopt, acc, std::nullopt});

  const std::size_t log_every = std::max<std::size_t>(cfg.log_every, 1);
  const std::size_t eval_every = std::max<std::size_t>(cfg.eval_every, 1);
  for (std::size_t t = 1; t <= cfg.iterations; ++t) {
    const auto rows = sampler.next();
    const LossTerms terms = train_step(state, make_batch(train, rows), cfg);
    if (!std::isfinite(terms.total)) throw NonFiniteError("loss at iteration " + std::to_string(t));
    MetricRow row{t, std::nullopt, std::nullopt, std::nullopt};
    if (t % log_every == 0 || t == cfg.iterations) row.losses = terms;
    if (t % eval_every == 0 || t == cfg.iterations) {
      acc = evaluate(state.params, validation);
      run.best_accuracy = std::max(run.best_accuracy, acc);
      row.val_acc = acc;
    }
    if (row.losses || row.val_acc) timed(row);
  }
  run.final_accuracy = acc;
  run.params = std::move(state.params);
  run.wall_ms = elapsed_ms();
  return run;
}

/// Shortest text that reads back to exactly `v`.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// iteration,ce,cce,ccl,total,val_acc,wall_ms. Disabled terms, skipped
/// evaluations and unrecorded wall time are empty cells.
inline void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& log) {
  os << "iteration,ce,cce,ccl,total,val_acc,wall_ms\n";
  for (const auto& r : log) {
    os << r.iteration << ',';
    if (r.losses) {
      const LossTerms& l = *r.losses;
      os << (l.ce_enabled ? format_double(l.ce) : "") << ',' << (l.cce_enabled ? format_double(l.cce) : "") << ','
         << (l.ccl_enabled ? format_double(l.ccl) : "") << ',' << format_double(l.total) << ',';
    } else {
      os << ",,,,";
    }
    os << (r.val_acc ? format_double(*r.val_acc) : "") << ',' << (r.wall_ms ? format_double(*r.wall_ms) : "") << '\n';
  }
}

}  // namespace bituning
