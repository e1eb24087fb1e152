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
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "bituning/config.hpp"
#include "bituning/data.hpp"
#include "bituning/trainer.hpp"

namespace bituning {

struct ExperimentData {
  Dataset train;       // after the per-class sampling-rate subset
  Dataset validation;
};

inline std::uint64_t data_seed(const RunConfig& c) {
  return c.dataset.seed < 0 ? c.seed : static_cast<std::uint64_t>(c.dataset.seed);
}

/// Generate or load, stratified split, then keep ceil(rate * n_c) training rows per class.
inline ExperimentData build_data(const RunConfig& c) {
  const DatasetSpec& d = c.dataset;
  const std::uint64_t seed = data_seed(c);
  Dataset full;
  switch (d.source) {
    case DatasetSource::kBlobs: full = make_blobs(d.classes, d.per_class, d.dim, d.separation, d.noise, seed); break;
    case DatasetSource::kRings: full = make_rings(d.classes, d.per_class, d.noise, seed); break;
    case DatasetSource::kFile: full = load_delimited(d.path, {d.delimiter, d.label_column, d.header}); break;
  }
  Split split = stratified_split(full, d.train_fraction, seed ^ 0x5bd1e995u);
  Dataset train = subsample_per_class(split.train, d.sampling_rate, seed ^ 0x27d4eb2fu);
  return ExperimentData{std::move(train), std::move(split.validation)};
}

/// The trainer settings of `c` with model input/classes taken from the data.
inline TrainConfig resolve(const RunConfig& c, const Dataset& train) {
  validate(c);
  TrainConfig t = c.train;
  t.dims.input = train.input_dim();
  t.dims.classes = train.classes;
  t.optimizer.schedule = parse_schedule(c.schedule, t.iterations);
  t.seed = c.seed;
  return t;
}

inline TrainRun run_experiment(const RunConfig& c) {
  validate(c);
  const ExperimentData data = build_data(c);
  return fit(resolve(c, data.train), data.train, data.validation);
}

/// Runs fn(0..n-1) on up to `jobs` threads. The first exception is rethrown after all workers stop.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single value
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

/// The five loss combinations of the collaborative-effect table, in its row order.
inline std::vector<LossWeights> ablation_rows() {
  return {{1, 0, 0}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}, {1, 1, 1}};
}

struct AblationRow {
  LossWeights weights;
  std::vector<std::vector<double>> accuracy;  // [rate][seed], final validation accuracy
  std::vector<Summary> summary;               // per rate
};

inline std::vector<AblationRow> ablate(const RunConfig& base, const std::vector<double>& rates,
                                       const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1) {
  if (rates.empty() || seeds.empty()) throw ConfigError("ablate needs at least one rate and one seed");
  const auto combos = ablation_rows();
  std::vector<AblationRow> rows(combos.size());
  for (std::size_t r = 0; r < combos.size(); ++r) {
    rows[r].weights = combos[r];
    rows[r].accuracy.assign(rates.size(), std::vector<double>(seeds.size()));
  }
  const std::size_t per_row = rates.size() * seeds.size();
  parallel_for(combos.size() * per_row, jobs, [&](std::size_t job) {
    const std::size_t r = job / per_row, k = (job % per_row) / seeds.size(), s = job % seeds.size();
    RunConfig c = base;
    c.train.weights = combos[r];
    c.dataset.sampling_rate = rates[k];
    c.seed = seeds[s];
    rows[r].accuracy[k][s] = run_experiment(c).final_accuracy;
  });
  for (auto& row : rows)
    for (const auto& acc : row.accuracy) row.summary.push_back(summarize(acc));
  return rows;
}

/// ce,cce,ccl,<rate>_mean,<rate>_std,... with one row per loss combination.
inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows, const std::vector<double>& rates) {
  os << "ce,cce,ccl";
  for (double r : rates) os << ",rate_" << format_double(r) << "_mean,rate_" << format_double(r) << "_std";
  os << '\n';
  for (const auto& row : rows) {
    os << (row.weights.ce != 0 ? 1 : 0) << ',' << (row.weights.cce != 0 ? 1 : 0) << ',' << (row.weights.ccl != 0 ? 1 : 0);
    for (const auto& s : row.summary) os << ',' << format_double(s.mean) << ',' << format_double(s.stddev);
    os << '\n';
  }
}

enum class SweepAxis { kKeysPerClass, kProjectorDim, kQueueSize, kTau };

inline SweepAxis parse_axis(const std::string& name) {
  if (name == "keys_per_class") return SweepAxis::kKeysPerClass;
  if (name == "projector_dim") return SweepAxis::kProjectorDim;
  if (name == "queue_size") return SweepAxis::kQueueSize;
  if (name == "tau") return SweepAxis::kTau;
  throw ConfigError("unknown sweep axis '" + name + "' (keys_per_class|projector_dim|queue_size|tau)");
}

inline const char* axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::kKeysPerClass: return "keys_per_class";
    case SweepAxis::kProjectorDim: return "projector_dim";
    case SweepAxis::kQueueSize: return "queue_size";
    case SweepAxis::kTau: return "tau";
  }
  return "?";
}

inline void set_axis(RunConfig& c, SweepAxis a, double value) {
  auto as_size = [&] {
    if (!(value >= 1.0) || value != std::floor(value)) {
      throw ConfigError(std::string(axis_name(a)) + " values must be positive integers");
    }
    return static_cast<std::size_t>(value);
  };
  switch (a) {
    case SweepAxis::kKeysPerClass: c.train.keys_per_class = as_size(); break;
    case SweepAxis::kProjectorDim: c.train.dims.projection = as_size(); break;
    case SweepAxis::kQueueSize: c.train.queue_size = as_size(); break;
    case SweepAxis::kTau: c.train.tau = value; break;
  }
}

struct SweepRow {
  double value = 0.0;
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
};

/// One fit per (value, seed); rows sorted ascending by value, then seed.
inline std::vector<SweepRow> sweep(const RunConfig& base, SweepAxis axis, std::vector<double> values,
                                   std::vector<std::uint64_t> seeds, std::size_t jobs = 1) {
  if (values.empty() || seeds.empty()) throw ConfigError("sweep needs at least one value and one seed");
  std::sort(values.begin(), values.end());
  std::sort(seeds.begin(), seeds.end());
  std::vector<SweepRow> rows(values.size() * seeds.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].value = values[i / seeds.size()];
    rows[i].seed = seeds[i % seeds.size()];
    RunConfig probe = base;
    set_axis(probe, axis, rows[i].value);
  }
  parallel_for(rows.size(), jobs, [&](std::size_t i) {
    RunConfig c = base;
    set_axis(c, axis, rows[i].value);
    c.seed = rows[i].seed;
    const TrainRun run = run_experiment(c);
    rows[i].final_accuracy = run.final_accuracy;
    rows[i].best_accuracy = run.best_accuracy;
  });
  return rows;
}

inline void write_sweep_csv(std::ostream& os, SweepAxis axis, const std::vector<SweepRow>& rows) {
  os << axis_name(axis) << ",seed,final_val_acc,best_val_acc\n";
  for (const auto& r : rows) {
    os << format_double(r.value) << ',' << r.seed << ',' << format_double(r.final_accuracy) << ','
       << format_double(r.best_accuracy) << '\n';
  }
}

}  // namespace bituning
