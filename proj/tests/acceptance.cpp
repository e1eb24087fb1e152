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

// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <stdexcept>
#include <sstream>
#include <string>
#include <vector>

#include "bituning/bituning.hpp"

using namespace bituning;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [violated: " << what << "]";
    }
  }
};

std::vector<double> random_unit(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  double s = 0.0;
  for (double& x : v) s += (x = g(rng)) * x;
  for (double& x : v) x /= std::sqrt(s);
  return v;
}

Tensor unit_rows(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::vector<double> v;
  for (std::size_t i = 0; i < r; ++i) {
    const auto u = random_unit(c, rng);
    v.insert(v.end(), u.begin(), u.end());
  }
  return Tensor({r, c}, v);
}

KeyBatch batch_of(const KeyEntry& query, const std::vector<KeyEntry>& sampled) {
  std::vector<double> h(query.h), z(query.z);
  std::vector<int> labels{query.label};
  for (const auto& e : sampled) {
    h.insert(h.end(), e.h.begin(), e.h.end());
    z.insert(z.end(), e.z.begin(), e.z.end());
    labels.push_back(e.label);
  }
  const std::size_t n = labels.size();
  return KeyBatch{Tensor({n, query.h.size()}, h), Tensor({n, query.z.size()}, z), labels};
}

long double dot_ld(std::span<const double> a, std::span<const double> b) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return s;
}

// -log softmax(s)[pos] in extended precision.
long double nll(const std::vector<long double>& s, std::size_t pos) {
  const long double mx = *std::max_element(s.begin(), s.end());
  long double z = 0.0L;
  for (long double v : s) z += std::exp(v - mx);
  return -(s[pos] - mx - std::log(z));
}

// Criterion 1: analytic gradients against central differences.
Verdict gradients() {
  Verdict v;
  const auto t0 = Clock::now();
  const GradcheckSizes sizes{};
  const auto report = run_gradcheck(20, sizes);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::size_t min_instances = SIZE_MAX;
  for (const auto& e : report) {
    worst = std::max(worst, e.worst);
    min_instances = std::min(min_instances, e.instances);
    v.require(e.passed && e.worst <= 1e-4, e.name);
  }
  std::vector<std::string> names;
  for (const auto& e : report) names.push_back(e.name);
  for (LossKind k : all_losses()) {
    v.require(std::count(names.begin(), names.end(), loss_name(k)) == 1, std::string("coverage of ") + loss_name(k));
  }
  v.require(min_instances >= 20, ">= 20 instances");
  v.require(sizes.feature <= 16 && sizes.classes <= 5 && sizes.max_keys <= 8, "instance sizes");
  v.require(GradcheckOptions{}.epsilon == 1e-6, "epsilon 1e-6");
  v.require(secs < 30.0, "runtime < 30 s");
  v.detail << report.size() << " checks, >= " << min_instances << " instances each, worst rel err " << worst << ", "
           << secs << " s";
  return v;
}

// Criterion 2: closed-form loss identities.
Verdict identities() {
  Verdict v;
  std::mt19937_64 rng(2026);
  double e_info = 0, e_ce = 0, e_ccl = 0, e_cce = 0, e_tau = 0;
  bool rate_ok = true;
  // InfoNCE with K+1 identical keys is ln(K+1).
  for (std::size_t K : {0u, 1u, 4u, 8u}) {
    const auto k = random_unit(16, rng);
    std::vector<double> keys;
    for (std::size_t j = 0; j <= K; ++j) keys.insert(keys.end(), k.begin(), k.end());
    Tape t;
    const double got = info_nce(t.constant(Tensor({1, 16}, k)), Tensor({K + 1, 16}, keys), K / 2, Temperature(0.07))
                           .value()
                           .item();
    e_info = std::max(e_info, std::abs(got - std::log(static_cast<double>(K + 1))));
  }
  // CE under uniform logits is ln C.
  for (std::size_t C : {2u, 3u, 5u, 10u}) {
    Tape t;
    const std::vector<int> y{static_cast<int>(C - 1)};
    const double got = ce_loss(t.constant(Tensor::filled(1, C, -1.7)), y).value().item();
    e_ce = std::max(e_ce, std::abs(got - std::log(static_cast<double>(C))));
  }
  std::uniform_int_distribution<int> cls(0, 2);
  for (int rep = 0; rep < 20; ++rep) {
    // CCL with only the query's own key positive equals InfoNCE on slot 0.
    {
      std::vector<KeyEntry> sampled;
      for (int j = 0; j < 6; ++j) sampled.push_back({random_unit(4, rng), random_unit(6, rng), 1 + j % 2});
      const std::vector<KeyBatch> keys{batch_of(KeyEntry{random_unit(4, rng), random_unit(6, rng), 0}, sampled)};
      const Tensor z = unit_rows(1, 6, rng);
      Tape t;
      const std::vector<int> y{0};
      const double ccl = ccl_loss(t.constant(z), y, keys, Temperature()).value().item();
      const double nce = info_nce(t.constant(z), keys[0].z_keys, 0, Temperature()).value().item();
      e_ccl = std::max(e_ccl, std::abs(ccl - nce));
    }
    // Literal CCE equals |S| times the per-query term.
    {
      const std::vector<int> y{cls(rng)};
      std::vector<KeyEntry> sampled;
      for (int j = 0; j < 7; ++j) sampled.push_back({random_unit(5, rng), random_unit(4, rng), cls(rng)});
      const std::vector<KeyBatch> keys{batch_of(KeyEntry{random_unit(5, rng), random_unit(4, rng), y[0]}, sampled)};
      const Tensor hq = unit_rows(1, 5, rng);
      std::normal_distribution<double> g;
      std::vector<double> wv(15);
      for (double& x : wv) x = g(rng);
      const Tensor w({3, 5}, wv);
      const auto wy = w.row(static_cast<std::size_t>(y[0]));
      std::vector<long double> s{dot_ld(wy, hq.row(0)) / 0.07L};
      for (std::size_t j = 1; j < keys[0].size(); ++j) s.push_back(dot_ld(wy, keys[0].h_keys.row(j)) / 0.07L);
      const long double expect = static_cast<long double>(keys[0].positive_count(y[0])) * nll(s, 0);
      Tape t;
      const double got = cce_loss(t.constant(hq), y, t.constant(w), keys, Temperature(0.07)).value().item();
      e_cce = std::max(e_cce, std::abs(got - static_cast<double>(expect)));
    }
    // tau -> infinity: every softmax term tends to ln(K+1). CCE and CCL sum |S|
    // such terms, so they are compared per term. The gap is first order,
    // (mean score - positive score) / tau, so the 1e-6 check runs on 64-d
    // instances whose similarity spread stays below 1; every instance must
    // also satisfy tau * gap <= spread.
    for (std::size_t dim : {8u, 64u}) {
      const double tau_value = 1e6;
      const Temperature tau(tau_value);
      const std::vector<int> y{cls(rng)};
      std::vector<KeyEntry> sampled;
      for (int j = 0; j < 8; ++j) sampled.push_back({random_unit(dim, rng), random_unit(dim, rng), cls(rng)});
      const std::vector<KeyBatch> keys{batch_of(KeyEntry{random_unit(dim, rng), random_unit(dim, rng), y[0]}, sampled)};
      const double log_k1 = std::log(static_cast<double>(keys[0].size()));
      const double terms = static_cast<double>(keys[0].positive_count(y[0]));
      const Tensor hq = unit_rows(1, dim, rng), z = unit_rows(1, dim, rng), w = unit_rows(3, dim, rng);
      auto spread = [](std::span<const double> q, const Tensor& k) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t j = 0; j < k.rows(); ++j) {
          const double s = static_cast<double>(dot_ld(q, k.row(j)));
          lo = std::min(lo, s), hi = std::max(hi, s);
        }
        return hi - lo;
      };
      const Tensor cce_scores = [&] {
        std::vector<double> rows(hq.row(0).begin(), hq.row(0).end());
        for (std::size_t j = 1; j < keys[0].size(); ++j) rows.insert(rows.end(), keys[0].h_keys.row(j).begin(), keys[0].h_keys.row(j).end());
        return Tensor({keys[0].size(), dim}, rows);
      }();
      Tape t;
      const double cce_gap = std::abs(cce_loss(t.constant(hq), y, t.constant(w), keys, tau).value().item() / terms - log_k1);
      const double ccl_gap = std::abs(ccl_loss(t.constant(z), y, keys, tau).value().item() / terms - log_k1);
      const double nce_gap = std::abs(info_nce(t.constant(z), keys[0].z_keys, 0, tau).value().item() - log_k1);
      const double cce_spread = spread(w.row(static_cast<std::size_t>(y[0])), cce_scores);
      const double z_spread = spread(z.row(0), keys[0].z_keys);
      rate_ok = rate_ok && cce_gap * tau_value <= cce_spread + 1e-6 && ccl_gap * tau_value <= z_spread + 1e-6 &&
                nce_gap * tau_value <= z_spread + 1e-6;
      if (dim == 64) e_tau = std::max({e_tau, cce_gap, ccl_gap, nce_gap});
    }
  }
  v.require(e_info <= 1e-9, "InfoNCE = ln(K+1)");
  v.require(e_ce <= 1e-12, "CE = ln C");
  v.require(e_ccl <= 1e-12, "CCL = InfoNCE at |S| = 1");
  v.require(e_cce <= 1e-12, "literal CCE = |S| x term");
  v.require(e_tau <= 1e-6, "tau = 1e6 limit");
  v.require(rate_ok, "tau * gap <= similarity spread");
  v.detail << "max errors: InfoNCE " << e_info << ", CE " << e_ce << ", CCL " << e_ccl << ", CCE " << e_cce
           << ", tau limit " << e_tau << " per term (first-order bound " << (rate_ok ? "holds" : "VIOLATED") << ")";
  return v;
}

// Criterion 3: momentum, memory-bank and queue update rules.
Verdict update_rules() {
  Verdict v;
  std::mt19937_64 rng(3);
  const ModelDims dims{4, {5}, 6, 3, 4, true};
  const ModelParams q = init_params(dims, rng);
  double e_mom = 0.0;
  for (double m : {0.0, 0.5, 0.9, 0.999}) {
    const MomentumTwin start = init_twin(init_params(dims, rng), m);
    MomentumTwin twin = start;
    for (int n = 1; n <= 10; ++n) {
      momentum_update(twin, q);
      const double mn = std::pow(m, n);
      auto check = [&](const Tensor& got, const Tensor& s0, const Tensor& target) {
        for (std::size_t i = 0; i < got.size(); ++i)
          e_mom = std::max(e_mom, std::abs(got.data()[i] - (mn * s0.data()[i] + (1.0 - mn) * target.data()[i])));
      };
      for (std::size_t l = 0; l < twin.encoder.size(); ++l) {
        check(twin.encoder[l].weight, start.encoder[l].weight, q.encoder[l].weight);
        check(twin.encoder[l].bias, start.encoder[l].bias, q.encoder[l].bias);
      }
      check(twin.projector.weight, start.projector.weight, q.projector.weight);
      check(twin.projector.bias, start.projector.bias, q.projector.bias);
    }
  }
  // (1,0) mixed with (0,1) at 0.5, renormalized: both coordinates 1/sqrt(2).
  MemoryBank bank(std::vector<int>{0}, 1, 0.5);
  bank.initialize(0, KeyEntry{{1.0, 0.0}, {1.0, 0.0}, 0});
  bank.update(std::vector<std::size_t>{0}, Tensor::matrix({{0, 1}}), Tensor::matrix({{0, 1}}));
  double e_bank = 0.0;
  for (double x : bank.entry(0).h) e_bank = std::max(e_bank, std::abs(x - 0.7071067811865476));
  for (double x : bank.entry(0).z) e_bank = std::max(e_bank, std::abs(x - 0.7071067811865476));
  // FIFO eviction and routing against a deque-per-class replay.
  bool fifo_ok = true;
  std::size_t pushes = 0;
  for (std::size_t cap : {1u, 2u, 3u, 5u}) {
    const std::size_t classes = 3, n = 60;
    MocoQueues queues(classes, cap);
    std::vector<std::deque<std::size_t>> ref(classes);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
    for (std::size_t k = 0; k < n; ++k) {
      const int label = pick(rng);
      std::vector<double> h(n, 0.0);
      h[k] = 1.0;
      queues.push(KeyEntry{h, h, label});
      ++pushes;
      auto& r = ref[static_cast<std::size_t>(label)];
      r.push_back(k);
      if (r.size() > cap) r.pop_front();
      for (std::size_t c = 0; c < classes; ++c) {
        const auto& buf = queues.buffer(c);
        fifo_ok = fifo_ok && buf.size() == ref[c].size();
        for (std::size_t i = 0; fifo_ok && i < buf.size(); ++i) {
          fifo_ok = buf[i].h[ref[c][i]] == 1.0 && buf[i].label == static_cast<int>(c);
        }
      }
    }
  }
  v.require(e_mom <= 1e-10, "momentum closed form");
  v.require(e_bank <= 1e-12, "bank mixing");
  v.require(fifo_ok, "FIFO replay");
  v.detail << "momentum max err " << e_mom << " over n <= 10, bank err " << e_bank << ", " << pushes
           << " replayed pushes " << (fifo_ok ? "match" : "DIFFER");
  return v;
}

RunConfig config(const std::string& name) { return load_config(std::string(BITUNING_CONFIG_DIR) + "/" + name); }

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

// Criterion 4: loss-combination ordering on rings at a 25% sampling rate.
Verdict ablation_direction() {
  Verdict v;
  const auto t0 = Clock::now();
  const RunConfig c = config("rings_ablation.ini");
  const auto rows = ablate(c, {0.25}, kSeeds);
  const double secs = seconds_since(t0);
  const double ce = rows[0].summary[0].mean;
  const char* names[] = {"CE", "CE+CCE", "CE+CCL", "CCE+CCL", "all"};
  v.detail << "rings C=" << c.dataset.classes << " rate 0.25 seeds 1-5 means:";
  for (std::size_t r = 0; r < rows.size(); ++r) v.detail << ' ' << names[r] << ' ' << format_double(rows[r].summary[0].mean);
  v.detail << ", " << secs << " s";
  v.require(c.dataset.source == DatasetSource::kRings && c.dataset.classes == 3 && c.dataset.per_class == 60 &&
                c.dataset.sampling_rate == 0.25,
            "configuration");
  v.require(rows[4].summary[0].mean >= ce, "all three >= CE");
  for (std::size_t r = 1; r <= 3; ++r) v.require(rows[r].summary[0].mean >= ce - 0.02, std::string(names[r]) + " >= CE - 0.02");
  v.require(secs < 300.0, "runtime < 5 min");
  return v;
}

// Criterion 5 (and the blobs half of 7): queue and memory-bank keys agree.
struct BlobRuns {
  std::vector<double> moco, bank;
  double seconds = 0.0;
};

BlobRuns blob_runs() {
  BlobRuns out;
  const auto t0 = Clock::now();
  RunConfig c = config("blobs.ini");
  for (auto seed : kSeeds) {
    c.seed = seed;
    c.train.key_generator = KeyGeneratorKind::kMoco;
    out.moco.push_back(run_experiment(c).final_accuracy);
    c.train.key_generator = KeyGeneratorKind::kMemoryBank;
    out.bank.push_back(run_experiment(c).final_accuracy);
  }
  out.seconds = seconds_since(t0);
  return out;
}

double mean(const std::vector<double>& v) { return summarize(v).mean; }

Verdict generator_parity(const BlobRuns& runs) {
  Verdict v;
  const double gap = std::abs(mean(runs.moco) - mean(runs.bank));
  v.detail << "blobs rate 1 seeds 1-5: queues " << format_double(mean(runs.moco)) << ", memory bank "
           << format_double(mean(runs.bank)) << ", gap " << gap << ", " << runs.seconds << " s";
  v.require(gap <= 0.02, "gap <= 0.02");
  v.require(runs.seconds < 180.0, "runtime < 3 min");
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// Criterion 6: repeated train runs write byte-identical metrics.
Verdict determinism() {
  Verdict v;
  const fs::path dir = fs::temp_directory_path() / "bituning_acceptance";
  fs::remove_all(dir);
  std::vector<std::string> csv;
  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string(BITUNING_CLI_PATH) + " train --config " + BITUNING_CONFIG_DIR +
                            "/blobs.ini --out " + (dir / run).string() + " > /dev/null 2>&1";
    v.require(std::system(cmd.c_str()) == 0, std::string("train run ") + run);
    csv.push_back(slurp(dir / run / "metrics.csv"));
  }
  v.require(!csv[0].empty() && csv[0] == csv[1], "byte-identical metrics.csv");
  v.detail << "two CLI train runs of blobs.ini, metrics.csv " << csv[0].size() << " bytes, "
           << (csv[0] == csv[1] ? "identical" : "DIFFERENT");
  fs::remove_all(dir);
  return v;
}

// Criterion 7: the harness can learn both toy tasks.
Verdict learnability(const BlobRuns& runs) {
  Verdict v;
  const RunConfig blobs = config("blobs.ini");
  const RunConfig rings = config("rings_ce.ini");
  if (runs.moco.empty()) throw std::runtime_error("blob runs missing");
  const double blob_acc = runs.moco[0];  // seed 1, the configured seed
  const double ring_acc = run_experiment(rings).final_accuracy;
  v.require(blobs.seed == 1 && blobs.train.weights.ce > 0 && blobs.train.weights.cce > 0 && blobs.train.weights.ccl > 0,
            "blobs uses all three losses");
  v.require(blobs.train.iterations <= 2000 && rings.train.iterations <= 2000, "<= 2000 iterations");
  v.require(rings.train.weights.cce == 0 && rings.train.weights.ccl == 0, "rings is CE only");
  v.require(blob_acc >= 0.95, "blobs >= 0.95");
  v.require(ring_acc >= 0.90, "rings >= 0.90");
  v.detail << "blobs all three " << format_double(blob_acc) << " (seeds 1-5 min "
           << format_double(*std::min_element(runs.moco.begin(), runs.moco.end())) << "), rings CE only "
           << format_double(ring_acc);
  return v;
}

}  // namespace

// With arguments, only the named criteria run, e.g. `acceptance AC2 AC3`.
int main(int argc, char** argv) {
  const std::vector<std::string> only(argv + 1, argv + argc);
  auto selected = [&](const char* id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  int failed = 0;
  auto report = [&](const char* id, const char* title, const std::function<Verdict()>& fn) {
    if (!selected(id)) return;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "exception: " << e.what();
    }
    failed += !v.pass;
    std::cout << (v.pass ? "[PASS] " : "[FAIL] ") << id << ' ' << title << ": " << v.detail.str() << std::endl;
  };
  report("AC1", "gradient correctness", gradients);
  report("AC2", "closed-form identities", identities);
  report("AC3", "update-rule algebra", update_rules);
  report("AC4", "ablation direction", ablation_direction);
  BlobRuns runs;
  try {
    if (selected("AC5") || selected("AC7")) runs = blob_runs();
  } catch (const std::exception& e) {
    std::cout << "blob runs failed: " << e.what() << std::endl;
  }
  report("AC5", "key-generator parity", [&] { return generator_parity(runs); });
  report("AC6", "determinism", determinism);
  report("AC7", "sanity learnability", [&] { return learnability(runs); });
  std::cout << (failed == 0 ? "all acceptance criteria pass" : std::to_string(failed) + " criteria FAILED") << std::endl;
  return failed == 0 ? 0 : 1;
}
