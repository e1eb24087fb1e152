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

// Central finite-difference checks of every tape operation and every loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "bituning/keypool.hpp"
#include "bituning/losses.hpp"
#include "bituning/model.hpp"
#include "bituning/tape.hpp"

namespace bituning {

// A scalar function of some input tensors, rebuilt on a fresh tape per evaluation.
struct GradcheckCase {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Var(Tape&, const std::vector<Var>&)> fn;
};

struct GradcheckOptions {
  double epsilon = 1e-6;
  double tolerance = 1e-4;
  // Lower bound on the denominator of the relative error, so entries whose true
  // derivative is ~0 are judged on absolute error instead.
  double denominator_floor = 1e-4;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor)
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Worst relative error of the taped gradient against central differences over every input entry.
inline double max_gradient_error(const GradcheckCase& c, const GradcheckOptions& opt = {}) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : c.inputs) leaves.push_back(tape.leaf(t));
    Var out = c.fn(tape, leaves);
    tape.backward(out);
    for (const auto& v : leaves) analytic.push_back(tape.grad(v));
  }
  auto eval = [&](const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t, false));
    return c.fn(tape, leaves).value().item();
  };
  double worst = 0.0;
  std::vector<Tensor> probe = c.inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double x0 = probe[k].data()[i];
      probe[k].data()[i] = x0 + opt.epsilon;
      const double up = eval(probe);
      probe[k].data()[i] = x0 - opt.epsilon;
      const double down = eval(probe);
      probe[k].data()[i] = x0;
      const double numeric = (up - down) / (2.0 * opt.epsilon);
      worst = std::max(worst, relative_error(analytic[k].data()[i], numeric, opt.denominator_floor));
    }
  }
  return worst;
}

namespace detail {

inline Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(r * c);
  for (double& x : v) x = u(rng);
  return Tensor({r, c}, std::move(v));
}

// Entries bounded away from zero so relu is probed off its kink.
inline Tensor random_off_kink(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(r * c);
  for (double& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return Tensor({r, c}, std::move(v));
}

inline std::vector<double> random_unit(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  double norm = 0.0;
  while (norm < 1e-6) {
    for (double& x : v) x = g(rng);
    norm = l2_norm(v);
  }
  for (double& x : v) x /= norm;
  return v;
}

// A fixed scalar head on top of a matrix so every entry of the op output matters.
inline Var probe_head(Tape& t, const Var& y, std::mt19937_64& rng) {
  return sum(mul(y, t.constant(random_matrix(y.rows(), y.cols(), rng))));
}

}  // namespace detail

/// Problem sizes for the random gradcheck instances.
struct GradcheckSizes {
  std::size_t input = 4;
  std::size_t hidden = 6;
  std::size_t feature = 8;     // d <= 16
  std::size_t classes = 4;     // C <= 5
  std::size_t projection = 6;  // L
  std::size_t batch = 3;
  std::size_t max_keys = 8;    // K <= 8
};

struct LossInstance {
  ModelParams params;
  Tensor x;
  std::vector<int> labels;
  std::vector<KeyBatch> keys;
  std::size_t positive_index = 0;
};

/// A random model, batch and per-query key batches with slot 0 carrying the query label.
inline LossInstance random_loss_instance(const GradcheckSizes& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelDims dims{s.input, {s.hidden}, s.feature, s.classes, s.projection, false};
  LossInstance inst;
  inst.params = init_params(dims, rng);
  // Nonzero biases so the relu pattern and the bias gradients are both exercised.
  for (auto& ref : parameters(inst.params)) {
    if (ref.name.ends_with("bias")) *ref.tensor = detail::random_matrix(1, ref.tensor->cols(), rng, -0.5, 0.5);
  }
  inst.x = detail::random_matrix(s.batch, s.input, rng, -2.0, 2.0);
  std::uniform_int_distribution<int> label(0, static_cast<int>(s.classes) - 1);
  std::uniform_int_distribution<std::size_t> count(1, s.max_keys);
  for (std::size_t i = 0; i < s.batch; ++i) inst.labels.push_back(label(rng));
  for (std::size_t i = 0; i < s.batch; ++i) {
    const std::size_t k = count(rng);
    std::vector<KeyEntry> sampled;
    for (std::size_t j = 0; j < k; ++j)
      sampled.push_back({detail::random_unit(s.feature, rng), detail::random_unit(s.projection, rng), label(rng)});
    KeyEntry self{detail::random_unit(s.feature, rng), detail::random_unit(s.projection, rng), inst.labels[i]};
    std::vector<const KeyEntry*> ptrs;
    for (const auto& e : sampled) ptrs.push_back(&e);
    inst.keys.push_back(make_key_batch(self, ptrs));
  }
  inst.positive_index = std::uniform_int_distribution<std::size_t>(0, inst.keys[0].size() - 1)(rng);
  return inst;
}

enum class LossKind { kCe, kInfoNce, kCceLiteral, kCcePerKey, kCceUnit, kCcl, kTotal };

inline const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::kCe: return "loss.ce";
    case LossKind::kInfoNce: return "loss.info_nce";
    case LossKind::kCceLiteral: return "loss.cce_literal";
    case LossKind::kCcePerKey: return "loss.cce_per_key";
    case LossKind::kCceUnit: return "loss.cce_unit_prototypes";
    case LossKind::kCcl: return "loss.ccl";
    case LossKind::kTotal: return "loss.total";
  }
  return "?";
}

/// The chosen loss as a function of every model parameter, through the encoder.
inline GradcheckCase loss_case(LossKind kind, const LossInstance& inst, Temperature tau = Temperature(0.07)) {
  GradcheckCase c;
  c.name = loss_name(kind);
  for (const auto& ref : parameters(inst.params)) c.inputs.push_back(*ref.tensor);
  c.fn = [kind, inst, tau](Tape& t, const std::vector<Var>& leaves) {
    QueryPass q = forward_query(bound_from(inst.params.dims, leaves), t.constant(inst.x));
    auto cce = [&](CceVariant v, Prototypes p = Prototypes::kRaw) {
      return cce_loss(row_l2_normalize(q.h), inst.labels, q.params.classifier, inst.keys, tau, v, Reduction::kSum, p);
    };
    switch (kind) {
      case LossKind::kCe: return ce_loss(q.logits, inst.labels);
      case LossKind::kInfoNce: return info_nce(select_rows(q.z, {0}), inst.keys[0].z_keys, inst.positive_index, tau);
      case LossKind::kCceLiteral: return cce(CceVariant::kLiteral);
      case LossKind::kCcePerKey: return cce(CceVariant::kPerKey);
      case LossKind::kCceUnit: return cce(CceVariant::kLiteral, Prototypes::kUnit);
      case LossKind::kCcl: return ccl_loss(q.z, inst.labels, inst.keys, tau);
      case LossKind::kTotal: {
        LossGraph g{ce_loss(q.logits, inst.labels), cce(CceVariant::kLiteral), ccl_loss(q.z, inst.labels, inst.keys, tau)};
        return bituning_total(g).total;
      }
    }
    throw ConfigError("unknown loss kind");
  };
  return c;
}

/// One random instance of every tape operation, each wrapped in a scalar head.
inline std::vector<GradcheckCase> op_cases(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradcheckCase> cases;
  const std::uint64_t head_seed = rng();
  auto unary = [&](std::string name, Tensor in, std::function<Var(const Var&)> op) {
    cases.push_back({std::move(name), {std::move(in)}, [op, head_seed](Tape& t, const std::vector<Var>& v) {
                       std::mt19937_64 head(head_seed);
                       return detail::probe_head(t, op(v[0]), head);
                     }});
  };
  auto binary = [&](std::string name, Tensor a, Tensor b, std::function<Var(const Var&, const Var&)> op) {
    cases.push_back({std::move(name), {std::move(a), std::move(b)}, [op, head_seed](Tape& t, const std::vector<Var>& v) {
                       std::mt19937_64 head(head_seed);
                       return detail::probe_head(t, op(v[0], v[1]), head);
                     }});
  };
  using detail::random_matrix;
  binary("op.matmul", random_matrix(3, 4, rng), random_matrix(4, 2, rng), [](auto& a, auto& b) { return matmul(a, b); });
  binary("op.add", random_matrix(2, 3, rng), random_matrix(2, 3, rng), [](auto& a, auto& b) { return add(a, b); });
  binary("op.add_row_bias", random_matrix(3, 4, rng), random_matrix(1, 4, rng),
         [](auto& a, auto& b) { return add_row_bias(a, b); });
  binary("op.mul", random_matrix(2, 3, rng), random_matrix(2, 3, rng), [](auto& a, auto& b) { return mul(a, b); });
  binary("op.concat_rows", random_matrix(1, 3, rng), random_matrix(2, 3, rng),
         [](auto& a, auto& b) { return concat_rows(a, b); });
  unary("op.scale", random_matrix(2, 3, rng), [](auto& a) { return scale(a, -2.5); });
  unary("op.relu", detail::random_off_kink(3, 3, rng), [](auto& a) { return relu(a); });
  unary("op.sum", random_matrix(2, 3, rng), [](auto& a) { return scale(sum(a), 1.7); });
  unary("op.mean", random_matrix(2, 3, rng), [](auto& a) { return scale(mean(a), 1.7); });
  unary("op.select_rows", random_matrix(4, 3, rng), [](auto& a) { return select_rows(a, {2, 0, 2}); });
  unary("op.transpose", random_matrix(2, 5, rng), [](auto& a) { return transpose(a); });
  unary("op.row_l2_normalize", random_matrix(2, 5, rng), [](auto& a) { return row_l2_normalize(a); });
  unary("op.log_softmax_row", random_matrix(2, 4, rng, -3.0, 3.0), [](auto& a) { return log_softmax_row(a); });
  // One value feeding two consumers.
  unary("op.shared_operand", random_matrix(3, 3, rng), [](auto& a) { return add(matmul(a, a), relu(a)); });
  return cases;
}

inline std::vector<LossKind> all_losses() {
  return {LossKind::kCe, LossKind::kInfoNce, LossKind::kCceLiteral, LossKind::kCcePerKey, LossKind::kCceUnit, LossKind::kCcl,
          LossKind::kTotal};
}

struct GradcheckEntry {
  std::string name;
  double worst = 0.0;
  std::size_t instances = 0;
  bool passed = true;
};

/// Worst error per op and loss over `seeds` random instances, in a fixed name order.
inline std::vector<GradcheckEntry> run_gradcheck(std::size_t seeds, const GradcheckSizes& sizes = {},
                                                 const GradcheckOptions& opt = {}, std::uint64_t base_seed = 1) {
  std::vector<GradcheckEntry> out;
  std::map<std::string, std::size_t> slot;
  auto record = [&](const std::string& name, double err) {
    auto [it, inserted] = slot.try_emplace(name, out.size());
    if (inserted) out.push_back({name});
    GradcheckEntry& e = out[it->second];
    e.worst = std::max(e.worst, err);
    ++e.instances;
    e.passed = e.worst <= opt.tolerance;
  };
  for (std::size_t s = 0; s < seeds; ++s) {
    const std::uint64_t seed = base_seed + s;
    for (const auto& c : op_cases(seed)) record(c.name, max_gradient_error(c, opt));
    const LossInstance inst = random_loss_instance(sizes, seed * 7919 + 17);
    for (LossKind k : all_losses()) {
      const auto c = loss_case(k, inst);
      record(c.name, max_gradient_error(c, opt));
    }
  }
  return out;
}

}  // namespace bituning
