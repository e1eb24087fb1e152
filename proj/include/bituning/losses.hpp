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

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bituning/keypool.hpp"
#include "bituning/tape.hpp"

namespace bituning {

class Temperature {
 public:
  explicit Temperature(double tau = 0.07) : tau_(tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("temperature must be positive, got " + std::to_string(tau));
  }
  double value() const noexcept { return tau_; }

 private:
  double tau_;
};

enum class Reduction { kSum, kMean };

// kLiteral: numerator w_y . h_i^q, weighted by |S_i|.
// kPerKey:  one term per positive key with numerator w_y . h_k^k.
enum class CceVariant { kLiteral, kPerKey };

// kRaw:  class prototypes enter CCE as stored.
// kUnit: each prototype is L2-normalized before its dot products.
enum class Prototypes { kRaw, kUnit };

namespace detail {

inline void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes, const char* loss) {
  if (labels.size() != rows) {
    throw DimensionError(std::string(loss) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DimensionError(std::string(loss) + ": label " + std::to_string(y) + " outside [0, " +
                           std::to_string(classes) + ")");
    }
  }
}

inline void check_keys(std::span<const KeyBatch> keys, std::span<const int> labels, const char* loss) {
  if (keys.size() != labels.size()) {
    throw DimensionError(std::string(loss) + ": " + std::to_string(keys.size()) + " key batches for " +
                         std::to_string(labels.size()) + " queries");
  }
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (keys[i].labels.empty() || keys[i].labels[0] != labels[i]) {
      throw DimensionError(std::string(loss) + ": slot 0 of key batch " + std::to_string(i) +
                           " does not carry the query label");
    }
  }
}

// -sum(weights .* log_softmax(row)) for a single-row score vector.
inline Var weighted_nll(const Var& scores, std::vector<double> weights) {
  Tape& t = scores.tape();
  const std::size_t n = weights.size();
  Var w = t.constant(Tensor({1, n}, std::move(weights)));
  return scale(sum(mul(log_softmax_row(scores), w)), -1.0);
}

inline Var rows_except_first(Tape& t, const Tensor& keys) {
  const std::size_t k = keys.rows() - 1, d = keys.cols();
  return t.constant(Tensor({k, d}, std::vector<double>(keys.values().begin() + static_cast<std::ptrdiff_t>(d),
                                                       keys.values().end())));
}

inline Var reduce(Var total, std::size_t batch, Reduction reduction) {
  return reduction == Reduction::kMean ? scale(total, 1.0 / static_cast<double>(batch)) : total;
}

inline Var accumulate(std::optional<Var>& acc, const Var& term) {
  acc = acc ? add(*acc, term) : term;
  return *acc;
}

}  // namespace detail

/// Cross-entropy over the class dimension: -sum_i log softmax(logits_i)[y_i].
inline Var ce_loss(const Var& logits, std::span<const int> labels, Reduction reduction = Reduction::kSum) {
  const std::size_t b = logits.rows(), c = logits.cols();
  detail::check_labels(labels, b, c, "ce");
  std::vector<double> onehot(b * c, 0.0);
  for (std::size_t i = 0; i < b; ++i) onehot[i * c + static_cast<std::size_t>(labels[i])] = 1.0;
  Var mask = logits.tape().constant(Tensor({b, c}, std::move(onehot)));
  return detail::reduce(scale(sum(mul(log_softmax_row(logits), mask)), -1.0), b, reduction);
}

/// -log[ exp(q.k+/tau) / sum_i exp(q.k_i/tau) ] for a single query row against fixed keys.
inline Var info_nce(const Var& q, const Tensor& keys, std::size_t positive_index, Temperature tau) {
  if (q.rows() != 1 || keys.rank() != 2 || q.cols() != keys.cols()) {
    throw DimensionError("info_nce: query " + to_string(q.shape()) + " against keys " + to_string(keys.shape()));
  }
  if (positive_index >= keys.rows()) {
    throw DimensionError("info_nce: positive index " + std::to_string(positive_index) + " of " +
                         std::to_string(keys.rows()) + " keys");
  }
  Tape& t = q.tape();
  Var scores = scale(matmul(q, transpose(t.constant(keys))), 1.0 / tau.value());
  std::vector<double> w(keys.rows(), 0.0);
  w[positive_index] = 1.0;
  return detail::weighted_nll(scores, std::move(w));
}

/// Contrastive cross-entropy on the classifier head, contrasting along the key-bank
/// dimension against the prototype w_{y_i}. Row 0 of the bank is the live normalized
/// query h_i^q; rows 1..K are the sampled hidden keys.
inline Var cce_loss(const Var& h_q_norm, std::span<const int> labels, const Var& classifier,
                    std::span<const KeyBatch> keys, Temperature tau, CceVariant variant = CceVariant::kLiteral,
                    Reduction reduction = Reduction::kSum, Prototypes prototypes = Prototypes::kRaw) {
  const std::size_t b = h_q_norm.rows(), d = h_q_norm.cols();
  if (classifier.cols() != d) {
    throw DimensionError("cce: classifier " + to_string(classifier.shape()) + " vs h " + to_string(h_q_norm.shape()));
  }
  detail::check_labels(labels, b, classifier.rows(), "cce");
  detail::check_keys(keys, labels, "cce");
  Tape& t = h_q_norm.tape();
  std::optional<Var> total;
  for (std::size_t i = 0; i < b; ++i) {
    const KeyBatch& kb = keys[i];
    if (kb.h_keys.cols() != d) throw DimensionError("cce: hidden key width differs from h");
    const auto y = static_cast<std::size_t>(labels[i]);
    Var prototype = select_rows(classifier, {y});
    if (prototypes == Prototypes::kUnit) prototype = row_l2_normalize(prototype);
    Var bank = select_rows(h_q_norm, {i});
    if (kb.size() > 1) bank = concat_rows(bank, detail::rows_except_first(t, kb.h_keys));
    Var scores = scale(matmul(prototype, transpose(bank)), 1.0 / tau.value());
    std::vector<double> weights = kb.positive_mask(labels[i]);
    if (variant == CceVariant::kLiteral) {
      const double multiplicity = static_cast<double>(kb.positive_count(labels[i]));
      std::fill(weights.begin(), weights.end(), 0.0);
      weights[0] = multiplicity;
    }
    detail::accumulate(total, detail::weighted_nll(scores, std::move(weights)));
  }
  return detail::reduce(*total, b, reduction);
}

/// Categorical contrastive loss on the projector head: every key sharing the
/// query's label is a positive, each contributing its own log-ratio.
inline Var ccl_loss(const Var& z_q, std::span<const int> labels, std::span<const KeyBatch> keys, Temperature tau,
                    Reduction reduction = Reduction::kSum) {
  const std::size_t b = z_q.rows();
  if (labels.size() != b) throw DimensionError("ccl: label count differs from batch");
  detail::check_keys(keys, labels, "ccl");
  Tape& t = z_q.tape();
  std::optional<Var> total;
  for (std::size_t i = 0; i < b; ++i) {
    const KeyBatch& kb = keys[i];
    if (kb.z_keys.cols() != z_q.cols()) throw DimensionError("ccl: projected key width differs from z");
    Var scores = scale(matmul(select_rows(z_q, {i}), transpose(t.constant(kb.z_keys))), 1.0 / tau.value());
    detail::accumulate(total, detail::weighted_nll(scores, kb.positive_mask(labels[i])));
  }
  return detail::reduce(*total, b, reduction);
}

/// Per-term multipliers; 0 disables a term. All 1 reproduces the plain sum.
struct LossWeights {
  double ce = 1.0;
  double cce = 1.0;
  double ccl = 1.0;

  bool any() const noexcept { return ce != 0.0 || cce != 0.0 || ccl != 0.0; }
  bool contrastive() const noexcept { return cce != 0.0 || ccl != 0.0; }
  bool operator==(const LossWeights&) const = default;
};

struct LossTerms {
  double ce = 0.0;
  double cce = 0.0;
  double ccl = 0.0;
  double total = 0.0;
  bool ce_enabled = false;
  bool cce_enabled = false;
  bool ccl_enabled = false;
};

/// The individual terms of one forward pass, each still on the tape.
struct LossGraph {
  std::optional<Var> ce;
  std::optional<Var> cce;
  std::optional<Var> ccl;
};

struct TotalLoss {
  Var total;
  LossTerms terms;
};

/// Sum of the enabled terms, each scaled by its weight (a weight of exactly 1 adds the term as is).
inline TotalLoss bituning_total(const LossGraph& graph, const LossWeights& weights = {}) {
  LossTerms terms;
  std::optional<Var> total;
  auto take = [&](const std::optional<Var>& term, double w, double& value, bool& enabled, const char* name) {
    if (w == 0.0) return;
    if (!term) throw ConfigError(std::string("loss term ") + name + " is weighted but was not computed");
    enabled = true;
    value = term->value().item();
    detail::accumulate(total, w == 1.0 ? *term : scale(*term, w));
  };
  take(graph.ce, weights.ce, terms.ce, terms.ce_enabled, "ce");
  take(graph.cce, weights.cce, terms.cce, terms.cce_enabled, "cce");
  take(graph.ccl, weights.ccl, terms.ccl, terms.ccl_enabled, "ccl");
  if (!total) throw ConfigError("no loss term enabled");
  terms.total = total->value().item();
  return TotalLoss{*total, terms};
}

}  // namespace bituning
