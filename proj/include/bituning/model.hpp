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
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <string>
#include <vector>

#include "bituning/tape.hpp"
#include "bituning/tensor.hpp"

namespace bituning {

/// Layer sizes of the encoder f, classifier g and projector phi.
struct ModelDims {
  std::size_t input = 2;
  std::vector<std::size_t> hidden = {64};
  std::size_t feature = 32;     // d, width of h
  std::size_t classes = 2;      // C
  std::size_t projection = 128; // L, width of z
  bool classifier_bias = false;

  bool operator==(const ModelDims&) const = default;
};

// y = x * weight + bias with weight (in x out) and bias (1 x out).
struct Linear {
  Tensor weight;
  Tensor bias;
};

struct ModelParams {
  ModelDims dims;
  std::vector<Linear> encoder;
  Tensor classifier;  // C x d, row j is the prototype of class j
  std::optional<Tensor> classifier_bias;
  Linear projector;
};

enum class ParamGroup { kEncoder, kHead };

struct ParamRef {
  std::string name;
  Tensor* tensor;
  ParamGroup group;
};

struct ConstParamRef {
  std::string name;
  const Tensor* tensor;
  ParamGroup group;
};

/// All trainable tensors in a fixed order: encoder layers, classifier, projector.
inline std::vector<ParamRef> parameters(ModelParams& p) {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    out.push_back({"encoder." + std::to_string(i) + ".weight", &p.encoder[i].weight, ParamGroup::kEncoder});
    out.push_back({"encoder." + std::to_string(i) + ".bias", &p.encoder[i].bias, ParamGroup::kEncoder});
  }
  out.push_back({"classifier.weight", &p.classifier, ParamGroup::kHead});
  if (p.classifier_bias) out.push_back({"classifier.bias", &*p.classifier_bias, ParamGroup::kHead});
  out.push_back({"projector.weight", &p.projector.weight, ParamGroup::kHead});
  out.push_back({"projector.bias", &p.projector.bias, ParamGroup::kHead});
  return out;
}

inline std::vector<ConstParamRef> parameters(const ModelParams& p) {
  std::vector<ConstParamRef> out;
  for (auto& r : parameters(const_cast<ModelParams&>(p))) out.push_back({r.name, r.tensor, r.group});
  return out;
}

inline void validate(const ModelDims& dims) {
  if (dims.input == 0 || dims.feature == 0 || dims.classes < 2 || dims.projection == 0) {
    throw DimensionError("model dims need input, feature, projection >= 1 and classes >= 2");
  }
  for (std::size_t h : dims.hidden)
    if (h == 0) throw DimensionError("hidden layer of width 0");
}

inline std::vector<std::size_t> encoder_widths(const ModelDims& dims) {
  std::vector<std::size_t> w{dims.input};
  w.insert(w.end(), dims.hidden.begin(), dims.hidden.end());
  w.push_back(dims.feature);
  return w;
}

namespace detail {

inline Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = dist(rng);
  return Tensor({rows, cols}, std::move(v));
}

}  // namespace detail

/// Random initialization: He-scaled Gaussian for encoder layers, 1/sqrt(fan_in)
/// for the two heads, zero biases.
inline ModelParams init_params(const ModelDims& dims, std::mt19937_64& rng) {
  validate(dims);
  ModelParams p;
  p.dims = dims;
  const auto widths = encoder_widths(dims);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const double sd = std::sqrt(2.0 / static_cast<double>(widths[i]));
    p.encoder.push_back({detail::gaussian(widths[i], widths[i + 1], sd, rng), Tensor::zeros(1, widths[i + 1])});
  }
  const double head_sd = 1.0 / std::sqrt(static_cast<double>(dims.feature));
  p.classifier = detail::gaussian(dims.classes, dims.feature, head_sd, rng);
  if (dims.classifier_bias) p.classifier_bias = Tensor::zeros(1, dims.classes);
  p.projector = {detail::gaussian(dims.feature, dims.projection, head_sd, rng), Tensor::zeros(1, dims.projection)};
  return p;
}

/// Parameter leaves of one model on one tape, in parameters() order.
struct BoundModel {
  std::vector<Var> encoder_weights;
  std::vector<Var> encoder_biases;
  Var classifier;
  std::optional<Var> classifier_bias;
  Var projector_weight;
  Var projector_bias;

  std::vector<Var> all() const {
    std::vector<Var> out;
    for (std::size_t i = 0; i < encoder_weights.size(); ++i) {
      out.push_back(encoder_weights[i]);
      out.push_back(encoder_biases[i]);
    }
    out.push_back(classifier);
    if (classifier_bias) out.push_back(*classifier_bias);
    out.push_back(projector_weight);
    out.push_back(projector_bias);
    return out;
  }
};

inline BoundModel bind(Tape& tape, const ModelParams& p, bool requires_grad = true) {
  BoundModel b;
  for (const auto& layer : p.encoder) {
    b.encoder_weights.push_back(tape.leaf(layer.weight, requires_grad));
    b.encoder_biases.push_back(tape.leaf(layer.bias, requires_grad));
  }
  b.classifier = tape.leaf(p.classifier, requires_grad);
  if (p.classifier_bias) b.classifier_bias = tape.leaf(*p.classifier_bias, requires_grad);
  b.projector_weight = tape.leaf(p.projector.weight, requires_grad);
  b.projector_bias = tape.leaf(p.projector.bias, requires_grad);
  return b;
}

namespace detail {

// relu between layers, none after the last one.
inline Var encode(const std::vector<Var>& weights, const std::vector<Var>& biases, Var x) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    x = add_row_bias(matmul(x, weights[i]), biases[i]);
    if (i + 1 < weights.size()) x = relu(x);
  }
  return x;
}

inline void require_input_width(const ModelDims& dims, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != dims.input || x.rows() == 0) {
    throw DimensionError("model input " + to_string(x.shape()) + ", expected [b x " +
                         std::to_string(dims.input) + "] with b >= 1");
  }
}

}  // namespace detail

struct QueryPass {
  BoundModel params;
  Var x;
  Var h;       // f(x), unnormalized
  Var z;       // normalize(phi(h))
  Var logits;  // h * W^T
};

/// Query branch over already bound parameters: h = f(x), z = normalize(phi(h)), logits = h W^T.
inline QueryPass forward_query(BoundModel bound, const Var& x) {
  QueryPass q;
  q.params = std::move(bound);
  q.x = x;
  q.h = detail::encode(q.params.encoder_weights, q.params.encoder_biases, q.x);
  q.z = row_l2_normalize(add_row_bias(matmul(q.h, q.params.projector_weight), q.params.projector_bias));
  q.logits = matmul(q.h, transpose(q.params.classifier));
  if (q.params.classifier_bias) q.logits = add_row_bias(q.logits, *q.params.classifier_bias);
  return q;
}

/// Binds `params` as differentiable leaves of `tape` and runs the query branch.
inline QueryPass forward_query(Tape& tape, const ModelParams& params, const Tensor& x) {
  detail::require_input_width(params.dims, x);
  BoundModel bound = bind(tape, params);
  return forward_query(std::move(bound), tape.constant(x));
}

/// Rebuilds a BoundModel from leaves listed in parameters() order.
inline BoundModel bound_from(const ModelDims& dims, std::span<const Var> leaves) {
  const std::size_t layers = encoder_widths(dims).size() - 1;
  const std::size_t expected = 2 * layers + 3 + (dims.classifier_bias ? 1 : 0);
  if (leaves.size() != expected) throw DimensionError("bound_from: wrong number of parameter leaves");
  BoundModel b;
  std::size_t k = 0;
  for (std::size_t i = 0; i < layers; ++i) {
    b.encoder_weights.push_back(leaves[k++]);
    b.encoder_biases.push_back(leaves[k++]);
  }
  b.classifier = leaves[k++];
  if (dims.classifier_bias) b.classifier_bias = leaves[k++];
  b.projector_weight = leaves[k++];
  b.projector_bias = leaves[k++];
  return b;
}

/// Slowly trailing copy of the encoder and projector that produces keys.
struct MomentumTwin {
  std::vector<Linear> encoder;
  Linear projector;
  double momentum = 0.999;
};

inline MomentumTwin init_twin(const ModelParams& params, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) {
    throw ConfigError("momentum must lie in [0, 1], got " + std::to_string(momentum));
  }
  return MomentumTwin{params.encoder, params.projector, momentum};
}

namespace detail {

inline void mix_into(Tensor& slow, const Tensor& fast, double m, const char* what) {
  if (slow.shape() != fast.shape()) {
    throw DimensionError(std::string("momentum_update ") + what + ": " + to_string(slow.shape()) + " vs " +
                         to_string(fast.shape()));
  }
  auto s = slow.data();
  const auto f = fast.data();
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = m * s[i] + (1.0 - m) * f[i];
}

}  // namespace detail

/// theta_k <- m theta_k + (1 - m) theta_q over encoder and projector.
inline void momentum_update(MomentumTwin& twin, const ModelParams& params) {
  if (twin.encoder.size() != params.encoder.size()) throw DimensionError("momentum_update: layer count differs");
  const double m = twin.momentum;
  for (std::size_t i = 0; i < twin.encoder.size(); ++i) {
    detail::mix_into(twin.encoder[i].weight, params.encoder[i].weight, m, "encoder weight");
    detail::mix_into(twin.encoder[i].bias, params.encoder[i].bias, m, "encoder bias");
  }
  detail::mix_into(twin.projector.weight, params.projector.weight, m, "projector weight");
  detail::mix_into(twin.projector.bias, params.projector.bias, m, "projector bias");
}

struct KeyOutputs {
  Tensor h_raw;  // f_k(x) before normalization
  Tensor h;      // unit rows
  Tensor z;      // unit rows
};

/// Key branch through the twin. Results are plain tensors, detached from any tape.
inline KeyOutputs forward_key(const MomentumTwin& twin, const Tensor& x) {
  if (twin.encoder.empty()) throw DimensionError("forward_key: twin has no encoder layers");
  if (x.rank() != 2 || x.rows() == 0 || x.cols() != twin.encoder.front().weight.rows()) {
    throw DimensionError("forward_key input " + to_string(x.shape()));
  }
  Tape tape;
  std::vector<Var> w, b;
  for (const auto& layer : twin.encoder) {
    w.push_back(tape.constant(layer.weight));
    b.push_back(tape.constant(layer.bias));
  }
  Var h = detail::encode(w, b, tape.constant(x));
  Var z = row_l2_normalize(
      add_row_bias(matmul(h, tape.constant(twin.projector.weight)), tape.constant(twin.projector.bias)));
  return KeyOutputs{h.value(), row_l2_normalize(h).value(), z.value()};
}

/// Top-1 predictions from the classifier path, ties broken by lowest class index.
inline std::vector<int> predict(const ModelParams& params, const Tensor& x) {
  detail::require_input_width(params.dims, x);
  Tape tape;
  BoundModel b = bind(tape, params, false);
  Var h = detail::encode(b.encoder_weights, b.encoder_biases, tape.constant(x));
  Var logits = matmul(h, transpose(b.classifier));
  if (b.classifier_bias) logits = add_row_bias(logits, *b.classifier_bias);
  const Tensor& l = logits.value();
  std::vector<int> out(l.rows());
  for (std::size_t i = 0; i < l.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < l.cols(); ++j)
      if (l(i, j) > l(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace bituning
