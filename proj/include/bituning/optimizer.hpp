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
#include <utility>
#include <vector>

#include "bituning/model.hpp"

namespace bituning {

struct OptimizerConfig {
  double base_lr = 0.01;
  double head_lr_multiplier = 10.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // (iteration, factor): from that iteration on the learning rate is multiplied by factor.
  std::vector<std::pair<std::size_t, double>> schedule;

  bool operator==(const OptimizerConfig&) const = default;
};

/// The stepwise decay used when no schedule is given: x0.1 at 2/3 and at 5/6 of the run.
inline std::vector<std::pair<std::size_t, double>> default_schedule(std::size_t iterations) {
  if (iterations < 3) return {};
  return {{iterations * 2 / 3, 0.1}, {iterations * 5 / 6, 0.1}};
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
///   g' = g + wd * theta;  v = mu * v + g';  theta -= lr * v
/// Head parameters (classifier, projector) use lr * head_lr_multiplier.
class SgdMomentum {
 public:
  SgdMomentum(const ModelParams& params, OptimizerConfig cfg) : cfg_(std::move(cfg)) {
    for (const auto& ref : parameters(params)) velocity_.push_back(Tensor(ref.tensor->shape(), std::vector<double>(ref.tensor->size(), 0.0)));
  }

  const OptimizerConfig& config() const noexcept { return cfg_; }
  const std::vector<Tensor>& velocity() const noexcept { return velocity_; }

  double learning_rate(std::size_t iteration) const {
    double lr = cfg_.base_lr;
    for (const auto& [at, factor] : cfg_.schedule)
      if (iteration >= at) lr *= factor;
    return lr;
  }

  double learning_rate(std::size_t iteration, ParamGroup group) const {
    return learning_rate(iteration) * (group == ParamGroup::kHead ? cfg_.head_lr_multiplier : 1.0);
  }

  /// `grads` follows parameters() order.
  void step(ModelParams& params, const std::vector<Tensor>& grads, std::size_t iteration) {
    auto refs = parameters(params);
    if (grads.size() != refs.size() || velocity_.size() != refs.size()) {
      throw DimensionError("optimizer: " + std::to_string(grads.size()) + " gradients for " +
                           std::to_string(refs.size()) + " parameters");
    }
    for (std::size_t p = 0; p < refs.size(); ++p) {
      auto theta = refs[p].tensor->data();
      const auto g = grads[p].data();
      auto v = velocity_[p].data();
      if (g.size() != theta.size()) throw DimensionError("optimizer: gradient shape differs for " + refs[p].name);
      const double lr = learning_rate(iteration, refs[p].group);
      for (std::size_t i = 0; i < theta.size(); ++i) {
        v[i] = cfg_.momentum * v[i] + g[i] + cfg_.weight_decay * theta[i];
        theta[i] -= lr * v[i];
      }
      refs[p].tensor->check_finite(refs[p].name.c_str());
    }
  }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> velocity_;
};

}  // namespace bituning
