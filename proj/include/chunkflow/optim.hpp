// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "chunkflow/model.hpp"

namespace chunkflow {

enum class OptimizerKind { kSgd, kAdam };
OptimizerKind parse_optimizer(const std::string& name);
std::string optimizer_name(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
};

// Applies gradients to a model's parameters in place. Adam state lives here.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, const DenoiserModel& model);
  const OptimizerConfig& config() const noexcept { return config_; }
  std::size_t steps() const noexcept { return steps_; }
  // Returns the global gradient norm before clipping.
  double step(DenoiserModel& model, std::vector<Tensor> grads);

 private:
  OptimizerConfig config_;
  std::vector<Tensor> m_, v_;
  std::size_t steps_ = 0;
};

}  // namespace chunkflow
