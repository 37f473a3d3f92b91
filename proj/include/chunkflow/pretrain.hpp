// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>

#include "chunkflow/data.hpp"
#include "chunkflow/model.hpp"
#include "chunkflow/optim.hpp"

namespace chunkflow {

struct PretrainConfig {
  OptimizerConfig opt{OptimizerKind::kAdam, 1e-3, 0.9, 0.999, 1e-8, 1.0};
  std::size_t iterations = 6000;
  std::size_t batch = 8;
  std::size_t eval_every = 250;
  std::size_t eval_examples = 128;
  // Stop once this many evaluations pass without a 1% held-out improvement.
  std::size_t patience = 4;
  ScheduleFamily schedule = ScheduleFamily::kLinear;
  std::uint64_t seed = 0;
};

struct PretrainRecord {
  std::size_t iteration = 0;
  double loss = 0.0;
  std::optional<double> heldout_mse;
  double wall_ms = 0.0;
};

struct PretrainResult {
  DenoiserModel teacher;
  double heldout_mse = 0.0;     // at n ~ U(0, 1)
  double heldout_mse_clean = 0.0;  // at n = 0
  double data_variance = 0.0;
  std::size_t iterations = 0;
};

// Endpoint MSE of a bidirectional denoiser on held-out examples; n < 0 draws
// one level per example from U(0, 1) with a fixed stream.
double heldout_endpoint_mse(const DenoiserModel& model, const std::vector<Example>& examples, std::size_t count,
                            double n, ScheduleFamily schedule, std::uint64_t seed);

// Bidirectional denoiser trained by endpoint regression on perturbed data.
// Throws kTrainingFailure when the loss stays above 10x its initial value
// for 100 consecutive iterations.
PretrainResult pretrain_teacher(const PretrainConfig& config, const ModelConfig& model, const Dataset& data,
                                const std::function<void(const PretrainRecord&)>& on_record = {});

}  // namespace chunkflow
