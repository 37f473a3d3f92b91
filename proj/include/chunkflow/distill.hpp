// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "chunkflow/data.hpp"
#include "chunkflow/model.hpp"
#include "chunkflow/optim.hpp"
#include "chunkflow/packing.hpp"

namespace chunkflow {

// Table-2 style history paradigms.
enum class Paradigm { kTeacherForcing, kDiffusionForcing, kSelfForcing, kDfSelfRollout, kRaven };
Paradigm parse_paradigm(const std::string& name);  // tf, df, sf, df-self-rollout, raven
std::string paradigm_name(Paradigm p);
const std::vector<Paradigm>& all_paradigms();

struct DistillConfig {
  Paradigm paradigm = Paradigm::kRaven;
  std::size_t ttur_ratio = 2;       // critic updates per generator update
  OptimizerConfig generator_opt{OptimizerKind::kAdam, 1e-4};
  OptimizerConfig critic_opt{OptimizerKind::kAdam, 4e-4};
  ScheduleFamily schedule = ScheduleFamily::kLinear;
  std::size_t grid_steps = 4;
  WeightingFunction weighting = WeightingFunction::shift(-1.0);
  std::size_t chunks = 4;
  std::size_t batch = 2;
  std::size_t iterations = 2000;
  bool skip_final_call = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// Endpoints entering the DMD regression for one sample.
struct DmdBatch {
  Var x_theta;        // student endpoints, with gradient
  Tensor x_teacher;   // detached
  Tensor x_critic;    // detached
  double normalizer;  // detached mean |x_theta - x_teacher|, floored
};

inline constexpr double kDmdNormalizerFloor = 1e-8;

DmdBatch make_dmd_batch(Var x_theta, Tensor x_teacher, Tensor x_critic);
// Per-chunk summed ||x_theta - sg(x_theta + (x_teacher - x_critic) / normalizer)||^2.
std::vector<Var> dmd_loss(const DmdBatch& batch, std::size_t tokens_per_chunk);

// Critic regression ||f_phi(alpha_n x + sigma_n eps, n, c) - x||^2, averaged
// over elements, on a tape holding the critic's trainable parameters.
Var critic_loss(const BoundModel& critic, const NoiseSchedule& sched, const Tensor& endpoints, const Tensor& cond,
                double n, const Tensor& eps);

// Student forward pass used by the generator step.
struct GeneratorInput {
  SequenceLayout layout;
  Tensor tokens;
  AttentionMask mask;
  ForwardOptions options;
  double u = 0.0;  // upper bound for the score level s
};

// Builds the paradigm's training pass. `ground_truth` holds the T data
// chunks (TF / DF); `rollout` is the Stage-1 rollout (unused by DF).
GeneratorInput generator_input(Paradigm paradigm, const RolloutRecord* rollout,
                               const std::vector<Tensor>* ground_truth, const NoiseSchedule& sched,
                               const TimestepGrid& grid, RngStream& stream);
// Noisy-block outputs of a forward pass, in chunk order.
Var noisy_outputs(const ForwardResult& result, const SequenceLayout& layout);

struct GeneratorLoss {
  Var loss;
  std::vector<Var> chunk_losses;
  double s = 0.0;
};

// Stage 3 for one sample: student pass, shared s ~ U(0, u), teacher and
// critic endpoints on sg(alpha_s x_theta + sigma_s eps), chunk-weighted DMD.
GeneratorLoss generator_loss(const BoundModel& student, const DenoiserModel& teacher, const DenoiserModel& critic,
                             const GeneratorInput& input, const Tensor& cond, const ChunkWeights& weights,
                             const NoiseSchedule& sched, RngStream& stream);

struct DistillRecord {
  std::size_t iteration = 0;
  double critic_loss = 0.0;
  std::optional<double> generator_loss;
  double generator_grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct DistillState {
  DenoiserModel student;
  DenoiserModel critic;
};

using DistillCallback = std::function<void(const DistillRecord&, const DistillState&)>;

// Algorithm-1 loop. Generator updates happen on iterations i (1-based) with
// i mod r == 0. Throws kConfig when the teacher is missing.
DistillState train_distill(const DistillConfig& config, DenoiserModel student, DenoiserModel critic,
                           const DenoiserModel* teacher, const Dataset& data, const DistillCallback& on_record = {});

// Ground-truth chunks of an example as T tensors.
std::vector<Tensor> split_chunks(const Tensor& frames, std::size_t tokens_per_chunk);

}  // namespace chunkflow
