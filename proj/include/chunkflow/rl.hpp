// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "chunkflow/data.hpp"
#include "chunkflow/model.hpp"
#include "chunkflow/optim.hpp"
#include "chunkflow/packing.hpp"

namespace chunkflow {

// ---------------------------------------------------------------------------
// Toy rewards over generated frames [frames x grid^2]

struct RewardTerm {
  std::string name;  // TA, DD, MS, AQ, IQ
  double weight;
};

struct RewardSpec {
  std::vector<RewardTerm> terms = {{"TA", 2.0}, {"DD", 0.35}, {"MS", 0.75}, {"AQ", 1.0}, {"IQ", 1.0}};
  void validate() const;
  double abs_weight_sum() const;
};

const std::vector<std::string>& reward_names();
// Single dimension; throws kRewardEvaluation on a non-finite value.
double reward_value(const std::string& name, const Tensor& frames, const Tensor& cond, const BlobWorld& world);
// [G x M] raw rewards in spec order.
std::vector<std::vector<double>> evaluate_rewards(const RewardSpec& spec, const std::vector<Tensor>& frames,
                                                  const Tensor& cond, const BlobWorld& world);

// ---------------------------------------------------------------------------
// Group statistics (population std)

inline constexpr double kDefaultRewardEps = 1e-4;
inline constexpr double kDefaultAdvantageClip = 5.0;

std::vector<double> group_normalize(const std::vector<double>& values, double eps);
// Per-dimension group normalization then sum_m lambda_m Rbar_m / sum_m |lambda_m|.
std::vector<double> normalize_and_compose(const std::vector<std::vector<double>>& raw, const RewardSpec& spec,
                                          double eps);
std::vector<double> advantages_unclipped(const std::vector<double>& composite, double eps);
std::vector<double> advantages(const std::vector<double>& composite, double eps, double a_max);

struct RewardGroup {
  std::vector<std::vector<double>> raw;
  std::vector<double> composite;
  std::vector<double> unclipped;
  std::vector<double> advantages;
  double clip_fraction = 0.0;
};
RewardGroup score_group(const RewardSpec& spec, const std::vector<std::vector<double>>& raw, double eps,
                        double a_max);

// ---------------------------------------------------------------------------
// Policy losses

// Per-chunk ||x - sg(x + (A alpha_s / (2 sigma_s^2)) (z_s - alpha_s x))||^2.
std::vector<Var> cmgrpo_chunk_losses(Var x_theta, const Tensor& z_s, double s, double advantage,
                                     const NoiseSchedule& sched, std::size_t tokens_per_chunk);
Var cmgrpo_loss(Var x_theta, const Tensor& z_s, double s, double advantage, const NoiseSchedule& sched,
                const ChunkWeights& weights, std::size_t tokens_per_chunk);

// Euler-Maruyama baseline on the reverse adapter: stop-gradient regression
// whose gradient is that of -A log pi, plus beta * KL to the reference kernel.
struct EmTransitionData {
  Tensor y;       // state at level n
  Tensor y_next;  // stored state at level n_next
  double n;
  double n_next;
};
std::vector<Var> emgrpo_chunk_losses(Var x_theta, const EmTransitionData& tr, double sigma, double advantage,
                                     double beta, const Tensor& x_ref, std::size_t tokens_per_chunk);
Var emgrpo_loss(Var x_theta, const EmTransitionData& tr, double sigma, double advantage, double beta,
                const Tensor& x_ref, const ChunkWeights& weights, std::size_t tokens_per_chunk);
// Closed-form beta-free KL between the policy and reference reverse kernels.
double em_reverse_kl(const Tensor& x_theta, const Tensor& x_ref, double n, double n_next, double sigma);

// ---------------------------------------------------------------------------
// Training

enum class RlPolicy { kCmGrpo, kEmGrpo };
RlPolicy parse_rl_policy(const std::string& name);  // cm-grpo, em-grpo
std::string rl_policy_name(RlPolicy p);

struct RlConfig {
  RlPolicy policy = RlPolicy::kCmGrpo;
  std::size_t group = 8;
  std::size_t batch = 4;  // conditions per step
  OptimizerConfig opt{OptimizerKind::kAdam, 2e-5};
  ScheduleFamily schedule = ScheduleFamily::kLinear;
  std::size_t grid_steps = 4;
  WeightingFunction weighting = WeightingFunction::shift(-1.0);
  std::size_t chunks = 4;
  double em_sigma = 0.4;
  double beta = 0.0;
  double a_max = kDefaultAdvantageClip;
  double eps = kDefaultRewardEps;
  std::size_t iterations = 200;
  bool interleaved = true;  // false: detached cached-history forward
  bool skip_final_call = false;
  RewardSpec rewards;
  std::uint64_t seed = 0;

  void validate() const;
};

// Transition index k for CM-GRPO, uniform over {1, ..., K-2} so the target
// level tau_{k+1} is never the Dirac step at tau_K = 0. EM-GRPO draws from
// {1, ..., K-1}.
std::size_t sample_transition(RlPolicy policy, std::size_t grid_steps, RngStream& stream);

std::vector<RolloutRecord> group_rollout(const DenoiserModel& policy, const NoiseSchedule& sched,
                                         const TimestepGrid& grid, const Tensor& cond, std::size_t group,
                                         std::size_t chunks, const std::vector<RngStream>& streams,
                                         const RolloutOptions& options = {});

struct RlRecord {
  std::size_t iteration = 0;
  double composite_mean = 0.0;  // weighted raw reward, sum lambda R / sum |lambda|
  double composite_std = 0.0;
  std::vector<double> reward_means;  // per dimension, spec order
  double loss = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

// One Algorithm-2 iteration over a batch of conditions.
RlRecord rl_step(DenoiserModel& policy, Optimizer& opt, const DenoiserModel* reference, const RlConfig& cfg,
                 const std::vector<Tensor>& conditions, const BlobWorld& world, RngStream& stream);

using RlCallback = std::function<void(const RlRecord&, const DenoiserModel&)>;
DenoiserModel train_rl(const RlConfig& cfg, DenoiserModel policy, const Dataset& data,
                       const RlCallback& on_record = {});

// Raw weighted composite sum lambda R / sum |lambda| for one set of frames.
double raw_composite(const RewardSpec& spec, const Tensor& frames, const Tensor& cond, const BlobWorld& world);

}  // namespace chunkflow
