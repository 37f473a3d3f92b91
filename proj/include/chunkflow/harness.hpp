// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "chunkflow/config.hpp"

namespace chunkflow {

// Reads data.path when set (kDependency if missing), otherwise generates.
Dataset load_or_generate(const DataConfig& data);

// Per-chunk drift of an autoregressive rollout against the condition's
// ground-truth trajectory, averaged over held-out conditions and rollouts.
struct DriftCurve {
  std::vector<double> mse;                   // per chunk
  std::vector<std::string> reward_names;     // spec order; TA is the negative chunk MSE
  std::vector<std::vector<double>> rewards;  // [chunk][dimension]
  double mean() const;
};

DriftCurve eval_long_horizon(const DenoiserModel& student, const BlobWorld& world,
                             const std::vector<Example>& heldout, const EvalConfig& eval, const RewardSpec& spec,
                             std::uint64_t seed);

// Mean raw composite reward per held-out condition, with rollout streams
// that depend only on (seed, condition, rollout) so two policies pair up.
std::vector<double> composite_by_condition(const DenoiserModel& policy, const BlobWorld& world,
                                           const std::vector<Example>& heldout, const EvalConfig& eval,
                                           std::size_t chunks, const RewardSpec& spec, std::uint64_t seed);

// One-sided sign test: P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
double sign_test_p(std::size_t wins, std::size_t losses);

// Mean of the generator losses logged in (iteration - window, iteration].
double generator_loss_moving_average(const std::vector<DistillRecord>& records, std::size_t iteration,
                                     std::size_t window = 50);

using Summary = std::vector<std::pair<std::string, double>>;

struct RunResult {
  std::filesystem::path dir;
  Summary summary;
};

// Executes one stage into its run directory: config.json (resolved),
// metrics.jsonl, timing.jsonl, checkpoints, summary.{json,txt,csv}.
RunResult run_experiment(ExperimentConfig cfg);

const std::vector<std::string>& preset_names();  // table2, fig4, table4, table5
// Legs of a sweep preset as (leg name, config); throws kConfig when the
// preset does not apply to the config's kind.
std::vector<std::pair<std::string, ExperimentConfig>> preset_legs(const std::string& preset,
                                                                  const ExperimentConfig& base);
// Runs every leg into <run dir>/<leg> and writes the comparison report.
std::vector<RunResult> run_preset(const std::string& preset, ExperimentConfig base);

// Collects summary.json from `dir` and its leg subdirectories into
// report.txt and report.csv. Returns the number of rows.
std::size_t write_report(const std::filesystem::path& dir);

}  // namespace chunkflow
