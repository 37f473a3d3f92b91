// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "chunkflow/data.hpp"
#include "chunkflow/distill.hpp"
#include "chunkflow/model.hpp"
#include "chunkflow/pretrain.hpp"
#include "chunkflow/rl.hpp"

namespace chunkflow {

enum class ExperimentKind { kGenData, kPretrainTeacher, kDistill, kRl, kEval };
ExperimentKind parse_experiment_kind(const std::string& name);  // gen-data, pretrain-teacher, distill, rl, eval
std::string experiment_kind_name(ExperimentKind kind);

struct DataConfig {
  BlobWorld world;
  std::size_t train_count = 4096;
  std::size_t heldout_count = 512;
  std::uint64_t seed = 0;
  std::string path;  // dataset file; generated in memory when empty
};

struct EvalConfig {
  std::size_t chunks = 8;       // T_eval
  std::size_t conditions = 16;  // held-out conditions
  std::size_t rollouts = 4;     // per condition
  bool oracle = false;          // ground-truth history
  std::size_t grid_steps = 4;
  ScheduleFamily schedule = ScheduleFamily::kLinear;
};

// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "CHUNKFLOW_OUT";

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kDistill;
  std::string name;  // run directory name under `out`; defaults to the kind
  std::uint64_t seed = 0;
  std::string out;   // output root; empty means $CHUNKFLOW_OUT, then "runs"
  std::string run_dir;  // explicit run directory, overrides out/name
  std::string teacher;  // checkpoint consumed by distill
  std::string student;  // checkpoint consumed by rl and eval
  DataConfig data;
  ModelConfig model;
  PretrainConfig pretrain;
  DistillConfig distill;
  RlConfig rl;
  EvalConfig eval;

  // Pushes the top-level seed and the world layout into the stage configs.
  void resolve();
  void validate() const;
  std::filesystem::path resolved_run_dir() const;
};

// Strict JSON: unknown keys and type mismatches throw kConfig naming the
// field path (e.g. "distill.weighting.alpha").
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Fully materialized config; parses back to an identical config.
std::string config_to_json(const ExperimentConfig& cfg);

}  // namespace chunkflow
