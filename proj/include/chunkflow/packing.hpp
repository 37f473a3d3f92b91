// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "chunkflow/autodiff.hpp"
#include "chunkflow/model.hpp"

namespace chunkflow {

// (z_1^u, x_1, z_2^u, x_2, ..., z_T^u): noisy states taken from the rollout's
// stored trajectory at level u interleaved with its clean endpoints.
struct InterleavedSequence {
  SequenceLayout layout;
  double u = 0.0;
  std::uint64_t source = 0;
  AttentionMask mask;
  Tensor tokens;  // packed rows in layout order

  std::size_t num_chunks() const noexcept { return (layout.num_blocks() + 1) / 2; }
  // Token rows of the noisy block for chunk t (0-based).
  std::vector<std::size_t> noisy_rows() const { return layout.token_rows(BlockKind::kNoisy); }
};

// Throws kLevel unless u is one of tau_1 .. tau_{K-1} of the rollout grid.
InterleavedSequence build_interleaved(const RolloutRecord& rollout, double u);

struct UnpackedInterleaved {
  std::vector<Tensor> noisy;  // T entries
  std::vector<Tensor> clean;  // T - 1 entries
};
UnpackedInterleaved unpack_interleaved(const InterleavedSequence& seq);

// ---------------------------------------------------------------------------
// Chunk-wise loss scaling

enum class WeightFamily { kShift, kMode, kLogitNormal };
// How Shift turns pi_alpha into raw weights: the mapped value at p_j, or the
// probability mass of the induced density over the chunk's interval.
enum class ShiftReading { kValue, kDensity };

struct WeightingFunction {
  WeightFamily family = WeightFamily::kShift;
  double alpha = -1.0;       // Shift
  double mode_scale = 0.0;   // Mode
  double mu = 0.0;           // LogitNormal
  double sigma = 1.0;
  ShiftReading shift_reading = ShiftReading::kValue;
  std::uint64_t mc_seed = 0;
  std::size_t mc_samples = 1000000;

  static WeightingFunction shift(double alpha);
  static WeightingFunction mode(double s);
  static WeightingFunction logit_normal(double mu, double sigma);
  std::string describe() const;
};

// Named grid: mode_m054, mode_081, logit_normal, shift_1, shift_0, shift_m1.
const std::vector<std::string>& weighting_preset_names();
WeightingFunction weighting_preset(const std::string& name);

// pi_alpha(p) = alpha p / (1 + (alpha - 1) p)
double shift_map(double alpha, double p);
// Mode timestep transform f(u; s) = 1 - u - s (cos^2(pi u / 2) - 1 + u).
double mode_transform(double u, double s);

struct ChunkWeights {
  std::vector<std::size_t> m;
  std::vector<double> p;
  std::vector<double> raw;
  std::vector<double> w;
};

std::vector<double> participation_scores(std::span<const std::size_t> m);
std::vector<double> raw_weights(const WeightingFunction& g, std::span<const double> p, std::span<const std::size_t> m);
std::vector<double> normalize_weights(std::span<const double> raw, std::span<const std::size_t> m);
ChunkWeights chunk_weights(const WeightingFunction& g, std::span<const std::size_t> m);

// sum_j w_j l_j / sum_j w_j m_j
double aggregate_chunk_loss(std::span<const double> losses, std::span<const double> w,
                            std::span<const std::size_t> m);
Var aggregate_chunk_loss(std::span<const Var> losses, std::span<const double> w, std::span<const std::size_t> m);

}  // namespace chunkflow
