// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include "chunkflow/rng.hpp"
#include "chunkflow/tensor.hpp"

namespace chunkflow {

// Gaussian blob moving with constant velocity on a square grid, reflecting
// off the borders. Every frame is one token of grid*grid pixels.
struct BlobWorld {
  std::size_t grid = 8;
  std::size_t frames_per_chunk = 3;
  std::size_t chunks = 4;
  double max_speed = 1.0;
  double radius_min = 0.8;
  double radius_max = 1.6;
  double intensity_min = 0.6;
  double intensity_max = 1.0;

  std::size_t frame_dim() const noexcept { return grid * grid; }
  std::size_t frames() const noexcept { return chunks * frames_per_chunk; }
  void validate() const;
};

inline constexpr std::size_t kConditionDim = 4;

struct BlobCondition {
  double vx = 0.0;
  double vy = 0.0;
  double radius = 1.0;
  double intensity = 1.0;

  Tensor tensor() const { return Tensor::from({vx, vy, radius, intensity}); }
  static BlobCondition from_tensor(const Tensor& c);
};

BlobCondition sample_condition(const BlobWorld& world, RngStream& stream);

// Reflects a coordinate into [0, extent - 1].
double reflect(double x, double extent);

// Frames [chunks * frames_per_chunk x grid^2]. The blob starts at the grid
// centre unless a start position is given.
Tensor render_trajectory(const BlobWorld& world, const BlobCondition& cond, std::size_t chunks);
Tensor render_trajectory(const BlobWorld& world, const BlobCondition& cond, std::size_t chunks, double x0,
                         double y0);

struct Example {
  Tensor cond;    // [4]
  Tensor frames;  // [chunks * frames_per_chunk x grid^2]
};

struct Dataset {
  BlobWorld world;
  std::vector<Example> train;
  std::vector<Example> heldout;
};

Dataset gen_dataset(const BlobWorld& world, std::size_t train_count, std::size_t heldout_count,
                    std::uint64_t seed);
// Per-pixel variance over all training frames (the mean-predictor MSE).
double data_variance(const std::vector<Example>& examples);

// "CFDS" container, version 1, little-endian. See docs/formats.md.
void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace chunkflow
