// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "chunkflow/rng.hpp"
#include "chunkflow/tensor.hpp"

namespace chunkflow {

// Noise level n in [0, 1]; 0 is clean data, 1 is pure noise.
class NoiseLevel {
 public:
  explicit NoiseLevel(double n);
  double value() const noexcept { return n_; }
  friend bool operator==(NoiseLevel a, NoiseLevel b) { return a.n_ == b.n_; }

 private:
  double n_;
};

enum class ScheduleFamily { kLinear, kVariancePreserving };

struct AlphaSigma {
  double alpha;
  double sigma;
};

class NoiseSchedule {
 public:
  explicit NoiseSchedule(ScheduleFamily family = ScheduleFamily::kLinear) : family_(family) {}
  ScheduleFamily family() const noexcept { return family_; }
  AlphaSigma at(double n) const;

 private:
  ScheduleFamily family_;
};

ScheduleFamily parse_schedule_family(const std::string& name);
std::string schedule_family_name(ScheduleFamily family);

AlphaSigma alpha_sigma(const NoiseSchedule& sched, double n);

struct Perturbed {
  Tensor z;
  Tensor eps;
};
// z = alpha(n) x + sigma(n) eps with eps drawn from `stream`.
Perturbed perturb(const NoiseSchedule& sched, const Tensor& x, double n, RngStream& stream);
Tensor perturb_with(const NoiseSchedule& sched, const Tensor& x, double n, const Tensor& eps);

// Strictly decreasing levels ending at exactly 0.
class TimestepGrid {
 public:
  explicit TimestepGrid(std::vector<double> levels);
  const std::vector<double>& levels() const noexcept { return levels_; }
  std::size_t size() const noexcept { return levels_.size(); }
  // 1-based, matching tau_1 > ... > tau_K.
  double tau(std::size_t k) const { return levels_.at(k - 1); }
  // Index k with tau(k) == n exactly, or 0 when n is not on the grid.
  std::size_t index_of(double n) const;

 private:
  std::vector<double> levels_;
};

TimestepGrid default_grid(std::size_t steps);

}  // namespace chunkflow
