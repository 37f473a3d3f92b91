// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/schedule.hpp"

#include <cmath>
#include <numbers>

#include "chunkflow/error.hpp"

namespace chunkflow {

NoiseLevel::NoiseLevel(double n) : n_(n) {
  if (!(n >= 0.0 && n <= 1.0)) fail(ErrorKind::kDomain, "noise level outside [0, 1]: " + std::to_string(n));
}

AlphaSigma NoiseSchedule::at(double n) const {
  const double level = NoiseLevel(n).value();
  switch (family_) {
    case ScheduleFamily::kLinear:
      return {1.0 - level, level};
    case ScheduleFamily::kVariancePreserving: {
      // cosine VP family, exact at both endpoints
      if (level == 0.0) return {1.0, 0.0};
      if (level == 1.0) return {0.0, 1.0};
      const double angle = 0.5 * std::numbers::pi * level;
      return {std::cos(angle), std::sin(angle)};
    }
  }
  fail(ErrorKind::kConfig, "unknown schedule family");
}

ScheduleFamily parse_schedule_family(const std::string& name) {
  if (name == "linear") return ScheduleFamily::kLinear;
  if (name == "vp-cosine") return ScheduleFamily::kVariancePreserving;
  fail(ErrorKind::kConfig, "unknown schedule family '" + name + "'");
}

std::string schedule_family_name(ScheduleFamily family) {
  return family == ScheduleFamily::kLinear ? "linear" : "vp-cosine";
}

AlphaSigma alpha_sigma(const NoiseSchedule& sched, double n) { return sched.at(n); }

Tensor perturb_with(const NoiseSchedule& sched, const Tensor& x, double n, const Tensor& eps) {
  const auto [a, s] = sched.at(n);
  if (eps.shape() != x.shape()) fail(ErrorKind::kShape, "perturb: noise shape differs from data");
  Tensor z = x;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * x[i] + s * eps[i];
  return z;
}

Perturbed perturb(const NoiseSchedule& sched, const Tensor& x, double n, RngStream& stream) {
  sched.at(n);
  Tensor eps = gaussian_sample(stream, x.shape());
  Tensor z = perturb_with(sched, x, n, eps);
  return {std::move(z), std::move(eps)};
}

TimestepGrid::TimestepGrid(std::vector<double> levels) : levels_(std::move(levels)) {
  if (levels_.size() < 2) fail(ErrorKind::kConfig, "timestep grid needs at least 2 levels");
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    (void)NoiseLevel{levels_[i]};
    if (i > 0 && !(levels_[i] < levels_[i - 1]))
      fail(ErrorKind::kConfig, "timestep grid must be strictly decreasing");
  }
  if (levels_.back() != 0.0) fail(ErrorKind::kConfig, "timestep grid must end at 0");
}

std::size_t TimestepGrid::index_of(double n) const {
  for (std::size_t i = 0; i < levels_.size(); ++i)
    if (levels_[i] == n) return i + 1;
  return 0;
}

TimestepGrid default_grid(std::size_t steps) {
  if (steps < 2) fail(ErrorKind::kConfig, "grid step count must be >= 2, got " + std::to_string(steps));
  std::vector<double> levels(steps);
  for (std::size_t k = 1; k <= steps; ++k)
    levels[k - 1] = static_cast<double>(steps - k) / static_cast<double>(steps - 1);
  return TimestepGrid(std::move(levels));
}

}  // namespace chunkflow
