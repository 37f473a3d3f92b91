// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/optim.hpp"

#include <cmath>

#include "chunkflow/error.hpp"

namespace chunkflow {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  fail(ErrorKind::kConfig, "unknown optimizer '" + name + "'");
}

std::string optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

Optimizer::Optimizer(OptimizerConfig config, const DenoiserModel& model) : config_(config) {
  if (!(config_.lr > 0.0)) fail(ErrorKind::kConfig, "learning rate must be positive");
  if (config_.grad_clip < 0.0) fail(ErrorKind::kConfig, "grad_clip must be >= 0");
  if (config_.kind == OptimizerKind::kAdam) {
    for (const auto& p : model.parameters()) {
      m_.emplace_back(p.value.shape(), 0.0);
      v_.emplace_back(p.value.shape(), 0.0);
    }
  }
}

double Optimizer::step(DenoiserModel& model, std::vector<Tensor> grads) {
  auto& params = model.parameters();
  if (grads.size() != params.size()) fail(ErrorKind::kShape, "optimizer: gradient count mismatch");
  double sq = 0.0;
  for (const Tensor& g : grads) sq += g.squared_norm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) fail(ErrorKind::kTrainingFailure, "non-finite gradient");
  const double scale = (config_.grad_clip > 0.0 && norm > config_.grad_clip) ? config_.grad_clip / norm : 1.0;
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].value.data();
    auto g = grads[i].data();
    if (g.size() != theta.size()) fail(ErrorKind::kShape, "optimizer: gradient shape mismatch");
    if (config_.kind == OptimizerKind::kSgd) {
      for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= config_.lr * scale * g[j];
      continue;
    }
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = scale * g[j];
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
      theta[j] -= config_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.eps);
    }
  }
  return norm;
}

}  // namespace chunkflow
