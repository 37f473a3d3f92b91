// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/kernels.hpp"

#include <cmath>
#include <numbers>

#include "chunkflow/error.hpp"

namespace chunkflow {

namespace {

AlphaSigma stochastic_coefficients(const NoiseSchedule& sched, double s) {
  const AlphaSigma as = sched.at(s);
  if (!(as.sigma > 0.0))
    fail(ErrorKind::kDiracKernel, "consistency kernel at level " + std::to_string(s) +
                                      " has sigma = 0 (Dirac delta); log-probability undefined");
  return as;
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) fail(ErrorKind::kShape, std::string(what) + ": shape mismatch");
}

}  // namespace

Tensor consistency_sample_with(const NoiseSchedule& sched, const Tensor& x_hat, double s, const Tensor& eps) {
  return perturb_with(sched, x_hat, s, eps);
}

Tensor consistency_sample(const NoiseSchedule& sched, const Tensor& x_hat, double s, RngStream& stream) {
  return perturb(sched, x_hat, s, stream).z;
}

ConsistencyTransition make_consistency_transition(const NoiseSchedule& sched, double u, double s,
                                                  const Tensor& x_hat, RngStream& stream) {
  if (!(s < u)) fail(ErrorKind::kDomain, "consistency transition requires s < u");
  const double alpha = sched.at(s).alpha;
  return {u, s, x_hat, alpha * x_hat, consistency_sample(sched, x_hat, s, stream)};
}

double consistency_logprob_reduced(const NoiseSchedule& sched, const Tensor& z_s, const Tensor& x_hat, double s) {
  require_same(z_s, x_hat, "consistency_logprob_reduced");
  const auto [alpha, sigma] = stochastic_coefficients(sched, s);
  double sq = 0.0;
  for (std::size_t i = 0; i < z_s.size(); ++i) {
    const double r = z_s[i] - alpha * x_hat[i];
    sq += r * r;
  }
  return -sq / (2.0 * sigma * sigma);
}

Tensor cmgrpo_endpoint_gradient(const NoiseSchedule& sched, const Tensor& z_s, const Tensor& x_hat, double s,
                                double advantage) {
  require_same(z_s, x_hat, "cmgrpo_endpoint_gradient");
  const auto [alpha, sigma] = stochastic_coefficients(sched, s);
  Tensor g(x_hat.shape());
  const double c = -advantage * alpha / (sigma * sigma);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = c * (z_s[i] - alpha * x_hat[i]);
  return g;
}

double consistency_kl(const NoiseSchedule& sched, const Tensor& x_hat_theta, const Tensor& x_hat_ref, double s) {
  require_same(x_hat_theta, x_hat_ref, "consistency_kl");
  const auto [alpha, sigma] = stochastic_coefficients(sched, s);
  return alpha * alpha * (x_hat_theta - x_hat_ref).squared_norm() / (2.0 * sigma * sigma);
}

double gaussian_logpdf(const Tensor& x, const Tensor& mean, double variance) {
  require_same(x, mean, "gaussian_logpdf");
  if (!(variance > 0.0)) fail(ErrorKind::kDiracKernel, "gaussian_logpdf: variance must be positive");
  const double d = static_cast<double>(x.size());
  return -(x - mean).squared_norm() / (2.0 * variance) - 0.5 * d * std::log(2.0 * std::numbers::pi * variance);
}

Tensor em_drift(const Tensor& v, const Tensor& y, double tau, double sigma) {
  require_same(v, y, "em_drift");
  if (!(tau > 0.0)) fail(ErrorKind::kSingularDrift, "em_drift: tau must be positive");
  const double c = sigma * sigma / (2.0 * tau);
  Tensor b(v.shape());
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = v[i] + c * (y[i] + (1.0 - tau) * v[i]);
  return b;
}

Tensor em_step_with(const Tensor& y, const Tensor& v, double tau, double dt, double sigma, const Tensor& eps) {
  if (!(dt > 0.0)) fail(ErrorKind::kDomain, "em_step: step size must be positive");
  require_same(y, eps, "em_step");
  const Tensor b = em_drift(v, y, tau, sigma);
  const double noise = sigma * std::sqrt(dt);
  Tensor out(y.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = y[i] + b[i] * dt + noise * eps[i];
  return out;
}

Tensor em_step(const Tensor& y, const Tensor& v, double tau, double dt, double sigma, RngStream& stream) {
  return em_step_with(y, v, tau, dt, sigma, gaussian_sample(stream, y.shape()));
}

double em_logprob(const Tensor& y_next, const Tensor& y, const Tensor& v, double tau, double dt, double sigma) {
  if (!(sigma > 0.0)) fail(ErrorKind::kDiracKernel, "em_logprob: sigma = 0 gives a Dirac kernel");
  if (!(dt > 0.0)) fail(ErrorKind::kDomain, "em_logprob: step size must be positive");
  const Tensor b = em_drift(v, y, tau, sigma);
  Tensor mean(y.shape());
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = y[i] + b[i] * dt;
  return gaussian_logpdf(y_next, mean, sigma * sigma * dt);
}

Tensor em_velocity_from_endpoint(const Tensor& y, const Tensor& x_hat, double n) {
  if (!(n > 0.0)) fail(ErrorKind::kSingularDrift, "velocity adapter needs n > 0");
  return (1.0 / n) * (y - x_hat);
}

Tensor em_reverse_mean(const Tensor& y, const Tensor& x_hat, double n, double n_next, double sigma) {
  if (!(n_next < n)) fail(ErrorKind::kDomain, "reverse EM step must decrease the noise level");
  const Tensor b = em_drift(em_velocity_from_endpoint(y, x_hat, n), y, n, sigma);
  return y - (n - n_next) * b;
}

Tensor em_reverse_step(const Tensor& y, const Tensor& x_hat, double n, double n_next, double sigma,
                       RngStream& stream) {
  Tensor mean = em_reverse_mean(y, x_hat, n, n_next, sigma);
  const Tensor eps = gaussian_sample(stream, y.shape());
  const double noise = sigma * std::sqrt(n - n_next);
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += noise * eps[i];
  return mean;
}

double em_reverse_logprob(const Tensor& y_next, const Tensor& y, const Tensor& x_hat, double n, double n_next,
                          double sigma) {
  if (!(sigma > 0.0)) fail(ErrorKind::kDiracKernel, "em_reverse_logprob: sigma = 0 gives a Dirac kernel");
  return gaussian_logpdf(y_next, em_reverse_mean(y, x_hat, n, n_next, sigma), sigma * sigma * (n - n_next));
}

double em_reverse_mean_slope(double n, double n_next, double sigma) {
  // mean = y - dt * [v (1 + c (1 - n)) + c y], v = (y - x_hat) / n, c = sigma^2 / (2n)
  const double c = sigma * sigma / (2.0 * n);
  return (n - n_next) * (1.0 + c * (1.0 - n)) / n;
}

}  // namespace chunkflow
