// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "chunkflow/rng.hpp"
#include "chunkflow/schedule.hpp"
#include "chunkflow/tensor.hpp"

namespace chunkflow {

// Consistency-sampler step u -> s: z_s ~ N(alpha_s * x_hat, sigma_s^2 I).
struct ConsistencyTransition {
  double u;
  double s;
  Tensor x_hat;
  Tensor mean;  // alpha_s * x_hat
  Tensor z_s;
};

Tensor consistency_sample(const NoiseSchedule& sched, const Tensor& x_hat, double s, RngStream& stream);
Tensor consistency_sample_with(const NoiseSchedule& sched, const Tensor& x_hat, double s, const Tensor& eps);
ConsistencyTransition make_consistency_transition(const NoiseSchedule& sched, double u, double s,
                                                  const Tensor& x_hat, RngStream& stream);

// -||z_s - alpha_s x_hat||^2 / (2 sigma_s^2), normalization constant dropped.
double consistency_logprob_reduced(const NoiseSchedule& sched, const Tensor& z_s, const Tensor& x_hat, double s);

// d/dx_hat of [-advantage * log pi] = -advantage * alpha_s (z_s - alpha_s x_hat) / sigma_s^2
Tensor cmgrpo_endpoint_gradient(const NoiseSchedule& sched, const Tensor& z_s, const Tensor& x_hat, double s,
                                double advantage);

// KL(pi_theta || pi_ref) for two consistency kernels sharing sigma_s.
double consistency_kl(const NoiseSchedule& sched, const Tensor& x_hat_theta, const Tensor& x_hat_ref, double s);

// Full isotropic Gaussian log-density, normalization included.
double gaussian_logpdf(const Tensor& x, const Tensor& mean, double variance);

// Euler-Maruyama kernel, in the drift's own time convention: tau is the
// noise level of the Flow-GRPO drift and the step is written y + b * dt.
struct EmTransition {
  double tau;
  double dt;
  double sigma;
  Tensor y;
  Tensor v;
  Tensor drift;
  Tensor y_next;
};

// b = v + sigma^2 / (2 tau) * (y + (1 - tau) v)
Tensor em_drift(const Tensor& v, const Tensor& y, double tau, double sigma);
Tensor em_step(const Tensor& y, const Tensor& v, double tau, double dt, double sigma, RngStream& stream);
Tensor em_step_with(const Tensor& y, const Tensor& v, double tau, double dt, double sigma, const Tensor& eps);
double em_logprob(const Tensor& y_next, const Tensor& y, const Tensor& v, double tau, double dt, double sigma);

// Adapter onto the sampler's noise-level convention (n = 0 clean, linear
// schedule). The drift above is the reverse-time SDE drift, so a denoising
// move from level n to n_next < n has mean y - b (n - n_next) and variance
// sigma^2 (n - n_next); the velocity comes from the endpoint prediction as
// v = (y - x_hat) / n.
Tensor em_velocity_from_endpoint(const Tensor& y, const Tensor& x_hat, double n);
Tensor em_reverse_mean(const Tensor& y, const Tensor& x_hat, double n, double n_next, double sigma);
Tensor em_reverse_step(const Tensor& y, const Tensor& x_hat, double n, double n_next, double sigma,
                       RngStream& stream);
double em_reverse_logprob(const Tensor& y_next, const Tensor& y, const Tensor& x_hat, double n, double n_next,
                          double sigma);
// d(reverse mean)/d(x_hat), a scalar since the mean is affine in x_hat.
double em_reverse_mean_slope(double n, double n_next, double sigma);

}  // namespace chunkflow
