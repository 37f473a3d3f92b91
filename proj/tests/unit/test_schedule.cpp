// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "chunkflow/error.hpp"
#include "chunkflow/schedule.hpp"
#include "doctest.h"

using namespace chunkflow;

TEST_CASE("linear alpha/sigma boundaries and interior") {
  const NoiseSchedule lin;
  CHECK(alpha_sigma(lin, 0.0).alpha == 1.0);
  CHECK(alpha_sigma(lin, 0.0).sigma == 0.0);
  CHECK(alpha_sigma(lin, 1.0).alpha == 0.0);
  CHECK(alpha_sigma(lin, 1.0).sigma == 1.0);
  CHECK(alpha_sigma(lin, 0.25).alpha == 0.75);
  CHECK(alpha_sigma(lin, 0.25).sigma == 0.25);
  CHECK_THROWS_AS(alpha_sigma(lin, -0.01), Error);
  CHECK_THROWS_AS(alpha_sigma(lin, 1.01), Error);
}

TEST_CASE("every family satisfies boundary and monotonicity invariants") {
  for (auto fam : {ScheduleFamily::kLinear, ScheduleFamily::kVariancePreserving}) {
    const NoiseSchedule s(fam);
    CHECK(std::abs(s.at(0.0).alpha - 1.0) < 1e-15);
    CHECK(std::abs(s.at(0.0).sigma) < 1e-15);
    CHECK(std::abs(s.at(1.0).alpha) < 1e-15);
    CHECK(std::abs(s.at(1.0).sigma - 1.0) < 1e-15);
    for (int i = 0; i < 100; ++i) {
      const double a = i / 100.0, b = (i + 1) / 100.0;
      CHECK(s.at(b).alpha <= s.at(a).alpha);
      CHECK(s.at(b).sigma >= s.at(a).sigma);
    }
  }
  CHECK(parse_schedule_family("vp-cosine") == ScheduleFamily::kVariancePreserving);
  CHECK_THROWS_AS(parse_schedule_family("cosine?"), Error);
}

TEST_CASE("perturb examples") {
  const NoiseSchedule lin;
  RngStream s(5, 5);
  const Tensor x = Tensor::from({0.3, -1.2, 4.0});
  const Perturbed p0 = perturb(lin, x, 0.0, s);
  CHECK(p0.z == x);
  const Perturbed p1 = perturb(lin, x, 1.0, s);
  CHECK(p1.z == p1.eps);
  CHECK(perturb_with(lin, Tensor::from({2.0}), 0.5, Tensor::from({1.0}))[0] == 1.5);
}

TEST_CASE("perturb moments over 1e5 draws within 3 standard errors") {
  const NoiseSchedule lin;
  const double n = 0.3, x = 1.7;
  RngStream s(11, 2);
  const std::size_t N = 100000;
  const Tensor big(Shape{N}, x);
  const Tensor z = perturb(lin, big, n, s).z;
  double mean = 0.0;
  for (double v : z.data()) mean += v;
  mean /= N;
  double var = 0.0, m4 = 0.0;
  for (double v : z.data()) {
    const double d = v - mean;
    var += d * d;
    m4 += d * d * d * d;
  }
  var /= N;
  m4 /= N;
  const double se_mean = std::sqrt(var / N);
  const double se_var = std::sqrt((m4 - var * var) / N);
  CHECK(std::abs(mean - (1 - n) * x) < 3 * se_mean);
  CHECK(std::abs(var - n * n) < 3 * se_var);
}

TEST_CASE("default_grid") {
  CHECK(default_grid(2).levels() == std::vector<double>{1.0, 0.0});
  const TimestepGrid g4 = default_grid(4);
  CHECK(g4.tau(1) == 1.0);
  CHECK(g4.tau(2) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(g4.tau(3) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(g4.tau(4) == 0.0);
  for (std::size_t K = 2; K < 20; ++K) {
    const TimestepGrid g = default_grid(K);
    CHECK(g.levels().back() == 0.0);
    for (std::size_t k = 1; k < K; ++k) CHECK(g.tau(k) > g.tau(k + 1));
  }
  CHECK_THROWS_AS(default_grid(1), Error);
  CHECK_THROWS_AS(TimestepGrid({1.0, 0.5, 0.5, 0.0}), Error);
  CHECK_THROWS_AS(TimestepGrid({1.0, 0.5}), Error);
  CHECK(g4.index_of(g4.tau(3)) == 3);
  CHECK(g4.index_of(0.5) == 0);
}
