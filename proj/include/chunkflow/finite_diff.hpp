// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "chunkflow/tensor.hpp"

namespace chunkflow {

using ScalarFn = std::function<double(const Tensor&)>;

// Central-difference gradient, one coordinate at a time. Independent of the
// tape; every analytic gradient in the library is checked against it.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h = 1e-5);

// max_i |a_i - b_i| / max(max_i |b_i|, floor)
double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-12);

}  // namespace chunkflow
