// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/finite_diff.hpp"

#include <algorithm>
#include <cmath>

#include "chunkflow/error.hpp"

namespace chunkflow {

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h > 0.0)) fail(ErrorKind::kDomain, "finite_diff_grad: step must be positive");
  Tensor grad(x.shape(), 0.0);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      fail(ErrorKind::kOracleFailure,
           "finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double relative_error(const Tensor& a, const Tensor& b, double floor) {
  double scale = floor;
  for (double v : b.data()) scale = std::max(scale, std::abs(v));
  return max_abs_diff(a, b) / scale;
}

}  // namespace chunkflow
