// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "chunkflow/error.hpp"

namespace chunkflow {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidShape: return "invalid-shape";
    case ErrorKind::kOracleFailure: return "oracle-failure";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kDiracKernel: return "dirac-kernel";
    case ErrorKind::kSingularDrift: return "singular-drift";
    case ErrorKind::kLayout: return "layout";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kLevel: return "level";
    case ErrorKind::kWeighting: return "weighting";
    case ErrorKind::kRewardEvaluation: return "reward-evaluation";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kDependency: return "dependency";
    case ErrorKind::kTrainingFailure: return "training-failure";
    case ErrorKind::kFormat: return "format";
  }
  return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_))
    fail(ErrorKind::kInvalidShape, "tensor data length " + std::to_string(data_.size()) +
                                       " does not match shape " + shape_string(shape_));
}

Tensor Tensor::checked(Shape shape, std::vector<double> data) {
  Tensor t(std::move(shape), std::move(data));
  if (!t.all_finite()) fail(ErrorKind::kDomain, "tensor contains non-finite entries");
  return t;
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

std::size_t Tensor::rows() const { return shape_.empty() ? 0 : shape_[0]; }

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 0;
  std::size_t c = 1;
  for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
  return c;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    fail(ErrorKind::kInvalidShape, "cannot reshape " + shape_string(shape_) + " to " +
                                       shape_string(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::squared_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

namespace {
void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(ErrorKind::kShape, std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
}
}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor operator*(double s, const Tensor& a) {
  Tensor out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) fail(ErrorKind::kInvalidShape, "concat_rows: no parts");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) fail(ErrorKind::kShape, "concat_rows: column mismatch");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  Shape shape = parts.front().shape();
  shape[0] = rows;
  return Tensor(std::move(shape), std::move(data));
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
  if (begin + count > t.rows()) fail(ErrorKind::kShape, "slice_rows: out of range");
  const std::size_t c = t.cols();
  Shape shape = t.shape();
  shape[0] = count;
  return Tensor(std::move(shape),
                std::vector<double>(t.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                                    t.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * c)));
}

}  // namespace chunkflow
