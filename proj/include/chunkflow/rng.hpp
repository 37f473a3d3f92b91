// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>

#include "chunkflow/tensor.hpp"

namespace chunkflow {

// Counter-based stream (Philox4x32-10). A draw is a pure function of
// (seed, stream_id, call index, position within the call), so streams split
// for parallel rollouts never depend on scheduling order.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }
  std::uint64_t calls() const noexcept { return calls_; }

  // Independent child stream; does not advance this stream.
  RngStream split(std::uint64_t tag) const;

  double uniform();                                  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t uniform_index(std::uint64_t n);      // {0, ..., n-1}
  std::vector<double> normals(std::size_t count);
  std::vector<double> uniforms(std::size_t count);

 private:
  std::array<std::uint32_t, 4> block(std::uint64_t call, std::uint32_t index) const;

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t calls_ = 0;
};

// i.i.d. standard normal tensor; one call index per invocation.
Tensor gaussian_sample(RngStream& stream, const Shape& shape);

std::uint64_t mix64(std::uint64_t x);

}  // namespace chunkflow
