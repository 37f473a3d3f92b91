// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/rng.hpp"

#include <cmath>
#include <numbers>

#include "chunkflow/error.hpp"

namespace chunkflow {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                           std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32 | lo) >> 11;
  return static_cast<double>(bits) * 0x1.0p-53;
}

}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

RngStream RngStream::split(std::uint64_t tag) const {
  return RngStream(seed_, mix64(stream_id_ ^ mix64(tag + 0x5851F42D4C957F2Dull)));
}

std::array<std::uint32_t, 4> RngStream::block(std::uint64_t call, std::uint32_t index) const {
  // counter = (index, call, stream_id); key = seed
  const std::uint64_t call_mixed = call;
  return philox4x32_10({index, static_cast<std::uint32_t>(call_mixed),
                        static_cast<std::uint32_t>(stream_id_),
                        static_cast<std::uint32_t>(stream_id_ >> 32) ^
                            static_cast<std::uint32_t>(call_mixed >> 32)},
                       {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
}

double RngStream::uniform() {
  const auto b = block(calls_++, 0);
  return to_unit(b[0], b[1]);
}

std::uint64_t RngStream::uniform_index(std::uint64_t n) {
  if (n == 0) fail(ErrorKind::kDomain, "uniform_index over an empty range");
  auto idx = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  return idx < n ? idx : n - 1;
}

std::vector<double> RngStream::uniforms(std::size_t count) {
  std::vector<double> out(count);
  const std::uint64_t call = calls_++;
  for (std::size_t i = 0; i < count; i += 2) {
    const auto b = block(call, static_cast<std::uint32_t>(i / 2));
    out[i] = to_unit(b[0], b[1]);
    if (i + 1 < count) out[i + 1] = to_unit(b[2], b[3]);
  }
  return out;
}

std::vector<double> RngStream::normals(std::size_t count) {
  std::vector<double> out(count);
  const std::uint64_t call = calls_++;
  for (std::size_t i = 0; i < count; i += 2) {
    const auto b = block(call, static_cast<std::uint32_t>(i / 2));
    // Box-Muller; 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - to_unit(b[0], b[1]);
    const double u2 = to_unit(b[2], b[3]);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    out[i] = r * std::cos(theta);
    if (i + 1 < count) out[i + 1] = r * std::sin(theta);
  }
  return out;
}

Tensor gaussian_sample(RngStream& stream, const Shape& shape) {
  if (shape.empty()) fail(ErrorKind::kInvalidShape, "gaussian_sample: empty shape");
  for (std::size_t e : shape)
    if (e == 0) fail(ErrorKind::kInvalidShape, "gaussian_sample: zero extent in " + shape_string(shape));
  return Tensor(shape, stream.normals(shape_numel(shape)));
}

}  // namespace chunkflow
