// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/data.hpp"

#include <algorithm>
#include <cmath>

#include "chunkflow/binary_io.hpp"
#include "chunkflow/error.hpp"

namespace chunkflow {

void BlobWorld::validate() const {
  if (grid < 2 || frames_per_chunk == 0 || chunks == 0) fail(ErrorKind::kConfig, "blob world extents must be positive");
  if (!(radius_min > 0.0 && radius_max >= radius_min)) fail(ErrorKind::kConfig, "blob radius range invalid");
  if (!(intensity_min >= 0.0 && intensity_max <= 1.0 && intensity_max >= intensity_min))
    fail(ErrorKind::kConfig, "blob intensity range must lie in [0, 1]");
  if (!(max_speed >= 0.0)) fail(ErrorKind::kConfig, "max_speed must be >= 0");
}

BlobCondition BlobCondition::from_tensor(const Tensor& c) {
  if (c.size() != kConditionDim) fail(ErrorKind::kShape, "blob condition needs 4 entries");
  return {c[0], c[1], c[2], c[3]};
}

BlobCondition sample_condition(const BlobWorld& w, RngStream& stream) {
  const auto u = stream.uniforms(4);
  return {w.max_speed * (2.0 * u[0] - 1.0), w.max_speed * (2.0 * u[1] - 1.0),
          w.radius_min + (w.radius_max - w.radius_min) * u[2],
          w.intensity_min + (w.intensity_max - w.intensity_min) * u[3]};
}

double reflect(double x, double extent) {
  const double L = extent - 1.0;
  const double period = 2.0 * L;
  double r = std::fmod(x, period);
  if (r < 0.0) r += period;
  return r > L ? period - r : r;
}

Tensor render_trajectory(const BlobWorld& world, const BlobCondition& cond, std::size_t chunks) {
  const double c = 0.5 * static_cast<double>(world.grid - 1);
  return render_trajectory(world, cond, chunks, c, c);
}

Tensor render_trajectory(const BlobWorld& world, const BlobCondition& cond, std::size_t chunks, double x0,
                         double y0) {
  world.validate();
  if (!(cond.radius > 0.0)) fail(ErrorKind::kDomain, "blob radius must be positive");
  const std::size_t frames = chunks * world.frames_per_chunk;
  const double g = static_cast<double>(world.grid);
  Tensor out(Shape{frames, world.frame_dim()}, 0.0);
  const double inv = 1.0 / (2.0 * cond.radius * cond.radius);
  for (std::size_t f = 0; f < frames; ++f) {
    const double cx = reflect(x0 + cond.vx * static_cast<double>(f), g);
    const double cy = reflect(y0 + cond.vy * static_cast<double>(f), g);
    for (std::size_t y = 0; y < world.grid; ++y)
      for (std::size_t x = 0; x < world.grid; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        const double v = cond.intensity * std::exp(-(dx * dx + dy * dy) * inv);
        out.at(f, y * world.grid + x) = std::clamp(v, 0.0, 1.0);
      }
  }
  return out;
}

Dataset gen_dataset(const BlobWorld& world, std::size_t train_count, std::size_t heldout_count,
                    std::uint64_t seed) {
  world.validate();
  if (train_count == 0) fail(ErrorKind::kConfig, "dataset needs at least one training example");
  Dataset d;
  d.world = world;
  RngStream train_stream(seed, 0xDA7A), held_stream(seed, 0xDA7B);
  auto make = [&](RngStream& s) {
    const BlobCondition c = sample_condition(world, s);
    return Example{c.tensor(), render_trajectory(world, c, world.chunks)};
  };
  for (std::size_t i = 0; i < train_count; ++i) d.train.push_back(make(train_stream));
  for (std::size_t i = 0; i < heldout_count; ++i) d.heldout.push_back(make(held_stream));
  return d;
}

double data_variance(const std::vector<Example>& examples) {
  if (examples.empty()) fail(ErrorKind::kDomain, "variance of an empty dataset");
  const std::size_t dim = examples.front().frames.cols();
  std::vector<double> mean(dim, 0.0);
  std::size_t n = 0;
  for (const Example& e : examples)
    for (std::size_t r = 0; r < e.frames.rows(); ++r, ++n)
      for (std::size_t d = 0; d < dim; ++d) mean[d] += e.frames.at(r, d);
  for (double& m : mean) m /= static_cast<double>(n);
  double var = 0.0;
  for (const Example& e : examples)
    for (std::size_t r = 0; r < e.frames.rows(); ++r)
      for (std::size_t d = 0; d < dim; ++d) {
        const double x = e.frames.at(r, d) - mean[d];
        var += x * x;
      }
  return var / static_cast<double>(n * dim);
}

namespace {
constexpr char kDatasetMagic[4] = {'C', 'F', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;

void write_examples(BinaryWriter& w, const std::vector<Example>& ex) {
  for (const Example& e : ex) {
    w.f64s(e.cond.data());
    w.f64s(e.frames.data());
  }
}

std::vector<Example> read_examples(BinaryReader& r, std::uint64_t count, std::size_t frames, std::size_t dim) {
  std::vector<Example> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Example e;
    e.cond = Tensor(Shape{kConditionDim}, r.f64s(kConditionDim));
    e.frames = Tensor(Shape{frames, dim}, r.f64s(frames * dim));
    out.push_back(std::move(e));
  }
  return out;
}
}  // namespace

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  BinaryWriter w(path);
  w.magic(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(data.world.grid));
  w.u32(static_cast<std::uint32_t>(data.world.frames_per_chunk));
  w.u32(static_cast<std::uint32_t>(data.world.chunks));
  w.u32(static_cast<std::uint32_t>(kConditionDim));
  for (double v : {data.world.max_speed, data.world.radius_min, data.world.radius_max, data.world.intensity_min,
                   data.world.intensity_max})
    w.f64(v);
  w.u64(data.train.size());
  w.u64(data.heldout.size());
  write_examples(w, data.train);
  write_examples(w, data.heldout);
  w.close();
}

Dataset read_dataset(const std::filesystem::path& path) {
  BinaryReader r(path);
  r.expect_magic(kDatasetMagic, "dataset");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion)
    fail(ErrorKind::kFormat, path.string() + ": unsupported dataset version " + std::to_string(version));
  Dataset d;
  d.world.grid = r.u32();
  d.world.frames_per_chunk = r.u32();
  d.world.chunks = r.u32();
  if (r.u32() != kConditionDim) fail(ErrorKind::kFormat, path.string() + ": condition width is not 4");
  d.world.max_speed = r.f64();
  d.world.radius_min = r.f64();
  d.world.radius_max = r.f64();
  d.world.intensity_min = r.f64();
  d.world.intensity_max = r.f64();
  d.world.validate();
  const std::uint64_t n_train = r.u64(), n_held = r.u64();
  const std::size_t frames = d.world.frames(), dim = d.world.frame_dim();
  d.train = read_examples(r, n_train, frames, dim);
  d.heldout = read_examples(r, n_held, frames, dim);
  r.expect_end();
  return d;
}

}  // namespace chunkflow
