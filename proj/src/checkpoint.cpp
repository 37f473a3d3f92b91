// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/checkpoint.hpp"

#include "chunkflow/binary_io.hpp"
#include "chunkflow/error.hpp"

namespace chunkflow {

namespace {
constexpr char kMagic[4] = {'C', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const DenoiserModel& model, const std::filesystem::path& path) {
  const ModelConfig& c = model.config();
  BinaryWriter w(path);
  w.magic(kMagic);
  w.u32(kVersion);
  w.str(role_name(model.role()));
  for (std::size_t v : {c.token_dim, c.tokens_per_chunk, c.cond_dim, c.width, c.blocks, c.heads, c.mlp_hidden,
                        c.level_features})
    w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(c.head_slopes.size()));
  w.f64s(c.head_slopes);
  w.u32(static_cast<std::uint32_t>(model.parameters().size()));
  for (const NamedTensor& p : model.parameters()) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t e : p.value.shape()) w.u64(e);
    w.f64s(p.value.data());
  }
  w.close();
}

DenoiserModel load_checkpoint(const std::filesystem::path& path) {
  BinaryReader r(path);
  r.expect_magic(kMagic, "checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    fail(ErrorKind::kFormat, path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const ModelRole role = parse_role(r.str());
  ModelConfig c;
  c.token_dim = r.u32();
  c.tokens_per_chunk = r.u32();
  c.cond_dim = r.u32();
  c.width = r.u32();
  c.blocks = r.u32();
  c.heads = r.u32();
  c.mlp_hidden = r.u32();
  c.level_features = r.u32();
  const std::uint32_t slopes = r.u32();
  if (slopes > 1024) fail(ErrorKind::kFormat, path.string() + ": implausible head count");
  c.head_slopes = r.f64s(slopes);
  const std::uint32_t count = r.u32();
  if (count > 100000) fail(ErrorKind::kFormat, path.string() + ": implausible parameter count");
  std::vector<NamedTensor> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor p;
    p.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) fail(ErrorKind::kFormat, path.string() + ": bad rank for '" + p.name + "'");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.u64());
    const std::size_t n = shape_numel(shape);
    if (n > (std::size_t{1} << 28)) fail(ErrorKind::kFormat, path.string() + ": tensor too large");
    p.value = Tensor::checked(shape, r.f64s(n));
    params.push_back(std::move(p));
  }
  r.expect_end();
  return DenoiserModel(c, role, std::move(params));
}

}  // namespace chunkflow
