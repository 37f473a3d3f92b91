// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/error.hpp"
#include "chunkflow/kernels.hpp"
#include "chunkflow/model.hpp"

namespace chunkflow {

void ChunkSequence::validate() const {
  if (levels.size() != chunks) fail(ErrorKind::kShape, "chunk sequence: one level per chunk required");
  for (double n : levels) (void)NoiseLevel{n};
  if (data.rows() != chunks * tokens_per_chunk || data.cols() != dim)
    fail(ErrorKind::kShape, "chunk sequence: data extent mismatch");
}

Tensor RolloutRecord::endpoints() const {
  std::vector<Tensor> parts;
  for (const auto& c : chunks) parts.push_back(c.endpoint);
  return concat_rows(parts);
}

std::size_t RolloutRecord::stored_states() const {
  std::size_t n = 0;
  for (const auto& c : chunks) n += c.states.size();
  return n;
}

namespace {

Tensor predict_endpoint(const BoundModel& model, const Tensor& z, double level, const Tensor& cond,
                        const HistoryCache& cache, std::size_t chunk, const std::vector<Tensor>* prefix) {
  Tape& tape = *model.tape;
  const std::size_t tpc = model.model->config().tokens_per_chunk;
  if (prefix != nullptr) {
    // Full-prefix recomputation: clean history blocks followed by the noisy block.
    SequenceLayout layout;
    std::vector<Tensor> rows;
    for (std::size_t t = 0; t < chunk; ++t) {
      layout.push({t, BlockKind::kClean, tpc, 0.0});
      rows.push_back(prefix->at(t));
    }
    layout.push({chunk, BlockKind::kNoisy, tpc, level});
    rows.push_back(z);
    const AttentionMask mask = build_mask(MaskParadigm::kSelfForcing, layout);
    const ForwardResult r = forward(model, layout, tape.constant(concat_rows(rows)), cond, mask);
    return slice_rows(r.output.value(), chunk * tpc, tpc);
  }
  if (cache.num_chunks() != chunk)
    fail(ErrorKind::kLayout, "cache covers " + std::to_string(cache.num_chunks()) + " chunks, expected " +
                                 std::to_string(chunk));
  SequenceLayout layout;
  layout.push({chunk, BlockKind::kNoisy, tpc, level});
  const AttentionMask mask = build_mask(MaskParadigm::kSelfForcing, cache.layout().concat(layout));
  return forward(model, layout, tape.constant(z), cond, mask, &cache).output.value();
}

}  // namespace

void extend_cache(const BoundModel& model, HistoryCache& cache, const Tensor& clean_chunk, std::size_t chunk,
                  const Tensor& cond) {
  const std::size_t tpc = model.model->config().tokens_per_chunk;
  SequenceLayout layout;
  layout.push({chunk, BlockKind::kClean, tpc, 0.0});
  const AttentionMask mask = build_mask(MaskParadigm::kSelfForcing, cache.layout().concat(layout));
  const ForwardResult r = forward(model, layout, model.tape->constant(clean_chunk), cond, mask, &cache);
  cache.append(layout, r.keys, r.values);
}

ChunkTrajectory rollout_chunk(const BoundModel& model, const NoiseSchedule& sched, const TimestepGrid& grid,
                              const Tensor& cond, const HistoryCache& cache, std::size_t chunk,
                              RngStream& stream, const RolloutOptions& options,
                              const std::vector<Tensor>* prefix) {
  const ModelConfig& c = model.model->config();
  const std::size_t steps = grid.size();
  if (options.kernel == SamplerKernel::kEulerMaruyama && !(options.em_sigma > 0.0))
    fail(ErrorKind::kDiracKernel, "Euler-Maruyama rollout needs sigma > 0");
  ChunkTrajectory traj;
  Tensor z = gaussian_sample(stream, Shape{c.tokens_per_chunk, c.token_dim});
  traj.states.push_back(z);
  for (std::size_t k = 1; k < steps; ++k) {
    const Tensor x_hat = predict_endpoint(model, z, grid.tau(k), cond, cache, chunk, prefix);
    if (options.kernel == SamplerKernel::kConsistency)
      z = consistency_sample(sched, x_hat, grid.tau(k + 1), stream);
    else
      z = em_reverse_step(z, x_hat, grid.tau(k), grid.tau(k + 1), options.em_sigma, stream);
    traj.states.push_back(z);
  }
  traj.endpoint = options.skip_final_call ? z : predict_endpoint(model, z, grid.tau(steps), cond, cache, chunk, prefix);
  return traj;
}

RolloutRecord autoregressive_rollout(const DenoiserModel& model, const NoiseSchedule& sched, std::size_t chunks,
                                     const TimestepGrid& grid, const Tensor& cond, RngStream& stream,
                                     const RolloutOptions& options) {
  if (chunks == 0) fail(ErrorKind::kConfig, "rollout needs at least one chunk");
  if (options.forced_history && options.forced_history->size() + 1 < chunks)
    fail(ErrorKind::kConfig, "forced history shorter than the rollout");
  Tape tape(false);
  const BoundModel bm = bind(tape, model, false);
  HistoryCache cache(options.detach_history);
  std::vector<Tensor> prefix;
  RolloutRecord record;
  record.grid = grid.levels();
  record.cond = cond;
  for (std::size_t t = 0; t < chunks; ++t) {
    ChunkTrajectory traj =
        rollout_chunk(bm, sched, grid, cond, cache, t, stream, options, options.recompute_prefix ? &prefix : nullptr);
    const bool forced = options.forced_history && t < options.forced_history->size();
    const Tensor history = forced ? options.forced_history->at(t) : traj.endpoint;
    if (!options.recompute_prefix && t + 1 < chunks) extend_cache(bm, cache, history, t, cond);
    prefix.push_back(history);
    record.chunks.push_back(std::move(traj));
  }
  return record;
}

}  // namespace chunkflow
