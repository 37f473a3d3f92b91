// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/distill.hpp"

#include <chrono>
#include <cmath>

#include "chunkflow/error.hpp"

namespace chunkflow {

Paradigm parse_paradigm(const std::string& name) {
  if (name == "tf") return Paradigm::kTeacherForcing;
  if (name == "df") return Paradigm::kDiffusionForcing;
  if (name == "sf") return Paradigm::kSelfForcing;
  if (name == "df-self-rollout") return Paradigm::kDfSelfRollout;
  if (name == "raven") return Paradigm::kRaven;
  fail(ErrorKind::kConfig, "unknown paradigm '" + name + "' (tf, df, sf, df-self-rollout, raven)");
}

std::string paradigm_name(Paradigm p) {
  switch (p) {
    case Paradigm::kTeacherForcing: return "tf";
    case Paradigm::kDiffusionForcing: return "df";
    case Paradigm::kSelfForcing: return "sf";
    case Paradigm::kDfSelfRollout: return "df-self-rollout";
    case Paradigm::kRaven: return "raven";
  }
  return "unknown";
}

const std::vector<Paradigm>& all_paradigms() {
  static const std::vector<Paradigm> all = {Paradigm::kTeacherForcing, Paradigm::kDiffusionForcing,
                                            Paradigm::kSelfForcing, Paradigm::kDfSelfRollout, Paradigm::kRaven};
  return all;
}

void DistillConfig::validate() const {
  if (ttur_ratio < 1) fail(ErrorKind::kConfig, "distill.ttur_ratio must be >= 1");
  if (!(generator_opt.lr > 0.0) || !(critic_opt.lr > 0.0)) fail(ErrorKind::kConfig, "learning rates must be > 0");
  if (grid_steps < 2) fail(ErrorKind::kConfig, "distill.grid_steps must be >= 2");
  if (chunks < 1 || batch < 1) fail(ErrorKind::kConfig, "distill.chunks and distill.batch must be >= 1");
}

std::vector<Tensor> split_chunks(const Tensor& frames, std::size_t tokens_per_chunk) {
  if (frames.rows() % tokens_per_chunk != 0) fail(ErrorKind::kShape, "frames are not a whole number of chunks");
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < frames.rows() / tokens_per_chunk; ++t)
    out.push_back(slice_rows(frames, t * tokens_per_chunk, tokens_per_chunk));
  return out;
}

DmdBatch make_dmd_batch(Var x_theta, Tensor x_teacher, Tensor x_critic) {
  const Tensor& x = x_theta.value();
  if (x.shape() != x_teacher.shape() || x.shape() != x_critic.shape())
    fail(ErrorKind::kShape, "DMD endpoints differ in shape");
  double mean_abs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mean_abs += std::abs(x[i] - x_teacher[i]);
  mean_abs /= static_cast<double>(x.size());
  return {x_theta, std::move(x_teacher), std::move(x_critic), std::max(mean_abs, kDmdNormalizerFloor)};
}

std::vector<Var> dmd_loss(const DmdBatch& b, std::size_t tokens_per_chunk) {
  Tape& tape = *b.x_theta.tape();
  const Tensor& x = b.x_theta.value();
  Tensor target = x;
  for (std::size_t i = 0; i < x.size(); ++i) target[i] += (b.x_teacher[i] - b.x_critic[i]) / b.normalizer;
  const Var diff = ad::sub(b.x_theta, tape.constant(std::move(target)));
  if (x.rows() % tokens_per_chunk != 0) fail(ErrorKind::kShape, "DMD rows are not whole chunks");
  std::vector<Var> per_chunk;
  for (std::size_t t = 0; t < x.rows() / tokens_per_chunk; ++t) {
    std::vector<std::size_t> rows(tokens_per_chunk);
    for (std::size_t i = 0; i < tokens_per_chunk; ++i) rows[i] = t * tokens_per_chunk + i;
    per_chunk.push_back(ad::sum_squares(ad::gather_rows(diff, rows)));
  }
  return per_chunk;
}

Var critic_loss(const BoundModel& critic, const NoiseSchedule& sched, const Tensor& endpoints, const Tensor& cond,
                double n, const Tensor& eps) {
  const std::size_t tpc = critic.model->config().tokens_per_chunk;
  Tape& tape = *critic.tape;
  const Tensor z = perturb_with(sched, endpoints, n, eps);
  const SequenceLayout layout = noisy_sequence_layout(endpoints.rows() / tpc, tpc, n);
  const ForwardResult r =
      forward(critic, layout, tape.constant(z), cond, bidirectional_mask(layout.num_tokens()));
  const Var diff = ad::sub(r.output, tape.constant(endpoints));
  return ad::scale(ad::sum_squares(diff), 1.0 / static_cast<double>(endpoints.size()));
}

namespace {

double sample_level(const TimestepGrid& grid, RngStream& stream) {
  return grid.tau(1 + stream.uniform_index(grid.size() - 1));
}

GeneratorInput interleaved_input(const RolloutRecord& rollout, double u, MaskParadigm mask, bool detach) {
  InterleavedSequence seq = build_interleaved(rollout, u);
  GeneratorInput in;
  in.layout = std::move(seq.layout);
  in.tokens = std::move(seq.tokens);
  in.mask = build_mask(mask, in.layout);
  in.options.detach_clean_history = detach;
  in.u = u;
  return in;
}

GeneratorInput df_input(const std::vector<Tensor>& chunks, double u, const NoiseSchedule& sched,
                        const TimestepGrid& grid, RngStream& stream) {
  GeneratorInput in;
  std::vector<Tensor> rows;
  for (std::size_t t = 0; t < chunks.size(); ++t) {
    const double n = sample_level(grid, stream);
    in.layout.push({t, BlockKind::kNoisy, chunks[t].rows(), n});
    rows.push_back(perturb(sched, chunks[t], n, stream).z);
  }
  in.tokens = concat_rows(rows);
  in.mask = build_mask(MaskParadigm::kDiffusionForcing, in.layout);
  in.u = u;
  return in;
}

}  // namespace

GeneratorInput generator_input(Paradigm paradigm, const RolloutRecord* rollout,
                               const std::vector<Tensor>* ground_truth, const NoiseSchedule& sched,
                               const TimestepGrid& grid, RngStream& stream) {
  const double u = sample_level(grid, stream);
  const bool needs_rollout = paradigm != Paradigm::kDiffusionForcing;
  const bool needs_truth = paradigm == Paradigm::kTeacherForcing || paradigm == Paradigm::kDiffusionForcing;
  if (needs_rollout && rollout == nullptr) fail(ErrorKind::kConfig, paradigm_name(paradigm) + " needs a rollout");
  if (needs_truth && ground_truth == nullptr)
    fail(ErrorKind::kConfig, paradigm_name(paradigm) + " needs ground-truth chunks");
  switch (paradigm) {
    case Paradigm::kRaven: return interleaved_input(*rollout, u, MaskParadigm::kInterleaved, false);
    case Paradigm::kSelfForcing: return interleaved_input(*rollout, u, MaskParadigm::kSelfForcing, true);
    case Paradigm::kTeacherForcing: {
      GeneratorInput in = interleaved_input(*rollout, u, MaskParadigm::kTeacherForcing, false);
      for (std::size_t b = 0; b < in.layout.num_blocks(); ++b) {
        const Block& blk = in.layout.blocks()[b];
        if (blk.kind != BlockKind::kClean) continue;
        const Tensor& gt = ground_truth->at(blk.chunk);
        const std::size_t first = in.layout.first_token(b);
        for (std::size_t r = 0; r < blk.num_tokens; ++r)
          for (std::size_t d = 0; d < gt.cols(); ++d) in.tokens.at(first + r, d) = gt.at(r, d);
      }
      return in;
    }
    case Paradigm::kDiffusionForcing: return df_input(*ground_truth, u, sched, grid, stream);
    case Paradigm::kDfSelfRollout: {
      std::vector<Tensor> ends;
      for (const auto& c : rollout->chunks) ends.push_back(c.endpoint);
      return df_input(ends, u, sched, grid, stream);
    }
  }
  fail(ErrorKind::kConfig, "unhandled paradigm");
}

Var noisy_outputs(const ForwardResult& result, const SequenceLayout& layout) {
  const auto rows = layout.token_rows(BlockKind::kNoisy);
  return ad::gather_rows(result.output, rows);
}

GeneratorLoss generator_loss(const BoundModel& student, const DenoiserModel& teacher, const DenoiserModel& critic,
                             const GeneratorInput& input, const Tensor& cond, const ChunkWeights& weights,
                             const NoiseSchedule& sched, RngStream& stream) {
  Tape& tape = *student.tape;
  const std::size_t tpc = student.model->config().tokens_per_chunk;
  const ForwardResult r = forward(student, input.layout, tape.constant(input.tokens), cond, input.mask, nullptr,
                                  input.options);
  const Var x_theta = noisy_outputs(r, input.layout);
  GeneratorLoss out;
  out.s = stream.uniform(0.0, input.u);
  const Tensor eps = gaussian_sample(stream, x_theta.shape());
  const Tensor z_s = perturb_with(sched, x_theta.value(), out.s, eps);
  const DmdBatch batch =
      make_dmd_batch(x_theta, denoise_sequence(teacher, z_s, out.s, cond), denoise_sequence(critic, z_s, out.s, cond));
  out.chunk_losses = dmd_loss(batch, tpc);
  out.loss = aggregate_chunk_loss(out.chunk_losses, weights.w, weights.m);
  return out;
}

DistillState train_distill(const DistillConfig& cfg, DenoiserModel student, DenoiserModel critic,
                           const DenoiserModel* teacher, const Dataset& data, const DistillCallback& on_record) {
  cfg.validate();
  if (teacher == nullptr) fail(ErrorKind::kConfig, "distillation needs a teacher checkpoint");
  if (!student.causal()) fail(ErrorKind::kConfig, "distillation student must have the student role");
  if (critic.causal() || teacher->causal()) fail(ErrorKind::kConfig, "critic and teacher must be bidirectional");
  if (data.train.empty()) fail(ErrorKind::kConfig, "distillation needs training examples");
  const std::size_t tpc = student.config().tokens_per_chunk;
  if (data.world.frames_per_chunk != tpc || data.world.frame_dim() != student.config().token_dim)
    fail(ErrorKind::kConfig, "dataset frame layout does not match the model");
  if (data.world.chunks < cfg.chunks && (cfg.paradigm == Paradigm::kTeacherForcing ||
                                         cfg.paradigm == Paradigm::kDiffusionForcing))
    fail(ErrorKind::kConfig, "dataset sequences are shorter than distill.chunks");

  const NoiseSchedule sched(cfg.schedule);
  const TimestepGrid grid = default_grid(cfg.grid_steps);
  const std::vector<std::size_t> m(cfg.chunks, tpc * student.config().token_dim);
  const ChunkWeights weights = chunk_weights(cfg.weighting, m);
  Optimizer gen_opt(cfg.generator_opt, student);
  Optimizer critic_opt(cfg.critic_opt, critic);
  const RngStream root(cfg.seed, 0xD157);

  struct Sample {
    Tensor cond;
    std::vector<Tensor> truth;
    std::optional<RolloutRecord> rollout;
    GeneratorInput input;
    Tensor critic_samples;
    RngStream stream;
  };

  DistillState state{std::move(student), std::move(critic)};
  for (std::size_t i = 1; i <= cfg.iterations; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    RngStream it = root.split(i);
    std::vector<Sample> samples;
    // Stage 1: self rollout (or data) for every sample; no gradients.
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const Example& ex = data.train[it.uniform_index(data.train.size())];
      Sample s{ex.cond, {}, std::nullopt, {}, {}, it.split(b + 1)};
      s.truth = split_chunks(slice_rows(ex.frames, 0, std::min(cfg.chunks, data.world.chunks) * tpc), tpc);
      if (cfg.paradigm != Paradigm::kDiffusionForcing) {
        RolloutOptions ro;
        ro.detach_history = true;
        ro.skip_final_call = cfg.skip_final_call;
        if (cfg.paradigm == Paradigm::kTeacherForcing) ro.forced_history = &s.truth;
        s.rollout = autoregressive_rollout(state.student, sched, cfg.chunks, grid, s.cond, s.stream, ro);
        s.rollout->id = i * cfg.batch + b;
      }
      s.input = generator_input(cfg.paradigm, s.rollout ? &*s.rollout : nullptr, &s.truth, sched, grid, s.stream);
      if (cfg.paradigm == Paradigm::kDiffusionForcing) {
        Tape tape(false);
        const BoundModel bm = bind(tape, state.student, false);
        const ForwardResult r = forward(bm, s.input.layout, tape.constant(s.input.tokens), s.cond, s.input.mask);
        s.critic_samples = noisy_outputs(r, s.input.layout).value();
      } else {
        s.critic_samples = s.rollout->endpoints();
      }
      samples.push_back(std::move(s));
    }

    // Stage 2: fake-score critic regression on the generator's samples.
    DistillRecord rec;
    rec.iteration = i;
    {
      Tape tape;
      const BoundModel bm = bind(tape, state.critic, true);
      std::vector<Var> losses;
      for (Sample& s : samples) {
        const double n = s.stream.uniform();
        const Tensor eps = gaussian_sample(s.stream, s.critic_samples.shape());
        losses.push_back(critic_loss(bm, sched, s.critic_samples, s.cond, n, eps));
      }
      const std::vector<double> avg(losses.size(), 1.0 / static_cast<double>(losses.size()));
      const Var total = ad::weighted_sum(losses, avg);
      rec.critic_loss = total.value()[0];
      if (!std::isfinite(rec.critic_loss)) fail(ErrorKind::kTrainingFailure, "critic loss is not finite");
      tape.backward(total);
      critic_opt.step(state.critic, parameter_grads(bm));
    }

    // Stage 3: generator step, gated by the TTUR ratio.
    if (i % cfg.ttur_ratio == 0) {
      Tape tape;
      const BoundModel bm = bind(tape, state.student, true);
      std::vector<Var> losses;
      for (Sample& s : samples)
        losses.push_back(
            generator_loss(bm, *teacher, state.critic, s.input, s.cond, weights, sched, s.stream).loss);
      const std::vector<double> avg(losses.size(), 1.0 / static_cast<double>(losses.size()));
      const Var total = ad::weighted_sum(losses, avg);
      rec.generator_loss = total.value()[0];
      if (!std::isfinite(*rec.generator_loss)) fail(ErrorKind::kTrainingFailure, "generator loss is not finite");
      tape.backward(total);
      rec.generator_grad_norm = gen_opt.step(state.student, parameter_grads(bm));
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (on_record) on_record(rec, state);
  }
  return state;
}

}  // namespace chunkflow
