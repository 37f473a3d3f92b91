// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/pretrain.hpp"

#include <chrono>
#include <cmath>

#include "chunkflow/error.hpp"

namespace chunkflow {

namespace {

Var endpoint_loss(const BoundModel& bm, const NoiseSchedule& sched, const Example& ex, double n, const Tensor& eps) {
  Tape& tape = *bm.tape;
  const std::size_t tpc = bm.model->config().tokens_per_chunk;
  const Tensor z = perturb_with(sched, ex.frames, n, eps);
  const SequenceLayout layout = noisy_sequence_layout(ex.frames.rows() / tpc, tpc, n);
  const ForwardResult r = forward(bm, layout, tape.constant(z), ex.cond, bidirectional_mask(layout.num_tokens()));
  return ad::scale(ad::sum_squares(ad::sub(r.output, tape.constant(ex.frames))),
                   1.0 / static_cast<double>(ex.frames.size()));
}

}  // namespace

double heldout_endpoint_mse(const DenoiserModel& model, const std::vector<Example>& examples, std::size_t count,
                            double n, ScheduleFamily schedule, std::uint64_t seed) {
  if (examples.empty()) fail(ErrorKind::kConfig, "held-out set is empty");
  const NoiseSchedule sched(schedule);
  RngStream stream(seed, 0xE7A1);
  const std::size_t k = std::min(count, examples.size());
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const Example& ex = examples[i];
    const double level = n < 0.0 ? stream.uniform() : n;
    const Tensor eps = gaussian_sample(stream, ex.frames.shape());
    const Tensor pred = denoise_sequence(model, perturb_with(sched, ex.frames, level, eps), level, ex.cond);
    total += (pred - ex.frames).squared_norm() / static_cast<double>(ex.frames.size());
  }
  return total / static_cast<double>(k);
}

PretrainResult pretrain_teacher(const PretrainConfig& cfg, const ModelConfig& mc, const Dataset& data,
                                const std::function<void(const PretrainRecord&)>& on_record) {
  if (data.train.empty() || data.heldout.empty()) fail(ErrorKind::kConfig, "pretraining needs train and held-out data");
  if (cfg.batch == 0 || cfg.eval_every == 0) fail(ErrorKind::kConfig, "pretrain batch and eval_every must be > 0");
  if (data.world.frame_dim() != mc.token_dim || data.world.frames_per_chunk != mc.tokens_per_chunk)
    fail(ErrorKind::kConfig, "dataset frame layout does not match the model config");
  const NoiseSchedule sched(cfg.schedule);
  PretrainResult result{DenoiserModel(mc, ModelRole::kTeacher, cfg.seed), 0.0, 0.0, data_variance(data.train), 0};
  DenoiserModel& model = result.teacher;
  Optimizer opt(cfg.opt, model);
  const RngStream root(cfg.seed, 0x7EAC);

  double initial = -1.0;
  std::size_t above = 0;
  double best = INFINITY;
  std::size_t stale = 0;
  for (std::size_t i = 1; i <= cfg.iterations; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    RngStream it = root.split(i);
    Tape tape;
    const BoundModel bm = bind(tape, model, true);
    std::vector<Var> losses;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const Example& ex = data.train[it.uniform_index(data.train.size())];
      const double n = it.uniform();
      losses.push_back(endpoint_loss(bm, sched, ex, n, gaussian_sample(it, ex.frames.shape())));
    }
    const std::vector<double> avg(losses.size(), 1.0 / static_cast<double>(losses.size()));
    const Var total = ad::weighted_sum(losses, avg);
    PretrainRecord rec;
    rec.iteration = i;
    rec.loss = total.value()[0];
    if (!std::isfinite(rec.loss)) fail(ErrorKind::kTrainingFailure, "teacher loss is not finite");
    if (initial < 0.0) initial = rec.loss;
    above = rec.loss > 10.0 * initial ? above + 1 : 0;
    if (above >= 100) fail(ErrorKind::kTrainingFailure, "teacher pretraining diverged");
    tape.backward(total);
    opt.step(model, parameter_grads(bm));
    result.iterations = i;
    bool stop = false;
    if (i % cfg.eval_every == 0 || i == cfg.iterations) {
      const double mse = heldout_endpoint_mse(model, data.heldout, cfg.eval_examples, -1.0, cfg.schedule, cfg.seed);
      rec.heldout_mse = mse;
      if (mse < 0.99 * best) {
        best = mse;
        stale = 0;
      } else if (++stale >= cfg.patience) {
        stop = true;
      }
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (on_record) on_record(rec);
    if (stop) break;
  }
  result.heldout_mse = heldout_endpoint_mse(model, data.heldout, cfg.eval_examples, -1.0, cfg.schedule, cfg.seed);
  result.heldout_mse_clean = heldout_endpoint_mse(model, data.heldout, cfg.eval_examples, 0.0, cfg.schedule, cfg.seed);
  return result;
}

}  // namespace chunkflow
