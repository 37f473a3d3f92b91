// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/rl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>

#include "chunkflow/distill.hpp"
#include "chunkflow/error.hpp"
#include "chunkflow/kernels.hpp"

namespace chunkflow {

// ---------------------------------------------------------------------------
// Rewards

const std::vector<std::string>& reward_names() {
  static const std::vector<std::string> names = {"TA", "DD", "MS", "AQ", "IQ"};
  return names;
}

void RewardSpec::validate() const {
  if (terms.empty()) fail(ErrorKind::kConfig, "reward spec has no dimensions");
  std::set<std::string> seen;
  for (const RewardTerm& t : terms) {
    const auto& known = reward_names();
    if (std::find(known.begin(), known.end(), t.name) == known.end())
      fail(ErrorKind::kConfig, "unknown reward dimension '" + t.name + "' (TA, DD, MS, AQ, IQ)");
    if (!seen.insert(t.name).second) fail(ErrorKind::kConfig, "reward dimension '" + t.name + "' repeats");
    if (!std::isfinite(t.weight)) fail(ErrorKind::kConfig, "reward weight for " + t.name + " is not finite");
  }
  if (!(abs_weight_sum() > 0.0)) fail(ErrorKind::kConfig, "reward weights must not all be zero");
}

double RewardSpec::abs_weight_sum() const {
  double s = 0.0;
  for (const RewardTerm& t : terms) s += std::abs(t.weight);
  return s;
}

namespace {

double target_alignment(const Tensor& frames, const Tensor& cond, const BlobWorld& world) {
  if (frames.rows() % world.frames_per_chunk != 0 || frames.cols() != world.frame_dim())
    fail(ErrorKind::kShape, "frames do not match the blob world layout");
  const Tensor gt = render_trajectory(world, BlobCondition::from_tensor(cond), frames.rows() / world.frames_per_chunk);
  double s = 0.0;
  for (std::size_t i = 0; i < frames.size(); ++i) s += (frames[i] - gt[i]) * (frames[i] - gt[i]);
  return -s / static_cast<double>(frames.size());
}

double dynamic_degree(const Tensor& frames) {
  if (frames.rows() < 2) return 0.0;
  std::vector<double> d;
  d.reserve((frames.rows() - 1) * frames.cols());
  for (std::size_t f = 0; f + 1 < frames.rows(); ++f)
    for (std::size_t p = 0; p < frames.cols(); ++p) d.push_back(std::abs(frames.at(f + 1, p) - frames.at(f, p)));
  const std::size_t top = std::max<std::size_t>(1, (d.size() + 19) / 20);
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(top), d.end(), std::greater<>());
  return std::accumulate(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(top), 0.0) / static_cast<double>(top);
}

double motion_smoothness(const Tensor& frames) {
  if (frames.rows() < 3) return 0.0;
  double s = 0.0;
  for (std::size_t f = 0; f + 2 < frames.rows(); ++f)
    for (std::size_t p = 0; p < frames.cols(); ++p) {
      const double a = frames.at(f + 2, p) - 2.0 * frames.at(f + 1, p) + frames.at(f, p);
      s += a * a;
    }
  return -s / static_cast<double>((frames.rows() - 2) * frames.cols());
}

double range_quality(const Tensor& frames) {
  double s = 0.0;
  for (double x : frames.data()) s += std::max(0.0, -x) + std::max(0.0, x - 1.0);
  return -s / static_cast<double>(frames.size());
}

// Squared 4-neighbour Laplacian with replicated borders.
double noise_quality(const Tensor& frames, std::size_t grid) {
  if (grid * grid != frames.cols()) fail(ErrorKind::kShape, "frames are not square images");
  double s = 0.0;
  for (std::size_t f = 0; f < frames.rows(); ++f)
    for (std::size_t r = 0; r < grid; ++r)
      for (std::size_t c = 0; c < grid; ++c) {
        auto px = [&](std::size_t rr, std::size_t cc) { return frames.at(f, rr * grid + cc); };
        const double x = px(r, c);
        const double lap = px(r > 0 ? r - 1 : r, c) + px(r + 1 < grid ? r + 1 : r, c) + px(r, c > 0 ? c - 1 : c) +
                           px(r, c + 1 < grid ? c + 1 : c) - 4.0 * x;
        s += lap * lap;
      }
  return -s / static_cast<double>(frames.size());
}

}  // namespace

double reward_value(const std::string& name, const Tensor& frames, const Tensor& cond, const BlobWorld& world) {
  double v;
  if (name == "TA") v = target_alignment(frames, cond, world);
  else if (name == "DD") v = dynamic_degree(frames);
  else if (name == "MS") v = motion_smoothness(frames);
  else if (name == "AQ") v = range_quality(frames);
  else if (name == "IQ") v = noise_quality(frames, world.grid);
  else fail(ErrorKind::kConfig, "unknown reward dimension '" + name + "'");
  if (!std::isfinite(v)) fail(ErrorKind::kRewardEvaluation, "reward " + name + " is not finite");
  return v;
}

std::vector<std::vector<double>> evaluate_rewards(const RewardSpec& spec, const std::vector<Tensor>& frames,
                                                  const Tensor& cond, const BlobWorld& world) {
  std::vector<std::vector<double>> raw;
  raw.reserve(frames.size());
  for (const Tensor& f : frames) {
    std::vector<double> row;
    for (const RewardTerm& t : spec.terms) row.push_back(reward_value(t.name, f, cond, world));
    raw.push_back(std::move(row));
  }
  return raw;
}

double raw_composite(const RewardSpec& spec, const Tensor& frames, const Tensor& cond, const BlobWorld& world) {
  double s = 0.0;
  for (const RewardTerm& t : spec.terms) s += t.weight * reward_value(t.name, frames, cond, world);
  return s / spec.abs_weight_sum();
}

// ---------------------------------------------------------------------------
// Group statistics

std::vector<double> group_normalize(const std::vector<double>& values, double eps) {
  if (values.size() < 2) fail(ErrorKind::kConfig, "group statistics need at least two rollouts");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double denom = std::sqrt(var / n) + eps;
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mean) / denom;
  return out;
}

std::vector<double> normalize_and_compose(const std::vector<std::vector<double>>& raw, const RewardSpec& spec,
                                          double eps) {
  if (raw.size() < 2) fail(ErrorKind::kConfig, "group statistics need at least two rollouts");
  const std::size_t M = spec.terms.size();
  std::vector<double> composite(raw.size(), 0.0);
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<double> column;
    for (const auto& row : raw) {
      if (row.size() != M) fail(ErrorKind::kShape, "reward row length differs from the reward spec");
      column.push_back(row[m]);
    }
    const std::vector<double> norm = group_normalize(column, eps);
    for (std::size_t i = 0; i < raw.size(); ++i) composite[i] += spec.terms[m].weight * norm[i];
  }
  const double z = spec.abs_weight_sum();
  for (double& c : composite) c /= z;
  return composite;
}

std::vector<double> advantages_unclipped(const std::vector<double>& composite, double eps) {
  return group_normalize(composite, eps);
}

std::vector<double> advantages(const std::vector<double>& composite, double eps, double a_max) {
  std::vector<double> a = advantages_unclipped(composite, eps);
  for (double& v : a) v = std::clamp(v, -a_max, a_max);
  return a;
}

RewardGroup score_group(const RewardSpec& spec, const std::vector<std::vector<double>>& raw, double eps,
                        double a_max) {
  RewardGroup g;
  g.raw = raw;
  g.composite = normalize_and_compose(raw, spec, eps);
  g.unclipped = advantages_unclipped(g.composite, eps);
  g.advantages = g.unclipped;
  std::size_t clipped = 0;
  for (double& v : g.advantages) {
    if (std::abs(v) > a_max) ++clipped;
    v = std::clamp(v, -a_max, a_max);
  }
  g.clip_fraction = static_cast<double>(clipped) / static_cast<double>(raw.size());
  return g;
}

// ---------------------------------------------------------------------------
// Losses

namespace {

std::vector<Var> per_chunk_sum_squares(Var diff, std::size_t tokens_per_chunk) {
  const std::size_t rows = diff.value().rows();
  if (tokens_per_chunk == 0 || rows % tokens_per_chunk != 0) fail(ErrorKind::kShape, "rows are not whole chunks");
  std::vector<Var> out;
  for (std::size_t t = 0; t < rows / tokens_per_chunk; ++t) {
    std::vector<std::size_t> idx(tokens_per_chunk);
    std::iota(idx.begin(), idx.end(), t * tokens_per_chunk);
    out.push_back(ad::sum_squares(ad::gather_rows(diff, idx)));
  }
  return out;
}

}  // namespace

std::vector<Var> cmgrpo_chunk_losses(Var x_theta, const Tensor& z_s, double s, double advantage,
                                     const NoiseSchedule& sched, std::size_t tokens_per_chunk) {
  const Tensor& x = x_theta.value();
  if (x.shape() != z_s.shape()) fail(ErrorKind::kShape, "CM-GRPO endpoints and targets differ in shape");
  const AlphaSigma as = sched.at(s);
  if (!(as.sigma > 0.0)) fail(ErrorKind::kDiracKernel, "CM-GRPO target level has sigma = 0");
  const double c = advantage * as.alpha / (2.0 * as.sigma * as.sigma);
  Tensor target = x;
  for (std::size_t i = 0; i < x.size(); ++i) target[i] += c * (z_s[i] - as.alpha * x[i]);
  Tape& tape = *x_theta.tape();
  return per_chunk_sum_squares(ad::sub(x_theta, tape.constant(std::move(target))), tokens_per_chunk);
}

Var cmgrpo_loss(Var x_theta, const Tensor& z_s, double s, double advantage, const NoiseSchedule& sched,
                const ChunkWeights& weights, std::size_t tokens_per_chunk) {
  const std::vector<Var> l = cmgrpo_chunk_losses(x_theta, z_s, s, advantage, sched, tokens_per_chunk);
  return aggregate_chunk_loss(l, weights.w, weights.m);
}

double em_reverse_kl(const Tensor& x_theta, const Tensor& x_ref, double n, double n_next, double sigma) {
  if (!(sigma > 0.0)) fail(ErrorKind::kDiracKernel, "EM kernel with sigma = 0 is a Dirac delta");
  if (x_theta.shape() != x_ref.shape()) fail(ErrorKind::kShape, "KL endpoints differ in shape");
  const double a = em_reverse_mean_slope(n, n_next, sigma);
  return a * a * (x_theta - x_ref).squared_norm() / (2.0 * sigma * sigma * (n - n_next));
}

std::vector<Var> emgrpo_chunk_losses(Var x_theta, const EmTransitionData& tr, double sigma, double advantage,
                                     double beta, const Tensor& x_ref, std::size_t tokens_per_chunk) {
  if (!(sigma > 0.0)) fail(ErrorKind::kDiracKernel, "EM-GRPO needs sigma > 0");
  const Tensor& x = x_theta.value();
  if (x.shape() != tr.y.shape() || x.shape() != tr.y_next.shape() || x.shape() != x_ref.shape())
    fail(ErrorKind::kShape, "EM-GRPO tensors differ in shape");
  const double var = sigma * sigma * (tr.n - tr.n_next);
  const double a = em_reverse_mean_slope(tr.n, tr.n_next, sigma);
  // d(-A log pi)/dx = -A a (y_next - mu) / var; half of it moves into the target.
  const Tensor mu = em_reverse_mean(tr.y, x, tr.n, tr.n_next, sigma);
  Tensor target = x;
  for (std::size_t i = 0; i < x.size(); ++i) target[i] += advantage * a * (tr.y_next[i] - mu[i]) / (2.0 * var);
  Tape& tape = *x_theta.tape();
  std::vector<Var> pg = per_chunk_sum_squares(ad::sub(x_theta, tape.constant(std::move(target))), tokens_per_chunk);
  if (beta == 0.0) return pg;
  const std::vector<Var> kl = per_chunk_sum_squares(ad::sub(x_theta, tape.constant(x_ref)), tokens_per_chunk);
  const double kl_scale = beta * a * a / (2.0 * var);
  for (std::size_t j = 0; j < pg.size(); ++j) {
    const std::vector<Var> pair = {pg[j], kl[j]};
    const std::vector<double> coef = {1.0, kl_scale};
    pg[j] = ad::weighted_sum(pair, coef);
  }
  return pg;
}

Var emgrpo_loss(Var x_theta, const EmTransitionData& tr, double sigma, double advantage, double beta,
                const Tensor& x_ref, const ChunkWeights& weights, std::size_t tokens_per_chunk) {
  const std::vector<Var> l = emgrpo_chunk_losses(x_theta, tr, sigma, advantage, beta, x_ref, tokens_per_chunk);
  return aggregate_chunk_loss(l, weights.w, weights.m);
}

// ---------------------------------------------------------------------------
// Training

RlPolicy parse_rl_policy(const std::string& name) {
  if (name == "cm-grpo") return RlPolicy::kCmGrpo;
  if (name == "em-grpo") return RlPolicy::kEmGrpo;
  fail(ErrorKind::kConfig, "unknown RL policy '" + name + "' (cm-grpo, em-grpo)");
}

std::string rl_policy_name(RlPolicy p) { return p == RlPolicy::kCmGrpo ? "cm-grpo" : "em-grpo"; }

void RlConfig::validate() const {
  if (group < 2) fail(ErrorKind::kConfig, "rl.group must be >= 2");
  if (batch < 1 || chunks < 1) fail(ErrorKind::kConfig, "rl.batch and rl.chunks must be >= 1");
  if (!(opt.lr > 0.0)) fail(ErrorKind::kConfig, "rl learning rate must be > 0");
  if (policy == RlPolicy::kCmGrpo && grid_steps < 3)
    fail(ErrorKind::kConfig, "CM-GRPO needs grid_steps >= 3 so a non-Dirac transition exists");
  if (grid_steps < 2) fail(ErrorKind::kConfig, "rl.grid_steps must be >= 2");
  if (policy == RlPolicy::kEmGrpo && !(em_sigma > 0.0)) fail(ErrorKind::kDiracKernel, "EM-GRPO needs sigma > 0");
  if (policy == RlPolicy::kEmGrpo && schedule != ScheduleFamily::kLinear)
    fail(ErrorKind::kConfig, "EM-GRPO is defined on the linear schedule");
  if (!(beta >= 0.0)) fail(ErrorKind::kConfig, "rl.beta must be >= 0");
  if (!(a_max > 0.0) || !(eps > 0.0)) fail(ErrorKind::kConfig, "rl.a_max and rl.eps must be > 0");
  rewards.validate();
}

std::size_t sample_transition(RlPolicy policy, std::size_t grid_steps, RngStream& stream) {
  const std::size_t choices = policy == RlPolicy::kCmGrpo ? grid_steps - 2 : grid_steps - 1;
  if (grid_steps < 2 || choices == 0) fail(ErrorKind::kConfig, "grid has no admissible transition");
  return 1 + stream.uniform_index(choices);
}

std::vector<RolloutRecord> group_rollout(const DenoiserModel& policy, const NoiseSchedule& sched,
                                         const TimestepGrid& grid, const Tensor& cond, std::size_t group,
                                         std::size_t chunks, const std::vector<RngStream>& streams,
                                         const RolloutOptions& options) {
  if (group < 2) fail(ErrorKind::kConfig, "group rollout needs G >= 2");
  if (streams.size() != group) fail(ErrorKind::kConfig, "group rollout needs one stream per rollout");
  std::vector<RolloutRecord> out;
  out.reserve(group);
  for (std::size_t g = 0; g < group; ++g) {
    RngStream s = streams[g];
    out.push_back(autoregressive_rollout(policy, sched, chunks, grid, cond, s, options));
    out.back().id = g;
  }
  return out;
}

namespace {

Tensor states_at(const RolloutRecord& r, std::size_t index) {
  std::vector<Tensor> rows;
  for (const ChunkTrajectory& c : r.chunks) rows.push_back(c.states.at(index));
  return concat_rows(rows);
}

}  // namespace

RlRecord rl_step(DenoiserModel& policy, Optimizer& opt, const DenoiserModel* reference, const RlConfig& cfg,
                 const std::vector<Tensor>& conditions, const BlobWorld& world, RngStream& stream) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  if (!policy.causal()) fail(ErrorKind::kConfig, "RL policy must have the student role");
  if (conditions.empty()) fail(ErrorKind::kConfig, "rl_step needs at least one condition");
  const bool em = cfg.policy == RlPolicy::kEmGrpo;
  if (em && cfg.beta > 0.0 && reference == nullptr) fail(ErrorKind::kConfig, "EM-GRPO KL needs a reference model");
  const std::size_t tpc = policy.config().tokens_per_chunk;
  const NoiseSchedule sched(cfg.schedule);
  const TimestepGrid grid = default_grid(cfg.grid_steps);
  const std::vector<std::size_t> m(cfg.chunks, policy.config().chunk_elements());
  const ChunkWeights weights = chunk_weights(cfg.weighting, m);

  RolloutOptions ro;
  ro.detach_history = true;
  ro.skip_final_call = cfg.skip_final_call;
  if (em) {
    ro.kernel = SamplerKernel::kEulerMaruyama;
    ro.em_sigma = cfg.em_sigma;
  }

  RlRecord rec;
  rec.reward_means.assign(cfg.rewards.terms.size(), 0.0);
  std::vector<double> composites;
  std::size_t clipped = 0, total_rollouts = 0;
  bool any_signal = false;

  Tape tape;
  const BoundModel bm = bind(tape, policy, true);
  std::vector<Var> losses;
  for (std::size_t b = 0; b < conditions.size(); ++b) {
    RngStream cs = stream.split(b + 1);
    std::vector<RngStream> streams;
    for (std::size_t g = 0; g < cfg.group; ++g) streams.push_back(cs.split(g + 1));
    // Stage 1: group rollouts, no gradient.
    const std::vector<RolloutRecord> rollouts =
        group_rollout(policy, sched, grid, conditions[b], cfg.group, cfg.chunks, streams, ro);
    // Stage 2: rewards and advantages.
    std::vector<Tensor> frames;
    for (const auto& r : rollouts) frames.push_back(r.endpoints());
    const RewardGroup group =
        score_group(cfg.rewards, evaluate_rewards(cfg.rewards, frames, conditions[b], world), cfg.eps, cfg.a_max);
    for (std::size_t i = 0; i < cfg.group; ++i) {
      double c = 0.0;
      for (std::size_t d = 0; d < group.raw[i].size(); ++d) {
        rec.reward_means[d] += group.raw[i][d];
        c += cfg.rewards.terms[d].weight * group.raw[i][d];
      }
      composites.push_back(c / cfg.rewards.abs_weight_sum());
    }
    clipped += static_cast<std::size_t>(std::lround(group.clip_fraction * static_cast<double>(cfg.group)));
    total_rollouts += cfg.group;

    // Stage 3: one sampled transition per trajectory.
    for (std::size_t i = 0; i < cfg.group; ++i) {
      const std::size_t k = sample_transition(cfg.policy, cfg.grid_steps, cs);
      const double A = group.advantages[i];
      if (A == 0.0 && cfg.beta == 0.0) continue;  // contributes an exactly zero gradient
      any_signal = true;
      const double u = grid.tau(k), s = grid.tau(k + 1);
      const InterleavedSequence seq = build_interleaved(rollouts[i], u);
      ForwardOptions fo;
      AttentionMask mask = seq.mask;
      if (!cfg.interleaved) {
        mask = build_mask(MaskParadigm::kSelfForcing, seq.layout);
        fo.detach_clean_history = true;
      }
      const ForwardResult r = forward(bm, seq.layout, tape.constant(seq.tokens), conditions[b], mask, nullptr, fo);
      const Var x_theta = noisy_outputs(r, seq.layout);
      if (!em) {
        losses.push_back(cmgrpo_loss(x_theta, states_at(rollouts[i], k), s, A, sched, weights, tpc));
      } else {
        Tensor x_ref = x_theta.value();
        if (reference != nullptr && cfg.beta > 0.0) {
          Tape ref_tape(false);
          const BoundModel rb = bind(ref_tape, *reference, false);
          x_ref = noisy_outputs(forward(rb, seq.layout, ref_tape.constant(seq.tokens), conditions[b], mask),
                                seq.layout)
                      .value();
        }
        const EmTransitionData tr{states_at(rollouts[i], k - 1), states_at(rollouts[i], k), u, s};
        losses.push_back(emgrpo_loss(x_theta, tr, cfg.em_sigma, A, cfg.beta, x_ref, weights, tpc));
      }
    }
  }

  for (double& v : rec.reward_means) v /= static_cast<double>(total_rollouts);
  const double n = static_cast<double>(composites.size());
  rec.composite_mean = std::accumulate(composites.begin(), composites.end(), 0.0) / n;
  double var = 0.0;
  for (double c : composites) var += (c - rec.composite_mean) * (c - rec.composite_mean);
  rec.composite_std = std::sqrt(var / n);
  rec.clip_fraction = static_cast<double>(clipped) / static_cast<double>(total_rollouts);

  // All-zero advantages leave the policy untouched, optimizer state included.
  if (any_signal) {
    const std::vector<double> avg(losses.size(), 1.0 / static_cast<double>(total_rollouts));
    const Var total = ad::weighted_sum(losses, avg);
    rec.loss = total.value()[0];
    if (!std::isfinite(rec.loss)) fail(ErrorKind::kTrainingFailure, "RL loss is not finite");
    tape.backward(total);
    rec.grad_norm = opt.step(policy, parameter_grads(bm));
  }
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

DenoiserModel train_rl(const RlConfig& cfg, DenoiserModel policy, const Dataset& data, const RlCallback& on_record) {
  cfg.validate();
  if (data.train.empty()) fail(ErrorKind::kConfig, "RL needs training conditions");
  if (data.world.frames_per_chunk != policy.config().tokens_per_chunk ||
      data.world.frame_dim() != policy.config().token_dim)
    fail(ErrorKind::kConfig, "dataset frame layout does not match the model");
  const DenoiserModel reference = policy;
  Optimizer opt(cfg.opt, policy);
  const RngStream root(cfg.seed, 0x6A90);
  for (std::size_t i = 1; i <= cfg.iterations; ++i) {
    RngStream it = root.split(i);
    std::vector<Tensor> conds;
    for (std::size_t b = 0; b < cfg.batch; ++b) conds.push_back(data.train[it.uniform_index(data.train.size())].cond);
    RlRecord rec = rl_step(policy, opt, &reference, cfg, conds, data.world, it);
    rec.iteration = i;
    if (on_record) on_record(rec, policy);
  }
  return policy;
}

}  // namespace chunkflow
