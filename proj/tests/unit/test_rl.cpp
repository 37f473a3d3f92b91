// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <numeric>

#include "chunkflow/finite_diff.hpp"
#include "chunkflow/kernels.hpp"
#include "chunkflow/rl.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace chunkflow;
using chunkflow::testing::random_model;
using chunkflow::testing::test_condition;
using chunkflow::testing::thrown_kind;

namespace {

const BlobWorld kWorld{};

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double pop_std(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / v.size());
}

std::vector<double> column(const std::vector<std::vector<double>>& raw, std::size_t m) {
  std::vector<double> c;
  for (const auto& r : raw) c.push_back(r[m]);
  return c;
}

RewardSpec single(const std::string& name) { return RewardSpec{{{name, 1.0}}}; }

}  // namespace

TEST_CASE("toy reward examples") {
  const Tensor cond = BlobCondition{0.7, -0.4, 1.2, 0.9}.tensor();
  const Tensor gt = render_trajectory(kWorld, BlobCondition::from_tensor(cond), 4);
  CHECK(reward_value("TA", gt, cond, kWorld) == 0.0);

  Tensor still(gt.shape());
  for (std::size_t f = 0; f < still.rows(); ++f)
    for (std::size_t p = 0; p < still.cols(); ++p) still.at(f, p) = gt.at(0, p);
  CHECK(reward_value("DD", still, cond, kWorld) == 0.0);
  CHECK(reward_value("MS", still, cond, kWorld) == 0.0);
  CHECK(reward_value("DD", gt, cond, kWorld) > 0.0);
  CHECK(reward_value("AQ", gt, cond, kWorld) == 0.0);
  CHECK(reward_value("TA", still, cond, kWorld) < 0.0);

  RngStream s(3, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor noisy = gt + 0.05 * gaussian_sample(s, gt.shape());
    CHECK(reward_value("IQ", noisy, cond, kWorld) < reward_value("IQ", gt, cond, kWorld));
  }

  Tensor bad = gt;
  bad[5] = std::numeric_limits<double>::quiet_NaN();
  CHECK(thrown_kind([&] { reward_value("TA", bad, cond, kWorld); }) == ErrorKind::kRewardEvaluation);
  CHECK(thrown_kind([&] { evaluate_rewards(RewardSpec{}, {gt, bad}, cond, kWorld); }) ==
        ErrorKind::kRewardEvaluation);
}

TEST_CASE("dynamic degree averages the top 5 percent of frame differences") {
  // 12 frames x 64 pixels: 11 * 64 = 704 differences, top ceil(35.2) = 36.
  Tensor frames({12, 64}, 0.0);
  for (std::size_t f = 0; f < 12; ++f) frames.at(f, 0) = (f % 2 == 0) ? 0.0 : 1.0;  // 11 jumps of 1
  for (std::size_t f = 0; f < 12; ++f) frames.at(f, 1) = 0.1 * static_cast<double>(f);  // 11 steps of 0.1
  // Sorted top 36: eleven 1.0, eleven 0.1, fourteen 0.0.
  CHECK(reward_value("DD", frames, test_condition(), kWorld) == doctest::Approx((11.0 + 1.1) / 36.0).epsilon(1e-14));
}

TEST_CASE("reward spec validation") {
  CHECK(thrown_kind([] { RewardSpec{{{"TA", 0.0}, {"DD", 0.0}}}.validate(); }) == ErrorKind::kConfig);
  CHECK(thrown_kind([] { RewardSpec{{{"XX", 1.0}}}.validate(); }) == ErrorKind::kConfig);
  CHECK(thrown_kind([] { RewardSpec{{{"TA", 1.0}, {"TA", 1.0}}}.validate(); }) == ErrorKind::kConfig);
  RewardSpec{}.validate();
  CHECK(RewardSpec{}.abs_weight_sum() == doctest::Approx(5.1));
}

TEST_CASE("normalize and compose examples") {
  const double eps = kDefaultRewardEps;
  const std::vector<std::vector<double>> same(4, std::vector<double>{1.0, 2.0, 3.0, 4.0, 5.0});
  for (double c : normalize_and_compose(same, RewardSpec{}, eps)) CHECK(c == 0.0);

  const auto one = normalize_and_compose({{1.0}, {3.0}}, single("TA"), eps);
  CHECK(one[0] == doctest::Approx(-1.0 / (1.0 + eps)).epsilon(1e-15));
  CHECK(one[1] == doctest::Approx(1.0 / (1.0 + eps)).epsilon(1e-15));

  RngStream s(4, 1);
  std::vector<std::vector<double>> raw(8);
  for (auto& r : raw) r = s.normals(5);
  RewardSpec spec;
  for (auto& t : spec.terms) t.weight = 0.0;
  spec.terms[2].weight = -0.5;
  const auto comp = normalize_and_compose(raw, spec, eps);
  const auto norm = group_normalize(column(raw, 2), eps);
  for (std::size_t i = 0; i < 8; ++i) CHECK(comp[i] == doctest::Approx(-norm[i]).epsilon(1e-14));
  CHECK(thrown_kind([&] { normalize_and_compose({{1.0}}, single("TA"), eps); }) == ErrorKind::kConfig);
}

TEST_CASE("advantage examples") {
  const double eps = kDefaultRewardEps;
  for (double a : advantages({2.0, 2.0, 2.0}, eps, 5.0)) CHECK(a == 0.0);
  const auto un = advantages_unclipped({0.0, 10.0}, eps);
  CHECK(un[0] == doctest::Approx(-5.0 / (5.0 + eps)).epsilon(1e-15));
  CHECK(un[1] == doctest::Approx(5.0 / (5.0 + eps)).epsilon(1e-15));
  const auto cl = advantages({0.0, 10.0}, eps, 0.5);
  CHECK(cl[0] == -0.5);
  CHECK(cl[1] == 0.5);
  const auto shifted = advantages_unclipped({7.0, 17.0}, eps);
  CHECK(shifted == un);
}

TEST_CASE("group normalization invariants") {
  const double eps = kDefaultRewardEps;
  RngStream s(5, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> raw(8);
    for (auto& r : raw) r = s.normals(5);
    for (std::size_t m = 0; m < 5; ++m) {
      const auto n = group_normalize(column(raw, m), eps);
      CHECK(std::abs(mean_of(n)) < 1e-10);
      CHECK(std::abs(pop_std(n) - 1.0) < 1e-3);  // std / (std + eps)
    }
    const auto comp = normalize_and_compose(raw, RewardSpec{}, eps);
    const auto a = advantages_unclipped(comp, eps);
    CHECK(std::abs(mean_of(a)) < 1e-10);
    CHECK(pop_std(a) <= 1.0);
    CHECK(pop_std(a) >= 1.0 - 10 * eps);

    auto scaled = raw;
    for (auto& r : scaled) r[1] *= 1000.0;
    const auto before = group_normalize(column(raw, 1), eps);
    const auto after = group_normalize(column(scaled, 1), eps);
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(before[i] - after[i]) < 10 * eps);

    const RewardGroup g = score_group(RewardSpec{}, raw, eps, 1.0);
    for (double v : g.advantages) CHECK(std::abs(v) <= 1.0);
    std::size_t clipped = 0;
    for (double v : g.unclipped) clipped += std::abs(v) > 1.0;
    CHECK(g.clip_fraction == doctest::Approx(clipped / 8.0));
  }
}

TEST_CASE("cm-grpo loss trivial cases and dirac error") {
  const NoiseSchedule sched;
  RngStream s(6, 1);
  const Tensor x0 = gaussian_sample(s, {6, 5});
  const Tensor z = gaussian_sample(s, {6, 5});
  const ChunkWeights w = chunk_weights(WeightingFunction::shift(0.0), std::vector<std::size_t>{15, 15});
  {
    Tape tape;
    const Var x = tape.leaf(x0);
    const Var l = cmgrpo_loss(x, z, 0.4, 0.0, sched, w, 3);
    CHECK(l.value()[0] == 0.0);
    tape.backward(l);
    CHECK(tape.grad(x).squared_norm() == 0.0);
  }
  {
    Tape tape;
    const Var x = tape.leaf(x0);
    const Var l = cmgrpo_loss(x, sched.at(0.4).alpha * x0, 0.4, 1.7, sched, w, 3);
    CHECK(l.value()[0] == 0.0);
    tape.backward(l);
    CHECK(tape.grad(x).squared_norm() == 0.0);
  }
  Tape tape;
  CHECK(thrown_kind([&] { cmgrpo_loss(tape.leaf(x0), z, 0.0, 1.0, sched, w, 3); }) == ErrorKind::kDiracKernel);
}

TEST_CASE("cm-grpo loss gradient equals the endpoint gradient") {
  RngStream s(7, 1);
  for (ScheduleFamily fam : {ScheduleFamily::kLinear, ScheduleFamily::kVariancePreserving}) {
    const NoiseSchedule sched(fam);
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor x0 = gaussian_sample(s, {6, 5});
      const Tensor z = gaussian_sample(s, {6, 5});
      const double sl = s.uniform(0.05, 0.95), A = s.uniform(-3.0, 3.0);
      Tape tape;
      const Var x = tape.leaf(x0);
      const auto parts = cmgrpo_chunk_losses(x, z, sl, A, sched, 3);
      const Var total = ad::add(parts[0], parts[1]);
      tape.backward(total);
      const Tensor eq8 = cmgrpo_endpoint_gradient(sched, z, x0, sl, A);
      CHECK(relative_error(tape.grad(x), eq8) < 1e-10);
      // the target is a constant of the forward pass
      const double c = A * sched.at(sl).alpha / (2.0 * std::pow(sched.at(sl).sigma, 2));
      Tensor target = x0;
      for (std::size_t i = 0; i < x0.size(); ++i) target[i] += c * (z[i] - sched.at(sl).alpha * x0[i]);
      const Tensor fd = finite_diff_grad([&](const Tensor& v) { return (v - target).squared_norm(); }, x0);
      CHECK(relative_error(tape.grad(x), fd) < 1e-6);

      // chunk weighting scales each chunk's gradient by w_j / sum(w m)
      const ChunkWeights w = chunk_weights(WeightingFunction::shift(1.0), std::vector<std::size_t>{15, 15});
      Tape t2;
      const Var x2 = t2.leaf(x0);
      t2.backward(cmgrpo_loss(x2, z, sl, A, sched, w, 3));
      const double d = w.w[0] * 15 + w.w[1] * 15;
      const Tensor g2 = t2.grad(x2);
      for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t col = 0; col < 5; ++col)
          CHECK(g2.at(r, col) == doctest::Approx(eq8.at(r, col) * w.w[r / 3] / d).epsilon(1e-10));
    }
  }
}

TEST_CASE("em-grpo loss matches the kernel log-likelihood gradient") {
  RngStream s(8, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const double sigma = s.uniform(0.1, 0.9), beta = trial % 2 == 0 ? 0.0 : 0.004 * (1 + trial);
    const double n = s.uniform(0.4, 1.0), n_next = s.uniform(0.0, 0.3), A = s.uniform(-2.0, 2.0);
    const Tensor x0 = gaussian_sample(s, {6, 4});
    const Tensor xr = gaussian_sample(s, {6, 4});
    const Tensor y = gaussian_sample(s, {6, 4});
    RngStream step(8, 100 + trial);
    const EmTransitionData tr{y, em_reverse_step(y, xr, n, n_next, sigma, step), n, n_next};
    Tape tape;
    const Var x = tape.leaf(x0);
    const auto parts = emgrpo_chunk_losses(x, tr, sigma, A, beta, xr, 3);
    tape.backward(ad::add(parts[0], parts[1]));
    const Tensor fd = finite_diff_grad(
        [&](const Tensor& v) {
          return -A * em_reverse_logprob(tr.y_next, tr.y, v, n, n_next, sigma) + beta * em_reverse_kl(v, xr, n, n_next, sigma);
        },
        x0);
    CHECK(relative_error(tape.grad(x), fd) < 1e-4);
  }
}

TEST_CASE("em-grpo trivial cases") {
  RngStream s(9, 1);
  const Tensor x0 = gaussian_sample(s, {3, 4});
  const Tensor y = gaussian_sample(s, {3, 4});
  const EmTransitionData tr{y, gaussian_sample(s, {3, 4}), 0.8, 0.4};
  CHECK(em_reverse_kl(x0, x0, 0.8, 0.4, 0.5) == 0.0);
  Tape tape;
  const Var x = tape.leaf(x0);
  const double pure = emgrpo_chunk_losses(x, tr, 0.5, 1.3, 0.0, gaussian_sample(s, {3, 4}), 3)[0].value()[0];
  const double same_ref = emgrpo_chunk_losses(x, tr, 0.5, 1.3, 0.7, x0, 3)[0].value()[0];
  CHECK(pure == same_ref);
  CHECK(thrown_kind([&] { emgrpo_chunk_losses(x, tr, 0.0, 1.0, 0.0, x0, 3); }) == ErrorKind::kDiracKernel);
}

TEST_CASE("transition sampling never selects the dirac step") {
  RngStream s(10, 1);
  std::vector<std::size_t> cm(5, 0), em(5, 0);
  for (int i = 0; i < 100000; ++i) {
    ++cm.at(sample_transition(RlPolicy::kCmGrpo, 4, s));
    ++em.at(sample_transition(RlPolicy::kEmGrpo, 4, s));
  }
  CHECK(cm[0] == 0);
  CHECK(cm[1] > 0);
  CHECK(cm[2] > 0);
  CHECK(cm[3] == 0);
  CHECK(em[0] == 0);
  CHECK(em[3] > 0);
  CHECK(em[4] == 0);
  CHECK(thrown_kind([&] { sample_transition(RlPolicy::kCmGrpo, 2, s); }) == ErrorKind::kConfig);
}

TEST_CASE("group rollout") {
  const DenoiserModel m = random_model(ModelRole::kStudent, 12);
  const NoiseSchedule sched;
  const TimestepGrid grid = default_grid(4);
  const std::vector<RngStream> same(3, RngStream(1, 2));
  const auto a = group_rollout(m, sched, grid, test_condition(), 3, 2, same);
  CHECK(max_abs_diff(a[0].endpoints(), a[2].endpoints()) == 0.0);
  CHECK(a[1].stored_states() == 2 * 4);  // plus one endpoint per chunk
  CHECK(a[1].endpoints().rows() == 2 * 3);
  const std::vector<RngStream> diff = {RngStream(1, 1), RngStream(1, 2)};
  const auto b = group_rollout(m, sched, grid, test_condition(), 2, 2, diff);
  CHECK(max_abs_diff(b[0].endpoints(), b[1].endpoints()) > 0.0);
  CHECK(thrown_kind([&] { group_rollout(m, sched, grid, test_condition(), 1, 2, {RngStream(1, 1)}); }) ==
        ErrorKind::kConfig);
}

namespace {

RlConfig tiny_rl(RlPolicy p = RlPolicy::kCmGrpo) {
  RlConfig cfg;
  cfg.policy = p;
  cfg.group = 3;
  cfg.batch = 2;
  cfg.chunks = 2;
  cfg.opt.lr = 1e-3;
  return cfg;
}

std::vector<Tensor> conds() { return {test_condition(), BlobCondition{-0.5, 0.2, 1.0, 0.7}.tensor()}; }

}  // namespace

TEST_CASE("rl step with all-equal rewards leaves the policy untouched") {
  // zero output head: every endpoint is the same, so every reward ties
  const DenoiserModel init(ModelConfig{}, ModelRole::kStudent, 3);
  DenoiserModel policy = init;
  Optimizer opt(tiny_rl().opt, policy);
  RngStream s(1, 1);
  const RlRecord rec = rl_step(policy, opt, nullptr, tiny_rl(), conds(), kWorld, s);
  CHECK(policy == init);
  CHECK(rec.loss == 0.0);
  CHECK(opt.steps() == 0);
  const RlRecord one = rl_step(policy, opt, nullptr, tiny_rl(), {test_condition()}, kWorld, s);
  CHECK(one.composite_std == 0.0);
  CHECK(policy == init);
}

TEST_CASE("rl step updates, logs, and is deterministic") {
  for (RlPolicy p : {RlPolicy::kCmGrpo, RlPolicy::kEmGrpo}) {
    for (bool interleaved : {true, false}) {
      CAPTURE(rl_policy_name(p));
      CAPTURE(interleaved);
      RlConfig cfg = tiny_rl(p);
      cfg.interleaved = interleaved;
      cfg.beta = p == RlPolicy::kEmGrpo ? 0.004 : 0.0;
      const DenoiserModel init = random_model(ModelRole::kStudent, 14);
      auto run = [&] {
        DenoiserModel policy = init;
        Optimizer opt(cfg.opt, policy);
        RngStream s(2, 1);
        const RlRecord rec = rl_step(policy, opt, &init, cfg, conds(), kWorld, s);
        return std::make_pair(policy, rec);
      };
      const auto a = run();
      const auto b = run();
      CHECK(a.first == b.first);
      CHECK_FALSE(a.first == init);
      CHECK(a.second.reward_means.size() == 5);
      CHECK(a.second.reward_means == b.second.reward_means);
      CHECK(a.second.loss == b.second.loss);
      CHECK(a.second.loss > 0.0);
    }
  }
}

TEST_CASE("rl configuration errors") {
  RlConfig cfg;
  cfg.group = 1;
  CHECK(thrown_kind([&] { cfg.validate(); }) == ErrorKind::kConfig);
  cfg = RlConfig{};
  cfg.policy = RlPolicy::kEmGrpo;
  cfg.em_sigma = 0.0;
  CHECK(thrown_kind([&] { cfg.validate(); }) == ErrorKind::kDiracKernel);
  cfg = RlConfig{};
  cfg.grid_steps = 2;
  CHECK(thrown_kind([&] { cfg.validate(); }) == ErrorKind::kConfig);
  CHECK(parse_rl_policy("em-grpo") == RlPolicy::kEmGrpo);
  CHECK(thrown_kind([] { parse_rl_policy("ppo"); }) == ErrorKind::kConfig);
  DenoiserModel teacher = random_model(ModelRole::kTeacher, 1);
  Optimizer opt(cfg.opt, teacher);
  RngStream s(1, 1);
  CHECK(thrown_kind([&] { rl_step(teacher, opt, nullptr, RlConfig{}, conds(), kWorld, s); }) == ErrorKind::kConfig);
}
