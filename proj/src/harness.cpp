// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "chunkflow/checkpoint.hpp"
#include "chunkflow/error.hpp"
#include "json.hpp"

namespace chunkflow {

using Json = nlohmann::ordered_json;

namespace {

// Append-only JSON-lines writer owned by one run.
class JsonlLog {
 public:
  explicit JsonlLog(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
    if (!out_) fail(ErrorKind::kIo, "cannot write " + path.string());
  }
  void write(const Json& record) {
    out_ << record.dump() << '\n';
    out_.flush();
    if (!out_) fail(ErrorKind::kIo, "metric log write failed");
  }

 private:
  std::ofstream out_;
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

void write_summary(const std::filesystem::path& dir, const Summary& s) {
  Json j = Json::object();
  std::ostringstream txt, csv;
  csv << "key,value\n";
  std::size_t width = 0;
  for (const auto& [k, v] : s) width = std::max(width, k.size());
  for (const auto& [k, v] : s) {
    j[k] = v;
    txt << std::left << std::setw(static_cast<int>(width) + 2) << k << format_number(v) << '\n';
    csv << k << ',' << std::setprecision(17) << v << '\n';
  }
  write_text(dir / "summary.json", j.dump(2) + "\n");
  write_text(dir / "summary.txt", txt.str());
  write_text(dir / "summary.csv", csv.str());
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) fail(ErrorKind::kDependency, what + " checkpoint is not set");
  if (!std::filesystem::exists(path)) fail(ErrorKind::kDependency, what + " checkpoint " + path + " does not exist");
}

Tensor chunk_rows(const Tensor& frames, std::size_t chunk, std::size_t tpc) {
  return slice_rows(frames, chunk * tpc, tpc);
}

void add_drift(Summary& s, const DriftCurve& d) {
  for (std::size_t t = 0; t < d.mse.size(); ++t) s.emplace_back("drift_chunk_" + std::to_string(t + 1), d.mse[t]);
  s.emplace_back("drift_mean", d.mean());
}

void write_drift_csv(const std::filesystem::path& path, const DriftCurve& d) {
  std::ostringstream csv;
  csv << "chunk,mse";
  for (const auto& n : d.reward_names) csv << ',' << n;
  csv << '\n' << std::setprecision(17);
  for (std::size_t t = 0; t < d.mse.size(); ++t) {
    csv << t + 1 << ',' << d.mse[t];
    for (double r : d.rewards[t]) csv << ',' << r;
    csv << '\n';
  }
  write_text(path, csv.str());
}

Json timing(std::size_t iteration, double wall_ms) { return Json{{"iteration", iteration}, {"wall_ms", wall_ms}}; }

}  // namespace

Dataset load_or_generate(const DataConfig& data) {
  if (!data.path.empty()) {
    if (!std::filesystem::exists(data.path)) fail(ErrorKind::kDependency, "dataset " + data.path + " does not exist");
    return read_dataset(data.path);
  }
  return gen_dataset(data.world, data.train_count, data.heldout_count, data.seed);
}

double DriftCurve::mean() const {
  if (mse.empty()) return 0.0;
  double s = 0.0;
  for (double v : mse) s += v;
  return s / static_cast<double>(mse.size());
}

DriftCurve eval_long_horizon(const DenoiserModel& student, const BlobWorld& world,
                             const std::vector<Example>& heldout, const EvalConfig& eval, const RewardSpec& spec,
                             std::uint64_t seed) {
  if (eval.conditions > heldout.size()) fail(ErrorKind::kConfig, "not enough held-out conditions for evaluation");
  const std::size_t T = eval.chunks, tpc = world.frames_per_chunk;
  const NoiseSchedule sched(eval.schedule);
  const TimestepGrid grid = default_grid(eval.grid_steps);
  DriftCurve out;
  for (const RewardTerm& t : spec.terms) out.reward_names.push_back(t.name);
  out.mse.assign(T, 0.0);
  out.rewards.assign(T, std::vector<double>(spec.terms.size(), 0.0));
  const double n = static_cast<double>(eval.conditions * eval.rollouts);
  const RngStream root(seed, 0xE7A1);
  for (std::size_t i = 0; i < eval.conditions; ++i) {
    const Tensor& cond = heldout[i].cond;
    const Tensor gt = render_trajectory(world, BlobCondition::from_tensor(cond), T);
    std::vector<Tensor> gt_chunks;
    for (std::size_t t = 0; t < T; ++t) gt_chunks.push_back(chunk_rows(gt, t, tpc));
    const RngStream cs = root.split(i + 1);
    for (std::size_t r = 0; r < eval.rollouts; ++r) {
      RngStream s = cs.split(r + 1);
      RolloutOptions ro;
      if (eval.oracle) ro.forced_history = &gt_chunks;
      const Tensor frames = autoregressive_rollout(student, sched, T, grid, cond, s, ro).endpoints();
      for (std::size_t t = 0; t < T; ++t) {
        const Tensor chunk = chunk_rows(frames, t, tpc);
        const double mse = (chunk - gt_chunks[t]).squared_norm() / static_cast<double>(chunk.size());
        out.mse[t] += mse / n;
        for (std::size_t d = 0; d < spec.terms.size(); ++d) {
          const std::string& name = spec.terms[d].name;
          out.rewards[t][d] += (name == "TA" ? -mse : reward_value(name, chunk, cond, world)) / n;
        }
      }
    }
  }
  return out;
}

std::vector<double> composite_by_condition(const DenoiserModel& policy, const BlobWorld& world,
                                           const std::vector<Example>& heldout, const EvalConfig& eval,
                                           std::size_t chunks, const RewardSpec& spec, std::uint64_t seed) {
  if (eval.conditions > heldout.size()) fail(ErrorKind::kConfig, "not enough held-out conditions for evaluation");
  const NoiseSchedule sched(eval.schedule);
  const TimestepGrid grid = default_grid(eval.grid_steps);
  const RngStream root(seed, 0xC03B);
  std::vector<double> out;
  for (std::size_t i = 0; i < eval.conditions; ++i) {
    const RngStream cs = root.split(i + 1);
    double acc = 0.0;
    for (std::size_t r = 0; r < eval.rollouts; ++r) {
      RngStream s = cs.split(r + 1);
      const RolloutRecord ro = autoregressive_rollout(policy, sched, chunks, grid, heldout[i].cond, s);
      acc += raw_composite(spec, ro.endpoints(), heldout[i].cond, world);
    }
    out.push_back(acc / static_cast<double>(eval.rollouts));
  }
  return out;
}

double sign_test_p(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1.0;
  double p = 0.0;
  for (std::size_t k = wins; k <= n; ++k)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  return std::min(1.0, p);
}

double generator_loss_moving_average(const std::vector<DistillRecord>& records, std::size_t iteration,
                                     std::size_t window) {
  double s = 0.0;
  std::size_t n = 0;
  for (const DistillRecord& r : records)
    if (r.generator_loss && r.iteration <= iteration && r.iteration + window > iteration) {
      s += *r.generator_loss;
      ++n;
    }
  if (n == 0) fail(ErrorKind::kConfig, "no generator updates in the moving-average window");
  return s / static_cast<double>(n);
}

// ---------------------------------------------------------------------------

RunResult run_experiment(ExperimentConfig cfg) {
  cfg.resolve();
  cfg.validate();
  const std::filesystem::path dir = cfg.resolved_run_dir();
  if (cfg.run_dir.empty() && cfg.out.empty()) cfg.out = dir.parent_path().string();
  switch (cfg.kind) {
    case ExperimentKind::kDistill: require_file(cfg.teacher, "teacher"); break;
    case ExperimentKind::kRl:
    case ExperimentKind::kEval: require_file(cfg.student, "student"); break;
    default: break;
  }
  std::filesystem::create_directories(dir);
  write_text(dir / "config.json", config_to_json(cfg));

  Dataset data = load_or_generate(cfg.data);
  if (!cfg.data.path.empty() && !(data.world.grid == cfg.data.world.grid &&
                                  data.world.frames_per_chunk == cfg.data.world.frames_per_chunk))
    fail(ErrorKind::kConfig, "dataset file layout differs from data.world");

  RunResult result;
  result.dir = dir;
  Summary& s = result.summary;
  JsonlLog metrics(dir / "metrics.jsonl");
  JsonlLog timings(dir / "timing.jsonl");

  switch (cfg.kind) {
    case ExperimentKind::kGenData: {
      write_dataset(data, dir / "dataset.cfds");
      s = {{"train_count", static_cast<double>(data.train.size())},
           {"heldout_count", static_cast<double>(data.heldout.size())},
           {"data_variance", data_variance(data.train)}};
      break;
    }
    case ExperimentKind::kPretrainTeacher: {
      const PretrainResult r = pretrain_teacher(cfg.pretrain, cfg.model, data, [&](const PretrainRecord& rec) {
        Json j{{"iteration", rec.iteration}, {"loss", rec.loss}};
        if (rec.heldout_mse) j["heldout_mse"] = *rec.heldout_mse;
        metrics.write(j);
        timings.write(timing(rec.iteration, rec.wall_ms));
      });
      save_checkpoint(r.teacher, dir / "teacher.ckpt");
      s = {{"iterations", static_cast<double>(r.iterations)},
           {"heldout_mse", r.heldout_mse},
           {"heldout_mse_clean", r.heldout_mse_clean},
           {"data_variance", r.data_variance},
           {"mse_over_variance", r.heldout_mse / r.data_variance}};
      break;
    }
    case ExperimentKind::kDistill: {
      const DenoiserModel teacher = load_checkpoint(cfg.teacher);
      if (teacher.role() != ModelRole::kTeacher) fail(ErrorKind::kDependency, cfg.teacher + " is not a teacher");
      std::vector<DistillRecord> records;
      const DistillState st =
          train_distill(cfg.distill, teacher.with_role(ModelRole::kStudent), teacher.with_role(ModelRole::kCritic),
                        &teacher, data, [&](const DistillRecord& rec, const DistillState&) {
                          records.push_back(rec);
                          Json j{{"iteration", rec.iteration}, {"critic_loss", rec.critic_loss}};
                          if (rec.generator_loss) {
                            j["generator_loss"] = *rec.generator_loss;
                            j["generator_grad_norm"] = rec.generator_grad_norm;
                          }
                          metrics.write(j);
                          timings.write(timing(rec.iteration, rec.wall_ms));
                        });
      save_checkpoint(st.student, dir / "student.ckpt");
      save_checkpoint(st.critic, dir / "critic.ckpt");
      const std::size_t last = cfg.distill.iterations;
      s.emplace_back("iterations", static_cast<double>(last));
      s.emplace_back("critic_loss_final", records.back().critic_loss);
      if (last >= 100 && last >= cfg.distill.ttur_ratio) {
        const double early = generator_loss_moving_average(records, 100);
        const double late = generator_loss_moving_average(records, last);
        s.emplace_back("generator_loss_ma_100", early);
        s.emplace_back("generator_loss_ma_final", late);
        s.emplace_back("generator_loss_reduction", 1.0 - late / early);
      }
      const DriftCurve d = eval_long_horizon(st.student, data.world, data.heldout, cfg.eval, cfg.rl.rewards, cfg.seed);
      write_drift_csv(dir / "drift.csv", d);
      add_drift(s, d);
      break;
    }
    case ExperimentKind::kRl: {
      const DenoiserModel init = load_checkpoint(cfg.student);
      if (init.role() != ModelRole::kStudent) fail(ErrorKind::kDependency, cfg.student + " is not a student");
      const DenoiserModel policy = train_rl(cfg.rl, init, data, [&](const RlRecord& rec, const DenoiserModel&) {
        Json rewards = Json::object();
        for (std::size_t d = 0; d < rec.reward_means.size(); ++d)
          rewards[cfg.rl.rewards.terms[d].name] = rec.reward_means[d];
        metrics.write(Json{{"iteration", rec.iteration},
                           {"composite_mean", rec.composite_mean},
                           {"composite_std", rec.composite_std},
                           {"rewards", rewards},
                           {"loss", rec.loss},
                           {"clip_fraction", rec.clip_fraction},
                           {"grad_norm", rec.grad_norm}});
        timings.write(timing(rec.iteration, rec.wall_ms));
      });
      save_checkpoint(policy, dir / "policy.ckpt");
      const auto before =
          composite_by_condition(init, data.world, data.heldout, cfg.eval, cfg.rl.chunks, cfg.rl.rewards, cfg.seed);
      const auto after =
          composite_by_condition(policy, data.world, data.heldout, cfg.eval, cfg.rl.chunks, cfg.rl.rewards, cfg.seed);
      std::size_t wins = 0, losses = 0;
      double mb = 0.0, ma = 0.0;
      for (std::size_t i = 0; i < before.size(); ++i) {
        wins += after[i] > before[i];
        losses += after[i] < before[i];
        mb += before[i] / static_cast<double>(before.size());
        ma += after[i] / static_cast<double>(after.size());
      }
      s = {{"iterations", static_cast<double>(cfg.rl.iterations)},
           {"composite_before", mb},
           {"composite_after", ma},
           {"conditions_improved", static_cast<double>(wins)},
           {"conditions_worse", static_cast<double>(losses)},
           {"sign_test_p", sign_test_p(wins, losses)}};
      break;
    }
    case ExperimentKind::kEval: {
      const DenoiserModel student = load_checkpoint(cfg.student);
      if (!student.causal()) fail(ErrorKind::kDependency, cfg.student + " is not a student");
      const DriftCurve d = eval_long_horizon(student, data.world, data.heldout, cfg.eval, cfg.rl.rewards, cfg.seed);
      write_drift_csv(dir / "drift.csv", d);
      add_drift(s, d);
      break;
    }
  }
  write_summary(dir, s);
  return result;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"table2", "fig4", "table4", "table5"};
  return names;
}

std::vector<std::pair<std::string, ExperimentConfig>> preset_legs(const std::string& preset,
                                                                  const ExperimentConfig& base) {
  auto need = [&](ExperimentKind k) {
    if (base.kind != k)
      fail(ErrorKind::kConfig, "preset " + preset + " needs kind " + experiment_kind_name(k) + ", config has " +
                                   experiment_kind_name(base.kind));
  };
  std::vector<std::pair<std::string, ExperimentConfig>> legs;
  auto leg = [&](const std::string& name) -> ExperimentConfig& {
    legs.emplace_back(name, base);
    return legs.back().second;
  };
  if (preset == "table2") {
    need(ExperimentKind::kDistill);
    for (Paradigm p : all_paradigms()) leg(paradigm_name(p)).distill.paradigm = p;
  } else if (preset == "fig4") {
    need(ExperimentKind::kDistill);
    for (const std::string& w : weighting_preset_names()) leg(w).distill.weighting = weighting_preset(w);
  } else if (preset == "table4") {
    need(ExperimentKind::kRl);
    const std::vector<std::pair<std::string, std::vector<double>>> rows = {
        {"ta1", {1, 0.35, 0.75, 1, 1}},       {"dd030", {2, 0.30, 0.75, 1, 1}},
        {"ms100", {2, 0.35, 1.00, 1, 1}},     {"aq2_iq2", {2, 0.35, 0.75, 2, 2}},
        {"adopted", {2, 0.35, 0.75, 1, 1}},
    };
    for (const auto& [name, w] : rows) {
      RewardSpec spec;
      for (std::size_t d = 0; d < w.size(); ++d) spec.terms[d].weight = w[d];
      leg(name).rl.rewards = spec;
    }
  } else if (preset == "table5") {
    need(ExperimentKind::kRl);
    for (double beta : {0.0, 0.004})
      for (double sigma : {0.1, 0.4, 0.8}) {
        std::ostringstream name;
        name << "em_s" << sigma << "_b" << beta;
        ExperimentConfig& c = leg(name.str());
        c.rl.policy = RlPolicy::kEmGrpo;
        c.rl.em_sigma = sigma;
        c.rl.beta = beta;
      }
    leg("cm-grpo").rl.policy = RlPolicy::kCmGrpo;
  } else {
    fail(ErrorKind::kConfig, "unknown preset '" + preset + "' (table2, fig4, table4, table5)");
  }
  return legs;
}

std::vector<RunResult> run_preset(const std::string& preset, ExperimentConfig base) {
  base.resolve();
  const auto legs = preset_legs(preset, base);
  const std::filesystem::path dir = base.resolved_run_dir();
  std::filesystem::create_directories(dir);
  Json order = Json::array();
  for (const auto& [name, cfg] : legs) order.push_back(name);
  write_text(dir / "legs.json", order.dump() + "\n");
  std::vector<RunResult> out;
  for (auto [name, cfg] : legs) {
    cfg.name = name;
    cfg.run_dir = (dir / name).string();
    out.push_back(run_experiment(cfg));
  }
  write_report(dir);
  return out;
}

std::size_t write_report(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::kIo, dir.string() + " is not a directory");
  std::vector<std::string> names;
  if (std::filesystem::exists(dir / "legs.json")) {
    std::ifstream in(dir / "legs.json");
    for (const auto& n : Json::parse(in)) names.push_back(n.get<std::string>());
  } else {
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.is_directory() && std::filesystem::exists(e.path() / "summary.json"))
        names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
  }
  std::vector<std::pair<std::string, std::filesystem::path>> rows;
  if (std::filesystem::exists(dir / "summary.json")) rows.emplace_back(dir.filename().string(), dir / "summary.json");
  for (const auto& n : names) rows.emplace_back(n, dir / n / "summary.json");

  std::vector<std::string> columns;
  std::vector<std::map<std::string, double>> values;
  for (const auto& [name, path] : rows) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
    Json j;
    try {
      j = Json::parse(in);
    } catch (const Json::parse_error& e) {
      fail(ErrorKind::kFormat, path.string() + ": " + e.what());
    }
    std::map<std::string, double> row;
    for (const auto& [k, v] : j.items()) {
      if (std::find(columns.begin(), columns.end(), k) == columns.end()) columns.push_back(k);
      row[k] = v.is_number() ? v.get<double>() : std::nan("");
    }
    values.push_back(std::move(row));
  }
  if (rows.empty()) fail(ErrorKind::kIo, "no summary.json under " + dir.string());

  std::ostringstream csv, txt;
  csv << "run";
  for (const auto& c : columns) csv << ',' << c;
  csv << '\n' << std::setprecision(17);
  std::size_t name_w = 3;
  for (const auto& r : rows) name_w = std::max(name_w, r.first.size());
  std::vector<std::size_t> col_w;
  for (const auto& c : columns) col_w.push_back(std::max<std::size_t>(c.size(), 12));
  txt << std::left << std::setw(static_cast<int>(name_w) + 2) << "run";
  for (std::size_t c = 0; c < columns.size(); ++c) txt << std::setw(static_cast<int>(col_w[c]) + 2) << columns[c];
  txt << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    csv << rows[r].first;
    txt << std::setw(static_cast<int>(name_w) + 2) << rows[r].first;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto it = values[r].find(columns[c]);
      csv << ',';
      if (it != values[r].end()) csv << it->second;
      txt << std::setw(static_cast<int>(col_w[c]) + 2) << (it != values[r].end() ? format_number(it->second) : "-");
    }
    csv << '\n';
    txt << '\n';
  }
  write_text(dir / "report.csv", csv.str());
  write_text(dir / "report.txt", txt.str());
  return rows.size();
}

}  // namespace chunkflow
