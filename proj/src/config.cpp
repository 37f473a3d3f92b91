// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "chunkflow/error.hpp"
#include "json.hpp"

namespace chunkflow {

using Json = nlohmann::ordered_json;

ExperimentKind parse_experiment_kind(const std::string& name) {
  if (name == "gen-data") return ExperimentKind::kGenData;
  if (name == "pretrain-teacher") return ExperimentKind::kPretrainTeacher;
  if (name == "distill") return ExperimentKind::kDistill;
  if (name == "rl") return ExperimentKind::kRl;
  if (name == "eval") return ExperimentKind::kEval;
  fail(ErrorKind::kConfig, "unknown experiment kind '" + name + "' (gen-data, pretrain-teacher, distill, rl, eval)");
}

std::string experiment_kind_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kGenData: return "gen-data";
    case ExperimentKind::kPretrainTeacher: return "pretrain-teacher";
    case ExperimentKind::kDistill: return "distill";
    case ExperimentKind::kRl: return "rl";
    case ExperimentKind::kEval: return "eval";
  }
  return "unknown";
}

namespace {

// ---------------------------------------------------------------------------
// Strict reading

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

[[noreturn]] void bad_type(const std::string& path, const char* want) {
  fail(ErrorKind::kConfig, "config field '" + path + "' must be " + want);
}

void read(const Json& j, const std::string& path, double& out) {
  if (!j.is_number()) bad_type(path, "a number");
  out = j.get<double>();
}

void read(const Json& j, const std::string& path, std::size_t& out) {
  if (!j.is_number_unsigned()) bad_type(path, "a non-negative integer");
  out = j.get<std::size_t>();
}

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seeds share the size_t reader");

void read(const Json& j, const std::string& path, bool& out) {
  if (!j.is_boolean()) bad_type(path, "true or false");
  out = j.get<bool>();
}

void read(const Json& j, const std::string& path, std::string& out) {
  if (!j.is_string()) bad_type(path, "a string");
  out = j.get<std::string>();
}

void read(const Json& j, const std::string& path, std::vector<double>& out) {
  if (!j.is_array()) bad_type(path, "an array of numbers");
  out.clear();
  for (std::size_t i = 0; i < j.size(); ++i) {
    double v;
    read(j[i], path + "[" + std::to_string(i) + "]", v);
    out.push_back(v);
  }
}

// Enum fields parse through the library's name parsers; their errors get
// the field path prepended.
template <class E, class Parse>
void read_enum(const Json& j, const std::string& path, E& out, Parse parse) {
  std::string s;
  read(j, path, s);
  try {
    out = parse(s);
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, "config field '" + path + "': " + e.what());
  }
}

class Object {
 public:
  Object(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) bad_type(path_.empty() ? "<root>" : path_, "an object");
  }
  ~Object() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items())
      if (!used_.count(key)) fail(ErrorKind::kConfig, "unknown config key '" + join(path_, key) + "'");
  }
  Object(const Object&) = delete;
  Object& operator=(const Object&) = delete;

  const Json* find(const std::string& key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string path(const std::string& key) const { return join(path_, key); }

  template <class T>
  void get(const std::string& key, T& out) {
    if (const Json* v = find(key)) read(*v, path(key), out);
  }
  template <class E, class Parse>
  void get_enum(const std::string& key, E& out, Parse parse) {
    if (const Json* v = find(key)) read_enum(*v, path(key), out, parse);
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

WeightFamily parse_family(const std::string& s) {
  if (s == "shift") return WeightFamily::kShift;
  if (s == "mode") return WeightFamily::kMode;
  if (s == "logit_normal") return WeightFamily::kLogitNormal;
  fail(ErrorKind::kConfig, "unknown weighting family '" + s + "' (shift, mode, logit_normal)");
}

std::string family_name(WeightFamily f) {
  switch (f) {
    case WeightFamily::kShift: return "shift";
    case WeightFamily::kMode: return "mode";
    case WeightFamily::kLogitNormal: return "logit_normal";
  }
  return "unknown";
}

ShiftReading parse_reading(const std::string& s) {
  if (s == "value") return ShiftReading::kValue;
  if (s == "density") return ShiftReading::kDensity;
  fail(ErrorKind::kConfig, "unknown shift reading '" + s + "' (value, density)");
}

void read_optimizer(const Json& j, const std::string& path, OptimizerConfig& o) {
  Object ob(j, path);
  ob.get_enum("kind", o.kind, parse_optimizer);
  ob.get("lr", o.lr);
  ob.get("beta1", o.beta1);
  ob.get("beta2", o.beta2);
  ob.get("eps", o.eps);
  ob.get("grad_clip", o.grad_clip);
}

void read_weighting(const Json& j, const std::string& path, WeightingFunction& w) {
  if (j.is_string()) {
    read_enum(j, path, w, weighting_preset);
    return;
  }
  Object ob(j, path);
  if (const Json* p = ob.find("preset")) read_enum(*p, ob.path("preset"), w, weighting_preset);
  ob.get_enum("family", w.family, parse_family);
  ob.get("alpha", w.alpha);
  ob.get("mode_scale", w.mode_scale);
  ob.get("mu", w.mu);
  ob.get("sigma", w.sigma);
  ob.get_enum("shift_reading", w.shift_reading, parse_reading);
  ob.get("mc_seed", w.mc_seed);
  ob.get("mc_samples", w.mc_samples);
}

void read_rewards(const Json& j, const std::string& path, RewardSpec& spec) {
  if (!j.is_object()) bad_type(path, "an object of dimension weights");
  spec.terms.clear();
  for (const auto& [key, value] : j.items()) {
    double w;
    read(value, join(path, key), w);
    spec.terms.push_back({key, w});
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, "config field '" + path + "': " + e.what());
  }
}

void read_world(const Json& j, const std::string& path, BlobWorld& w) {
  Object ob(j, path);
  ob.get("grid", w.grid);
  ob.get("frames_per_chunk", w.frames_per_chunk);
  ob.get("chunks", w.chunks);
  ob.get("max_speed", w.max_speed);
  ob.get("radius_min", w.radius_min);
  ob.get("radius_max", w.radius_max);
  ob.get("intensity_min", w.intensity_min);
  ob.get("intensity_max", w.intensity_max);
}

void read_data(const Json& j, const std::string& path, DataConfig& d) {
  Object ob(j, path);
  if (const Json* w = ob.find("world")) read_world(*w, ob.path("world"), d.world);
  ob.get("train_count", d.train_count);
  ob.get("heldout_count", d.heldout_count);
  ob.get("seed", d.seed);
  ob.get("path", d.path);
}

void read_model(const Json& j, const std::string& path, ModelConfig& m) {
  Object ob(j, path);
  ob.get("width", m.width);
  ob.get("blocks", m.blocks);
  ob.get("heads", m.heads);
  ob.get("mlp_hidden", m.mlp_hidden);
  ob.get("level_features", m.level_features);
  ob.get("head_slopes", m.head_slopes);
}

void read_pretrain(const Json& j, const std::string& path, PretrainConfig& p) {
  Object ob(j, path);
  if (const Json* o = ob.find("optimizer")) read_optimizer(*o, ob.path("optimizer"), p.opt);
  ob.get("iterations", p.iterations);
  ob.get("batch", p.batch);
  ob.get("eval_every", p.eval_every);
  ob.get("eval_examples", p.eval_examples);
  ob.get("patience", p.patience);
  ob.get_enum("schedule", p.schedule, parse_schedule_family);
}

void read_distill(const Json& j, const std::string& path, DistillConfig& d) {
  Object ob(j, path);
  ob.get_enum("paradigm", d.paradigm, parse_paradigm);
  ob.get("ttur_ratio", d.ttur_ratio);
  if (const Json* o = ob.find("generator_optimizer")) read_optimizer(*o, ob.path("generator_optimizer"), d.generator_opt);
  if (const Json* o = ob.find("critic_optimizer")) read_optimizer(*o, ob.path("critic_optimizer"), d.critic_opt);
  ob.get_enum("schedule", d.schedule, parse_schedule_family);
  ob.get("grid_steps", d.grid_steps);
  if (const Json* w = ob.find("weighting")) read_weighting(*w, ob.path("weighting"), d.weighting);
  ob.get("chunks", d.chunks);
  ob.get("batch", d.batch);
  ob.get("iterations", d.iterations);
  ob.get("skip_final_call", d.skip_final_call);
}

void read_rl(const Json& j, const std::string& path, RlConfig& r) {
  Object ob(j, path);
  ob.get_enum("policy", r.policy, parse_rl_policy);
  ob.get("group", r.group);
  ob.get("batch", r.batch);
  if (const Json* o = ob.find("optimizer")) read_optimizer(*o, ob.path("optimizer"), r.opt);
  ob.get_enum("schedule", r.schedule, parse_schedule_family);
  ob.get("grid_steps", r.grid_steps);
  if (const Json* w = ob.find("weighting")) read_weighting(*w, ob.path("weighting"), r.weighting);
  ob.get("chunks", r.chunks);
  ob.get("em_sigma", r.em_sigma);
  ob.get("beta", r.beta);
  ob.get("a_max", r.a_max);
  ob.get("eps", r.eps);
  ob.get("iterations", r.iterations);
  ob.get("interleaved", r.interleaved);
  ob.get("skip_final_call", r.skip_final_call);
  if (const Json* w = ob.find("rewards")) read_rewards(*w, ob.path("rewards"), r.rewards);
}

void read_eval(const Json& j, const std::string& path, EvalConfig& e) {
  Object ob(j, path);
  ob.get("chunks", e.chunks);
  ob.get("conditions", e.conditions);
  ob.get("rollouts", e.rollouts);
  ob.get("oracle", e.oracle);
  ob.get("grid_steps", e.grid_steps);
  ob.get_enum("schedule", e.schedule, parse_schedule_family);
}

// ---------------------------------------------------------------------------
// Writing

Json write_optimizer(const OptimizerConfig& o) {
  return Json{{"kind", optimizer_name(o.kind)}, {"lr", o.lr},   {"beta1", o.beta1},
              {"beta2", o.beta2},               {"eps", o.eps}, {"grad_clip", o.grad_clip}};
}

Json write_weighting(const WeightingFunction& w) {
  return Json{{"family", family_name(w.family)},
              {"alpha", w.alpha},
              {"mode_scale", w.mode_scale},
              {"mu", w.mu},
              {"sigma", w.sigma},
              {"shift_reading", w.shift_reading == ShiftReading::kValue ? "value" : "density"},
              {"mc_seed", w.mc_seed},
              {"mc_samples", w.mc_samples}};
}

}  // namespace

void ExperimentConfig::resolve() {
  if (name.empty()) name = experiment_kind_name(kind);
  model.token_dim = data.world.frame_dim();
  model.tokens_per_chunk = data.world.frames_per_chunk;
  model.cond_dim = kConditionDim;
  pretrain.seed = seed;
  distill.seed = seed;
  rl.seed = seed;
}

void ExperimentConfig::validate() const {
  data.world.validate();
  if (data.train_count < 1 || data.heldout_count < 1)
    fail(ErrorKind::kConfig, "data.train_count and data.heldout_count must be >= 1");
  if (model.heads == 0 || model.width % model.heads != 0)
    fail(ErrorKind::kConfig, "model.width must be a multiple of model.heads");
  if (model.head_slopes.size() != model.heads)
    fail(ErrorKind::kConfig, "model.head_slopes needs one slope per head");
  if (pretrain.iterations < 1 || pretrain.batch < 1 || pretrain.eval_every < 1)
    fail(ErrorKind::kConfig, "pretrain.iterations, batch and eval_every must be >= 1");
  distill.validate();
  rl.validate();
  if (eval.chunks < 1 || eval.conditions < 1 || eval.rollouts < 1)
    fail(ErrorKind::kConfig, "eval.chunks, eval.conditions and eval.rollouts must be >= 1");
  if (eval.grid_steps < 2) fail(ErrorKind::kConfig, "eval.grid_steps must be >= 2");
  if (eval.conditions > data.heldout_count) fail(ErrorKind::kConfig, "eval.conditions exceeds data.heldout_count");
}

std::filesystem::path ExperimentConfig::resolved_run_dir() const {
  if (!run_dir.empty()) return run_dir;
  std::string root = out;
  if (root.empty()) {
    const char* env = std::getenv(kOutputRootEnv);
    root = env != nullptr && *env != '\0' ? env : "runs";
  }
  return std::filesystem::path(root) / (name.empty() ? experiment_kind_name(kind) : name);
}

ExperimentConfig config_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  {
    Object ob(j, "");
    ob.get_enum("kind", cfg.kind, parse_experiment_kind);
    ob.get("name", cfg.name);
    ob.get("seed", cfg.seed);
    ob.get("out", cfg.out);
    ob.get("run_dir", cfg.run_dir);
    ob.get("teacher", cfg.teacher);
    ob.get("student", cfg.student);
    if (const Json* v = ob.find("data")) read_data(*v, "data", cfg.data);
    if (const Json* v = ob.find("model")) read_model(*v, "model", cfg.model);
    if (const Json* v = ob.find("pretrain")) read_pretrain(*v, "pretrain", cfg.pretrain);
    if (const Json* v = ob.find("distill")) read_distill(*v, "distill", cfg.distill);
    if (const Json* v = ob.find("rl")) read_rl(*v, "rl", cfg.rl);
    if (const Json* v = ob.find("eval")) read_eval(*v, "eval", cfg.eval);
  }
  cfg.resolve();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  const BlobWorld& w = cfg.data.world;
  Json rewards = Json::object();
  for (const RewardTerm& t : cfg.rl.rewards.terms) rewards[t.name] = t.weight;
  const Json j = {
      {"kind", experiment_kind_name(cfg.kind)},
      {"name", cfg.name},
      {"seed", cfg.seed},
      {"out", cfg.out},
      {"run_dir", cfg.run_dir},
      {"teacher", cfg.teacher},
      {"student", cfg.student},
      {"data",
       {{"world",
         {{"grid", w.grid},
          {"frames_per_chunk", w.frames_per_chunk},
          {"chunks", w.chunks},
          {"max_speed", w.max_speed},
          {"radius_min", w.radius_min},
          {"radius_max", w.radius_max},
          {"intensity_min", w.intensity_min},
          {"intensity_max", w.intensity_max}}},
        {"train_count", cfg.data.train_count},
        {"heldout_count", cfg.data.heldout_count},
        {"seed", cfg.data.seed},
        {"path", cfg.data.path}}},
      {"model",
       {{"width", cfg.model.width},
        {"blocks", cfg.model.blocks},
        {"heads", cfg.model.heads},
        {"mlp_hidden", cfg.model.mlp_hidden},
        {"level_features", cfg.model.level_features},
        {"head_slopes", cfg.model.head_slopes}}},
      {"pretrain",
       {{"optimizer", write_optimizer(cfg.pretrain.opt)},
        {"iterations", cfg.pretrain.iterations},
        {"batch", cfg.pretrain.batch},
        {"eval_every", cfg.pretrain.eval_every},
        {"eval_examples", cfg.pretrain.eval_examples},
        {"patience", cfg.pretrain.patience},
        {"schedule", schedule_family_name(cfg.pretrain.schedule)}}},
      {"distill",
       {{"paradigm", paradigm_name(cfg.distill.paradigm)},
        {"ttur_ratio", cfg.distill.ttur_ratio},
        {"generator_optimizer", write_optimizer(cfg.distill.generator_opt)},
        {"critic_optimizer", write_optimizer(cfg.distill.critic_opt)},
        {"schedule", schedule_family_name(cfg.distill.schedule)},
        {"grid_steps", cfg.distill.grid_steps},
        {"weighting", write_weighting(cfg.distill.weighting)},
        {"chunks", cfg.distill.chunks},
        {"batch", cfg.distill.batch},
        {"iterations", cfg.distill.iterations},
        {"skip_final_call", cfg.distill.skip_final_call}}},
      {"rl",
       {{"policy", rl_policy_name(cfg.rl.policy)},
        {"group", cfg.rl.group},
        {"batch", cfg.rl.batch},
        {"optimizer", write_optimizer(cfg.rl.opt)},
        {"schedule", schedule_family_name(cfg.rl.schedule)},
        {"grid_steps", cfg.rl.grid_steps},
        {"weighting", write_weighting(cfg.rl.weighting)},
        {"chunks", cfg.rl.chunks},
        {"em_sigma", cfg.rl.em_sigma},
        {"beta", cfg.rl.beta},
        {"a_max", cfg.rl.a_max},
        {"eps", cfg.rl.eps},
        {"iterations", cfg.rl.iterations},
        {"interleaved", cfg.rl.interleaved},
        {"skip_final_call", cfg.rl.skip_final_call},
        {"rewards", rewards}}},
      {"eval",
       {{"chunks", cfg.eval.chunks},
        {"conditions", cfg.eval.conditions},
        {"rollouts", cfg.eval.rollouts},
        {"oracle", cfg.eval.oracle},
        {"grid_steps", cfg.eval.grid_steps},
        {"schedule", schedule_family_name(cfg.eval.schedule)}}},
  };
  return j.dump(2) + "\n";
}

}  // namespace chunkflow
