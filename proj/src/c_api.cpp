// SPDX-License-Identifier: Apache-2.0
#include "chunkflow.h"

#include <algorithm>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "chunkflow/checkpoint.hpp"
#include "chunkflow/error.hpp"
#include "chunkflow/harness.hpp"

struct cf_experiment {
  chunkflow::ExperimentConfig config;
};

struct cf_model {
  chunkflow::DenoiserModel model;
  std::string role;
};

namespace {

thread_local std::string last_error;

cf_status to_status(chunkflow::ErrorKind kind) {
  // Codes follow the ErrorKind order, starting at 1.
  return static_cast<cf_status>(static_cast<int>(kind) + 1);
}

template <class Fn>
cf_status guarded(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return CF_OK;
  } catch (const chunkflow::Error& e) {
    last_error = e.what();
    return to_status(e.kind());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown exception";
  }
  return CF_ERR_INTERNAL;
}

cf_status bad_argument(const char* what) {
  last_error = std::string("null argument: ") + what;
  return CF_ERR_ARGUMENT;
}

cf_status copy_out(const std::string& s, char* buf, std::size_t cap, std::size_t* needed) {
  if (needed != nullptr) *needed = s.size();
  if (buf != nullptr && cap > 0) {
    const std::size_t n = std::min(cap - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
  last_error.clear();
  return CF_OK;
}

}  // namespace

extern "C" {

const char* cf_version(void) { return "0.1.0"; }

const char* cf_status_name(cf_status status) {
  switch (status) {
    case CF_OK: return "ok";
    case CF_ERR_ARGUMENT: return "argument";
    case CF_ERR_INTERNAL: return "internal";
    default:
      if (status > CF_OK && status <= CF_ERR_FORMAT)
        return chunkflow::error_kind_name(static_cast<chunkflow::ErrorKind>(status - 1));
      return "unknown";
  }
}

const char* cf_last_error(void) { return last_error.c_str(); }

cf_status cf_experiment_new(const char* kind, cf_experiment** out) {
  if (kind == nullptr || out == nullptr) return bad_argument("kind/out");
  *out = nullptr;
  return guarded([&] {
    auto exp = std::make_unique<cf_experiment>();
    exp->config.kind = chunkflow::parse_experiment_kind(kind);
    exp->config.resolve();
    *out = exp.release();
  });
}

cf_status cf_experiment_load(const char* config_path, cf_experiment** out) {
  if (config_path == nullptr || out == nullptr) return bad_argument("config_path/out");
  *out = nullptr;
  return guarded([&] { *out = new cf_experiment{chunkflow::load_config(config_path)}; });
}

void cf_experiment_free(cf_experiment* exp) { delete exp; }

cf_status cf_experiment_set_kind(cf_experiment* exp, const char* kind) {
  if (exp == nullptr || kind == nullptr) return bad_argument("exp/kind");
  return guarded([&] {
    const auto k = chunkflow::parse_experiment_kind(kind);
    // A default name tracks the kind.
    if (exp->config.name == chunkflow::experiment_kind_name(exp->config.kind)) exp->config.name.clear();
    exp->config.kind = k;
    exp->config.resolve();
  });
}

cf_status cf_experiment_set_seed(cf_experiment* exp, uint64_t seed) {
  if (exp == nullptr) return bad_argument("exp");
  return guarded([&] {
    exp->config.seed = seed;
    exp->config.resolve();
  });
}

cf_status cf_experiment_set_out(cf_experiment* exp, const char* root) {
  if (exp == nullptr || root == nullptr) return bad_argument("exp/root");
  return guarded([&] { exp->config.out = root; });
}

cf_status cf_experiment_set_run_dir(cf_experiment* exp, const char* dir) {
  if (exp == nullptr || dir == nullptr) return bad_argument("exp/dir");
  return guarded([&] { exp->config.run_dir = dir; });
}

cf_status cf_experiment_set_teacher(cf_experiment* exp, const char* checkpoint) {
  if (exp == nullptr || checkpoint == nullptr) return bad_argument("exp/checkpoint");
  return guarded([&] { exp->config.teacher = checkpoint; });
}

cf_status cf_experiment_set_student(cf_experiment* exp, const char* checkpoint) {
  if (exp == nullptr || checkpoint == nullptr) return bad_argument("exp/checkpoint");
  return guarded([&] { exp->config.student = checkpoint; });
}

cf_status cf_experiment_set_dataset(cf_experiment* exp, const char* dataset) {
  if (exp == nullptr || dataset == nullptr) return bad_argument("exp/dataset");
  return guarded([&] { exp->config.data.path = dataset; });
}

cf_status cf_experiment_config_json(const cf_experiment* exp, char* buf, size_t cap, size_t* needed) {
  if (exp == nullptr) return bad_argument("exp");
  std::string s;
  const cf_status st = guarded([&] { s = chunkflow::config_to_json(exp->config); });
  return st == CF_OK ? copy_out(s, buf, cap, needed) : st;
}

cf_status cf_experiment_run_dir(const cf_experiment* exp, char* buf, size_t cap, size_t* needed) {
  if (exp == nullptr) return bad_argument("exp");
  std::string s;
  const cf_status st = guarded([&] { s = exp->config.resolved_run_dir().string(); });
  return st == CF_OK ? copy_out(s, buf, cap, needed) : st;
}

cf_status cf_experiment_run(cf_experiment* exp) {
  if (exp == nullptr) return bad_argument("exp");
  return guarded([&] { chunkflow::run_experiment(exp->config); });
}

cf_status cf_experiment_run_preset(cf_experiment* exp, const char* preset) {
  if (exp == nullptr || preset == nullptr) return bad_argument("exp/preset");
  return guarded([&] { chunkflow::run_preset(preset, exp->config); });
}

cf_status cf_report(const char* dir, size_t* rows) {
  if (dir == nullptr) return bad_argument("dir");
  return guarded([&] {
    const std::size_t n = chunkflow::write_report(dir);
    if (rows != nullptr) *rows = n;
  });
}

cf_status cf_model_load(const char* path, cf_model** out) {
  if (path == nullptr || out == nullptr) return bad_argument("path/out");
  *out = nullptr;
  return guarded([&] {
    chunkflow::DenoiserModel m = chunkflow::load_checkpoint(path);
    std::string role = chunkflow::role_name(m.role());
    *out = new cf_model{std::move(m), std::move(role)};
  });
}

void cf_model_free(cf_model* model) { delete model; }

cf_status cf_model_parameter_count(const cf_model* model, size_t* count) {
  if (model == nullptr || count == nullptr) return bad_argument("model/count");
  return guarded([&] { *count = model->model.parameter_count(); });
}

const char* cf_model_role(const cf_model* model) { return model == nullptr ? "" : model->role.c_str(); }

}  // extern "C"
