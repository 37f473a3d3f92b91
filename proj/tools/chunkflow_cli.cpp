// SPDX-License-Identifier: Apache-2.0
// Command-line front end over the C API.
#include <chunkflow.h>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"

namespace {

struct StageOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string preset;
  std::string run_dir;
  std::string teacher;
  std::string student;
  std::string data;
};

struct ExperimentDeleter {
  void operator()(cf_experiment* e) const { cf_experiment_free(e); }
};
using Experiment = std::unique_ptr<cf_experiment, ExperimentDeleter>;

// Thrown after a failed C call; carries the status for the exit code.
struct CallFailed {
  cf_status status;
};

void check(cf_status st) {
  if (st != CF_OK) {
    std::cerr << "chunkflow: " << cf_status_name(st) << " error: " << cf_last_error() << '\n';
    throw CallFailed{st};
  }
}

std::string read_string(cf_status (*fn)(const cf_experiment*, char*, size_t, size_t*), const cf_experiment* e) {
  size_t n = 0;
  check(fn(e, nullptr, 0, &n));
  std::string s(n + 1, '\0');
  check(fn(e, s.data(), s.size(), &n));
  s.resize(n);
  return s;
}

void print_file(const std::string& path) {
  std::ifstream in(path);
  if (in) std::cout << in.rdbuf();
}

int run_stage(const std::string& kind, const StageOptions& o) {
  cf_experiment* raw = nullptr;
  if (o.config.empty())
    check(cf_experiment_new(kind.c_str(), &raw));
  else
    check(cf_experiment_load(o.config.c_str(), &raw));
  Experiment e(raw);
  check(cf_experiment_set_kind(e.get(), kind.c_str()));
  if (o.seed) check(cf_experiment_set_seed(e.get(), *o.seed));
  if (!o.out.empty()) check(cf_experiment_set_out(e.get(), o.out.c_str()));
  if (!o.run_dir.empty()) check(cf_experiment_set_run_dir(e.get(), o.run_dir.c_str()));
  if (!o.teacher.empty()) check(cf_experiment_set_teacher(e.get(), o.teacher.c_str()));
  if (!o.student.empty()) check(cf_experiment_set_student(e.get(), o.student.c_str()));
  if (!o.data.empty()) check(cf_experiment_set_dataset(e.get(), o.data.c_str()));

  const std::string dir = read_string(cf_experiment_run_dir, e.get());
  if (o.preset.empty()) {
    check(cf_experiment_run(e.get()));
    std::cout << "run directory: " << dir << '\n';
    print_file(dir + "/summary.txt");
  } else {
    check(cf_experiment_run_preset(e.get(), o.preset.c_str()));
    std::cout << "sweep directory: " << dir << '\n';
    print_file(dir + "/report.txt");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chunked autoregressive diffusion distillation and RL toolkit"};
  app.set_version_flag("--version", std::string(cf_version()));
  app.require_subcommand(1);

  struct Stage {
    const char* name;
    const char* help;
  };
  const Stage stages[] = {
      {"gen-data", "Generate the synthetic dataset file"},
      {"pretrain-teacher", "Pretrain the bidirectional teacher"},
      {"distill", "Distill a causal student from the teacher"},
      {"rl", "Policy-optimize a student on the toy rewards"},
      {"eval", "Long-horizon drift evaluation of a student"},
  };
  StageOptions opts;
  std::string selected;
  for (const Stage& s : stages) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", opts.config, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", opts.seed, "Experiment seed");
    sub->add_option("--out", opts.out, "Output root (default $CHUNKFLOW_OUT, then ./runs)");
    sub->add_option("--preset", opts.preset, "Sweep preset: table2, fig4 (distill); table4, table5 (rl)");
    sub->add_option("--run-dir", opts.run_dir, "Exact run directory");
    sub->add_option("--teacher", opts.teacher, "Teacher checkpoint (distill)");
    sub->add_option("--student", opts.student, "Student checkpoint (rl, eval)");
    sub->add_option("--data", opts.data, "Dataset file instead of generating in memory");
    sub->callback([&selected, name = std::string(s.name)] { selected = name; });
  }

  std::string report_dir;
  CLI::App* report = app.add_subcommand("report", "Collect summaries under a run or sweep directory");
  report->add_option("dir", report_dir, "Run or sweep directory")->required()->check(CLI::ExistingDirectory);
  report->callback([&] { selected = "report"; });

  CLI11_PARSE(app, argc, argv);

  try {
    if (selected == "report") {
      size_t rows = 0;
      check(cf_report(report_dir.c_str(), &rows));
      print_file(report_dir + "/report.txt");
      std::cout << rows << " row(s) written to " << report_dir << "/report.{txt,csv}\n";
      return 0;
    }
    return run_stage(selected, opts);
  } catch (const CallFailed& f) {
    return static_cast<int>(f.status);
  }
}
