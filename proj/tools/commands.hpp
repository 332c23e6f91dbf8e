#pragma once

#include <string>
#include <vector>

#include "adreg/surrogate.hpp"
#include "adreg/training.hpp"

namespace adreg::cli {

struct CommandResult {
  int exit_code = 0;
  std::vector<std::string> files;  // emitted file manifest
  std::string summary;
};

struct PhantomArgs {
  std::string out_dir;
  int cases = 16;
  std::uint64_t seed = 0;
  std::int64_t grid = 32;
  double spacing = 2.0;
  bool force = false;
};
CommandResult cmd_phantom(const PhantomArgs& args);

struct SimArgs {
  std::string out_dir;
  std::string cases_dir;
  int patients = 16;
  int per_patient = 32;
  std::uint64_t seed = 0;
  std::string config_file;  // optional surrogate config (flat key=value)
  std::int64_t grid = 32;
  double spacing = 2.0;
  bool force = false;
};
CommandResult cmd_sim(const SimArgs& args);

struct TrainArgs {
  std::string config_file;  // optional; flags override
  std::string data_dir, sim_dir, out_dir;
  std::string mode;  // empty: keep config value
  int steps = -1;
  std::int64_t seed = -1;
  double learning_rate = -1;
  bool force = false;
};
CommandResult cmd_train(const TrainArgs& args);

/// register consumes only the image pair and the checkpoint; its argument
/// surface has no label or simulation inputs by construction.
struct RegisterArgs {
  std::string model;
  std::string moving;
  std::string fixed;
  std::string out_dir;
  bool force = false;
};
CommandResult cmd_register(const RegisterArgs& args);

struct EvaluateArgs {
  std::string data_dir;
  std::string checkpoint;  // mutually exclusive with use_gt_field
  bool use_gt_field = false;
  std::vector<std::string> case_ids;  // empty: all
  std::string mode_tag = "adversarial";
  std::string out_dir;
  bool force = false;
};
CommandResult cmd_evaluate(const EvaluateArgs& args);

struct PlotArgs {
  std::string metrics;      // metrics.log (optional)
  std::string report_json;  // report.json (optional)
  std::string out_dir;
  bool force = false;
};
CommandResult cmd_plot(const PlotArgs& args);

SurrogateConfig load_surrogate_config(const std::string& path);

}  // namespace adreg::cli
