#include <CLI11.hpp>
#include <cstdio>
#include <exception>

#include "commands.hpp"

using namespace adreg::cli;

namespace {

int run_result(const CommandResult& r) {
  for (const auto& f : r.files) std::printf("wrote: %s\n", f.c_str());
  std::printf("%s\n", r.summary.c_str());
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adreg: adversarially regularized weakly-supervised 3D registration"};
  app.require_subcommand(1);

  PhantomArgs ph;
  auto* phantom = app.add_subcommand("phantom", "generate a synthetic multimodal phantom dataset");
  phantom->add_option("--out", ph.out_dir, "output dataset directory")->required();
  phantom->add_option("--cases", ph.cases, "number of phantom patients");
  phantom->add_option("--seed", ph.seed, "dataset seed");
  phantom->add_option("--grid", ph.grid, "voxels per axis");
  phantom->add_option("--spacing", ph.spacing, "voxel spacing (mm)");
  phantom->add_flag("--force", ph.force, "overwrite existing outputs");

  SimArgs sm;
  auto* sim = app.add_subcommand("sim", "generate and prepare surrogate deformation samples");
  sim->add_option("--out", sm.out_dir, "output sims directory")->required();
  sim->add_option("--cases", sm.cases_dir, "phantom dataset directory (field-of-view targets)")
      ->required();
  sim->add_option("--patients", sm.patients, "simulated patients");
  sim->add_option("--per-patient", sm.per_patient, "samples per patient");
  sim->add_option("--seed", sm.seed, "seed");
  sim->add_option("--config", sm.config_file, "surrogate config file (key = value)");
  sim->add_option("--grid", sm.grid, "training grid voxels per axis");
  sim->add_option("--spacing", sm.spacing, "training grid spacing (mm)");
  sim->add_flag("--force", sm.force, "overwrite existing outputs");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "train the registration network");
  train->add_option("--config", tr.config_file, "training config file");
  train->add_option("--data", tr.data_dir, "phantom dataset directory");
  train->add_option("--sims", tr.sim_dir, "prepared simulations directory");
  train->add_option("--out", tr.out_dir, "output directory");
  train->add_option("--mode", tr.mode, "regularizer: adversarial|bending|l2grad|none");
  train->add_option("--steps", tr.steps, "total optimization steps");
  train->add_option("--seed", tr.seed, "training seed");
  train->add_option("--learning-rate", tr.learning_rate, "Adam learning rate");
  train->add_flag("--force", tr.force, "overwrite existing outputs");

  // register consumes only the image pair and checkpoint: no label or
  // simulation flags exist on this subcommand.
  RegisterArgs rg;
  auto* reg = app.add_subcommand("register", "register one moving/fixed image pair");
  reg->add_option("--model", rg.model, "checkpoint file")->required();
  reg->add_option("--moving", rg.moving, "moving volume (.vol)")->required();
  reg->add_option("--fixed", rg.fixed, "fixed volume (.vol)")->required();
  reg->add_option("--out", rg.out_dir, "output directory")->required();
  reg->add_flag("--force", rg.force, "overwrite existing outputs");

  EvaluateArgs ev;
  auto* eval = app.add_subcommand("evaluate", "TRE/DSC evaluation over phantom cases");
  eval->add_option("--data", ev.data_dir, "phantom dataset directory")->required();
  eval->add_option("--checkpoint", ev.checkpoint, "trained checkpoint");
  eval->add_flag("--gt-field", ev.use_gt_field, "oracle: use stored ground-truth fields");
  eval->add_option("--case", ev.case_ids, "case id (repeatable; default all)");
  eval->add_option("--mode-tag", ev.mode_tag, "mode label for the records");
  eval->add_option("--out", ev.out_dir, "output directory")->required();
  eval->add_flag("--force", ev.force, "overwrite existing outputs");

  PlotArgs pl;
  auto* plot = app.add_subcommand("plot", "render metric logs and reports to SVG");
  plot->add_option("--metrics", pl.metrics, "metrics.log from training");
  plot->add_option("--report", pl.report_json, "report.json from evaluate");
  plot->add_option("--out", pl.out_dir, "output directory")->required();
  plot->add_flag("--force", pl.force, "overwrite existing outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*phantom) return run_result(cmd_phantom(ph));
    if (*sim) return run_result(cmd_sim(sm));
    if (*train) return run_result(cmd_train(tr));
    if (*reg) return run_result(cmd_register(rg));
    if (*eval) return run_result(cmd_evaluate(ev));
    if (*plot) return run_result(cmd_plot(pl));
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 4;
  }
  return 2;
}
