#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adreg/networks.hpp"
#include "adreg/surrogate.hpp"

namespace adreg {

enum class RegularizerMode { adversarial, bending, l2grad, none };

std::string to_string(RegularizerMode m);
RegularizerMode regularizer_mode_from_string(const std::string& s);

/// All training hyper-parameters. The on-disk config file is flat
/// `key = value` text whose keys mirror these field names; array fields use
/// comma-separated values.
struct TrainConfig {
  double learning_rate = 1e-6;
  int batch_size = 4;
  int total_steps = 100;
  double lambda_adv = 0.01;
  double gamma_start = 0.2;
  double gamma_end = 0.05;
  RegularizerMode regularizer_mode = RegularizerMode::adversarial;
  double baseline_weight = 0.5;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: final checkpoint only
  std::array<std::int64_t, 3> grid_shape{32, 32, 32};
  double grid_spacing = 2.0;
  std::string data_dir;
  std::string sim_dir;
  std::string out_dir;
  int n0 = 8;
  int levels = 4;
  std::vector<double> sigmas{0, 1, 2, 4, 8, 16, 32};
  double epsilon_dice = 1e-7;
  bool augment = true;
  AffineRanges aug_ranges;
  std::vector<std::string> case_ids;  // training subset; empty = whole manifest

  Grid3 grid() const { return Grid3(grid_shape, {grid_spacing, grid_spacing, grid_spacing}); }
  LossConfig loss_config() const;
  void validate() const;

  std::string to_text() const;
  static TrainConfig from_text(const std::string& text);
  static TrainConfig load(const std::string& path);
  void save(const std::string& path) const;
};

/// Persisted networks + everything inference needs (grid, normalization).
struct Checkpoint {
  RegNetSpec reg_spec;
  ParamSet reg_params;
  DiscNetSpec dis_spec;
  ParamSet dis_params;
  Grid3 grid;
  NormStats stats;
  std::uint64_t seed = 0;
  std::int64_t step = 0;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

struct StepLog {
  std::int64_t step = 0;
  double loss_reg = 0;
  double loss_dis = 0;
  double loss_gen = 0;
  double gamma = 0;
  double reg_term = 0;  // baseline regularizer value (0 in other modes)

  std::string line() const;
};

/// One training sample after augmentation (all on the training grid).
struct TrainSample {
  Volume moving, fixed;
  LabelMap moving_gland, fixed_gland;
};

struct TrainState {
  TrainConfig cfg;
  RegNet reg;
  Discriminator dis;
  NormStats stats;
  std::int64_t step = 0;

  // Adam moments, aligned with the ParamSet order.
  std::vector<Tensor> reg_m, reg_v;
  std::vector<Tensor> dis_m, dis_v;
  std::int64_t reg_t = 0, dis_t = 0;
};

TrainState init_train_state(const TrainConfig& cfg, const NormStats& stats);

/// One alternating step: in adversarial mode first the discriminator is
/// updated on Eq.-2 (real = sim_batch, fake = detached normalized local
/// prediction), then the registration network on Eq.-1 plus lambda_adv x
/// Eq.-3; baseline modes replace the adversarial terms with a weighted
/// smoothness penalty. Throws with the offending term's name if a loss or
/// gradient goes non-finite.
StepLog train_step(TrainState& state, const std::vector<TrainSample>& batch,
                   const std::vector<const DisplacementField*>& sim_batch);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> log;
  std::string metrics_path;
  std::string checkpoint_path;
};

/// Full training run: loads datasets, runs cfg.total_steps steps with
/// deterministic batching/augmentation, writes metrics + checkpoints under
/// cfg.out_dir.
TrainResult train(const TrainConfig& cfg);

struct Registration {
  DisplacementField local;
  AffineParams affine;
  DisplacementField composed;
  Volume warped;
};

/// Pure inference: images only, no labels or simulations consulted.
Registration register_pair(Checkpoint& ckpt, const Volume& moving, const Volume& fixed);

}  // namespace adreg
