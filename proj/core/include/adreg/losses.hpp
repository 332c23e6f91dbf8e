#pragma once

#include <functional>
#include <vector>

#include "adreg/field_graph.hpp"
#include "adreg/graph.hpp"
#include "adreg/volume.hpp"

namespace adreg {

struct LossConfig {
  std::vector<double> sigmas{0, 1, 2, 4, 8, 16, 32};  // mm
  double lambda_adv = 0.01;
  double gamma_start = 0.2;
  double gamma_end = 0.05;
  double baseline_weight = 0.5;
  double epsilon_dice = 1e-7;

  void validate() const;
};

// ---- graph-level losses (training path) ---------------------------------

/// Soft probabilistic Dice per sample:
/// (2*sum(pq)+eps)/(sum p^2 + sum q^2 + eps); equals 1 for identical labels
/// and the set-overlap Dice on binary labels. p, q: [N,1,D,H,W] -> [N].
Var soft_dice_op(Var p, Var q, double eps);

/// Mean over scales of soft Dice on Gaussian-filtered labels; sigma = 0 uses
/// the unfiltered labels. Normalized by the number of scales. -> [N].
Var multiscale_dice_op(Var warped, Var fixed, const LossConfig& cfg, const Grid3& grid);

/// Negative batch mean of multiscale Dice (the single-label-per-pair case).
Var registration_loss_op(Var warped, Var fixed, const LossConfig& cfg, const Grid3& grid);

/// Mean over voxels (and batch) of sum_ij (du_i/dx_j)^2, central differences
/// in mm, one-sided at borders. field: [N,3,D,H,W] -> scalar.
Var l2_gradient_penalty_op(Var field, const Grid3& grid);

/// Mean over voxels (and batch) of the bending energy density
/// sum_i [u_ixx^2 + u_iyy^2 + u_izz^2 + 2 u_ixy^2 + 2 u_iyz^2 + 2 u_ixz^2].
Var bending_energy_op(Var field, const Grid3& grid);

/// -1/2 mean log D(real) - 1/2 mean log(1-D(fake)) + (gamma/2) omega,
/// computed via softplus identities (no explicit exponentials of large
/// magnitude). Pass an invalid omega Var for a pure classification loss.
Var discriminator_loss_op(Var logits_real, Var logits_fake, Var omega, double gamma);

/// Non-saturating generator loss: -1/2 mean log D(fake).
Var generator_loss_op(Var logits_fake);

/// Hooks the smoothing term needs from a discriminator: a primal apply, a
/// dual (forward-tangent) apply on the same graph/parameters, and the
/// gradient of the summed logits with respect to the input batch evaluated
/// on a private graph.
struct DiscriminatorFns {
  std::function<Var(Var)> apply;                    // batch -> logits [N]
  std::function<DualVar(DualVar)> apply_dual;       // dual batch -> dual logits
  std::function<Tensor(const Tensor&)> input_grad;  // batch values -> grad values
};

/// Distribution smoothing term
///   Omega = mean_real (1-D(v))^2 ||grad_v d(v)||^2
///         + mean_fake D(u)^2     ||grad_u d(u)||^2
/// with d the pre-logistic logit and gradients taken with respect to the
/// input field values. The returned node carries exact second-order
/// parameter gradients (forward-tangent over reverse construction).
Var smoothing_term_op(const DiscriminatorFns& disc, Var fake_batch, Var real_batch);

/// Same, reusing already-built logits for the weighting terms (avoids two
/// extra discriminator passes inside a training step).
Var smoothing_term_op(const DiscriminatorFns& disc, Var fake_batch, Var real_batch,
                      Var logits_fake, Var logits_real);

/// Exponential annealing gamma(t) = start * (end/start)^(t/T).
double gamma_schedule(std::int64_t step, std::int64_t total_steps, const LossConfig& cfg);

// ---- value-level wrappers (evaluation, tests, CLI) -----------------------

double soft_dice(const LabelMap& p, const LabelMap& q, double eps = 1e-7);
double multiscale_dice(const LabelMap& warped, const LabelMap& fixed, const LossConfig& cfg);
/// warped[n][m] against fixed[n][m]; M_n may vary per n.
double registration_loss(const std::vector<std::vector<LabelMap>>& warped,
                         const std::vector<std::vector<LabelMap>>& fixed,
                         const LossConfig& cfg);
double l2_gradient_penalty(const DisplacementField& d);
double bending_energy(const DisplacementField& d);
double discriminator_loss(const std::vector<double>& logits_real,
                          const std::vector<double>& logits_fake, double omega, double gamma);
double generator_loss(const std::vector<double>& logits_fake);
double smoothing_term(const DiscriminatorFns& disc, const std::vector<DisplacementField>& fake,
                      const std::vector<DisplacementField>& real);

}  // namespace adreg
