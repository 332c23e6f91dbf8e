#include "adreg/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace adreg {

void LossConfig::validate() const {
  if (sigmas.empty()) throw std::invalid_argument("LossConfig: sigmas must be nonempty");
  for (double s : sigmas)
    if (s < 0 || !std::isfinite(s)) throw std::invalid_argument("LossConfig: bad sigma");
  if (!(gamma_start >= gamma_end) || !(gamma_end > 0))
    throw std::invalid_argument("LossConfig: need gamma_start >= gamma_end > 0");
  if (lambda_adv < 0) throw std::invalid_argument("LossConfig: lambda_adv must be >= 0");
  if (baseline_weight < 0) throw std::invalid_argument("LossConfig: baseline_weight must be >= 0");
  if (!(epsilon_dice > 0)) throw std::invalid_argument("LossConfig: epsilon_dice must be > 0");
}

Var soft_dice_op(Var p, Var q, double eps) {
  if (!p.val().same_shape(q.val())) throw std::invalid_argument("soft_dice: grid mismatch");
  // probabilistic Dice with squared sums in the denominator: exactly 1 for
  // identical (possibly soft) labels, which the multiscale identity needs;
  // coincides with 2|A^B|/(|A|+|B|) on binary labels
  Var inter = sum_samplewise(mul(p, q));
  Var denom = add_scalar(add(sum_samplewise(square(p)), sum_samplewise(square(q))), eps);
  Var numer = add_scalar(scale(inter, 2.0), eps);
  return divide(numer, denom);
}

Var multiscale_dice_op(Var warped, Var fixed, const LossConfig& cfg, const Grid3& grid) {
  cfg.validate();
  Var acc;
  for (double sigma : cfg.sigmas) {
    Var d = soft_dice_op(gauss3_op(warped, sigma, grid), gauss3_op(fixed, sigma, grid),
                         cfg.epsilon_dice);
    acc = acc.valid() ? add(acc, d) : d;
  }
  return scale(acc, 1.0 / double(cfg.sigmas.size()));
}

Var registration_loss_op(Var warped, Var fixed, const LossConfig& cfg, const Grid3& grid) {
  if (warped.val().shape[0] < 1) throw std::invalid_argument("registration_loss: empty batch");
  return neg(mean_all(multiscale_dice_op(warped, fixed, cfg, grid)));
}

Var l2_gradient_penalty_op(Var field, const Grid3& grid) {
  const std::vector<std::int64_t> sh = field.val().shape;
  for (int a = 0; a < 3; ++a)
    if (grid.shape[std::size_t(a)] < 3)
      throw std::invalid_argument("l2_gradient_penalty: grid must be >= 3 per axis");
  Var acc;
  for (int axis = 0; axis < 3; ++axis) {
    Var term = sum_all(square(fd1_op(field, axis, grid.spacing[std::size_t(axis)])));
    acc = acc.valid() ? add(acc, term) : term;
  }
  const double voxels = double(sh[0]) * double(grid.voxels());
  return scale(acc, 1.0 / voxels);
}

Var bending_energy_op(Var field, const Grid3& grid) {
  const std::vector<std::int64_t> sh = field.val().shape;
  for (int a = 0; a < 3; ++a)
    if (grid.shape[std::size_t(a)] < 3)
      throw std::invalid_argument("bending_energy: grid must be >= 3 per axis");
  Var acc;
  for (int axis = 0; axis < 3; ++axis) {
    Var term = sum_all(square(fd2_op(field, axis, grid.spacing[std::size_t(axis)])));
    acc = acc.valid() ? add(acc, term) : term;
  }
  const int pairs[3][2] = {{0, 1}, {1, 2}, {0, 2}};
  for (auto& pr : pairs) {
    Var mixed = fd1_op(fd1_op(field, pr[0], grid.spacing[std::size_t(pr[0])]), pr[1],
                       grid.spacing[std::size_t(pr[1])]);
    acc = add(acc, scale(sum_all(square(mixed)), 2.0));
  }
  const double voxels = double(sh[0]) * double(grid.voxels());
  return scale(acc, 1.0 / voxels);
}

Var discriminator_loss_op(Var logits_real, Var logits_fake, Var omega, double gamma) {
  if (gamma < 0) throw std::invalid_argument("discriminator_loss: gamma must be >= 0");
  // -log D = softplus(-x); -log(1-D) = softplus(x)
  Var lr = mean_all(softplus(neg(logits_real)));
  Var lf = mean_all(softplus(logits_fake));
  Var loss = add(scale(lr, 0.5), scale(lf, 0.5));
  if (omega.valid()) loss = add(loss, scale(omega, 0.5 * gamma));
  return loss;
}

Var generator_loss_op(Var logits_fake) {
  return scale(mean_all(softplus(neg(logits_fake))), 0.5);
}

namespace {

// One side of the smoothing term:
//   mean_i w_i(theta) * ||g_i(theta)||^2,  g = d(sum logits)/d(input)
// where the second-order part is expressed through a forward-tangent pass in
// the direction (1/N) w-bar_i g-bar_i, using the identity
// grad ||g||^2 = 2 <dg, g>. The node's value equals the plain average.
Var omega_side(const DiscriminatorFns& disc, Var batch, Var weights /* [N] */) {
  Graph& g = *batch.g;
  const std::vector<std::int64_t> sh = batch.val().shape;
  const std::int64_t n = sh[0];
  const std::int64_t per = batch.val().numel() / n;

  const Tensor cgrad = disc.input_grad(batch.val());
  if (!cgrad.same_shape(batch.val()))
    throw std::logic_error("smoothing_term: input_grad shape mismatch");

  // s_i = ||g_i||^2 and the weighted tangent direction.
  Tensor s({n});
  for (std::int64_t i = 0; i < n; ++i) {
    double acc = 0;
    for (std::int64_t j = 0; j < per; ++j) {
      const double v = cgrad.v[std::size_t(i * per + j)];
      acc += v * v;
    }
    s.v[std::size_t(i)] = acc;
  }
  Tensor dir = cgrad;
  for (std::int64_t i = 0; i < n; ++i) {
    const double wbar = weights.val().v[std::size_t(i)] / double(n);
    for (std::int64_t j = 0; j < per; ++j) dir.v[std::size_t(i * per + j)] *= wbar;
  }

  DualVar out = disc.apply_dual({batch, g.constant(std::move(dir))});
  Var t = sum_all(out.t);  // value: (1/N) sum_i wbar_i s_i

  // 2t - const(t) carries the second-order part; the product-rule term for
  // the theta-dependence of the weights is added with frozen s_i.
  Var second = sub(scale(t, 2.0), g.scalar(t.val().item()));
  Var corr = mean_all(mul(sub(weights, detach(weights)), g.constant(s)));
  return add(second, corr);
}

}  // namespace

Var smoothing_term_op(const DiscriminatorFns& disc, Var fake_batch, Var real_batch,
                      Var logits_fake, Var logits_real) {
  Var w_real = square(add_scalar(neg(sigmoid(logits_real)), 1.0));  // (1-D)^2
  Var w_fake = square(sigmoid(logits_fake));                        // D^2
  Var o_real = omega_side(disc, real_batch, w_real);
  Var o_fake = omega_side(disc, fake_batch, w_fake);
  return add(o_real, o_fake);
}

Var smoothing_term_op(const DiscriminatorFns& disc, Var fake_batch, Var real_batch) {
  return smoothing_term_op(disc, fake_batch, real_batch, disc.apply(fake_batch),
                           disc.apply(real_batch));
}

double gamma_schedule(std::int64_t step, std::int64_t total_steps, const LossConfig& cfg) {
  if (total_steps < 1) throw std::invalid_argument("gamma_schedule: total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("gamma_schedule: step out of range");
  const double t = double(step) / double(total_steps);
  return cfg.gamma_start * std::pow(cfg.gamma_end / cfg.gamma_start, t);
}

// ---- value-level wrappers -------------------------------------------------

namespace {

Tensor label_tensor(const LabelMap& l) { return scalar_to_tensor(l.values, l.grid); }

}  // namespace

double soft_dice(const LabelMap& p, const LabelMap& q, double eps) {
  if (p.grid != q.grid) throw std::invalid_argument("soft_dice: grid mismatch");
  Graph g;
  return soft_dice_op(g.constant(label_tensor(p)), g.constant(label_tensor(q)), eps)
      .val()
      .v[0];
}

double multiscale_dice(const LabelMap& warped, const LabelMap& fixed, const LossConfig& cfg) {
  if (warped.grid != fixed.grid) throw std::invalid_argument("multiscale_dice: grid mismatch");
  Graph g;
  return multiscale_dice_op(g.constant(label_tensor(warped)), g.constant(label_tensor(fixed)),
                            cfg, warped.grid)
      .val()
      .v[0];
}

double registration_loss(const std::vector<std::vector<LabelMap>>& warped,
                         const std::vector<std::vector<LabelMap>>& fixed,
                         const LossConfig& cfg) {
  if (warped.empty() || warped.size() != fixed.size())
    throw std::invalid_argument("registration_loss: empty or mismatched batch");
  double acc = 0;
  for (std::size_t n = 0; n < warped.size(); ++n) {
    if (warped[n].empty() || warped[n].size() != fixed[n].size())
      throw std::invalid_argument("registration_loss: a pair has no labels");
    double pair_acc = 0;
    for (std::size_t m = 0; m < warped[n].size(); ++m)
      pair_acc += multiscale_dice(warped[n][m], fixed[n][m], cfg);
    acc += pair_acc / double(warped[n].size());
  }
  return -acc / double(warped.size());
}

double l2_gradient_penalty(const DisplacementField& d) {
  Graph g;
  return l2_gradient_penalty_op(g.constant(field_to_tensor(d)), d.grid).val().v[0];
}

double bending_energy(const DisplacementField& d) {
  Graph g;
  return bending_energy_op(g.constant(field_to_tensor(d)), d.grid).val().v[0];
}

double discriminator_loss(const std::vector<double>& logits_real,
                          const std::vector<double>& logits_fake, double omega, double gamma) {
  Graph g;
  Var lr = g.constant(Tensor({std::int64_t(logits_real.size())}, logits_real));
  Var lf = g.constant(Tensor({std::int64_t(logits_fake.size())}, logits_fake));
  return discriminator_loss_op(lr, lf, g.scalar(omega), gamma).val().v[0];
}

double generator_loss(const std::vector<double>& logits_fake) {
  Graph g;
  Var lf = g.constant(Tensor({std::int64_t(logits_fake.size())}, logits_fake));
  return generator_loss_op(lf).val().v[0];
}

double smoothing_term(const DiscriminatorFns& disc, const std::vector<DisplacementField>& fake,
                      const std::vector<DisplacementField>& real) {
  if (fake.empty() || real.empty()) throw std::invalid_argument("smoothing_term: empty batch");
  Graph g;
  const Grid3& grid = fake[0].grid;
  auto batch_tensor = [&](const std::vector<DisplacementField>& fs) {
    Tensor t({std::int64_t(fs.size()), 3, grid.shape[2], grid.shape[1], grid.shape[0]});
    const std::int64_t per = 3 * grid.voxels();
    for (std::size_t i = 0; i < fs.size(); ++i)
      std::copy(fs[i].u.begin(), fs[i].u.end(), t.v.begin() + std::int64_t(i) * per);
    return t;
  };
  Var fb = g.constant(batch_tensor(fake));
  Var rb = g.constant(batch_tensor(real));
  return smoothing_term_op(disc, fb, rb).val().v[0];
}

}  // namespace adreg
