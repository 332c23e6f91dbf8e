#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "adreg/field_ops.hpp"
#include "adreg/losses.hpp"
#include "adreg/nn_ops.hpp"
#include "adreg/rng.hpp"
#include "support.hpp"

using namespace adreg;
using test::grad_check;

namespace {

Tensor rand_label_tensor(const Grid3& g, std::uint64_t seed, std::int64_t n = 1) {
  Rng rng(seed);
  Tensor t({n, 1, g.shape[2], g.shape[1], g.shape[0]});
  for (double& v : t.v) v = rng.uniform01();
  return t;
}

}  // namespace

TEST_CASE("soft_dice: perfect overlap, disjoint, known voxel counts") {
  const Grid3 g = Grid3::isotropic(16, 1.0);
  const LabelMap a = test::sphere_label(g, {7, 7, 7}, 4.0);
  CHECK(soft_dice(a, a) == doctest::Approx(1.0).epsilon(1e-6));

  const LabelMap b = test::sphere_label(g, {3, 3, 3}, 1.5);
  const LabelMap c = test::sphere_label(g, {12, 12, 12}, 1.5);
  const double eps = 1e-7;
  // binary labels: sum of squares equals the plain sum
  CHECK(soft_dice(b, c) == doctest::Approx(eps / (b.sum() + c.sum() + eps)).epsilon(1e-9));

  // brute-force voxel-count oracle on two overlapping spheres
  const LabelMap s1 = test::sphere_label(g, {7, 7, 7}, 4.0);
  const LabelMap s2 = test::sphere_label(g, {10, 7, 7}, 4.0);
  std::int64_t n1 = 0, n2 = 0, ni = 0;
  for (std::size_t i = 0; i < s1.values.size(); ++i) {
    n1 += s1.values[i] > 0.5;
    n2 += s2.values[i] > 0.5;
    ni += s1.values[i] > 0.5 && s2.values[i] > 0.5;
  }
  const double expect = (2.0 * double(ni) + eps) / (double(n1 + n2) + eps);
  CHECK(soft_dice(s1, s2) == doctest::Approx(expect).epsilon(1e-9));
  CHECK(std::abs(soft_dice(s1, s2) - 2.0 * double(ni) / double(n1 + n2)) < 1e-9);
}

TEST_CASE("soft_dice: grid mismatch errors") {
  const LabelMap a = test::sphere_label(Grid3::isotropic(8, 1.0), {4, 4, 4}, 2.0);
  const LabelMap b = test::sphere_label(Grid3::isotropic(8, 2.0), {4, 4, 4}, 2.0);
  CHECK_THROWS_AS(soft_dice(a, b), std::invalid_argument);
}

TEST_CASE("multiscale_dice: identity, single-scale degeneracy, symmetry") {
  const Grid3 g = Grid3::isotropic(16, 2.0);
  const LabelMap a = test::sphere_label(g, {15, 15, 15}, 8.0);
  LossConfig cfg;
  CHECK(multiscale_dice(a, a, cfg) == doctest::Approx(1.0).epsilon(1e-6));

  LossConfig single;
  single.sigmas = {0.0};
  const LabelMap b = test::sphere_label(g, {18, 15, 15}, 8.0);
  CHECK(multiscale_dice(a, b, single) == doctest::Approx(soft_dice(a, b)).epsilon(1e-12));
  CHECK(multiscale_dice(a, b, cfg) == doctest::Approx(multiscale_dice(b, a, cfg)).epsilon(1e-12));
}

TEST_CASE("multiscale_dice: two point labels, per-scale values from explicit Gaussian oracle") {
  // points 2 sigma_max = 64 mm apart on a 2 mm grid; truncated kernels only
  // overlap once 6 sigma spans the separation, so coarse scales overlap and
  // contributions never decrease with sigma
  const Grid3 g({48, 8, 8}, {2, 2, 2});
  LabelMap p(g, LabelKind::landmark), q(g, LabelKind::landmark);
  p.at(7, 4, 4) = 1.0;   // x = 14 mm
  q.at(39, 4, 4) = 1.0;  // x = 78 mm
  LossConfig cfg;

  std::vector<double> per_scale;
  for (double sigma : cfg.sigmas) {
    const LabelMap fp = gaussian_filter3(p, sigma);
    const LabelMap fq = gaussian_filter3(q, sigma);
    // independent oracle: direct sums over the two filtered spikes
    double sp = 0, sq = 0, inter = 0;
    for (std::size_t i = 0; i < fp.values.size(); ++i) {
      sp += fp.values[i] * fp.values[i];
      sq += fq.values[i] * fq.values[i];
      inter += fp.values[i] * fq.values[i];
    }
    const double expect = (2 * inter + cfg.epsilon_dice) / (sp + sq + cfg.epsilon_dice);
    per_scale.push_back(expect);
    CHECK(soft_dice(fp, fq, cfg.epsilon_dice) == doctest::Approx(expect).epsilon(1e-12));
  }
  for (std::size_t i = 1; i < per_scale.size(); ++i) CHECK(per_scale[i] >= per_scale[i - 1]);
  // the two coarsest scales genuinely overlap and increase strictly
  CHECK(per_scale[6] > per_scale[5]);
  CHECK(per_scale[5] > per_scale[4]);

  double mean = 0;
  for (double v : per_scale) mean += v;
  mean /= double(per_scale.size());
  CHECK(multiscale_dice(p, q, cfg) == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("registration_loss: perfect alignment, single pair, hand-computed batch") {
  const Grid3 g = Grid3::isotropic(16, 2.0);
  const LabelMap a = test::sphere_label(g, {16, 16, 16}, 9.0);
  const LabelMap b = test::sphere_label(g, {20, 16, 16}, 9.0);
  LossConfig cfg;

  CHECK(registration_loss({{a}}, {{a}}, cfg) == doctest::Approx(-1.0).epsilon(1e-6));
  // N = 1, M = 1: exactly the negated multiscale dice
  CHECK(registration_loss({{a}}, {{b}}, cfg) ==
        doctest::Approx(-multiscale_dice(a, b, cfg)).epsilon(1e-12));
  // N = 2 with per-image similarities s1, s2 -> -(s1+s2)/2
  const double s1 = multiscale_dice(a, b, cfg);
  const double s2 = multiscale_dice(a, a, cfg);
  CHECK(registration_loss({{a}, {a}}, {{b}, {a}}, cfg) ==
        doctest::Approx(-(s1 + s2) / 2.0).epsilon(1e-12));

  CHECK_THROWS_AS(registration_loss({}, {}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(registration_loss({{}}, {{}}, cfg), std::invalid_argument);

  const double loss = registration_loss({{a}}, {{b}}, cfg);
  CHECK(loss >= -1.0);
  CHECK(loss < 0.0);
}

TEST_CASE("l2_gradient_penalty: constant, linear, nonnegativity") {
  const Grid3 g = Grid3::isotropic(8, 1.5);
  DisplacementField c(g);
  for (std::size_t i = 0; i < c.u.size(); ++i) c.u[i] = 2.5;
  CHECK(l2_gradient_penalty(c) == doctest::Approx(0.0).scale(1).epsilon(1e-15));

  // u_x = alpha * x: one-sided borders are exact on linear fields, so the
  // mean is alpha^2 everywhere
  const double alpha = 0.7;
  DisplacementField lin(g);
  for (std::int64_t z = 0; z < 8; ++z)
    for (std::int64_t y = 0; y < 8; ++y)
      for (std::int64_t x = 0; x < 8; ++x)
        lin.u[std::size_t(g.index(x, y, z))] = alpha * g.world(x, y, z)[0];
  CHECK(l2_gradient_penalty(lin) == doctest::Approx(alpha * alpha).epsilon(1e-12));

  const DisplacementField r = test::smooth_field(g, 3, 1.0, 5.0);
  CHECK(l2_gradient_penalty(r) >= 0.0);
}

TEST_CASE("bending_energy: affine fields vanish; quadratic interior value; nonnegative") {
  const Grid3 g = Grid3::isotropic(9, 1.0);
  AffineParams a;
  a.l(0, 0) = 1.07;
  a.l(0, 1) = 0.04;
  a.l(2, 1) = -0.03;
  a.t(0) = 2.0;
  const DisplacementField aff = affine_to_ddf(a, g);
  CHECK(bending_energy(aff) < 1e-12);

  // u_x = beta x^2 -> d2u/dx2 = 2 beta everywhere (exact for quadratics)
  const double beta = 0.05;
  DisplacementField quad(g);
  for (std::int64_t z = 0; z < 9; ++z)
    for (std::int64_t y = 0; y < 9; ++y)
      for (std::int64_t x = 0; x < 9; ++x) {
        const double wx = g.world(x, y, z)[0];
        quad.u[std::size_t(g.index(x, y, z))] = beta * wx * wx;
      }
  CHECK(bending_energy(quad) == doctest::Approx(4.0 * beta * beta).epsilon(1e-9));

  const DisplacementField r = test::smooth_field(g, 5, 1.0, 5.0);
  CHECK(bending_energy(r) >= 0.0);

  // invariance under adding an affine field
  DisplacementField shifted = r;
  for (std::size_t i = 0; i < r.u.size(); ++i) shifted.u[i] += aff.u[i];
  CHECK(bending_energy(shifted) == doctest::Approx(bending_energy(r)).epsilon(1e-9));

  DisplacementField offset = r;
  for (std::size_t i = 0; i < r.u.size(); ++i) offset.u[i] += 3.0;
  CHECK(l2_gradient_penalty(offset) == doctest::Approx(l2_gradient_penalty(r)).epsilon(1e-9));
}

TEST_CASE("discriminator_loss: analytic anchors") {
  // logits 0, omega 0 -> log 2
  CHECK(discriminator_loss({0.0}, {0.0}, 0.0, 0.1) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // perfect discriminator limit -> only the (gamma/2) omega term remains
  CHECK(discriminator_loss({200.0}, {-200.0}, 3.0, 0.1) ==
        doctest::Approx(0.5 * 0.1 * 3.0).epsilon(1e-9));
  // logits (+2, -2), omega 0 -> softplus(-2)
  CHECK(discriminator_loss({2.0}, {-2.0}, 0.0, 0.1) ==
        doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-12));
  // numerically stable far into saturation
  CHECK(std::isfinite(discriminator_loss({-1000.0}, {1000.0}, 0.0, 0.1)));
}

TEST_CASE("generator_loss: analytic anchors and non-saturation") {
  CHECK(generator_loss({0.0}) == doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-12));
  CHECK(generator_loss({500.0}) == doctest::Approx(0.0).scale(1).epsilon(1e-9));
  // softplus identity: -log sigmoid(-3) = softplus(3)
  CHECK(generator_loss({-3.0}) ==
        doctest::Approx(0.5 * std::log1p(std::exp(3.0))).epsilon(1e-12));
  CHECK(generator_loss({-40.0}) >= 0.0);

  // non-saturation: gradient magnitude w.r.t. the logit stays ~1/2 as D -> 0
  Graph g;
  Var logit = g.leaf(Tensor({1}, {-40.0}), true);
  g.backward(generator_loss_op(logit));
  CHECK(std::abs(logit.grad().v[0]) > 0.49);
}

TEST_CASE("gamma_schedule: endpoints and geometric midpoint") {
  LossConfig cfg;
  CHECK(gamma_schedule(0, 100, cfg) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(gamma_schedule(100, 100, cfg) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(gamma_schedule(50, 100, cfg) == doctest::Approx(0.1).epsilon(1e-12));
  double prev = 1e9;
  for (int t = 0; t <= 20; ++t) {
    const double v = gamma_schedule(t, 20, cfg);
    CHECK(v <= prev);
    prev = v;
  }
  CHECK_THROWS_AS(gamma_schedule(0, 0, cfg), std::invalid_argument);
}

TEST_CASE("discriminator_loss with gamma 0 is minimized at D = P_real/(P_real+P_fake)") {
  // discrete two-point sample space; brute-force minimization over the two
  // pointwise discriminator outputs
  const double p = 0.7, q = 0.4;  // P_real(a), P_fake(a); complements at b
  auto loss_of = [&](double da, double db) {
    // expectation form of Eq. 2 at gamma = 0
    const double term_real = -(p * std::log(da) + (1 - p) * std::log(db)) / 2.0;
    const double term_fake = -(q * std::log(1 - da) + (1 - q) * std::log(1 - db)) / 2.0;
    return term_real + term_fake;
  };
  double best_da = 0.5, best_db = 0.5, best = 1e300;
  for (int i = 1; i < 2000; ++i)
    for (int j = 1; j < 2000; ++j) {
      const double v = loss_of(i / 2000.0, j / 2000.0);
      if (v < best) {
        best = v;
        best_da = i / 2000.0;
        best_db = j / 2000.0;
      }
    }
  CHECK(best_da == doctest::Approx(p / (p + q)).epsilon(1e-2));
  CHECK(best_db == doctest::Approx((1 - p) / (2 - p - q)).epsilon(1e-2));

  // identical distributions: optimum at D = 1/2 with value log 2
  CHECK(loss_of(0.5, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("smoothing_term: constant discriminator gives zero; linear toy closed form") {
  // toy discriminator d(u) = w . u on a single-voxel field, no hidden layers
  const Grid3 g({2, 2, 2}, {1, 1, 1});
  const std::vector<double> wvec = {0.3, -0.7, 0.2, 0.5, -0.1, 0.4, 0.25, -0.3,
                                    0.6, 0.1,  0.2, 0.3, -0.2, 0.15, 0.05, -0.4,
                                    0.35, 0.45, -0.25, 0.2, 0.3, -0.15, 0.1, 0.05};

  DiscriminatorFns toy;
  toy.apply = [&](Var x) {
    Graph& gr = *x.g;
    const std::int64_t n = x.val().shape[0];
    const std::int64_t per = x.val().numel() / n;
    Var wv = gr.constant(Tensor({1, per}, wvec));
    return reshape(linear(flatten2(x), wv, Var{}), {n});
  };
  toy.apply_dual = [&](DualVar x) {
    return DualVar{toy.apply(x.p), toy.apply(x.t)};
  };
  toy.input_grad = [&](const Tensor& batch) {
    Graph gr;
    Var x = gr.leaf(batch, true);
    gr.backward(sum_all(toy.apply(x)));
    return x.grad();
  };

  const DisplacementField f1 = test::smooth_field(g, 11, 0.5, 2.0);
  const DisplacementField f2 = test::smooth_field(g, 12, 0.5, 2.0);
  const double omega = smoothing_term(toy, {f1}, {f2});

  // closed form: gradient of w.u w.r.t. u is w, so
  // omega = (1-D(v))^2 |w|^2 + D(u)^2 |w|^2
  auto dot = [&](const DisplacementField& f) {
    double acc = 0;
    for (std::size_t i = 0; i < f.u.size(); ++i) acc += wvec[i] * f.u[i];
    return acc;
  };
  double w2 = 0;
  for (double v : wvec) w2 += v * v;
  const double d_real = 1.0 / (1.0 + std::exp(-dot(f2)));
  const double d_fake = 1.0 / (1.0 + std::exp(-dot(f1)));
  const double expect = (1 - d_real) * (1 - d_real) * w2 + d_fake * d_fake * w2;
  CHECK(omega == doctest::Approx(expect).epsilon(1e-9));
  CHECK(omega >= 0.0);

  // constant discriminator: zero input gradient -> omega = 0
  DiscriminatorFns flat;
  flat.apply = [&](Var x) {
    Graph& gr = *x.g;
    const std::int64_t n = x.val().shape[0];
    Var wv = gr.constant(Tensor({1, x.val().numel() / n}));
    return reshape(linear(flatten2(x), wv, Var{}), {n});
  };
  flat.apply_dual = [&](DualVar x) { return DualVar{flat.apply(x.p), flat.apply(x.t)}; };
  flat.input_grad = [&](const Tensor& batch) { return Tensor(batch.shape); };
  CHECK(smoothing_term(flat, {f1}, {f2}) == doctest::Approx(0.0).scale(1).epsilon(1e-15));
}

// ---- gradient suite -------------------------------------------------------

TEST_CASE("gradients: soft dice, multiscale dice, registration loss") {
  const Grid3 g = Grid3::isotropic(8, 2.0);
  const Tensor p0 = rand_label_tensor(g, 21, 2);
  const Tensor q0 = rand_label_tensor(g, 22, 2);
  LossConfig cfg;
  cfg.sigmas = {0, 2, 6};  // fewer scales keep the FD loop quick

  auto make = [&](auto build) {
    auto value_of = [&, build](const Tensor& t) {
      Graph gr;
      return build(gr, gr.leaf(t, true)).val().item();
    };
    auto grad_of = [&, build](const Tensor& t) {
      Graph gr;
      Var leaf = gr.leaf(t, true);
      Var loss = build(gr, leaf);
      gr.backward(loss);
      return leaf.grad();
    };
    return std::make_pair(value_of, grad_of);
  };

  auto [v1, g1] = make([&](Graph& gr, Var x) {
    return mean_all(soft_dice_op(x, gr.constant(q0), 1e-7));
  });
  CHECK(grad_check(v1, g1, p0, 1e-6).worst_rel < 1e-6);

  auto [v2, g2] = make([&](Graph& gr, Var x) {
    return mean_all(multiscale_dice_op(x, gr.constant(q0), cfg, g));
  });
  CHECK(grad_check(v2, g2, p0, 1e-6).worst_rel < 1e-5);

  auto [v3, g3] = make([&](Graph& gr, Var x) {
    return registration_loss_op(x, gr.constant(q0), cfg, g);
  });
  CHECK(grad_check(v3, g3, p0, 1e-6).worst_rel < 1e-5);
}

TEST_CASE("gradients: baseline regularizers and adversarial losses") {
  const Grid3 g = Grid3::isotropic(8, 1.5);
  Rng rng(31);
  Tensor f0({1, 3, 8, 8, 8});
  for (double& v : f0.v) v = rng.uniform(-1, 1);

  auto make = [&](auto build) {
    auto value_of = [&, build](const Tensor& t) {
      Graph gr;
      return build(gr, gr.leaf(t, true)).val().item();
    };
    auto grad_of = [&, build](const Tensor& t) {
      Graph gr;
      Var leaf = gr.leaf(t, true);
      gr.backward(build(gr, leaf));
      return leaf.grad();
    };
    return std::make_pair(value_of, grad_of);
  };

  auto [v1, g1] = make([&](Graph&, Var x) { return l2_gradient_penalty_op(x, g); });
  CHECK(grad_check(v1, g1, f0, 1e-6).worst_rel < 1e-6);

  auto [v2, g2] = make([&](Graph&, Var x) { return bending_energy_op(x, g); });
  CHECK(grad_check(v2, g2, f0, 1e-6).worst_rel < 1e-6);

  Tensor lr0({3}, {0.3, -0.8, 1.2});
  Tensor lf0({3}, {-0.5, 0.9, 0.1});
  auto [v3, g3] = make([&](Graph& gr, Var x) {
    return discriminator_loss_op(x, gr.constant(lf0), gr.scalar(2.0), 0.15);
  });
  CHECK(grad_check(v3, g3, lr0, 1e-6).worst_rel < 1e-7);

  auto [v4, g4] = make([&](Graph&, Var x) { return generator_loss_op(x); });
  CHECK(grad_check(v4, g4, lf0, 1e-6).worst_rel < 1e-7);
}
