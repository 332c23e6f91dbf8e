#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "adreg/graph.hpp"
#include "adreg/rng.hpp"
#include "adreg/volume.hpp"

namespace adreg::test {

/// Central finite-difference check of d(loss)/d(leaf) against the reverse-
/// mode gradient. `build` must construct the scalar loss from the given
/// graph, reading leaf values from `x`; it is re-invoked per perturbation.
/// Returns the worst relative error over the probed entries.
struct GradCheck {
  double worst_rel = 0;
  double worst_abs = 0;
  std::size_t probed = 0;
};

inline GradCheck grad_check(std::function<double(const Tensor&)> value_of,
                            std::function<Tensor(const Tensor&)> grad_of, Tensor x0, double h,
                            std::size_t max_probes = 24, std::uint64_t probe_seed = 7) {
  const Tensor analytic = grad_of(x0);
  GradCheck r;
  Rng rng(probe_seed);
  std::vector<std::size_t> idx;
  if (x0.v.size() <= max_probes) {
    for (std::size_t i = 0; i < x0.v.size(); ++i) idx.push_back(i);
  } else {
    for (std::size_t k = 0; k < max_probes; ++k)
      idx.push_back(std::size_t(rng.next_u64() % x0.v.size()));
  }
  for (std::size_t i : idx) {
    Tensor xp = x0, xm = x0;
    xp.v[i] += h;
    xm.v[i] -= h;
    const double fd = (value_of(xp) - value_of(xm)) / (2 * h);
    const double an = analytic.v[i];
    const double abs_err = std::abs(fd - an);
    const double rel = abs_err / std::max({std::abs(fd), std::abs(an), 1e-8});
    if (rel > r.worst_rel) r.worst_rel = rel;
    if (abs_err > r.worst_abs) r.worst_abs = abs_err;
    ++r.probed;
  }
  return r;
}

inline Volume random_volume(const Grid3& g, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  Volume v(g);
  for (double& x : v.values) x = rng.uniform(lo, hi);
  return v;
}

/// Smooth band-limited scalar field (sum of a few long-wavelength cosines).
inline Volume smooth_volume(const Grid3& g, std::uint64_t seed, double min_wavelength_mm) {
  Rng rng(seed);
  Volume v(g);
  const double kmax = 2 * 3.14159265358979323846 / min_wavelength_mm;
  std::vector<double> ks, ph;
  for (int j = 0; j < 9; ++j) ks.push_back(rng.uniform(-kmax, kmax));
  for (int j = 0; j < 3; ++j) ph.push_back(rng.uniform(0, 6.28318));
  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x) {
        const auto w = g.world(x, y, z);
        double acc = 0;
        for (int j = 0; j < 3; ++j)
          acc += std::cos(ks[std::size_t(3 * j)] * w[0] + ks[std::size_t(3 * j + 1)] * w[1] +
                          ks[std::size_t(3 * j + 2)] * w[2] + ph[std::size_t(j)]);
        v.at(x, y, z) = acc / 3.0;
      }
  return v;
}

inline DisplacementField smooth_field(const Grid3& g, std::uint64_t seed, double amp_mm,
                                      double min_wavelength_mm) {
  DisplacementField d(g);
  for (int c = 0; c < 3; ++c) {
    const Volume v = smooth_volume(g, seed + std::uint64_t(100 * c), min_wavelength_mm);
    for (std::int64_t i = 0; i < g.voxels(); ++i)
      d.u[std::size_t(c) * std::size_t(g.voxels()) + std::size_t(i)] = amp_mm * v.values[std::size_t(i)];
  }
  return d;
}

inline LabelMap sphere_label(const Grid3& g, std::array<double, 3> center_mm, double radius_mm,
                             LabelKind kind = LabelKind::gland) {
  LabelMap l(g, kind);
  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x) {
        const auto w = g.world(x, y, z);
        const double d2 = (w[0] - center_mm[0]) * (w[0] - center_mm[0]) +
                          (w[1] - center_mm[1]) * (w[1] - center_mm[1]) +
                          (w[2] - center_mm[2]) * (w[2] - center_mm[2]);
        if (d2 <= radius_mm * radius_mm) l.at(x, y, z) = 1.0;
      }
  return l;
}

}  // namespace adreg::test
