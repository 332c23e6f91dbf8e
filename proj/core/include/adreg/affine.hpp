#pragma once

#include <array>
#include <vector>

#include "adreg/grid.hpp"
#include "adreg/rng.hpp"
#include "adreg/volume.hpp"

namespace adreg {

/// Global affine transform A(x) = L*x + t in world coordinates (mm).
/// Parameter layout (12 reals, row-major 3x4):
///   [L00 L01 L02 t0, L10 L11 L12 t1, L20 L21 L22 t2]
struct AffineParams {
  std::array<double, 12> p{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};

  static AffineParams identity() { return AffineParams{}; }

  double l(int r, int c) const { return p[std::size_t(4 * r + c)]; }
  double& l(int r, int c) { return p[std::size_t(4 * r + c)]; }
  double t(int r) const { return p[std::size_t(4 * r + 3)]; }
  double& t(int r) { return p[std::size_t(4 * r + 3)]; }

  std::array<double, 3> apply(const std::array<double, 3>& x) const {
    return {l(0, 0) * x[0] + l(0, 1) * x[1] + l(0, 2) * x[2] + t(0),
            l(1, 0) * x[0] + l(1, 1) * x[1] + l(1, 2) * x[2] + t(1),
            l(2, 0) * x[0] + l(2, 1) * x[1] + l(2, 2) * x[2] + t(2)};
  }

  double det() const;
  double condition() const;
  AffineParams inverse() const;
  bool is_identity(double tol = 0.0) const;

  /// det(L) > 0 and condition number < 1e6; throws otherwise.
  void validate() const;
};

/// Dense field u(x) = A(x) - x at every grid point.
DisplacementField affine_to_ddf(const AffineParams& a, const Grid3& g);

struct AffineFit {
  AffineParams params;
  double rms_residual = 0.0;
};

/// Least-squares affine mapping p1 -> p0: minimizes sum ||A(p1_i) - p0_i||^2
/// via normal equations. Requires >= 4 non-coplanar pairs; throws on a
/// rank-deficient (coplanar/degenerate) configuration.
AffineFit fit_affine_lsq(const std::vector<std::array<double, 3>>& p0,
                         const std::vector<std::array<double, 3>>& p1);

/// Sampling ranges for random affine augmentation. Defaults: rotation +-10
/// degrees, per-axis scale [0.9, 1.1], shear +-0.05, translation +-5 mm.
struct AffineRanges {
  double rot_deg = 10.0;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double shear = 0.05;
  double trans_mm = 5.0;

  /// Rejects ranges that admit det <= 0.
  void validate() const;
};

/// Deterministic in seed: A = R(angles) * S(scales) * Sh(shears), plus a
/// uniform translation. All draws are uniform within the configured ranges.
AffineParams random_affine(std::uint64_t seed, const AffineRanges& ranges);

}  // namespace adreg
