#include "adreg/affine.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace adreg {

namespace {

Eigen::Matrix3d linear_part(const AffineParams& a) {
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = a.l(r, c);
  return m;
}

}  // namespace

double AffineParams::det() const { return linear_part(*this).determinant(); }

double AffineParams::condition() const {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(linear_part(*this));
  const auto& s = svd.singularValues();
  if (s(2) <= 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / s(2);
}

AffineParams AffineParams::inverse() const {
  const Eigen::Matrix3d li = linear_part(*this).inverse();
  const Eigen::Vector3d ti = -li * Eigen::Vector3d(t(0), t(1), t(2));
  AffineParams out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.l(r, c) = li(r, c);
    out.t(r) = ti(r);
  }
  return out;
}

bool AffineParams::is_identity(double tol) const {
  const AffineParams id;
  for (int i = 0; i < 12; ++i)
    if (std::abs(p[std::size_t(i)] - id.p[std::size_t(i)]) > tol) return false;
  return true;
}

void AffineParams::validate() const {
  for (double v : p)
    if (!std::isfinite(v)) throw std::invalid_argument("AffineParams: non-finite parameter");
  if (!(det() > 0.0)) throw std::invalid_argument("AffineParams: det(L) must be > 0");
  if (!(condition() < 1e6)) throw std::invalid_argument("AffineParams: ill-conditioned L");
}

DisplacementField affine_to_ddf(const AffineParams& a, const Grid3& g) {
  DisplacementField d(g);
  const std::int64_t n = g.voxels();
  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x) {
        const auto w = g.world(x, y, z);
        const auto m = a.apply(w);
        const std::int64_t i = g.index(x, y, z);
        d.u[std::size_t(i)] = m[0] - w[0];
        d.u[std::size_t(n + i)] = m[1] - w[1];
        d.u[std::size_t(2 * n + i)] = m[2] - w[2];
      }
  return d;
}

AffineFit fit_affine_lsq(const std::vector<std::array<double, 3>>& p0,
                         const std::vector<std::array<double, 3>>& p1) {
  if (p0.size() != p1.size()) throw std::invalid_argument("fit_affine_lsq: point count mismatch");
  if (p0.size() < 4) throw std::invalid_argument("fit_affine_lsq: need >= 4 point pairs");

  // Normal equations: M a_r = b_r per output row, with homogeneous source
  // coordinates q = [x y z 1].
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  Eigen::Matrix<double, 4, 3> b = Eigen::Matrix<double, 4, 3>::Zero();
  for (std::size_t i = 0; i < p1.size(); ++i) {
    const Eigen::Vector4d q(p1[i][0], p1[i][1], p1[i][2], 1.0);
    m += q * q.transpose();
    for (int r = 0; r < 3; ++r) b.col(r) += q * p0[i][r];
  }

  Eigen::FullPivLU<Eigen::Matrix4d> lu(m);
  lu.setThreshold(1e-10);
  if (lu.rank() < 4)
    throw std::runtime_error("fit_affine_lsq: degenerate (coplanar) point configuration");

  AffineParams a;
  for (int r = 0; r < 3; ++r) {
    const Eigen::Vector4d sol = lu.solve(b.col(r));
    a.l(r, 0) = sol(0);
    a.l(r, 1) = sol(1);
    a.l(r, 2) = sol(2);
    a.t(r) = sol(3);
  }

  double ss = 0;
  for (std::size_t i = 0; i < p1.size(); ++i) {
    const auto m3 = a.apply(p1[i]);
    for (int r = 0; r < 3; ++r) ss += (m3[std::size_t(r)] - p0[i][std::size_t(r)]) * (m3[std::size_t(r)] - p0[i][std::size_t(r)]);
  }
  return {a, std::sqrt(ss / double(p1.size()))};
}

void AffineRanges::validate() const {
  if (!(scale_lo > 0.0) || scale_hi < scale_lo)
    throw std::invalid_argument("AffineRanges: scale range admits det <= 0");
  if (shear < 0.0 || shear > 0.3)
    throw std::invalid_argument("AffineRanges: shear range admits det <= 0 (must be in [0, 0.3])");
  if (rot_deg < 0.0 || trans_mm < 0.0)
    throw std::invalid_argument("AffineRanges: negative range width");
}

AffineParams random_affine(std::uint64_t seed, const AffineRanges& ranges) {
  ranges.validate();
  Rng rng(seed);
  const double d2r = 3.14159265358979323846 / 180.0;
  const double ax = rng.uniform(-ranges.rot_deg, ranges.rot_deg) * d2r;
  const double ay = rng.uniform(-ranges.rot_deg, ranges.rot_deg) * d2r;
  const double az = rng.uniform(-ranges.rot_deg, ranges.rot_deg) * d2r;
  Eigen::Matrix3d rx, ry, rz;
  rx << 1, 0, 0, 0, std::cos(ax), -std::sin(ax), 0, std::sin(ax), std::cos(ax);
  ry << std::cos(ay), 0, std::sin(ay), 0, 1, 0, -std::sin(ay), 0, std::cos(ay);
  rz << std::cos(az), -std::sin(az), 0, std::sin(az), std::cos(az), 0, 0, 0, 1;

  Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
  for (int a = 0; a < 3; ++a) s(a, a) = rng.uniform(ranges.scale_lo, ranges.scale_hi);

  Eigen::Matrix3d sh = Eigen::Matrix3d::Identity();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (r != c) sh(r, c) = rng.uniform(-ranges.shear, ranges.shear);

  const Eigen::Matrix3d lmat = rz * ry * rx * s * sh;

  AffineParams out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.l(r, c) = lmat(r, c);
    out.t(r) = rng.uniform(-ranges.trans_mm, ranges.trans_mm);
  }
  out.validate();
  return out;
}

}  // namespace adreg
