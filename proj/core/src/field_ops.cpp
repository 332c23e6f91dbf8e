#include "adreg/field_ops.hpp"

#include <cmath>
#include <stdexcept>

namespace adreg {

namespace {

void warp_values(const Grid3& img_grid, const double* img_values, const DisplacementField& d,
                 double* out) {
  const Grid3& g = d.grid;
  const std::int64_t n = g.voxels();
  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x) {
        const std::int64_t i = g.index(x, y, z);
        const auto w = g.world(x, y, z);
        out[std::size_t(i)] = trilinear_sample(
            img_grid, img_values, w[0] + d.u[std::size_t(i)], w[1] + d.u[std::size_t(n + i)],
            w[2] + d.u[std::size_t(2 * n + i)]);
      }
}

}  // namespace

Volume warp(const Volume& img, const DisplacementField& d) {
  Volume out(d.grid);
  warp_values(img.grid, img.values.data(), d, out.values.data());
  return out;
}

LabelMap warp(const LabelMap& img, const DisplacementField& d) {
  LabelMap out(d.grid, img.kind);
  warp_values(img.grid, img.values.data(), d, out.values.data());
  return out;
}

std::array<double, 3> sample_field(const DisplacementField& d, double wx, double wy, double wz) {
  return {trilinear_sample(d.grid, d.comp(0), wx, wy, wz),
          trilinear_sample(d.grid, d.comp(1), wx, wy, wz),
          trilinear_sample(d.grid, d.comp(2), wx, wy, wz)};
}

DisplacementField compose(const DisplacementField& local, const AffineParams& global) {
  const Grid3& g = local.grid;
  DisplacementField out(g);
  const std::int64_t n = g.voxels();
  if (global.is_identity()) {
    out.u = local.u;  // bit-exact degenerate case
    return out;
  }
  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x) {
        const std::int64_t i = g.index(x, y, z);
        const auto w = g.world(x, y, z);
        const auto a = global.apply(w);
        const auto ul = sample_field(local, a[0], a[1], a[2]);
        out.u[std::size_t(i)] = a[0] + ul[0] - w[0];
        out.u[std::size_t(n + i)] = a[1] + ul[1] - w[1];
        out.u[std::size_t(2 * n + i)] = a[2] + ul[2] - w[2];
      }
  return out;
}

namespace {

AffineFit fit_field_affine(const DisplacementField& d, const LabelMap* support) {
  const Grid3& g = d.grid;
  if (support && support->grid != g)
    throw std::invalid_argument("decompose_ddf: support grid mismatch");
  std::vector<std::array<double, 3>> src, dst;
  const std::int64_t n = g.voxels();
  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x) {
        const std::int64_t i = g.index(x, y, z);
        if (support && support->values[std::size_t(i)] < 0.5) continue;
        const auto w = g.world(x, y, z);
        src.push_back(w);
        dst.push_back({w[0] + d.u[std::size_t(i)], w[1] + d.u[std::size_t(n + i)],
                       w[2] + d.u[std::size_t(2 * n + i)]});
      }
  if (src.size() < 4) throw std::runtime_error("decompose_ddf: degenerate support");
  return fit_affine_lsq(dst, src);  // A maps x -> x + u(x)
}

}  // namespace

Decomposition decompose_ddf(const DisplacementField& d, const LabelMap* support) {
  const Grid3& g = d.grid;
  const AffineFit fit = fit_field_affine(d, support);
  const AffineParams& a = fit.params;

  // Residual r(x) = u(x) - (A(x) - x) on the grid.
  DisplacementField residual(g);
  const std::int64_t n = g.voxels();
  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x) {
        const std::int64_t i = g.index(x, y, z);
        const auto w = g.world(x, y, z);
        const auto m = a.apply(w);
        residual.u[std::size_t(i)] = d.u[std::size_t(i)] - (m[0] - w[0]);
        residual.u[std::size_t(n + i)] = d.u[std::size_t(n + i)] - (m[1] - w[1]);
        residual.u[std::size_t(2 * n + i)] = d.u[std::size_t(2 * n + i)] - (m[2] - w[2]);
      }

  if (a.is_identity()) return {a, std::move(residual)};

  // local(y) = r^(A^-1(y)) so that compose(local, A) reproduces d.
  const AffineParams inv = a.inverse();
  DisplacementField local(g);
  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x) {
        const std::int64_t i = g.index(x, y, z);
        const auto w = g.world(x, y, z);
        const auto q = inv.apply(w);
        const auto r = sample_field(residual, q[0], q[1], q[2]);
        local.u[std::size_t(i)] = r[0];
        local.u[std::size_t(n + i)] = r[1];
        local.u[std::size_t(2 * n + i)] = r[2];
      }
  return {a, std::move(local)};
}

Decomposition remove_affine_pointwise(const DisplacementField& d) {
  const Grid3& g = d.grid;
  const AffineFit fit = fit_field_affine(d, nullptr);
  const AffineParams& a = fit.params;
  DisplacementField local(g);
  const std::int64_t n = g.voxels();
  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x) {
        const std::int64_t i = g.index(x, y, z);
        const auto w = g.world(x, y, z);
        const auto m = a.apply(w);
        local.u[std::size_t(i)] = d.u[std::size_t(i)] - (m[0] - w[0]);
        local.u[std::size_t(n + i)] = d.u[std::size_t(n + i)] - (m[1] - w[1]);
        local.u[std::size_t(2 * n + i)] = d.u[std::size_t(2 * n + i)] - (m[2] - w[2]);
      }
  return {a, std::move(local)};
}

DisplacementField resample_ddf_to_fov(const DisplacementField& d, const BBox3& src_bbox,
                                      const Grid3& dst_grid, const BBox3& dst_bbox) {
  src_bbox.validate();
  dst_bbox.validate();
  const auto lo = d.grid.cell_min();
  const auto hi = d.grid.cell_max();
  for (int a = 0; a < 3; ++a)
    if (src_bbox.min[std::size_t(a)] < lo[std::size_t(a)] - 1e-9 ||
        src_bbox.max[std::size_t(a)] > hi[std::size_t(a)] + 1e-9)
      throw std::runtime_error("resample_ddf_to_fov: src_bbox exceeds field extent");

  const auto ssz = src_bbox.size();
  const auto dsz = dst_bbox.size();
  std::array<double, 3> lambda, shift;
  for (int a = 0; a < 3; ++a) {
    lambda[std::size_t(a)] = ssz[std::size_t(a)] / dsz[std::size_t(a)];
    shift[std::size_t(a)] = src_bbox.min[std::size_t(a)] - lambda[std::size_t(a)] * dst_bbox.min[std::size_t(a)];
  }

  DisplacementField out(dst_grid);
  const std::int64_t n = dst_grid.voxels();
  for (std::int64_t z = 0; z < dst_grid.shape[2]; ++z)
    for (std::int64_t y = 0; y < dst_grid.shape[1]; ++y)
      for (std::int64_t x = 0; x < dst_grid.shape[0]; ++x) {
        const std::int64_t i = dst_grid.index(x, y, z);
        const auto w = dst_grid.world(x, y, z);
        const double cx = lambda[0] * w[0] + shift[0];
        const double cy = lambda[1] * w[1] + shift[1];
        const double cz = lambda[2] * w[2] + shift[2];
        const auto u = sample_field(d, cx, cy, cz);
        out.u[std::size_t(i)] = u[0] / lambda[0];
        out.u[std::size_t(n + i)] = u[1] / lambda[1];
        out.u[std::size_t(2 * n + i)] = u[2] / lambda[2];
      }
  return out;
}

BBox3 label_bbox(const LabelMap& l, double threshold) {
  const Grid3& g = l.grid;
  std::array<double, 3> mn{1e30, 1e30, 1e30}, mx{-1e30, -1e30, -1e30};
  bool any = false;
  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x) {
        if (l.at(x, y, z) < threshold) continue;
        any = true;
        const auto w = g.world(x, y, z);
        for (int a = 0; a < 3; ++a) {
          mn[std::size_t(a)] = std::min(mn[std::size_t(a)], w[std::size_t(a)]);
          mx[std::size_t(a)] = std::max(mx[std::size_t(a)], w[std::size_t(a)]);
        }
      }
  if (!any) throw std::runtime_error("label_bbox: empty label");
  // pad by half a voxel so the box has volume even for a single voxel
  for (int a = 0; a < 3; ++a) {
    mn[std::size_t(a)] -= 0.5 * g.spacing[std::size_t(a)];
    mx[std::size_t(a)] += 0.5 * g.spacing[std::size_t(a)];
  }
  return BBox3(mn, mx);
}

}  // namespace adreg
