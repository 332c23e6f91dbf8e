#include "adreg/volume_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adreg {

Volume normalize_intensity(const Volume& v) {
  const std::size_t n = v.values.size();
  double mean = 0;
  for (double x : v.values) mean += x;
  mean /= double(n);
  double var = 0;
  for (double x : v.values) var += (x - mean) * (x - mean);
  var /= double(n);
  if (var == 0.0) throw std::runtime_error("normalize_intensity: degenerate intensity range");
  const double inv_sd = 1.0 / std::sqrt(var);
  Volume out(v.grid);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = (v.values[i] - mean) * inv_sd;
  return out;
}

double trilinear_sample(const Grid3& grid, const double* values,
                        double wx, double wy, double wz) {
  const double fx = (wx - grid.origin[0]) / grid.spacing[0];
  const double fy = (wy - grid.origin[1]) / grid.spacing[1];
  const double fz = (wz - grid.origin[2]) / grid.spacing[2];
  const std::int64_t x0 = std::int64_t(std::floor(fx));
  const std::int64_t y0 = std::int64_t(std::floor(fy));
  const std::int64_t z0 = std::int64_t(std::floor(fz));
  const double ax = fx - double(x0), ay = fy - double(y0), az = fz - double(z0);
  const std::int64_t nx = grid.shape[0], ny = grid.shape[1], nz = grid.shape[2];

  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const std::int64_t z = z0 + dz;
    if (z < 0 || z >= nz) continue;
    const double wz8 = dz ? az : 1.0 - az;
    for (int dy = 0; dy < 2; ++dy) {
      const std::int64_t y = y0 + dy;
      if (y < 0 || y >= ny) continue;
      const double wy8 = dy ? ay : 1.0 - ay;
      for (int dx = 0; dx < 2; ++dx) {
        const std::int64_t x = x0 + dx;
        if (x < 0 || x >= nx) continue;
        const double wx8 = dx ? ax : 1.0 - ax;
        acc += wx8 * wy8 * wz8 * values[std::size_t(grid.index(x, y, z))];
      }
    }
  }
  return acc;
}

Volume resample_isotropic(const Volume& v, double target_spacing) {
  if (!(target_spacing > 0.0)) throw std::invalid_argument("resample_isotropic: target spacing must be > 0");
  const Grid3& g = v.grid;
  if (g.spacing[0] == target_spacing && g.spacing[1] == target_spacing &&
      g.spacing[2] == target_spacing)
    return v;  // identity, bit-exact

  const auto ext = g.extent();
  Grid3 out_grid;
  for (int a = 0; a < 3; ++a) {
    if (target_spacing > ext[std::size_t(a)])
      throw std::invalid_argument("resample_isotropic: target spacing exceeds volume extent");
    out_grid.shape[std::size_t(a)] = std::int64_t(std::ceil(ext[std::size_t(a)] / target_spacing));
    out_grid.spacing[std::size_t(a)] = target_spacing;
    // keep the cell min corner: new centers start half a new voxel inside it
    out_grid.origin[std::size_t(a)] =
        g.origin[std::size_t(a)] - 0.5 * g.spacing[std::size_t(a)] + 0.5 * target_spacing;
  }
  out_grid.validate();

  Volume out(out_grid);
  for (std::int64_t z = 0; z < out_grid.shape[2]; ++z)
    for (std::int64_t y = 0; y < out_grid.shape[1]; ++y)
      for (std::int64_t x = 0; x < out_grid.shape[0]; ++x) {
        const auto w = out_grid.world(x, y, z);
        out.at(x, y, z) = trilinear_sample(g, v.values.data(), w[0], w[1], w[2]);
      }
  return out;
}

std::vector<double> gaussian_kernel1d(double sigma_mm, double spacing_mm) {
  if (sigma_mm < 0.0) throw std::invalid_argument("gaussian_kernel1d: negative sigma");
  if (sigma_mm == 0.0) return {};
  const std::int64_t r = std::int64_t(std::ceil(3.0 * sigma_mm / spacing_mm));
  std::vector<double> k(std::size_t(2 * r + 1));
  double sum = 0;
  for (std::int64_t i = -r; i <= r; ++i) {
    const double d = double(i) * spacing_mm;
    const double w = std::exp(-0.5 * d * d / (sigma_mm * sigma_mm));
    k[std::size_t(i + r)] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  return k;
}

namespace {

// 1D zero-padded convolution sweep along one axis of a [z][y][x] block.
void axis_filter(const Grid3& g, std::vector<double>& vals, const std::vector<double>& kernel,
                 int axis) {
  if (kernel.empty()) return;
  const std::int64_t r = std::int64_t(kernel.size() / 2);
  const std::int64_t n = g.shape[std::size_t(axis)];
  const std::int64_t nx = g.shape[0], ny = g.shape[1];
  // strides for (x, y, z)
  const std::int64_t stride = axis == 0 ? 1 : (axis == 1 ? nx : nx * ny);
  std::vector<double> line(static_cast<std::size_t>(n), 0.0);

  auto sweep = [&](std::int64_t base) {
    for (std::int64_t i = 0; i < n; ++i) line[std::size_t(i)] = vals[std::size_t(base + i * stride)];
    for (std::int64_t i = 0; i < n; ++i) {
      double acc = 0;
      const std::int64_t lo = std::max<std::int64_t>(-r, -i);
      const std::int64_t hi = std::min<std::int64_t>(r, n - 1 - i);
      for (std::int64_t t = lo; t <= hi; ++t)
        acc += kernel[std::size_t(t + r)] * line[std::size_t(i + t)];
      vals[std::size_t(base + i * stride)] = acc;
    }
  };

  if (axis == 0) {
    for (std::int64_t z = 0; z < g.shape[2]; ++z)
      for (std::int64_t y = 0; y < ny; ++y) sweep(g.index(0, y, z));
  } else if (axis == 1) {
    for (std::int64_t z = 0; z < g.shape[2]; ++z)
      for (std::int64_t x = 0; x < nx; ++x) sweep(g.index(x, 0, z));
  } else {
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x) sweep(g.index(x, y, 0));
  }
}

}  // namespace

void separable_filter3(const Grid3& grid, std::vector<double>& values,
                       const std::vector<double>& kx, const std::vector<double>& ky,
                       const std::vector<double>& kz) {
  axis_filter(grid, values, kx, 0);
  axis_filter(grid, values, ky, 1);
  axis_filter(grid, values, kz, 2);
}

Volume gaussian_filter3(const Volume& v, double sigma_mm) {
  if (sigma_mm < 0.0) throw std::invalid_argument("gaussian_filter3: negative sigma");
  if (sigma_mm == 0.0) return v;
  Volume out = v;
  separable_filter3(out.grid, out.values, gaussian_kernel1d(sigma_mm, out.grid.spacing[0]),
                    gaussian_kernel1d(sigma_mm, out.grid.spacing[1]),
                    gaussian_kernel1d(sigma_mm, out.grid.spacing[2]));
  return out;
}

LabelMap gaussian_filter3(const LabelMap& l, double sigma_mm) {
  if (sigma_mm < 0.0) throw std::invalid_argument("gaussian_filter3: negative sigma");
  if (sigma_mm == 0.0) return l;
  LabelMap out = l;
  separable_filter3(out.grid, out.values, gaussian_kernel1d(sigma_mm, out.grid.spacing[0]),
                    gaussian_kernel1d(sigma_mm, out.grid.spacing[1]),
                    gaussian_kernel1d(sigma_mm, out.grid.spacing[2]));
  return out;
}

std::array<double, 3> centroid(const LabelMap& l) {
  double sw = 0, cx = 0, cy = 0, cz = 0;
  const Grid3& g = l.grid;
  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x) {
        const double w = l.at(x, y, z);
        if (w == 0.0) continue;
        const auto p = g.world(x, y, z);
        sw += w;
        cx += w * p[0];
        cy += w * p[1];
        cz += w * p[2];
      }
  if (sw <= 0.0) throw std::runtime_error("centroid: empty label");
  return {cx / sw, cy / sw, cz / sw};
}

}  // namespace adreg
