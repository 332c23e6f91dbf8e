#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "adreg/grid.hpp"

namespace adreg {

/// Scalar 3D image. Values are stored double precision in index order
/// [z][y][x] (x fastest); disk storage is single precision.
struct Volume {
  Grid3 grid;
  std::vector<double> values;

  Volume() = default;
  Volume(Grid3 g, std::vector<double> v) : grid(g), values(std::move(v)) {
    if (std::int64_t(values.size()) != grid.voxels())
      throw std::invalid_argument("Volume: value count does not match grid");
  }
  explicit Volume(Grid3 g) : grid(g), values(std::size_t(g.voxels()), 0.0) {}

  double& at(std::int64_t x, std::int64_t y, std::int64_t z) {
    return values[std::size_t(grid.index(x, y, z))];
  }
  double at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return values[std::size_t(grid.index(x, y, z))];
  }
};

enum class LabelKind { gland, landmark };

/// Soft label map: values in [0,1], binary at creation, soft after
/// warping or Gaussian filtering.
struct LabelMap {
  Grid3 grid;
  std::vector<double> values;
  LabelKind kind = LabelKind::gland;

  LabelMap() = default;
  LabelMap(Grid3 g, std::vector<double> v, LabelKind k)
      : grid(g), values(std::move(v)), kind(k) {
    if (std::int64_t(values.size()) != grid.voxels())
      throw std::invalid_argument("LabelMap: value count does not match grid");
  }
  LabelMap(Grid3 g, LabelKind k) : grid(g), values(std::size_t(g.voxels()), 0.0), kind(k) {}

  double& at(std::int64_t x, std::int64_t y, std::int64_t z) {
    return values[std::size_t(grid.index(x, y, z))];
  }
  double at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return values[std::size_t(grid.index(x, y, z))];
  }

  double sum() const {
    double s = 0;
    for (double v : values) s += v;
    return s;
  }
};

/// Dense displacement field under the resampling ("inverse") convention:
/// the warped output at grid point x samples the input at x + u(x).
/// Components are stored as consecutive full blocks (x-block, y-block,
/// z-block), each in [z][y][x] order, displacements in mm.
struct DisplacementField {
  Grid3 grid;
  std::vector<double> u;  // 3 * voxels

  DisplacementField() = default;
  explicit DisplacementField(Grid3 g) : grid(g), u(std::size_t(3 * g.voxels()), 0.0) {}
  DisplacementField(Grid3 g, std::vector<double> data) : grid(g), u(std::move(data)) {
    if (std::int64_t(u.size()) != 3 * grid.voxels())
      throw std::invalid_argument("DisplacementField: component count must be 3 x voxels");
  }

  double& at(int c, std::int64_t x, std::int64_t y, std::int64_t z) {
    return u[std::size_t(c) * std::size_t(grid.voxels()) + std::size_t(grid.index(x, y, z))];
  }
  double at(int c, std::int64_t x, std::int64_t y, std::int64_t z) const {
    return u[std::size_t(c) * std::size_t(grid.voxels()) + std::size_t(grid.index(x, y, z))];
  }

  const double* comp(int c) const { return u.data() + std::size_t(c) * std::size_t(grid.voxels()); }
  double* comp(int c) { return u.data() + std::size_t(c) * std::size_t(grid.voxels()); }

  double max_magnitude() const {
    const std::int64_t n = grid.voxels();
    double m = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double dx = u[std::size_t(i)], dy = u[std::size_t(n + i)], dz = u[std::size_t(2 * n + i)];
      m = std::max(m, std::sqrt(dx * dx + dy * dy + dz * dz));
    }
    return m;
  }
};

}  // namespace adreg
