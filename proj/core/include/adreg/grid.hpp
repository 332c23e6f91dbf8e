#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace adreg {

/// Regular 3D voxel grid with physical spacing. World coordinates are in mm;
/// the world position of voxel index (i,j,k) is origin + (i*sx, j*sy, k*sz).
/// Values live at voxel centers; the cell extent of the grid is
/// [origin - spacing/2, origin + (shape - 1/2) * spacing] per axis.
struct Grid3 {
  std::array<std::int64_t, 3> shape{2, 2, 2};  // voxels per axis (x, y, z)
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel
  std::array<double, 3> origin{0.0, 0.0, 0.0};   // mm, world pos of index (0,0,0)

  Grid3() = default;
  Grid3(std::array<std::int64_t, 3> sh, std::array<double, 3> sp,
        std::array<double, 3> org = {0.0, 0.0, 0.0})
      : shape(sh), spacing(sp), origin(org) {
    validate();
  }

  static Grid3 isotropic(std::int64_t n, double sp, std::array<double, 3> org = {0, 0, 0}) {
    return Grid3({n, n, n}, {sp, sp, sp}, org);
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (shape[a] < 2) throw std::invalid_argument("Grid3: shape entries must be >= 2");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw std::invalid_argument("Grid3: spacing entries must be > 0");
      if (!std::isfinite(origin[a])) throw std::invalid_argument("Grid3: non-finite origin");
    }
  }

  std::int64_t voxels() const { return shape[0] * shape[1] * shape[2]; }

  // Linear index with x fastest: idx = x + nx*(y + ny*z).
  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x + shape[0] * (y + shape[1] * z);
  }

  std::array<double, 3> world(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return {origin[0] + double(x) * spacing[0], origin[1] + double(y) * spacing[1],
            origin[2] + double(z) * spacing[2]};
  }

  // Physical size of the grid per axis (cell view: shape * spacing).
  std::array<double, 3> extent() const {
    return {double(shape[0]) * spacing[0], double(shape[1]) * spacing[1],
            double(shape[2]) * spacing[2]};
  }

  std::array<double, 3> cell_min() const {
    return {origin[0] - 0.5 * spacing[0], origin[1] - 0.5 * spacing[1],
            origin[2] - 0.5 * spacing[2]};
  }
  std::array<double, 3> cell_max() const {
    auto e = extent();
    auto m = cell_min();
    return {m[0] + e[0], m[1] + e[1], m[2] + e[2]};
  }

  bool operator==(const Grid3& o) const {
    return shape == o.shape && spacing == o.spacing && origin == o.origin;
  }
  bool operator!=(const Grid3& o) const { return !(*this == o); }
};

/// Axis-aligned box in world coordinates (mm).
struct BBox3 {
  std::array<double, 3> min{0, 0, 0};
  std::array<double, 3> max{1, 1, 1};

  BBox3() = default;
  BBox3(std::array<double, 3> lo, std::array<double, 3> hi) : min(lo), max(hi) {
    validate();
  }

  void validate() const {
    for (int a = 0; a < 3; ++a)
      if (!(max[a] > min[a])) throw std::invalid_argument("BBox3: max must exceed min");
  }

  std::array<double, 3> size() const {
    return {max[0] - min[0], max[1] - min[1], max[2] - min[2]};
  }
};

}  // namespace adreg
