#pragma once

#include <array>
#include <vector>

#include "adreg/volume.hpp"

namespace adreg {

/// Zero-mean, unit-variance intensity standardization (population variance).
/// Throws on constant-valued input ("degenerate intensity range").
Volume normalize_intensity(const Volume& v);

/// Resample to an isotropic grid at target_spacing by trilinear interpolation
/// with zero padding. Output shape is ceil(extent / t) per axis; the cell
/// extent is preserved within one voxel. An input already at the target
/// spacing is returned unchanged (bit-exact).
Volume resample_isotropic(const Volume& v, double target_spacing);

/// Separable Gaussian filter, isotropic sigma in mm, kernel radius
/// ceil(3*sigma/spacing) per axis, renormalized to unit sum, zero-padded
/// borders. sigma == 0 returns the input unchanged.
Volume gaussian_filter3(const Volume& v, double sigma_mm);
LabelMap gaussian_filter3(const LabelMap& l, double sigma_mm);

/// Value-weighted mean of voxel world coordinates (mm). Throws on empty label.
std::array<double, 3> centroid(const LabelMap& l);

// --- shared low-level kernels ------------------------------------------

/// Trilinear sample of a scalar grid at a world point; values outside the
/// grid read 0 (out-of-range corners contribute zero).
double trilinear_sample(const Grid3& grid, const double* values,
                        double wx, double wy, double wz);

/// One normalized 1D Gaussian kernel tap set for the given sigma/spacing
/// (radius ceil(3*sigma/spacing), unit sum). Empty when sigma == 0.
std::vector<double> gaussian_kernel1d(double sigma_mm, double spacing_mm);

/// In-place separable convolution of a [z][y][x] block with per-axis unit-sum
/// kernels, zero-padded. Kernels may be empty (skip that axis).
void separable_filter3(const Grid3& grid, std::vector<double>& values,
                       const std::vector<double>& kx, const std::vector<double>& ky,
                       const std::vector<double>& kz);

}  // namespace adreg
