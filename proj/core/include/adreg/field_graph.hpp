#pragma once

#include "adreg/graph.hpp"
#include "adreg/grid.hpp"
#include "adreg/volume.hpp"

namespace adreg {

/// Differentiable warp: out[n,c](x) = trilinear sample of img[n,c] at world
/// point x + u[n](x), zero outside. img, field and output share `grid`
/// (training-path contract; the value-level warp in field_ops.hpp handles
/// distinct grids). img: [N,C,D,H,W], field: [N,3,D,H,W].
Var warp_op(Var img, Var field, const Grid3& grid);

/// Differentiable composition u_reg(x) = A(x) + u_local^(A(x)) - x.
/// local: [N,3,D,H,W], affine: [N,12] (row-major 3x4).
Var compose_op(Var local, Var affine, const Grid3& grid);

/// Differentiable separable Gaussian filter (per channel, unit-sum kernel,
/// zero padding). sigma == 0 is a pass-through.
Var gauss3_op(Var x, double sigma_mm, const Grid3& grid);

/// First derivative along a spatial axis (0=x,1=y,2=z), central differences
/// in mm, one-sided at the borders. x: [N,C,D,H,W].
Var fd1_op(Var x, int axis, double spacing_mm);

/// Second derivative along a spatial axis, central in mm, one-sided (shifted
/// stencil) at the borders.
Var fd2_op(Var x, int axis, double spacing_mm);

// Tensor bridging helpers (batch size 1 unless stated).
Tensor field_to_tensor(const DisplacementField& d);
DisplacementField tensor_to_field(const Tensor& t, const Grid3& g, std::int64_t sample = 0);
Tensor scalar_to_tensor(const std::vector<double>& values, const Grid3& g);

}  // namespace adreg
