#pragma once

#include <optional>

#include "adreg/affine.hpp"
#include "adreg/volume.hpp"
#include "adreg/volume_ops.hpp"

namespace adreg {

/// Warp under the resampling convention: out(x) = trilinear sample of img at
/// world point x + u(x). The output lives on d's grid; samples outside the
/// image extent read 0. The image may have its own grid (sampling happens in
/// world coordinates).
Volume warp(const Volume& img, const DisplacementField& d);
LabelMap warp(const LabelMap& img, const DisplacementField& d);

/// Composition local-first-then-global:
///   u_reg(x) = A(x) + u_local^(A(x)) - x
/// where u_local^ is the trilinear interpolant of `local` (zero outside its
/// extent). warp(img, compose(local, global)) matches sequential warping of
/// smooth images.
DisplacementField compose(const DisplacementField& local, const AffineParams& global);

struct Decomposition {
  AffineParams affine;
  DisplacementField local;
};

/// Splits d into (affine, local) with compose(local, affine) reproducing d
/// within interpolation error. The affine is fitted by least squares on the
/// pairs (x, x + u(x)) over `support` voxels (all voxels when omitted);
/// local(y) is the residual resampled at A^-1(y). An exactly affine input
/// yields a local of magnitude < 1e-9 mm.
Decomposition decompose_ddf(const DisplacementField& d,
                            const LabelMap* support = nullptr);

/// Exact affine removal on the grid itself: fits A on (x, x + u(x)) over all
/// voxels and subtracts pointwise, local(x) = u(x) - (A(x) - x). The best-fit
/// affine of the result is the identity to solver precision (least-squares
/// orthogonality). Used to normalize simulated samples.
Decomposition remove_affine_pointwise(const DisplacementField& d);

/// Re-expresses d inside a new field of view. Let C be the diagonal
/// scale-plus-translation affine mapping dst_bbox onto src_bbox (C = Lambda x
/// + c); the output on dst_grid is the conjugation u'(x) = Lambda^-1 u(C(x)).
/// Throws if src_bbox exceeds d's cell extent.
DisplacementField resample_ddf_to_fov(const DisplacementField& d, const BBox3& src_bbox,
                                      const Grid3& dst_grid, const BBox3& dst_bbox);

/// World-space bounding box of the voxels where the label exceeds to
/// threshold. Throws if no voxel qualifies.
BBox3 label_bbox(const LabelMap& l, double threshold = 0.5);

/// Trilinear sample of one displacement component at a world point.
std::array<double, 3> sample_field(const DisplacementField& d, double wx, double wy, double wz);

}  // namespace adreg
