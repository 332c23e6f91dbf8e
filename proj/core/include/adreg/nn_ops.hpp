#pragma once

#include "adreg/graph.hpp"

namespace adreg {

/// 3D convolution, kernel k x k x k, padding k/2 ("same" for stride 1).
/// x: [N, Cin, D, H, W], w: [Cout, Cin, k, k, k], b: [Cout] (optional: pass
/// an invalid Var to skip). Output spatial size: (S + 2*(k/2) - k)/stride + 1.
Var conv3d(Var x, Var w, Var b, int stride);

/// Transpose convolution, kernel 3, stride 2: exact adjoint of
/// conv3d(stride=2), doubles each spatial dimension.
/// x: [N, Cin, d, h, w], w: [Cin, Cout, 3, 3, 3], b: [Cout] (optional).
Var deconv3d_x2(Var x, Var w, Var b);

/// Fully connected: x [N, F], w [O, F], b [O] -> [N, O].
Var linear(Var x, Var w, Var b);

/// Trilinear resize to a target spatial shape (half-pixel centers, edge
/// clamped). x: [N, C, d, h, w] -> [N, C, d', h', w'].
Var resize_trilinear(Var x, std::array<std::int64_t, 3> out_dhw);

/// Sums channel groups: [N, F*C, ...] -> [N, C, ...], out[c] = sum_f x[f*C+c].
Var channel_group_sum(Var x, int factor);

/// Global average pool over spatial dims: [N, C, D, H, W] -> [N, C].
Var global_avg_pool(Var x);

/// Batch normalization over (N, spatial) per channel.
struct BnResult {
  Var y;
  Tensor batch_mean;  // [C], values only (for running-stat updates)
  Tensor batch_var;   // [C]
};
BnResult batchnorm_train(Var x, Var gamma, Var beta, double eps = 1e-5);

/// Inference-mode batchnorm with frozen statistics.
Var batchnorm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean,
                   const Tensor& running_var, double eps = 1e-5);

/// Dual-number (forward tangent) variants; tangents propagate with respect
/// to the *input*, parameters carry zero tangent.
DualVar conv3d_dual(DualVar x, Var w, Var b, int stride);
DualVar linear_dual(DualVar x, Var w, Var b);
DualVar lrelu_dual(DualVar x, double slope);
DualVar flatten2_dual(DualVar x);
DualVar batchnorm_train_dual(DualVar x, Var gamma, Var beta, double eps = 1e-5);

}  // namespace adreg
