#pragma once

#include <vector>

#include "geopre/graph.hpp"

namespace geopre {
namespace ag {

// ---- elementwise, same output shape ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var minimum(const Var& a, const Var& b);  // subgradient to the smaller input (ties: first)

Var neg(const Var& a);
Var relu(const Var& a);
Var elu(const Var& a);  // alpha = 1
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);
Var softplus(const Var& a);
Var exp_op(const Var& a);
Var log_op(const Var& a);
Var sqrt_op(const Var& a);
Var abs_op(const Var& a);
Var square(const Var& a);

Var smul(const Var& a, float s);           // a * s
Var sadd(const Var& a, float s);           // a + s
Var max_scalar(const Var& a, float s);     // elementwise max(a, s)

// Rotation-coefficient helpers, functions of s = theta^2 with series
// expansion near zero: coeff_a = sin(t)/t, coeff_b = (1-cos(t))/t^2.
Var rot_coeff_a(const Var& s);
Var rot_coeff_b(const Var& s);

// ---- broadcast: per-sample scalar b over field a ----
// b has shape {N} (or {1} for a global scalar); a has shape {N, ...}.
Var bmul(const Var& a, const Var& b);
Var badd(const Var& a, const Var& b);
Var bdiv(const Var& a, const Var& b);

// ---- structure ----
Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& a, int c0, int c1);
Var slice_cols(const Var& a, int c0, int c1);  // 2-D (N,K) -> (N, c1-c0)
Var select_col(const Var& a, int c);           // 2-D (N,K) -> {N}
Var diff_x(const Var& a);                      // forward differences, width shrinks by 1
Var diff_y(const Var& a);
Var repeat_rows(const Var& a, int n);          // (1,K) -> (N,K)

// ---- reductions ----
Var mean_all(const Var& a);     // -> {1}
Var sum_all(const Var& a);      // -> {1}
Var channel_mean(const Var& a);  // (N,C,H,W) -> (N,1,H,W)
Var spatial_mean(const Var& a);  // (N,C,H,W) -> (N,C)
// Mean of a*mask over mask's nonzero entries; mask is constant. If the mask
// is empty the result is 0 and no gradient flows.
Var masked_mean(const Var& a, const Tensor& mask01);

// ---- neural network ----
// x (N,Cin,H,W), w (Cout,Cin,kh,kw), optional bias (Cout) (pass nullptr Var).
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// x (N,K), w (M,K), b (M) optional.
Var linear(const Var& x, const Var& w, const Var& b);
// Running stats are owned by the caller and updated only when training=true.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, bool training, float momentum = 0.1f, float eps = 1e-5f);
Var max_pool_3x3_s2(const Var& x);
Var upsample_nearest2x(const Var& x);
Var upsample_bilinear(const Var& x, int out_h, int out_w);  // align_corners=true
// 3x3 box filter with reflect padding (SSIM window).
Var avg_pool3x3_reflect(const Var& x);
// src (N,C,Hs,Ws), grid (N,2,H,W) normalized to [-1,1] (align_corners=true),
// out-of-range coordinates clamp to the border.
Var grid_sample_border(const Var& src, const Var& grid);

}  // namespace ag
}  // namespace geopre
