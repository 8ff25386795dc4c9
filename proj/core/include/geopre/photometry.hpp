#pragma once

#include <vector>

#include "geopre/ops.hpp"

namespace geopre {
namespace photometry {

// Per-pixel SSIM over a 3x3 window with reflect padding, averaged over
// channels. Stabilizers C1 = 0.01^2, C2 = 0.03^2. Output (N,1,H,W) in [-1,1].
ag::Var ssim_map(const ag::Var& a, const ag::Var& b);

// (alpha/2)*(1-SSIM) + (1-alpha)*|target-recon|, L1 averaged over channels.
// Output (N,1,H,W).
ag::Var photometric_error(const ag::Var& target, const ag::Var& recon, float alpha = 0.85f);

// Edge-aware smoothness on the mean-normalized disparity (per-sample mean),
// forward differences; image gradient weights averaged over channels. The
// result is the mean of the x-term plus the mean of the y-term.
ag::Var smoothness_loss(const ag::Var& disp, const ag::Var& image);

struct AggregateResult {
  ag::Var loss;       // mean of the per-pixel source minimum over kept pixels
  Tensor auto_mask;   // (N,1,H,W), 1 = kept
  double mask_fraction = 0.0;  // kept / total
};

// Minimum-reprojection aggregation with auto-masking. A pixel is kept when
// the best warped error beats the best identity error by more than 1e-5, so
// exact ties (static camera, static scene) are masked out. With no kept
// pixels the loss is 0.
AggregateResult aggregate_reprojection(const std::vector<ag::Var>& recon_errors,
                                       const std::vector<ag::Var>& identity_errors);

// Per-step loss summary; one entry per scale.
struct LossBundle {
  std::vector<double> photometric;
  std::vector<double> smoothness;
  std::vector<double> mask_fraction;
  double total = 0.0;
  void validate() const;  // finite, non-negative, fractions in [0,1]
};

}  // namespace photometry
}  // namespace geopre
