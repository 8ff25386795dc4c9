#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>

#include "geopre/ops.hpp"
#include "geopre/tensor.hpp"

namespace geopre {
namespace geometry {

// Camera frame convention used throughout: x right, y down, z forward.
// Transforms named T_a_to_b map coordinates expressed in frame a into frame b.

// 6-DoF rigid motion, axis-angle rotation (radians) plus translation in
// scene units. Scene scale is arbitrary (monocular ambiguity).
struct RigidTransform {
  Eigen::Vector3d rotation = Eigen::Vector3d::Zero();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }
  // Rejects non-finite parameters; invert returns the exact inverse motion.
  static RigidTransform from_params(const Eigen::Vector3d& rotation,
                                    const Eigen::Vector3d& translation, bool invert = false);
  static RigidTransform from_matrix(const Eigen::Matrix4d& m);

  Eigen::Matrix4d matrix() const;
  Eigen::Matrix3d rotation_matrix() const;
  RigidTransform inverse() const;
  // this followed by next: compose(A, B).matrix() == B.matrix() * A.matrix().
  RigidTransform then(const RigidTransform& next) const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const;
  double rotation_angle() const { return rotation.norm(); }
};

struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;  // enforces the type invariants
  Eigen::Matrix3d matrix() const;
  Eigen::Matrix3d inverse_matrix() const;
};

// Homogeneous pixel coordinates of the integer lattice [0,W) x [0,H).
struct PixelGrid {
  int height = 0, width = 0;
  // (3, H, W): rows u, v, 1.
  DTensor homogeneous() const;
};

// ---- plain double-precision field operations (renderer, eval, oracles) ----

// depth (H,W) strictly positive -> camera-space points (3,H,W).
DTensor backproject(const DTensor& depth, const CameraIntrinsics& K);

struct ProjectResult {
  DTensor grid;               // (2,H,W), normalized to [-1,1] (align_corners)
  std::vector<std::uint8_t> valid;  // per pixel: transformed z above the floor
};
ProjectResult project(const DTensor& points, const CameraIntrinsics& K, const RigidTransform& T,
                      double z_floor = 1e-3);

// src (C,Hs,Ws) sampled at normalized grid (2,H,W); border-replicate.
template <typename T>
BasicTensor<T> warp_bilinear_plain(const BasicTensor<T>& src, const DTensor& grid);

double disparity_to_depth_scalar(double disp, double min_depth, double max_depth);

// ---- differentiable batched operations ----

// Row-major rotation entries and translation, each shaped {N}.
struct Se3Var {
  std::array<ag::Var, 9> r;
  std::array<ag::Var, 3> t;
};

// rot, trans: (N,3). Rejects non-finite values.
Se3Var se3_from_params(const ag::Var& rot, const ag::Var& trans, bool invert);

// Per-sample pinhole parameters, each shaped {N}.
struct IntrinsicsVar {
  ag::Var fx, fy, cx, cy;
  int width = 0, height = 0;
};

IntrinsicsVar constant_intrinsics(const CameraIntrinsics& K, int batch);

struct ReprojectOut {
  ag::Var grid;  // (N,2,H,W) normalized sampling coordinates
  Tensor valid;  // (N,1,H,W) 0/1, transformed z above the floor
};

// Fused correspondence field: backprojects depth with K, applies T, projects
// with K and normalizes for the sampler. Internals run in double so the
// identity round trip is exact to float resolution.
ReprojectOut reproject_grid(const ag::Var& depth, const IntrinsicsVar& K, const Se3Var& T,
                            float z_floor = 1e-3f);

// disp in [0,1] -> depth in [min_depth, max_depth], monotone decreasing.
ag::Var disparity_to_depth(const ag::Var& disp, float min_depth, float max_depth);

// Differentiable inverse warp (border-replicate bilinear sampler).
ag::Var warp_bilinear(const ag::Var& src, const ag::Var& grid);

// Number of warp_bilinear invocations since process start (or last reset).
// Lets tests assert that pseudo-label training never touches the warp path.
std::uint64_t warp_call_count();
void reset_warp_call_count();

}  // namespace geometry
}  // namespace geopre
