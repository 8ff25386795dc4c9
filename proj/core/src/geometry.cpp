#include "geopre/geometry.hpp"

#include <atomic>
#include <cmath>

namespace geopre {
namespace geometry {

namespace {
std::atomic<std::uint64_t> g_warp_calls{0};
}

RigidTransform RigidTransform::from_params(const Eigen::Vector3d& rotation,
                                           const Eigen::Vector3d& translation, bool invert) {
  check_arg(rotation.allFinite() && translation.allFinite(),
            "RigidTransform: non-finite parameters");
  RigidTransform t{rotation, translation};
  return invert ? t.inverse() : t;
}

Eigen::Matrix3d RigidTransform::rotation_matrix() const {
  const double angle = rotation.norm();
  if (angle < 1e-12) {
    // I + [w]x is exact to second order; at this magnitude the quadratic
    // term is below double resolution.
    Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
    r(0, 1) = -rotation.z(); r(0, 2) = rotation.y();
    r(1, 0) = rotation.z();  r(1, 2) = -rotation.x();
    r(2, 0) = -rotation.y(); r(2, 1) = rotation.x();
    return r;
  }
  return Eigen::AngleAxisd(angle, rotation / angle).toRotationMatrix();
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix4d& m) {
  Eigen::AngleAxisd aa(m.topLeftCorner<3, 3>());
  RigidTransform t;
  t.rotation = aa.angle() * aa.axis();
  t.translation = m.topRightCorner<3, 1>();
  return t;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform t;
  t.rotation = -rotation;
  t.translation = -(rotation_matrix().transpose() * translation);
  return t;
}

RigidTransform RigidTransform::then(const RigidTransform& next) const {
  return from_matrix(next.matrix() * matrix());
}

Eigen::Vector3d RigidTransform::apply(const Eigen::Vector3d& p) const {
  return rotation_matrix() * p + translation;
}

void CameraIntrinsics::validate() const {
  check_arg(fx > 0 && fy > 0, "CameraIntrinsics: focal lengths must be positive");
  check_arg(width > 0 && height > 0, "CameraIntrinsics: image size must be positive");
  check_arg(cx >= 0 && cx < width, "CameraIntrinsics: cx out of image");
  check_arg(cy >= 0 && cy < height, "CameraIntrinsics: cy out of image");
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = fx; k(1, 1) = fy; k(0, 2) = cx; k(1, 2) = cy;
  return k;
}

Eigen::Matrix3d CameraIntrinsics::inverse_matrix() const {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = 1.0 / fx; k(1, 1) = 1.0 / fy;
  k(0, 2) = -cx / fx; k(1, 2) = -cy / fy;
  return k;
}

DTensor PixelGrid::homogeneous() const {
  check_arg(height > 0 && width > 0, "PixelGrid: empty grid");
  DTensor g({3, height, width});
  const std::int64_t hw = std::int64_t(height) * width;
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      const std::int64_t p = std::int64_t(v) * width + u;
      g[p] = double(u);
      g[hw + p] = double(v);
      g[2 * hw + p] = 1.0;
    }
  }
  return g;
}

DTensor backproject(const DTensor& depth, const CameraIntrinsics& K) {
  check_arg(depth.ndim() == 2, "backproject: depth must be (H,W)");
  K.validate();
  const int h = depth.dim(0), w = depth.dim(1);
  check_arg(h == K.height && w == K.width, "backproject: depth size does not match intrinsics");
  const std::int64_t hw = std::int64_t(h) * w;
  DTensor pts({3, h, w});
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const std::int64_t p = std::int64_t(v) * w + u;
      const double d = depth[p];
      check_arg(d > 0.0, "backproject: nonpositive depth at pixel (" + std::to_string(u) + "," +
                             std::to_string(v) + ")");
      pts[p] = (u - K.cx) / K.fx * d;
      pts[hw + p] = (v - K.cy) / K.fy * d;
      pts[2 * hw + p] = d;
    }
  }
  return pts;
}

ProjectResult project(const DTensor& points, const CameraIntrinsics& K, const RigidTransform& T,
                      double z_floor) {
  check_arg(points.ndim() == 3 && points.dim(0) == 3, "project: points must be (3,H,W)");
  K.validate();
  const int h = points.dim(1), w = points.dim(2);
  const std::int64_t hw = std::int64_t(h) * w;
  const Eigen::Matrix3d r = T.rotation_matrix();
  const Eigen::Vector3d& t = T.translation;
  ProjectResult out;
  out.grid = DTensor({2, h, w});
  out.valid.assign(static_cast<std::size_t>(hw), 0);
  for (std::int64_t p = 0; p < hw; ++p) {
    const Eigen::Vector3d x(points[p], points[hw + p], points[2 * hw + p]);
    const Eigen::Vector3d y = r * x + t;
    const bool ok = y.z() > z_floor;
    const double zc = ok ? y.z() : z_floor;
    const double u = K.fx * y.x() / zc + K.cx;
    const double v = K.fy * y.y() / zc + K.cy;
    out.grid[p] = 2.0 * u / double(K.width - 1) - 1.0;
    out.grid[hw + p] = 2.0 * v / double(K.height - 1) - 1.0;
    out.valid[static_cast<std::size_t>(p)] = ok ? 1 : 0;
  }
  return out;
}

template <typename T>
BasicTensor<T> warp_bilinear_plain(const BasicTensor<T>& src, const DTensor& grid) {
  check_arg(src.ndim() == 3, "warp_bilinear: src must be (C,H,W)");
  check_arg(grid.ndim() == 3 && grid.dim(0) == 2, "warp_bilinear: grid must be (2,H,W)");
  const int c = src.dim(0), hs = src.dim(1), ws = src.dim(2);
  const int h = grid.dim(1), w = grid.dim(2);
  const std::int64_t hw = std::int64_t(h) * w;
  BasicTensor<T> out({c, h, w});
  for (std::int64_t p = 0; p < hw; ++p) {
    double fx = (grid[p] + 1.0) * 0.5 * (ws - 1);
    double fy = (grid[hw + p] + 1.0) * 0.5 * (hs - 1);
    fx = std::min(std::max(fx, 0.0), double(ws - 1));
    fy = std::min(std::max(fy, 0.0), double(hs - 1));
    const int x0 = std::min(int(fx), ws - 1);
    const int y0 = std::min(int(fy), hs - 1);
    const int x1 = std::min(x0 + 1, ws - 1);
    const int y1 = std::min(y0 + 1, hs - 1);
    const double wx = fx - x0, wy = fy - y0;
    for (int ic = 0; ic < c; ++ic) {
      const T* sp = src.data() + std::int64_t(ic) * hs * ws;
      const double v00 = sp[std::int64_t(y0) * ws + x0];
      const double v01 = sp[std::int64_t(y0) * ws + x1];
      const double v10 = sp[std::int64_t(y1) * ws + x0];
      const double v11 = sp[std::int64_t(y1) * ws + x1];
      out[std::int64_t(ic) * hw + p] = static_cast<T>((1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                                      wy * ((1 - wx) * v10 + wx * v11));
    }
  }
  return out;
}

template Tensor warp_bilinear_plain<float>(const Tensor&, const DTensor&);
template DTensor warp_bilinear_plain<double>(const DTensor&, const DTensor&);

double disparity_to_depth_scalar(double disp, double min_depth, double max_depth) {
  check_arg(min_depth > 0 && min_depth < max_depth, "disparity_to_depth: bad depth range");
  check_arg(disp >= 0.0 && disp <= 1.0, "disparity_to_depth: disparity out of [0,1]");
  const double a = 1.0 / max_depth;
  const double b = 1.0 / min_depth - a;
  return 1.0 / (a + disp * b);
}

Se3Var se3_from_params(const ag::Var& rot, const ag::Var& trans, bool invert) {
  using namespace ag;
  check_arg(rot->value.ndim() == 2 && rot->shape()[1] == 3, "se3_from_params: rot must be (N,3)");
  check_arg(trans->value.same_shape(rot->value), "se3_from_params: trans must match rot shape");
  check_arg(all_finite(rot->value) && all_finite(trans->value),
            "se3_from_params: non-finite parameters");

  Var wx = select_col(rot, 0), wy = select_col(rot, 1), wz = select_col(rot, 2);
  Var s = add(add(square(wx), square(wy)), square(wz));
  Var a = rot_coeff_a(s), b = rot_coeff_b(s);

  auto axa = [&](const Var& p, const Var& q) { return mul(b, mul(p, q)); };  // B * p * q
  Se3Var m;
  m.r[0] = sadd(neg(mul(b, add(square(wy), square(wz)))), 1.0f);
  m.r[4] = sadd(neg(mul(b, add(square(wx), square(wz)))), 1.0f);
  m.r[8] = sadd(neg(mul(b, add(square(wx), square(wy)))), 1.0f);
  m.r[1] = sub(axa(wx, wy), mul(a, wz));
  m.r[3] = add(axa(wx, wy), mul(a, wz));
  m.r[2] = add(axa(wx, wz), mul(a, wy));
  m.r[6] = sub(axa(wx, wz), mul(a, wy));
  m.r[5] = sub(axa(wy, wz), mul(a, wx));
  m.r[7] = add(axa(wy, wz), mul(a, wx));

  Var tx = select_col(trans, 0), ty = select_col(trans, 1), tz = select_col(trans, 2);
  if (!invert) {
    m.t = {tx, ty, tz};
    return m;
  }
  // Inverse: R' = R^T, t' = -R^T t.
  Se3Var inv;
  inv.r = {m.r[0], m.r[3], m.r[6], m.r[1], m.r[4], m.r[7], m.r[2], m.r[5], m.r[8]};
  for (int i = 0; i < 3; ++i) {
    inv.t[i] = neg(add(add(mul(m.r[i], tx), mul(m.r[3 + i], ty)), mul(m.r[6 + i], tz)));
  }
  return inv;
}

IntrinsicsVar constant_intrinsics(const CameraIntrinsics& K, int batch) {
  K.validate();
  IntrinsicsVar out;
  out.fx = ag::constant(Tensor({batch}, float(K.fx)));
  out.fy = ag::constant(Tensor({batch}, float(K.fy)));
  out.cx = ag::constant(Tensor({batch}, float(K.cx)));
  out.cy = ag::constant(Tensor({batch}, float(K.cy)));
  out.width = K.width;
  out.height = K.height;
  return out;
}

ReprojectOut reproject_grid(const ag::Var& depth, const IntrinsicsVar& K, const Se3Var& T,
                            float z_floor) {
  using ag::Var;
  const auto& ds = depth->shape();
  check_arg(ds.size() == 4 && ds[1] == 1, "reproject_grid: depth must be (N,1,H,W)");
  const int n = ds[0], h = ds[2], w = ds[3];
  check_arg(h == K.height && w == K.width, "reproject_grid: depth size does not match intrinsics");
  check_arg(K.fx->numel() == n && T.r[0]->numel() == n, "reproject_grid: batch mismatch");
  check_arg(h >= 2 && w >= 2, "reproject_grid: image too small");
  const std::int64_t hw = std::int64_t(h) * w;

  Tensor grid({n, 2, h, w});
  Tensor valid({n, 1, h, w});
  for (int in = 0; in < n; ++in) {
    const double fx = K.fx->value[in], fy = K.fy->value[in];
    const double cx = K.cx->value[in], cy = K.cy->value[in];
    double r[9], t[3];
    for (int i = 0; i < 9; ++i) r[i] = T.r[i]->value[in];
    for (int i = 0; i < 3; ++i) t[i] = T.t[i]->value[in];
    const float* dp = depth->value.data() + std::int64_t(in) * hw;
    float* gx = grid.data() + std::int64_t(in) * 2 * hw;
    float* gy = gx + hw;
    float* vp = valid.data() + std::int64_t(in) * hw;
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        const std::int64_t p = std::int64_t(v) * w + u;
        const double d = dp[p];
        const double x = (u - cx) / fx * d;
        const double y = (v - cy) / fy * d;
        const double z2 = r[6] * x + r[7] * y + r[8] * d + t[2];
        const bool ok = z2 > z_floor;
        const double zc = ok ? z2 : z_floor;
        const double x2 = r[0] * x + r[1] * y + r[2] * d + t[0];
        const double y2 = r[3] * x + r[4] * y + r[5] * d + t[1];
        gx[p] = float(2.0 * (fx * x2 / zc + cx) / double(w - 1) - 1.0);
        gy[p] = float(2.0 * (fy * y2 / zc + cy) / double(h - 1) - 1.0);
        vp[p] = ok ? 1.0f : 0.0f;
      }
    }
  }

  std::vector<Var> inputs = {depth, K.fx, K.fy, K.cx, K.cy};
  for (int i = 0; i < 9; ++i) inputs.push_back(T.r[i]);
  for (int i = 0; i < 3; ++i) inputs.push_back(T.t[i]);

  auto bwd = [n, h, w, hw, z_floor](ag::Node& self) {
    ag::Node& dn = *self.inputs[0];
    auto& kfx = *self.inputs[1];
    auto& kfy = *self.inputs[2];
    auto& kcx = *self.inputs[3];
    auto& kcy = *self.inputs[4];
    Tensor* gd = dn.requires_grad ? &ag::ensure_grad(dn) : nullptr;
    for (int in = 0; in < n; ++in) {
      const double fx = kfx.value[in], fy = kfy.value[in];
      const double cx = kcx.value[in], cy = kcy.value[in];
      double r[9], t[3];
      for (int i = 0; i < 9; ++i) r[i] = self.inputs[5 + i]->value[in];
      for (int i = 0; i < 3; ++i) t[i] = self.inputs[14 + i]->value[in];
      const float* dp = dn.value.data() + std::int64_t(in) * hw;
      const float* ggx = self.grad.data() + std::int64_t(in) * 2 * hw;
      const float* ggy = ggx + hw;
      double afx = 0, afy = 0, acx = 0, acy = 0;
      double ar[9] = {0}, at[3] = {0};
      for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
          const std::int64_t p = std::int64_t(v) * w + u;
          const double gxv = ggx[p], gyv = ggy[p];
          if (gxv == 0.0 && gyv == 0.0 && gd == nullptr) continue;
          const double d = dp[p];
          const double rx = (u - cx) / fx, ry = (v - cy) / fy;
          const double x = rx * d, y = ry * d;
          const double z2 = r[6] * x + r[7] * y + r[8] * d + t[2];
          const bool ok = z2 > z_floor;
          const double zc = ok ? z2 : z_floor;
          const double x2 = r[0] * x + r[1] * y + r[2] * d + t[0];
          const double y2 = r[3] * x + r[4] * y + r[5] * d + t[1];
          const double du2 = gxv * 2.0 / double(w - 1);
          const double dv2 = gyv * 2.0 / double(h - 1);
          const double dx2 = du2 * fx / zc;
          const double dy2 = dv2 * fy / zc;
          const double dzc = -(du2 * fx * x2 + dv2 * fy * y2) / (zc * zc);
          const double dz2 = ok ? dzc : 0.0;
          const double dX = r[0] * dx2 + r[3] * dy2 + r[6] * dz2;
          const double dY = r[1] * dx2 + r[4] * dy2 + r[7] * dz2;
          const double dZ = r[2] * dx2 + r[5] * dy2 + r[8] * dz2;
          ar[0] += dx2 * x; ar[1] += dx2 * y; ar[2] += dx2 * d;
          ar[3] += dy2 * x; ar[4] += dy2 * y; ar[5] += dy2 * d;
          ar[6] += dz2 * x; ar[7] += dz2 * y; ar[8] += dz2 * d;
          at[0] += dx2; at[1] += dy2; at[2] += dz2;
          if (gd) (*gd)[std::int64_t(in) * hw + p] += float(dX * rx + dY * ry + dZ);
          const double drx = dX * d, dry = dY * d;
          afx += du2 * (x2 / zc) - drx * rx / fx;
          afy += dv2 * (y2 / zc) - dry * ry / fy;
          acx += du2 - drx / fx;
          acy += dv2 - dry / fy;
        }
      }
      auto accum = [in](ag::Node& node, double v) {
        if (node.requires_grad) ag::ensure_grad(node)[in] += float(v);
      };
      accum(kfx, afx);
      accum(kfy, afy);
      accum(kcx, acx);
      accum(kcy, acy);
      for (int i = 0; i < 9; ++i) accum(*self.inputs[5 + i], ar[i]);
      for (int i = 0; i < 3; ++i) accum(*self.inputs[14 + i], at[i]);
    }
  };

  ReprojectOut out;
  out.grid = ag::make_op(std::move(grid), std::move(inputs), std::move(bwd));
  out.valid = std::move(valid);
  return out;
}

ag::Var disparity_to_depth(const ag::Var& disp, float min_depth, float max_depth) {
  check_arg(min_depth > 0.0f && min_depth < max_depth, "disparity_to_depth: bad depth range");
  const float a = 1.0f / max_depth;
  const float b = 1.0f / min_depth - a;
  const std::int64_t num = disp->numel();
  Tensor out(disp->shape());
  for (std::int64_t i = 0; i < num; ++i) {
    const float dv = disp->value[i];
    // Closed endpoints tolerate float-saturated sigmoid outputs.
    check_arg(dv >= 0.0f && dv <= 1.0f, "disparity_to_depth: disparity out of [0,1]");
    out[i] = 1.0f / (a + dv * b);
  }
  return ag::make_op(std::move(out), {disp}, [b](ag::Node& self) {
    ag::Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = ag::ensure_grad(in);
    for (std::int64_t i = 0; i < self.numel(); ++i) {
      const float y = self.value[i];
      g[i] += self.grad[i] * (-b * y * y);
    }
  });
}

ag::Var warp_bilinear(const ag::Var& src, const ag::Var& grid) {
  g_warp_calls.fetch_add(1, std::memory_order_relaxed);
  return ag::grid_sample_border(src, grid);
}

std::uint64_t warp_call_count() { return g_warp_calls.load(std::memory_order_relaxed); }
void reset_warp_call_count() { g_warp_calls.store(0, std::memory_order_relaxed); }

}  // namespace geometry
}  // namespace geopre
