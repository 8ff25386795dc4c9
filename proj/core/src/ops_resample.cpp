#include <cmath>

#include "geopre/ops.hpp"

namespace geopre {
namespace ag {

Var upsample_nearest2x(const Var& x) {
  const auto& s = x->shape();
  check_arg(s.size() == 4, "upsample_nearest2x: expects 4-D input");
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  const int oh = h * 2, ow = w * 2;
  Tensor out({n, c, oh, ow});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const float* src = x->value.data() + (std::int64_t(in) * c + ic) * h * w;
      float* dst = out.data() + (std::int64_t(in) * c + ic) * oh * ow;
      for (int oy = 0; oy < oh; ++oy) {
        const float* srow = src + std::int64_t(oy / 2) * w;
        float* drow = dst + std::int64_t(oy) * ow;
        for (int ox = 0; ox < ow; ++ox) drow[ox] = srow[ox / 2];
      }
    }
  return make_op(std::move(out), {x}, [n, c, h, w, oh, ow](Node& self) {
    Node& in0 = *self.inputs[0];
    if (!in0.requires_grad) return;
    Tensor& g = ensure_grad(in0);
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < c; ++ic) {
        float* dst = g.data() + (std::int64_t(in) * c + ic) * h * w;
        const float* src = self.grad.data() + (std::int64_t(in) * c + ic) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          float* drow = dst + std::int64_t(oy / 2) * w;
          const float* srow = src + std::int64_t(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) drow[ox / 2] += srow[ox];
        }
      }
  });
}

Var upsample_bilinear(const Var& x, int out_h, int out_w) {
  const auto& s = x->shape();
  check_arg(s.size() == 4, "upsample_bilinear: expects 4-D input");
  check_arg(out_h >= 1 && out_w >= 1, "upsample_bilinear: bad output size");
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  // align_corners=true mapping.
  const double sy = out_h > 1 ? double(h - 1) / double(out_h - 1) : 0.0;
  const double sx = out_w > 1 ? double(w - 1) / double(out_w - 1) : 0.0;
  Tensor out({n, c, out_h, out_w});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const float* src = x->value.data() + (std::int64_t(in) * c + ic) * h * w;
      float* dst = out.data() + (std::int64_t(in) * c + ic) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const double fy = oy * sy;
        const int y0 = std::min(int(fy), h - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const float wy = float(fy - y0);
        for (int ox = 0; ox < out_w; ++ox) {
          const double fx = ox * sx;
          const int x0 = std::min(int(fx), w - 1);
          const int x1 = std::min(x0 + 1, w - 1);
          const float wx = float(fx - x0);
          const float v00 = src[std::int64_t(y0) * w + x0];
          const float v01 = src[std::int64_t(y0) * w + x1];
          const float v10 = src[std::int64_t(y1) * w + x0];
          const float v11 = src[std::int64_t(y1) * w + x1];
          dst[std::int64_t(oy) * out_w + ox] = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                               wy * ((1 - wx) * v10 + wx * v11);
        }
      }
    }
  return make_op(std::move(out), {x}, [n, c, h, w, out_h, out_w, sy, sx](Node& self) {
    Node& in0 = *self.inputs[0];
    if (!in0.requires_grad) return;
    Tensor& g = ensure_grad(in0);
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < c; ++ic) {
        float* dst = g.data() + (std::int64_t(in) * c + ic) * h * w;
        const float* src = self.grad.data() + (std::int64_t(in) * c + ic) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const double fy = oy * sy;
          const int y0 = std::min(int(fy), h - 1);
          const int y1 = std::min(y0 + 1, h - 1);
          const float wy = float(fy - y0);
          for (int ox = 0; ox < out_w; ++ox) {
            const double fx = ox * sx;
            const int x0 = std::min(int(fx), w - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const float wx = float(fx - x0);
            const float gv = src[std::int64_t(oy) * out_w + ox];
            dst[std::int64_t(y0) * w + x0] += gv * (1 - wy) * (1 - wx);
            dst[std::int64_t(y0) * w + x1] += gv * (1 - wy) * wx;
            dst[std::int64_t(y1) * w + x0] += gv * wy * (1 - wx);
            dst[std::int64_t(y1) * w + x1] += gv * wy * wx;
          }
        }
      }
  });
}

namespace {
inline int reflect_index(int i, int n) {
  // Reflect without repeating the border sample: -1 -> 1, n -> n-2.
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return i;
}
}  // namespace

Var avg_pool3x3_reflect(const Var& x) {
  const auto& s = x->shape();
  check_arg(s.size() == 4 && s[2] >= 2 && s[3] >= 2, "avg_pool3x3_reflect: needs H,W >= 2");
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor out(s);
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const float* src = x->value.data() + (std::int64_t(in) * c + ic) * h * w;
      float* dst = out.data() + (std::int64_t(in) * c + ic) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int xo = 0; xo < w; ++xo) {
          float acc = 0.0f;
          for (int ky = -1; ky <= 1; ++ky) {
            const int iy = reflect_index(y + ky, h);
            for (int kx = -1; kx <= 1; ++kx) {
              acc += src[std::int64_t(iy) * w + reflect_index(xo + kx, w)];
            }
          }
          dst[std::int64_t(y) * w + xo] = acc / 9.0f;
        }
      }
    }
  return make_op(std::move(out), {x}, [n, c, h, w](Node& self) {
    Node& in0 = *self.inputs[0];
    if (!in0.requires_grad) return;
    Tensor& g = ensure_grad(in0);
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < c; ++ic) {
        float* dst = g.data() + (std::int64_t(in) * c + ic) * h * w;
        const float* src = self.grad.data() + (std::int64_t(in) * c + ic) * h * w;
        for (int y = 0; y < h; ++y) {
          for (int xo = 0; xo < w; ++xo) {
            const float gv = src[std::int64_t(y) * w + xo] / 9.0f;
            for (int ky = -1; ky <= 1; ++ky) {
              const int iy = reflect_index(y + ky, h);
              for (int kx = -1; kx <= 1; ++kx) {
                dst[std::int64_t(iy) * w + reflect_index(xo + kx, w)] += gv;
              }
            }
          }
        }
      }
  });
}

Var grid_sample_border(const Var& src, const Var& grid) {
  const auto& ss = src->shape();
  const auto& gs = grid->shape();
  check_arg(ss.size() == 4 && gs.size() == 4 && gs[1] == 2,
            "grid_sample: src must be (N,C,Hs,Ws) and grid (N,2,H,W)");
  check_arg(ss[0] == gs[0], "grid_sample: batch mismatch");
  const int n = ss[0], c = ss[1], hs = ss[2], ws = ss[3];
  const int h = gs[2], w = gs[3];
  const std::int64_t ghw = std::int64_t(h) * w;
  Tensor out({n, c, h, w});
  for (int in = 0; in < n; ++in) {
    const float* gx = grid->value.data() + std::int64_t(in) * 2 * ghw;
    const float* gy = gx + ghw;
    for (std::int64_t p = 0; p < ghw; ++p) {
      // align_corners=true: [-1,1] spans pixel centers 0..W-1.
      float fx = (gx[p] + 1.0f) * 0.5f * float(ws - 1);
      float fy = (gy[p] + 1.0f) * 0.5f * float(hs - 1);
      fx = std::min(std::max(fx, 0.0f), float(ws - 1));
      fy = std::min(std::max(fy, 0.0f), float(hs - 1));
      const int x0 = std::min(int(fx), ws - 1);
      const int y0 = std::min(int(fy), hs - 1);
      const int x1 = std::min(x0 + 1, ws - 1);
      const int y1 = std::min(y0 + 1, hs - 1);
      const float wx = fx - float(x0);
      const float wy = fy - float(y0);
      for (int ic = 0; ic < c; ++ic) {
        const float* sp = src->value.data() + (std::int64_t(in) * c + ic) * hs * ws;
        const float v00 = sp[std::int64_t(y0) * ws + x0];
        const float v01 = sp[std::int64_t(y0) * ws + x1];
        const float v10 = sp[std::int64_t(y1) * ws + x0];
        const float v11 = sp[std::int64_t(y1) * ws + x1];
        out.data()[((std::int64_t(in) * c + ic) * h) * w + p] =
            (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
      }
    }
  }
  return make_op(std::move(out), {src, grid}, [n, c, hs, ws, ghw](Node& self) {
    Node& sn = *self.inputs[0];
    Node& gn = *self.inputs[1];
    const bool need_src = sn.requires_grad;
    const bool need_grid = gn.requires_grad;
    Tensor* gsrc = need_src ? &ensure_grad(sn) : nullptr;
    Tensor* ggrid = need_grid ? &ensure_grad(gn) : nullptr;
    for (int in = 0; in < n; ++in) {
      const float* gx = gn.value.data() + std::int64_t(in) * 2 * ghw;
      const float* gy = gx + ghw;
      for (std::int64_t p = 0; p < ghw; ++p) {
        const float rawx = (gx[p] + 1.0f) * 0.5f * float(ws - 1);
        const float rawy = (gy[p] + 1.0f) * 0.5f * float(hs - 1);
        const bool inx = rawx > 0.0f && rawx < float(ws - 1);
        const bool iny = rawy > 0.0f && rawy < float(hs - 1);
        const float fx = std::min(std::max(rawx, 0.0f), float(ws - 1));
        const float fy = std::min(std::max(rawy, 0.0f), float(hs - 1));
        const int x0 = std::min(int(fx), ws - 1);
        const int y0 = std::min(int(fy), hs - 1);
        const int x1 = std::min(x0 + 1, ws - 1);
        const int y1 = std::min(y0 + 1, hs - 1);
        const float wx = fx - float(x0);
        const float wy = fy - float(y0);
        float dfx = 0.0f, dfy = 0.0f;
        for (int ic = 0; ic < c; ++ic) {
          const std::int64_t base = (std::int64_t(in) * c + ic) * hs * ws;
          const float gv = self.grad[((std::int64_t(in) * c + ic) * ghw) + p];
          if (need_src) {
            float* sp = gsrc->data() + base;
            sp[std::int64_t(y0) * ws + x0] += gv * (1 - wy) * (1 - wx);
            sp[std::int64_t(y0) * ws + x1] += gv * (1 - wy) * wx;
            sp[std::int64_t(y1) * ws + x0] += gv * wy * (1 - wx);
            sp[std::int64_t(y1) * ws + x1] += gv * wy * wx;
          }
          if (need_grid) {
            const float* sp = sn.value.data() + base;
            const float v00 = sp[std::int64_t(y0) * ws + x0];
            const float v01 = sp[std::int64_t(y0) * ws + x1];
            const float v10 = sp[std::int64_t(y1) * ws + x0];
            const float v11 = sp[std::int64_t(y1) * ws + x1];
            dfx += gv * ((1 - wy) * (v01 - v00) + wy * (v11 - v10));
            dfy += gv * ((1 - wx) * (v10 - v00) + wx * (v11 - v01));
          }
        }
        if (need_grid) {
          float* ggx = ggrid->data() + std::int64_t(in) * 2 * ghw;
          float* ggy = ggx + ghw;
          // Border-clamped samples are constant in the clamped direction.
          if (inx) ggx[p] += dfx * 0.5f * float(ws - 1);
          if (iny) ggy[p] += dfy * 0.5f * float(hs - 1);
        }
      }
    }
  });
}

}  // namespace ag
}  // namespace geopre
