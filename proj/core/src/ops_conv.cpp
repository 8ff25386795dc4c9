#include <Eigen/Dense>

#include <limits>

#include "geopre/ops.hpp"

namespace geopre {
namespace ag {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

struct ConvDims {
  int n, cin, h, w;
  int cout, kh, kw;
  int stride, pad;
  int oh, ow;
  std::int64_t k() const { return std::int64_t(cin) * kh * kw; }
  std::int64_t p() const { return std::int64_t(oh) * ow; }
};

// col is (K rows) x (P cols), row-major.
void im2col(const float* x, const ConvDims& d, int sample, float* col) {
  const std::int64_t plane = std::int64_t(d.h) * d.w;
  const float* xs = x + std::int64_t(sample) * d.cin * plane;
  const std::int64_t P = d.p();
  for (int ci = 0; ci < d.cin; ++ci) {
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        float* row = col + ((std::int64_t(ci) * d.kh + ky) * d.kw + kx) * P;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * d.stride - d.pad + ky;
          float* dst = row + std::int64_t(oy) * d.ow;
          if (iy < 0 || iy >= d.h) {
            std::fill(dst, dst + d.ow, 0.0f);
            continue;
          }
          const float* src = xs + std::int64_t(ci) * plane + std::int64_t(iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * d.stride - d.pad + kx;
            dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_accum(const float* col, const ConvDims& d, int sample, float* gx) {
  const std::int64_t plane = std::int64_t(d.h) * d.w;
  float* gs = gx + std::int64_t(sample) * d.cin * plane;
  const std::int64_t P = d.p();
  for (int ci = 0; ci < d.cin; ++ci) {
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const float* row = col + ((std::int64_t(ci) * d.kh + ky) * d.kw + kx) * P;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) continue;
          const float* src = row + std::int64_t(oy) * d.ow;
          float* dst = gs + std::int64_t(ci) * plane + std::int64_t(iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * d.stride - d.pad + kx;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

std::vector<float>& col_scratch() {
  thread_local std::vector<float> scratch;
  return scratch;
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const auto& xs = x->shape();
  const auto& ws = w->shape();
  check_arg(xs.size() == 4 && ws.size() == 4, "conv2d: expects 4-D input and weight");
  check_arg(xs[1] == ws[1], "conv2d: input channels mismatch");
  check_arg(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  ConvDims d;
  d.n = xs[0]; d.cin = xs[1]; d.h = xs[2]; d.w = xs[3];
  d.cout = ws[0]; d.kh = ws[2]; d.kw = ws[3];
  d.stride = stride; d.pad = pad;
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  check_arg(d.oh > 0 && d.ow > 0, "conv2d: output would be empty");
  if (b) check_arg(b->value.ndim() == 1 && b->shape()[0] == d.cout, "conv2d: bad bias shape");

  const std::int64_t K = d.k(), P = d.p();
  Tensor out({d.n, d.cout, d.oh, d.ow});
  auto& scratch = col_scratch();
  scratch.resize(static_cast<std::size_t>(K * P));
  CMapRM wm(w->value.data(), d.cout, K);
  for (int s = 0; s < d.n; ++s) {
    im2col(x->value.data(), d, s, scratch.data());
    CMapRM col(scratch.data(), K, P);
    MapRM om(out.data() + std::int64_t(s) * d.cout * P, d.cout, P);
    om.noalias() = wm * col;
    if (b) {
      for (int c = 0; c < d.cout; ++c) om.row(c).array() += b->value[c];
    }
  }

  std::vector<Var> inputs = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_op(std::move(out), std::move(inputs), [d](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    Node* bn = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    const std::int64_t K = d.k(), P = d.p();
    CMapRM wm(wn.value.data(), d.cout, K);

    if (bn && bn->requires_grad) {
      Tensor& gb = ensure_grad(*bn);
      for (int s = 0; s < d.n; ++s) {
        CMapRM gm(self.grad.data() + std::int64_t(s) * d.cout * P, d.cout, P);
        for (int c = 0; c < d.cout; ++c) gb[c] += gm.row(c).sum();
      }
    }
    if (wn.requires_grad) {
      Tensor& gw = ensure_grad(wn);
      MapRM gwm(gw.data(), d.cout, K);
      auto& scratch = col_scratch();
      scratch.resize(static_cast<std::size_t>(K * P));
      for (int s = 0; s < d.n; ++s) {
        im2col(xn.value.data(), d, s, scratch.data());
        CMapRM col(scratch.data(), K, P);
        CMapRM gm(self.grad.data() + std::int64_t(s) * d.cout * P, d.cout, P);
        gwm.noalias() += gm * col.transpose();
      }
    }
    if (xn.requires_grad) {
      Tensor& gx = ensure_grad(xn);
      std::vector<float> gcol(static_cast<std::size_t>(K * P));
      for (int s = 0; s < d.n; ++s) {
        CMapRM gm(self.grad.data() + std::int64_t(s) * d.cout * P, d.cout, P);
        MapRM gc(gcol.data(), K, P);
        gc.noalias() = wm.transpose() * gm;
        col2im_accum(gcol.data(), d, s, gx.data());
      }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const auto& xs = x->shape();
  const auto& ws = w->shape();
  check_arg(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[1],
            "linear: shape mismatch " + Tensor::shape_str(xs) + " vs " + Tensor::shape_str(ws));
  const int n = xs[0], k = xs[1], m = ws[0];
  if (b) check_arg(b->value.ndim() == 1 && b->shape()[0] == m, "linear: bad bias shape");
  Tensor out({n, m});
  CMapRM xm(x->value.data(), n, k);
  CMapRM wm(w->value.data(), m, k);
  MapRM om(out.data(), n, m);
  om.noalias() = xm * wm.transpose();
  if (b) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) om(i, j) += b->value[j];
  }
  std::vector<Var> inputs = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_op(std::move(out), std::move(inputs), [n, k, m](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    Node* bn = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    CMapRM gm(self.grad.data(), n, m);
    if (bn && bn->requires_grad) {
      Tensor& gb = ensure_grad(*bn);
      for (int j = 0; j < m; ++j) gb[j] += gm.col(j).sum();
    }
    if (wn.requires_grad) {
      Tensor& gw = ensure_grad(wn);
      MapRM gwm(gw.data(), m, k);
      CMapRM xm(xn.value.data(), n, k);
      gwm.noalias() += gm.transpose() * xm;
    }
    if (xn.requires_grad) {
      Tensor& gx = ensure_grad(xn);
      MapRM gxm(gx.data(), n, k);
      CMapRM wm(wn.value.data(), m, k);
      gxm.noalias() += gm * wm;
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, bool training, float momentum, float eps) {
  const auto& s = x->shape();
  check_arg(s.size() == 4, "batch_norm: expects 4-D input");
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  check_arg(gamma->numel() == c && beta->numel() == c && running_mean.numel() == c &&
                running_var.numel() == c,
            "batch_norm: channel count mismatch");
  const std::int64_t plane = std::int64_t(h) * w;
  const std::int64_t per_c = std::int64_t(n) * plane;
  check_arg(per_c > 0, "batch_norm: empty input");

  std::vector<float> mean(c), invstd(c);
  if (training) {
    for (int ic = 0; ic < c; ++ic) {
      double acc = 0.0;
      for (int in = 0; in < n; ++in) {
        const float* p = x->value.data() + (std::int64_t(in) * c + ic) * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      }
      const double mu = acc / double(per_c);
      double vacc = 0.0;
      for (int in = 0; in < n; ++in) {
        const float* p = x->value.data() + (std::int64_t(in) * c + ic) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double dlt = p[i] - mu;
          vacc += dlt * dlt;
        }
      }
      const double var = vacc / double(per_c);
      mean[ic] = static_cast<float>(mu);
      invstd[ic] = static_cast<float>(1.0 / std::sqrt(var + eps));
      // Running variance uses the unbiased estimate.
      const double unbiased = per_c > 1 ? vacc / double(per_c - 1) : var;
      running_mean[ic] = (1.0f - momentum) * running_mean[ic] + momentum * float(mu);
      running_var[ic] = (1.0f - momentum) * running_var[ic] + momentum * float(unbiased);
    }
  } else {
    for (int ic = 0; ic < c; ++ic) {
      mean[ic] = running_mean[ic];
      invstd[ic] = 1.0f / std::sqrt(running_var[ic] + eps);
    }
  }

  Tensor out(s);
  for (int in = 0; in < n; ++in) {
    for (int ic = 0; ic < c; ++ic) {
      const float* p = x->value.data() + (std::int64_t(in) * c + ic) * plane;
      float* o = out.data() + (std::int64_t(in) * c + ic) * plane;
      const float mu = mean[ic], is = invstd[ic];
      const float ga = gamma->value[ic], be = beta->value[ic];
      for (std::int64_t i = 0; i < plane; ++i) o[i] = (p[i] - mu) * is * ga + be;
    }
  }

  return make_op(std::move(out), {x, gamma, beta},
                 [n, c, plane, per_c, training, mean = std::move(mean),
                  invstd = std::move(invstd)](Node& self) {
    Node& xn = *self.inputs[0];
    Node& gn = *self.inputs[1];
    Node& bn = *self.inputs[2];
    // Per-channel sums of g and g*xhat are needed for all three gradients.
    std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
    for (int in = 0; in < n; ++in) {
      for (int ic = 0; ic < c; ++ic) {
        const float* xp = xn.value.data() + (std::int64_t(in) * c + ic) * plane;
        const float* gp = self.grad.data() + (std::int64_t(in) * c + ic) * plane;
        const float mu = mean[ic], is = invstd[ic];
        double sg = 0.0, sgx = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) {
          sg += gp[i];
          sgx += gp[i] * double((xp[i] - mu) * is);
        }
        sum_g[ic] += sg;
        sum_gx[ic] += sgx;
      }
    }
    if (gn.requires_grad) {
      Tensor& gg = ensure_grad(gn);
      for (int ic = 0; ic < c; ++ic) gg[ic] += float(sum_gx[ic]);
    }
    if (bn.requires_grad) {
      Tensor& gb = ensure_grad(bn);
      for (int ic = 0; ic < c; ++ic) gb[ic] += float(sum_g[ic]);
    }
    if (xn.requires_grad) {
      Tensor& gx = ensure_grad(xn);
      for (int in = 0; in < n; ++in) {
        for (int ic = 0; ic < c; ++ic) {
          const float* xp = xn.value.data() + (std::int64_t(in) * c + ic) * plane;
          const float* gp = self.grad.data() + (std::int64_t(in) * c + ic) * plane;
          float* gxp = gx.data() + (std::int64_t(in) * c + ic) * plane;
          const float mu = mean[ic], is = invstd[ic];
          const float ga = gn.value[ic];
          if (training) {
            const float mg = float(sum_g[ic] / double(per_c));
            const float mgx = float(sum_gx[ic] / double(per_c));
            for (std::int64_t i = 0; i < plane; ++i) {
              const float xhat = (xp[i] - mu) * is;
              gxp[i] += ga * is * (gp[i] - mg - xhat * mgx);
            }
          } else {
            for (std::int64_t i = 0; i < plane; ++i) gxp[i] += ga * is * gp[i];
          }
        }
      }
    }
  });
}

Var max_pool_3x3_s2(const Var& x) {
  const auto& s = x->shape();
  check_arg(s.size() == 4, "max_pool: expects 4-D input");
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  const int oh = (h - 1) / 2 + 1, ow = (w - 1) / 2 + 1;
  Tensor out({n, c, oh, ow});
  std::vector<std::int32_t> argmax(static_cast<std::size_t>(out.numel()));
  std::int64_t oi = 0;
  for (int in = 0; in < n; ++in) {
    for (int ic = 0; ic < c; ++ic) {
      const float* p = x->value.data() + (std::int64_t(in) * c + ic) * h * w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++oi) {
          float best = -std::numeric_limits<float>::infinity();
          std::int32_t bi = -1;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * 2 - 1 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * 2 - 1 + kx;
              if (ix < 0 || ix >= w) continue;
              const float v = p[std::int64_t(iy) * w + ix];
              if (v > best) {
                best = v;
                bi = std::int32_t(iy * w + ix);
              }
            }
          }
          out[oi] = best;
          argmax[static_cast<std::size_t>(oi)] = bi;
        }
      }
    }
  }
  return make_op(std::move(out), {x},
                 [n, c, h, w, oh, ow, argmax = std::move(argmax)](Node& self) {
    Node& in0 = *self.inputs[0];
    if (!in0.requires_grad) return;
    Tensor& g = ensure_grad(in0);
    std::int64_t oi = 0;
    const std::int64_t ohw = std::int64_t(oh) * ow;
    (void)ohw;
    for (int in = 0; in < n; ++in) {
      for (int ic = 0; ic < c; ++ic) {
        float* gp = g.data() + (std::int64_t(in) * c + ic) * h * w;
        for (std::int64_t p = 0; p < std::int64_t(oh) * ow; ++p, ++oi) {
          gp[argmax[static_cast<std::size_t>(oi)]] += self.grad[oi];
        }
      }
    }
  });
}

}  // namespace ag
}  // namespace geopre
