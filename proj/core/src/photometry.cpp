#include "geopre/photometry.hpp"

#include <cmath>

namespace geopre {
namespace photometry {

namespace {

constexpr float kC1 = 0.01f * 0.01f;
constexpr float kC2 = 0.03f * 0.03f;

inline int reflect_index(int i, int n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return i;
}

// dst(p) = mean of src over the reflected 3x3 window around p.
void box3(const float* src, int h, int w, float* dst) {
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int ky = -1; ky <= 1; ++ky) {
        const int iy = reflect_index(y + ky, h);
        for (int kx = -1; kx <= 1; ++kx) {
          acc += src[std::int64_t(iy) * w + reflect_index(x + kx, w)];
        }
      }
      dst[std::int64_t(y) * w + x] = acc / 9.0f;
    }
  }
}

// Adjoint of box3: scatters g(p)/9 into the same reflected window.
void box3_adjoint(const float* g, int h, int w, float* dst) {
  std::fill(dst, dst + std::int64_t(h) * w, 0.0f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float gv = g[std::int64_t(y) * w + x] / 9.0f;
      for (int ky = -1; ky <= 1; ++ky) {
        const int iy = reflect_index(y + ky, h);
        for (int kx = -1; kx <= 1; ++kx) {
          dst[std::int64_t(iy) * w + reflect_index(x + kx, w)] += gv;
        }
      }
    }
  }
}

struct Moments {
  std::vector<float> mu_a, mu_b, e_aa, e_bb, e_ab, sq;
  void resize(std::int64_t hw) {
    mu_a.resize(hw); mu_b.resize(hw); e_aa.resize(hw); e_bb.resize(hw); e_ab.resize(hw);
    sq.resize(hw);
  }
};

void window_moments(const float* a, const float* b, int h, int w, Moments& m) {
  const std::int64_t hw = std::int64_t(h) * w;
  m.resize(hw);
  box3(a, h, w, m.mu_a.data());
  box3(b, h, w, m.mu_b.data());
  for (std::int64_t i = 0; i < hw; ++i) m.sq[i] = a[i] * a[i];
  box3(m.sq.data(), h, w, m.e_aa.data());
  for (std::int64_t i = 0; i < hw; ++i) m.sq[i] = b[i] * b[i];
  box3(m.sq.data(), h, w, m.e_bb.data());
  for (std::int64_t i = 0; i < hw; ++i) m.sq[i] = a[i] * b[i];
  box3(m.sq.data(), h, w, m.e_ab.data());
}

inline float ssim_from_moments(const Moments& m, std::int64_t i) {
  const float mu_a = m.mu_a[i], mu_b = m.mu_b[i];
  const float n1 = 2.0f * mu_a * mu_b + kC1;
  const float n2 = 2.0f * (m.e_ab[i] - mu_a * mu_b) + kC2;
  const float d1 = mu_a * mu_a + mu_b * mu_b + kC1;
  const float d2 = (m.e_aa[i] - mu_a * mu_a) + (m.e_bb[i] - mu_b * mu_b) + kC2;
  return (n1 * n2) / (d1 * d2);
}

// Routes an upstream per-pixel gradient of the channel's SSIM into ga/gb.
// coef(p) = upstream gradient already scaled for this channel.
void ssim_channel_backward(const float* a, const float* b, const float* coef, int h, int w,
                           float* ga, float* gb) {
  const std::int64_t hw = std::int64_t(h) * w;
  Moments m;
  window_moments(a, b, h, w, m);
  std::vector<float> c_mu_a(hw), c_mu_b(hw), c_var(hw), c_cov(hw), adj(hw);
  for (std::int64_t i = 0; i < hw; ++i) {
    const float mu_a = m.mu_a[i], mu_b = m.mu_b[i];
    const float n1 = 2.0f * mu_a * mu_b + kC1;
    const float n2 = 2.0f * (m.e_ab[i] - mu_a * mu_b) + kC2;
    const float d1 = mu_a * mu_a + mu_b * mu_b + kC1;
    const float d2 = (m.e_aa[i] - mu_a * mu_a) + (m.e_bb[i] - mu_b * mu_b) + kC2;
    const float inv_dd = 1.0f / (d1 * d2);
    const float ssim = n1 * n2 * inv_dd;
    const float g = coef[i];
    // Partials wrt the five independent window moments.
    c_mu_a[i] = g * (2.0f * mu_b * (n2 - n1) * inv_dd - 2.0f * mu_a * ssim * (1.0f / d1 - 1.0f / d2));
    c_mu_b[i] = g * (2.0f * mu_a * (n2 - n1) * inv_dd - 2.0f * mu_b * ssim * (1.0f / d1 - 1.0f / d2));
    c_var[i] = g * (-ssim / d2);        // shared by E[a^2] and E[b^2]
    c_cov[i] = g * (2.0f * n1 * inv_dd);  // E[ab]
  }
  box3_adjoint(c_mu_a.data(), h, w, adj.data());
  for (std::int64_t i = 0; i < hw; ++i) ga[i] += adj[i];
  box3_adjoint(c_mu_b.data(), h, w, adj.data());
  for (std::int64_t i = 0; i < hw; ++i) gb[i] += adj[i];
  box3_adjoint(c_var.data(), h, w, adj.data());
  for (std::int64_t i = 0; i < hw; ++i) {
    ga[i] += 2.0f * a[i] * adj[i];
    gb[i] += 2.0f * b[i] * adj[i];
  }
  box3_adjoint(c_cov.data(), h, w, adj.data());
  for (std::int64_t i = 0; i < hw; ++i) {
    ga[i] += b[i] * adj[i];
    gb[i] += a[i] * adj[i];
  }
}

void check_image_pair(const ag::Var& a, const ag::Var& b, const char* op) {
  check_arg(a->value.ndim() == 4, std::string(op) + ": expects 4-D images");
  check_arg(a->value.same_shape(b->value),
            std::string(op) + ": shape mismatch " + Tensor::shape_str(a->shape()) + " vs " +
                Tensor::shape_str(b->shape()));
}

}  // namespace

ag::Var ssim_map(const ag::Var& a, const ag::Var& b) {
  check_image_pair(a, b, "ssim_map");
  const auto& s = a->shape();
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  check_arg(h >= 2 && w >= 2, "ssim_map: image too small for 3x3 window");
  const std::int64_t hw = std::int64_t(h) * w;
  Tensor out({n, 1, h, w});
  Moments m;
  for (int in = 0; in < n; ++in) {
    float* dst = out.data() + std::int64_t(in) * hw;
    for (int ic = 0; ic < c; ++ic) {
      const std::int64_t off = (std::int64_t(in) * c + ic) * hw;
      window_moments(a->value.data() + off, b->value.data() + off, h, w, m);
      for (std::int64_t i = 0; i < hw; ++i) dst[i] += ssim_from_moments(m, i) / float(c);
    }
  }
  return ag::make_op(std::move(out), {a, b}, [n, c, h, w, hw](ag::Node& self) {
    ag::Node& an = *self.inputs[0];
    ag::Node& bn = *self.inputs[1];
    if (!an.requires_grad && !bn.requires_grad) return;
    Tensor* ga = an.requires_grad ? &ag::ensure_grad(an) : nullptr;
    Tensor* gb = bn.requires_grad ? &ag::ensure_grad(bn) : nullptr;
    std::vector<float> coef(hw);
    std::vector<float> scratch((ga && gb) ? 0 : hw);
    for (int in = 0; in < n; ++in) {
      const float* g = self.grad.data() + std::int64_t(in) * hw;
      for (std::int64_t i = 0; i < hw; ++i) coef[i] = g[i] / float(c);
      for (int ic = 0; ic < c; ++ic) {
        const std::int64_t off = (std::int64_t(in) * c + ic) * hw;
        float* gap = ga ? ga->data() + off : scratch.data();
        float* gbp = gb ? gb->data() + off : scratch.data();
        if (!ga || !gb) std::fill(scratch.begin(), scratch.end(), 0.0f);
        ssim_channel_backward(an.value.data() + off, bn.value.data() + off, coef.data(), h, w,
                              gap, gbp);
      }
    }
  });
}

ag::Var photometric_error(const ag::Var& target, const ag::Var& recon, float alpha) {
  check_image_pair(target, recon, "photometric_error");
  check_arg(alpha >= 0.0f && alpha <= 1.0f, "photometric_error: alpha out of [0,1]");
  const auto& s = target->shape();
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  check_arg(h >= 2 && w >= 2, "photometric_error: image too small");
  const std::int64_t hw = std::int64_t(h) * w;
  Tensor out({n, 1, h, w});
  Moments m;
  for (int in = 0; in < n; ++in) {
    float* dst = out.data() + std::int64_t(in) * hw;
    for (int ic = 0; ic < c; ++ic) {
      const std::int64_t off = (std::int64_t(in) * c + ic) * hw;
      const float* a = target->value.data() + off;
      const float* b = recon->value.data() + off;
      window_moments(a, b, h, w, m);
      for (std::int64_t i = 0; i < hw; ++i) {
        const float ssim = ssim_from_moments(m, i);
        dst[i] += (alpha * 0.5f * (1.0f - ssim) + (1.0f - alpha) * std::fabs(a[i] - b[i])) /
                  float(c);
      }
    }
  }
  return ag::make_op(std::move(out), {target, recon}, [n, c, h, w, hw, alpha](ag::Node& self) {
    ag::Node& an = *self.inputs[0];
    ag::Node& bn = *self.inputs[1];
    if (!an.requires_grad && !bn.requires_grad) return;
    Tensor* ga = an.requires_grad ? &ag::ensure_grad(an) : nullptr;
    Tensor* gb = bn.requires_grad ? &ag::ensure_grad(bn) : nullptr;
    std::vector<float> coef(hw);
    std::vector<float> scratch((ga && gb) ? 0 : hw);
    for (int in = 0; in < n; ++in) {
      const float* g = self.grad.data() + std::int64_t(in) * hw;
      // d(pe)/d(ssim_c) = -alpha/2 * 1/C
      for (std::int64_t i = 0; i < hw; ++i) coef[i] = -g[i] * alpha * 0.5f / float(c);
      for (int ic = 0; ic < c; ++ic) {
        const std::int64_t off = (std::int64_t(in) * c + ic) * hw;
        const float* a = an.value.data() + off;
        const float* b = bn.value.data() + off;
        float* gap = ga ? ga->data() + off : scratch.data();
        float* gbp = gb ? gb->data() + off : scratch.data();
        if (!ga || !gb) std::fill(scratch.begin(), scratch.end(), 0.0f);
        ssim_channel_backward(a, b, coef.data(), h, w, gap, gbp);
        const float l1c = (1.0f - alpha) / float(c);
        for (std::int64_t i = 0; i < hw; ++i) {
          const float diff = a[i] - b[i];
          const float sg = diff > 0.0f ? 1.0f : (diff < 0.0f ? -1.0f : 0.0f);
          const float gv = g[i] * l1c * sg;
          gap[i] += gv;
          gbp[i] -= gv;
        }
      }
    }
  });
}

ag::Var smoothness_loss(const ag::Var& disp, const ag::Var& image) {
  using namespace ag;
  const auto& ds = disp->shape();
  const auto& is = image->shape();
  check_arg(ds.size() == 4 && ds[1] == 1, "smoothness_loss: disp must be (N,1,H,W)");
  check_arg(is.size() == 4 && is[0] == ds[0] && is[2] == ds[2] && is[3] == ds[3],
            "smoothness_loss: image/disparity size mismatch");

  Var mean_per_sample = select_col(spatial_mean(disp), 0);  // {N}
  for (std::int64_t i = 0; i < mean_per_sample->numel(); ++i) {
    check_arg(mean_per_sample->value[i] > 0.0f,
              "smoothness_loss: disparity mean must be positive");
  }
  Var dstar = bdiv(disp, mean_per_sample);

  // Image gradient weights carry no gradient; detach to keep the graph lean.
  Var img = detach(image);
  Var wx = exp_op(neg(channel_mean(abs_op(diff_x(img)))));
  Var wy = exp_op(neg(channel_mean(abs_op(diff_y(img)))));

  Var tx = mean_all(mul(abs_op(diff_x(dstar)), wx));
  Var ty = mean_all(mul(abs_op(diff_y(dstar)), wy));
  return add(tx, ty);
}

AggregateResult aggregate_reprojection(const std::vector<ag::Var>& recon_errors,
                                       const std::vector<ag::Var>& identity_errors) {
  using namespace ag;
  check_arg(!recon_errors.empty(), "aggregate_reprojection: empty source list");
  const auto& shape = recon_errors[0]->shape();
  check_arg(shape.size() == 4 && shape[1] == 1,
            "aggregate_reprojection: error maps must be (N,1,H,W)");
  for (const auto& e : recon_errors) {
    check_arg(e->value.same_shape(recon_errors[0]->value),
              "aggregate_reprojection: recon map shape mismatch");
  }
  check_arg(identity_errors.size() == recon_errors.size(),
            "aggregate_reprojection: identity/recon list size mismatch");

  Var min_recon = recon_errors[0];
  for (std::size_t i = 1; i < recon_errors.size(); ++i) {
    min_recon = minimum(min_recon, recon_errors[i]);
  }
  Tensor min_ident(shape);
  for (std::int64_t i = 0; i < min_ident.numel(); ++i) {
    float best = identity_errors[0]->value[i];
    for (std::size_t k = 1; k < identity_errors.size(); ++k) {
      best = std::min(best, identity_errors[k]->value[i]);
    }
    min_ident[i] = best;
  }

  AggregateResult out;
  out.auto_mask = Tensor(shape);
  std::int64_t kept = 0;
  for (std::int64_t i = 0; i < min_ident.numel(); ++i) {
    // Kept only when the warped error beats identity by a clear margin, so
    // exact ties fall out of the supervision set.
    const bool keep = min_recon->value[i] + 1e-5f < min_ident[i];
    out.auto_mask[i] = keep ? 1.0f : 0.0f;
    kept += keep;
  }
  out.mask_fraction = double(kept) / double(min_ident.numel());
  out.loss = masked_mean(min_recon, out.auto_mask);
  return out;
}

void LossBundle::validate() const {
  auto check_vec = [](const std::vector<double>& v, const char* name) {
    for (double x : v) {
      check_state(std::isfinite(x) && x >= 0.0, std::string(name) + ": non-finite or negative");
    }
  };
  check_vec(photometric, "LossBundle.photometric");
  check_vec(smoothness, "LossBundle.smoothness");
  for (double f : mask_fraction) {
    check_state(f >= 0.0 && f <= 1.0, "LossBundle.mask_fraction out of [0,1]");
  }
  check_state(std::isfinite(total) && total >= 0.0, "LossBundle.total non-finite or negative");
}

}  // namespace photometry
}  // namespace geopre
