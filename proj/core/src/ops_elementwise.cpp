#include <cmath>

#include "geopre/ops.hpp"

namespace geopre {
namespace ag {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  check_arg(a->value.same_shape(b->value),
            std::string(op) + ": shape mismatch " + Tensor::shape_str(a->shape()) + " vs " +
                Tensor::shape_str(b->shape()));
}

template <typename FwdFn, typename BwdFn>
Var unary_op(const Var& a, FwdFn fwd, BwdFn bwd) {
  const std::int64_t n = a->numel();
  Tensor out(a->shape());
  const float* x = a->value.data();
  float* y = out.data();
  for (std::int64_t i = 0; i < n; ++i) y[i] = fwd(x[i]);
  return make_op(std::move(out), {a}, [bwd](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = ensure_grad(in);
    const float* go = self.grad.data();
    const float* x = in.value.data();
    const float* y = self.value.data();
    float* gi = g.data();
    const std::int64_t n = self.numel();
    for (std::int64_t i = 0; i < n; ++i) gi[i] += go[i] * bwd(x[i], y[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  const std::int64_t n = a->numel();
  Tensor out(a->shape());
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      Tensor& g = ensure_grad(in);
      for (std::int64_t i = 0; i < self.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  const std::int64_t n = a->numel();
  Tensor out(a->shape());
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      Tensor& g = ensure_grad(in);
      const float s = k == 0 ? 1.0f : -1.0f;
      for (std::int64_t i = 0; i < self.numel(); ++i) g[i] += s * self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  const std::int64_t n = a->numel();
  Tensor out(a->shape());
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    Node& a = *self.inputs[0];
    Node& b = *self.inputs[1];
    if (a.requires_grad) {
      Tensor& g = ensure_grad(a);
      for (std::int64_t i = 0; i < self.numel(); ++i) g[i] += self.grad[i] * b.value[i];
    }
    if (b.requires_grad) {
      Tensor& g = ensure_grad(b);
      for (std::int64_t i = 0; i < self.numel(); ++i) g[i] += self.grad[i] * a.value[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  const std::int64_t n = a->numel();
  Tensor out(a->shape());
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] / b->value[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    Node& a = *self.inputs[0];
    Node& b = *self.inputs[1];
    if (a.requires_grad) {
      Tensor& g = ensure_grad(a);
      for (std::int64_t i = 0; i < self.numel(); ++i) g[i] += self.grad[i] / b.value[i];
    }
    if (b.requires_grad) {
      Tensor& g = ensure_grad(b);
      for (std::int64_t i = 0; i < self.numel(); ++i) {
        const float bv = b.value[i];
        g[i] -= self.grad[i] * a.value[i] / (bv * bv);
      }
    }
  });
}

Var minimum(const Var& a, const Var& b) {
  check_same_shape(a, b, "minimum");
  const std::int64_t n = a->numel();
  Tensor out(a->shape());
  for (std::int64_t i = 0; i < n; ++i) out[i] = std::min(a->value[i], b->value[i]);
  return make_op(std::move(out), {a, b}, [](Node& self) {
    Node& a = *self.inputs[0];
    Node& b = *self.inputs[1];
    for (std::int64_t i = 0; i < self.numel(); ++i) {
      const bool first = a.value[i] <= b.value[i];
      Node& tgt = first ? a : b;
      if (!tgt.requires_grad) continue;
      ensure_grad(tgt)[i] += self.grad[i];
    }
  });
}

Var neg(const Var& a) {
  return unary_op(a, [](float x) { return -x; }, [](float, float) { return -1.0f; });
}

Var relu(const Var& a) {
  return unary_op(a, [](float x) { return x > 0.0f ? x : 0.0f; },
                  [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Var elu(const Var& a) {
  return unary_op(a, [](float x) { return x > 0.0f ? x : std::expm1(x); },
                  [](float x, float y) { return x > 0.0f ? 1.0f : y + 1.0f; });
}

Var sigmoid(const Var& a) {
  return unary_op(a,
                  [](float x) {
                    return x >= 0.0f ? 1.0f / (1.0f + std::exp(-x))
                                     : std::exp(x) / (1.0f + std::exp(x));
                  },
                  [](float, float y) { return y * (1.0f - y); });
}

Var tanh_op(const Var& a) {
  return unary_op(a, [](float x) { return std::tanh(x); },
                  [](float, float y) { return 1.0f - y * y; });
}

Var softplus(const Var& a) {
  return unary_op(a,
                  [](float x) { return x > 20.0f ? x : std::log1p(std::exp(x)); },
                  [](float x, float) {
                    return x >= 0.0f ? 1.0f / (1.0f + std::exp(-x))
                                     : std::exp(x) / (1.0f + std::exp(x));
                  });
}

Var exp_op(const Var& a) {
  return unary_op(a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Var log_op(const Var& a) {
  return unary_op(a, [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

Var sqrt_op(const Var& a) {
  return unary_op(a, [](float x) { return std::sqrt(x); },
                  [](float, float y) { return 0.5f / y; });
}

Var abs_op(const Var& a) {
  return unary_op(a, [](float x) { return std::fabs(x); },
                  [](float x, float) { return x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f); });
}

Var square(const Var& a) {
  return unary_op(a, [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}

Var smul(const Var& a, float s) {
  return unary_op(a, [s](float x) { return x * s; }, [s](float, float) { return s; });
}

Var sadd(const Var& a, float s) {
  return unary_op(a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Var max_scalar(const Var& a, float s) {
  return unary_op(a, [s](float x) { return x > s ? x : s; },
                  [s](float x, float) { return x > s ? 1.0f : 0.0f; });
}

Var rot_coeff_a(const Var& s) {
  return unary_op(s,
                  [](float sv) {
                    if (sv < 1e-8f) return 1.0f - sv / 6.0f + sv * sv / 120.0f;
                    const float t = std::sqrt(sv);
                    return std::sin(t) / t;
                  },
                  [](float sv, float) {
                    if (sv < 1e-8f) return -1.0f / 6.0f + sv / 60.0f;
                    const float t = std::sqrt(sv);
                    return (t * std::cos(t) - std::sin(t)) / (2.0f * t * t * t);
                  });
}

Var rot_coeff_b(const Var& s) {
  return unary_op(s,
                  [](float sv) {
                    if (sv < 1e-8f) return 0.5f - sv / 24.0f + sv * sv / 720.0f;
                    return (1.0f - std::cos(std::sqrt(sv))) / sv;
                  },
                  [](float sv, float) {
                    if (sv < 1e-8f) return -1.0f / 24.0f + sv / 360.0f;
                    const float t = std::sqrt(sv);
                    return (t * std::sin(t) - 2.0f * (1.0f - std::cos(t))) / (2.0f * sv * sv);
                  });
}

namespace {

std::int64_t broadcast_group(const Var& a, const Var& b, const char* op) {
  // b is {1} (global scalar) or {N} matching a's leading dimension.
  if (b->numel() == 1) return a->numel();
  check_arg(b->value.ndim() == 1 && a->value.ndim() >= 1 && a->shape()[0] == b->shape()[0],
            std::string(op) + ": broadcast shape mismatch " + Tensor::shape_str(a->shape()) +
                " vs " + Tensor::shape_str(b->shape()));
  return a->numel() / b->numel();
}

}  // namespace

Var bmul(const Var& a, const Var& b) {
  const std::int64_t group = broadcast_group(a, b, "bmul");
  Tensor out(a->shape());
  for (std::int64_t i = 0; i < a->numel(); ++i) out[i] = a->value[i] * b->value[i / group];
  return make_op(std::move(out), {a, b}, [group](Node& self) {
    Node& a = *self.inputs[0];
    Node& b = *self.inputs[1];
    if (a.requires_grad) {
      Tensor& g = ensure_grad(a);
      for (std::int64_t i = 0; i < self.numel(); ++i) g[i] += self.grad[i] * b.value[i / group];
    }
    if (b.requires_grad) {
      Tensor& g = ensure_grad(b);
      for (std::int64_t i = 0; i < self.numel(); ++i) g[i / group] += self.grad[i] * a.value[i];
    }
  });
}

Var badd(const Var& a, const Var& b) {
  const std::int64_t group = broadcast_group(a, b, "badd");
  Tensor out(a->shape());
  for (std::int64_t i = 0; i < a->numel(); ++i) out[i] = a->value[i] + b->value[i / group];
  return make_op(std::move(out), {a, b}, [group](Node& self) {
    Node& a = *self.inputs[0];
    Node& b = *self.inputs[1];
    if (a.requires_grad) {
      Tensor& g = ensure_grad(a);
      for (std::int64_t i = 0; i < self.numel(); ++i) g[i] += self.grad[i];
    }
    if (b.requires_grad) {
      Tensor& g = ensure_grad(b);
      for (std::int64_t i = 0; i < self.numel(); ++i) g[i / group] += self.grad[i];
    }
  });
}

Var bdiv(const Var& a, const Var& b) {
  const std::int64_t group = broadcast_group(a, b, "bdiv");
  Tensor out(a->shape());
  for (std::int64_t i = 0; i < a->numel(); ++i) out[i] = a->value[i] / b->value[i / group];
  return make_op(std::move(out), {a, b}, [group](Node& self) {
    Node& a = *self.inputs[0];
    Node& b = *self.inputs[1];
    if (a.requires_grad) {
      Tensor& g = ensure_grad(a);
      for (std::int64_t i = 0; i < self.numel(); ++i) g[i] += self.grad[i] / b.value[i / group];
    }
    if (b.requires_grad) {
      Tensor& g = ensure_grad(b);
      for (std::int64_t i = 0; i < self.numel(); ++i) {
        const float bv = b.value[i / group];
        g[i / group] -= self.grad[i] * a.value[i] / (bv * bv);
      }
    }
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  check_arg(!parts.empty(), "concat_channels: empty input list");
  const auto& s0 = parts[0]->shape();
  check_arg(s0.size() == 4, "concat_channels: expects 4-D inputs");
  int total_c = 0;
  for (const auto& p : parts) {
    const auto& s = p->shape();
    check_arg(s.size() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
              "concat_channels: incompatible shapes");
    total_c += s[1];
  }
  const int n = s0[0], hw = s0[2] * s0[3];
  Tensor out({n, total_c, s0[2], s0[3]});
  std::int64_t coff = 0;
  for (const auto& p : parts) {
    const int pc = p->shape()[1];
    for (int in = 0; in < n; ++in) {
      const float* src = p->value.data() + std::int64_t(in) * pc * hw;
      float* dst = out.data() + (std::int64_t(in) * total_c + coff) * hw;
      std::copy(src, src + std::int64_t(pc) * hw, dst);
    }
    coff += pc;
  }
  return make_op(std::move(out), parts, [n, hw, total_c](Node& self) {
    std::int64_t coff = 0;
    for (auto& inp : self.inputs) {
      const int pc = inp->shape()[1];
      if (inp->requires_grad) {
        Tensor& g = ensure_grad(*inp);
        for (int in = 0; in < n; ++in) {
          const float* src = self.grad.data() + (std::int64_t(in) * total_c + coff) * hw;
          float* dst = g.data() + std::int64_t(in) * pc * hw;
          for (std::int64_t i = 0; i < std::int64_t(pc) * hw; ++i) dst[i] += src[i];
        }
      }
      coff += pc;
    }
  });
}

Var slice_channels(const Var& a, int c0, int c1) {
  const auto& s = a->shape();
  check_arg(s.size() == 4 && 0 <= c0 && c0 < c1 && c1 <= s[1], "slice_channels: bad range");
  const int n = s[0], c = s[1], hw = s[2] * s[3], nc = c1 - c0;
  Tensor out({n, nc, s[2], s[3]});
  for (int in = 0; in < n; ++in) {
    const float* src = a->value.data() + (std::int64_t(in) * c + c0) * hw;
    float* dst = out.data() + std::int64_t(in) * nc * hw;
    std::copy(src, src + std::int64_t(nc) * hw, dst);
  }
  return make_op(std::move(out), {a}, [n, c, hw, c0, nc](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = ensure_grad(in);
    for (int i = 0; i < n; ++i) {
      const float* src = self.grad.data() + std::int64_t(i) * nc * hw;
      float* dst = g.data() + (std::int64_t(i) * c + c0) * hw;
      for (std::int64_t j = 0; j < std::int64_t(nc) * hw; ++j) dst[j] += src[j];
    }
  });
}

Var slice_cols(const Var& a, int c0, int c1) {
  const auto& s = a->shape();
  check_arg(s.size() == 2 && 0 <= c0 && c0 < c1 && c1 <= s[1], "slice_cols: bad range");
  const int n = s[0], k = s[1], nc = c1 - c0;
  Tensor out({n, nc});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < nc; ++j) out.at(i, j) = a->value.at(i, c0 + j);
  }
  return make_op(std::move(out), {a}, [n, k, c0, nc](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = ensure_grad(in);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < nc; ++j) g[std::int64_t(i) * k + c0 + j] += self.grad.at(i, j);
    }
  });
}

Var select_col(const Var& a, int c) {
  const auto& s = a->shape();
  check_arg(s.size() == 2 && 0 <= c && c < s[1], "select_col: bad column");
  const int n = s[0], k = s[1];
  Tensor out({n});
  for (int i = 0; i < n; ++i) out[i] = a->value.at(i, c);
  return make_op(std::move(out), {a}, [n, k, c](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = ensure_grad(in);
    for (int i = 0; i < n; ++i) g[std::int64_t(i) * k + c] += self.grad[i];
  });
}

Var diff_x(const Var& a) {
  const auto& s = a->shape();
  check_arg(s.size() == 4 && s[3] >= 2, "diff_x: needs width >= 2");
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor out({n, c, h, w - 1});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int ih = 0; ih < h; ++ih)
        for (int iw = 0; iw + 1 < w; ++iw)
          out.at(in, ic, ih, iw) = a->value.at(in, ic, ih, iw + 1) - a->value.at(in, ic, ih, iw);
  return make_op(std::move(out), {a}, [n, c, h, w](Node& self) {
    Node& in0 = *self.inputs[0];
    if (!in0.requires_grad) return;
    Tensor& g = ensure_grad(in0);
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < c; ++ic)
        for (int ih = 0; ih < h; ++ih)
          for (int iw = 0; iw + 1 < w; ++iw) {
            const float gv = self.grad.at(in, ic, ih, iw);
            g.at(in, ic, ih, iw + 1) += gv;
            g.at(in, ic, ih, iw) -= gv;
          }
  });
}

Var repeat_rows(const Var& a, int n) {
  const auto& s = a->shape();
  check_arg(s.size() == 2 && s[0] == 1 && n >= 1, "repeat_rows: expects (1,K) input");
  const int k = s[1];
  Tensor out({n, k});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) out.at(i, j) = a->value[j];
  }
  return make_op(std::move(out), {a}, [n, k](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = ensure_grad(in);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j) g[j] += self.grad.at(i, j);
    }
  });
}

Var diff_y(const Var& a) {
  const auto& s = a->shape();
  check_arg(s.size() == 4 && s[2] >= 2, "diff_y: needs height >= 2");
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor out({n, c, h - 1, w});
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int ih = 0; ih + 1 < h; ++ih)
        for (int iw = 0; iw < w; ++iw)
          out.at(in, ic, ih, iw) = a->value.at(in, ic, ih + 1, iw) - a->value.at(in, ic, ih, iw);
  return make_op(std::move(out), {a}, [n, c, h, w](Node& self) {
    Node& in0 = *self.inputs[0];
    if (!in0.requires_grad) return;
    Tensor& g = ensure_grad(in0);
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < c; ++ic)
        for (int ih = 0; ih + 1 < h; ++ih)
          for (int iw = 0; iw < w; ++iw) {
            const float gv = self.grad.at(in, ic, ih, iw);
            g.at(in, ic, ih + 1, iw) += gv;
            g.at(in, ic, ih, iw) -= gv;
          }
  });
}

}  // namespace ag
}  // namespace geopre
