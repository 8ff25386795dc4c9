#include "geopre/ops.hpp"

namespace geopre {
namespace ag {

namespace {

// Fixed-size chunked accumulation in double; summation order is independent
// of everything but the element order, keeping reductions reproducible.
double stable_sum(const float* x, std::int64_t n) {
  constexpr std::int64_t kChunk = 4096;
  double total = 0.0;
  for (std::int64_t c0 = 0; c0 < n; c0 += kChunk) {
    const std::int64_t c1 = std::min(n, c0 + kChunk);
    double part = 0.0;
    for (std::int64_t i = c0; i < c1; ++i) part += x[i];
    total += part;
  }
  return total;
}

}  // namespace

Var sum_all(const Var& a) {
  Tensor out({1});
  out[0] = static_cast<float>(stable_sum(a->value.data(), a->numel()));
  return make_op(std::move(out), {a}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = ensure_grad(in);
    const float gv = self.grad[0];
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += gv;
  });
}

Var mean_all(const Var& a) {
  check_arg(a->numel() > 0, "mean_all: empty tensor");
  const std::int64_t n = a->numel();
  Tensor out({1});
  out[0] = static_cast<float>(stable_sum(a->value.data(), n) / double(n));
  return make_op(std::move(out), {a}, [n](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = ensure_grad(in);
    const float gv = self.grad[0] / float(n);
    for (std::int64_t i = 0; i < n; ++i) g[i] += gv;
  });
}

Var channel_mean(const Var& a) {
  const auto& s = a->shape();
  check_arg(s.size() == 4, "channel_mean: expects 4-D input");
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  const std::int64_t hw = std::int64_t(h) * w;
  Tensor out({n, 1, h, w});
  const float inv_c = 1.0f / float(c);
  for (int in = 0; in < n; ++in) {
    const float* base = a->value.data() + std::int64_t(in) * c * hw;
    float* dst = out.data() + std::int64_t(in) * hw;
    for (std::int64_t p = 0; p < hw; ++p) {
      float acc = 0.0f;
      for (int ic = 0; ic < c; ++ic) acc += base[ic * hw + p];
      dst[p] = acc * inv_c;
    }
  }
  return make_op(std::move(out), {a}, [n, c, hw, inv_c](Node& self) {
    Node& in0 = *self.inputs[0];
    if (!in0.requires_grad) return;
    Tensor& g = ensure_grad(in0);
    for (int in = 0; in < n; ++in) {
      const float* src = self.grad.data() + std::int64_t(in) * hw;
      float* base = g.data() + std::int64_t(in) * c * hw;
      for (std::int64_t p = 0; p < hw; ++p) {
        const float gv = src[p] * inv_c;
        for (int ic = 0; ic < c; ++ic) base[ic * hw + p] += gv;
      }
    }
  });
}

Var spatial_mean(const Var& a) {
  const auto& s = a->shape();
  check_arg(s.size() == 4, "spatial_mean: expects 4-D input");
  const int n = s[0], c = s[1];
  const std::int64_t hw = std::int64_t(s[2]) * s[3];
  check_arg(hw > 0, "spatial_mean: empty spatial extent");
  Tensor out({n, c});
  for (int in = 0; in < n; ++in) {
    for (int ic = 0; ic < c; ++ic) {
      const float* base = a->value.data() + (std::int64_t(in) * c + ic) * hw;
      out.at(in, ic) = static_cast<float>(stable_sum(base, hw) / double(hw));
    }
  }
  return make_op(std::move(out), {a}, [n, c, hw](Node& self) {
    Node& in0 = *self.inputs[0];
    if (!in0.requires_grad) return;
    Tensor& g = ensure_grad(in0);
    for (int in = 0; in < n; ++in) {
      for (int ic = 0; ic < c; ++ic) {
        const float gv = self.grad.at(in, ic) / float(hw);
        float* base = g.data() + (std::int64_t(in) * c + ic) * hw;
        for (std::int64_t p = 0; p < hw; ++p) base[p] += gv;
      }
    }
  });
}

Var masked_mean(const Var& a, const Tensor& mask01) {
  check_arg(a->value.same_shape(mask01), "masked_mean: mask shape mismatch");
  const std::int64_t n = a->numel();
  double count = 0.0, acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (mask01[i] != 0.0f) {
      acc += a->value[i];
      count += 1.0;
    }
  }
  Tensor out({1});
  out[0] = count > 0.0 ? static_cast<float>(acc / count) : 0.0f;
  // The mask is captured by value; it is a constant wrt differentiation.
  Tensor mask = mask01;
  return make_op(std::move(out), {a}, [mask = std::move(mask), count](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad || count == 0.0) return;
    Tensor& g = ensure_grad(in);
    const float gv = self.grad[0] / static_cast<float>(count);
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      if (mask[i] != 0.0f) g[i] += gv;
    }
  });
}

}  // namespace ag
}  // namespace geopre
