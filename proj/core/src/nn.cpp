#include "geopre/nn.hpp"

#include <cmath>

#include "geopre/util.hpp"

namespace geopre {
namespace nn {

std::string ParamMap::digest() const {
  Sha256 h;
  for (const auto& [name, v] : params) {
    h.update(name.data(), name.size());
    h.update(v->value.data(), sizeof(float) * static_cast<std::size_t>(v->numel()));
  }
  for (const auto& [name, t] : buffers) {
    h.update(name.data(), name.size());
    h.update(t->data(), sizeof(float) * static_cast<std::size_t>(t->numel()));
  }
  return h.hex_digest();
}

namespace {

Tensor kaiming_normal(Rng& rng, std::vector<int> shape, int fan_in) {
  Tensor t(std::move(shape));
  const double std = std::sqrt(2.0 / double(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = float(rng.normal() * std);
  return t;
}

}  // namespace

Conv2d Conv2d::create(Rng& rng, int cin, int cout, int k, int stride, int pad, bool bias) {
  Conv2d c;
  c.stride = stride;
  c.pad = pad;
  c.w = ag::parameter(kaiming_normal(rng, {cout, cin, k, k}, cin * k * k));
  if (bias) c.b = ag::parameter(Tensor::zeros({cout}));
  return c;
}

void Conv2d::collect(const std::string& prefix, ParamMap& out) const {
  out.add(prefix + ".w", w);
  if (b) out.add(prefix + ".b", b);
}

BatchNorm2d BatchNorm2d::create(int channels) {
  BatchNorm2d bn;
  bn.gamma = ag::parameter(Tensor::full({channels}, 1.0f));
  bn.beta = ag::parameter(Tensor::zeros({channels}));
  bn.running_mean = Tensor::zeros({channels});
  bn.running_var = Tensor::full({channels}, 1.0f);
  return bn;
}

void BatchNorm2d::collect(const std::string& prefix, ParamMap& out) {
  out.add(prefix + ".gamma", gamma);
  out.add(prefix + ".beta", beta);
  out.add_buffer(prefix + ".running_mean", &running_mean);
  out.add_buffer(prefix + ".running_var", &running_var);
}

Linear Linear::create(Rng& rng, int in_features, int out_features, bool bias) {
  Linear l;
  const double bound = 1.0 / std::sqrt(double(in_features));
  Tensor w({out_features, in_features});
  for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = float(rng.uniform(-bound, bound));
  l.w = ag::parameter(std::move(w));
  if (bias) {
    Tensor b({out_features});
    for (std::int64_t i = 0; i < b.numel(); ++i) b[i] = float(rng.uniform(-bound, bound));
    l.b = ag::parameter(std::move(b));
  }
  return l;
}

void Linear::collect(const std::string& prefix, ParamMap& out) const {
  out.add(prefix + ".w", w);
  if (b) out.add(prefix + ".b", b);
}

BasicBlock BasicBlock::create(Rng& rng, int cin, int cout, int stride) {
  BasicBlock blk;
  blk.conv1 = Conv2d::create(rng, cin, cout, 3, stride, 1, false);
  blk.bn1 = BatchNorm2d::create(cout);
  blk.conv2 = Conv2d::create(rng, cout, cout, 3, 1, 1, false);
  blk.bn2 = BatchNorm2d::create(cout);
  if (stride != 1 || cin != cout) {
    blk.has_down = true;
    blk.down_conv = Conv2d::create(rng, cin, cout, 1, stride, 0, false);
    blk.down_bn = BatchNorm2d::create(cout);
  }
  return blk;
}

ag::Var BasicBlock::operator()(const ag::Var& x, bool training) {
  using namespace ag;
  Var out = relu(bn1(conv1(x), training));
  out = bn2(conv2(out), training);
  Var skip = has_down ? down_bn(down_conv(x), training) : x;
  return relu(add(out, skip));
}

void BasicBlock::collect(const std::string& prefix, ParamMap& out) {
  conv1.collect(prefix + ".conv1", out);
  bn1.collect(prefix + ".bn1", out);
  conv2.collect(prefix + ".conv2", out);
  bn2.collect(prefix + ".bn2", out);
  if (has_down) {
    down_conv.collect(prefix + ".down_conv", out);
    down_bn.collect(prefix + ".down_bn", out);
  }
}

ResNetEncoder ResNetEncoder::create(Rng& rng, int variant, int in_channels) {
  check_arg(variant == 18 || variant == 34, "ResNetEncoder: variant must be 18 or 34");
  ResNetEncoder enc;
  enc.variant = variant;
  enc.in_channels = in_channels;
  enc.conv1 = Conv2d::create(rng, in_channels, 64, 7, 2, 3, false);
  enc.bn1 = BatchNorm2d::create(64);
  const int counts18[4] = {2, 2, 2, 2};
  const int counts34[4] = {3, 4, 6, 3};
  const int* counts = variant == 18 ? counts18 : counts34;
  const int widths[4] = {64, 128, 256, 512};
  int cin = 64;
  for (int li = 0; li < 4; ++li) {
    const int stride0 = li == 0 ? 1 : 2;
    for (int bi = 0; bi < counts[li]; ++bi) {
      enc.layers[li].push_back(
          BasicBlock::create(rng, bi == 0 ? cin : widths[li], widths[li], bi == 0 ? stride0 : 1));
    }
    cin = widths[li];
  }
  return enc;
}

std::vector<ag::Var> ResNetEncoder::operator()(const ag::Var& x, bool training) {
  using namespace ag;
  check_arg(x->shape().size() == 4 && x->shape()[1] == in_channels,
            "ResNetEncoder: expected " + std::to_string(in_channels) + "-channel input, got " +
                Tensor::shape_str(x->shape()));
  std::vector<Var> feats;
  Var f = relu(bn1(conv1(x), training));
  feats.push_back(f);
  f = max_pool_3x3_s2(f);
  for (int li = 0; li < 4; ++li) {
    for (auto& blk : layers[li]) f = blk(f, training);
    feats.push_back(f);
  }
  return feats;
}

void ResNetEncoder::collect(const std::string& prefix, ParamMap& out) {
  conv1.collect(prefix + ".conv1", out);
  bn1.collect(prefix + ".bn1", out);
  for (int li = 0; li < 4; ++li) {
    for (std::size_t bi = 0; bi < layers[li].size(); ++bi) {
      layers[li][bi].collect(prefix + ".layer" + std::to_string(li + 1) + "." + std::to_string(bi),
                             out);
    }
  }
}

Adam::Adam(std::vector<ag::Var> params, AdamParams hp) : params_(std::move(params)), hp_(hp) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p->value.shape()));
    v_.push_back(Tensor::zeros(p->value.shape()));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p->grad.release();
}

void Adam::step(float lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(double(hp_.beta1), double(t_));
  const double bc2 = 1.0 - std::pow(double(hp_.beta2), double(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ag::Node& p = *params_[k];
    if (p.grad.empty()) continue;
    float* w = p.value.data();
    const float* g = p.grad.data();
    float* m = m_[k].data();
    float* v = v_[k].data();
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      float gi = g[i];
      if (!hp_.decoupled && hp_.weight_decay > 0.0f) gi += hp_.weight_decay * w[i];
      m[i] = hp_.beta1 * m[i] + (1.0f - hp_.beta1) * gi;
      v[i] = hp_.beta2 * v[i] + (1.0f - hp_.beta2) * gi * gi;
      const float mhat = m[i] / float(bc1);
      const float vhat = v[i] / float(bc2);
      float upd = mhat / (std::sqrt(vhat) + hp_.eps);
      if (hp_.decoupled && hp_.weight_decay > 0.0f) upd += hp_.weight_decay * w[i];
      w[i] -= lr * upd;
    }
  }
}

void Adam::restore(std::vector<Tensor> m, std::vector<Tensor> v, std::int64_t t) {
  check_arg(m.size() == params_.size() && v.size() == params_.size(),
            "Adam::restore: state count mismatch");
  for (std::size_t k = 0; k < params_.size(); ++k) {
    check_arg(m[k].same_shape(params_[k]->value) && v[k].same_shape(params_[k]->value),
              "Adam::restore: state shape mismatch");
  }
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

double accumulated_grad_norm(const std::vector<ag::Var>& params) {
  double acc = 0.0;
  for (const auto& p : params) {
    if (p->grad.empty()) continue;
    for (std::int64_t i = 0; i < p->grad.numel(); ++i) {
      acc += double(p->grad[i]) * double(p->grad[i]);
    }
  }
  return std::sqrt(acc);
}

}  // namespace nn
}  // namespace geopre
