#pragma once

#include <string>
#include <utility>
#include <vector>

#include "geopre/ops.hpp"
#include "geopre/rng.hpp"

namespace geopre {
namespace nn {

// Ordered registry of trainable parameters and persistent buffers (BN
// running stats). Ordering is construction order and therefore stable, which
// checkpointing and the optimizer rely on.
struct ParamMap {
  std::vector<std::pair<std::string, ag::Var>> params;
  std::vector<std::pair<std::string, Tensor*>> buffers;

  void add(const std::string& name, const ag::Var& v) { params.emplace_back(name, v); }
  void add_buffer(const std::string& name, Tensor* t) { buffers.emplace_back(name, t); }
  void merge(const ParamMap& other) {
    params.insert(params.end(), other.params.begin(), other.params.end());
    buffers.insert(buffers.end(), other.buffers.begin(), other.buffers.end());
  }
  std::vector<ag::Var> param_vars() const {
    std::vector<ag::Var> out;
    out.reserve(params.size());
    for (const auto& [name, v] : params) out.push_back(v);
    return out;
  }
  void set_requires_grad(bool on) const {
    for (const auto& [name, v] : params) v->requires_grad = on;
  }
  // SHA-256 over parameter and buffer bytes in registration order.
  std::string digest() const;
};

struct Conv2d {
  ag::Var w, b;  // b is null for conv+BN stacks
  int stride = 1, pad = 0;

  static Conv2d create(Rng& rng, int cin, int cout, int k, int stride, int pad, bool bias);
  ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, w, b, stride, pad); }
  void collect(const std::string& prefix, ParamMap& out) const;
};

struct BatchNorm2d {
  ag::Var gamma, beta;
  Tensor running_mean, running_var;
  float momentum = 0.1f, eps = 1e-5f;

  static BatchNorm2d create(int channels);
  ag::Var operator()(const ag::Var& x, bool training) {
    return ag::batch_norm(x, gamma, beta, running_mean, running_var, training, momentum, eps);
  }
  void collect(const std::string& prefix, ParamMap& out);
};

struct Linear {
  ag::Var w, b;

  static Linear create(Rng& rng, int in_features, int out_features, bool bias = true);
  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, w, b); }
  void collect(const std::string& prefix, ParamMap& out) const;
};

struct BasicBlock {
  Conv2d conv1, conv2;
  BatchNorm2d bn1, bn2;
  bool has_down = false;
  Conv2d down_conv;
  BatchNorm2d down_bn;

  static BasicBlock create(Rng& rng, int cin, int cout, int stride);
  ag::Var operator()(const ag::Var& x, bool training);
  void collect(const std::string& prefix, ParamMap& out);
};

// Residual encoder (18- or 34-layer variant). forward() returns features at
// strides 2/4/8/16/32 with channels 64/64/128/256/512.
struct ResNetEncoder {
  int variant = 18;
  int in_channels = 3;
  Conv2d conv1;
  BatchNorm2d bn1;
  std::vector<BasicBlock> layers[4];

  static ResNetEncoder create(Rng& rng, int variant, int in_channels);
  std::vector<ag::Var> operator()(const ag::Var& x, bool training);
  void collect(const std::string& prefix, ParamMap& out);
};

struct AdamParams {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
  bool decoupled = false;  // true = AdamW-style decoupled decay
};

class Adam {
 public:
  Adam(std::vector<ag::Var> params, AdamParams hp);

  void zero_grad();
  void step(float lr);

  std::int64_t step_count() const { return t_; }
  // State access for checkpointing; order matches the constructor list.
  const std::vector<Tensor>& m() const { return m_; }
  const std::vector<Tensor>& v() const { return v_; }
  void restore(std::vector<Tensor> m, std::vector<Tensor> v, std::int64_t t);

 private:
  std::vector<ag::Var> params_;
  AdamParams hp_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

// Sum over parameters of the L2 norm of accumulated gradients. Zero when no
// gradient buffer was ever touched.
double accumulated_grad_norm(const std::vector<ag::Var>& params);

}  // namespace nn
}  // namespace geopre
