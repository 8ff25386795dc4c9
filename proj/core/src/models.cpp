#include "geopre/models.hpp"

#include <nlohmann/json.hpp>

#include "geopre/io.hpp"

namespace geopre {
namespace models {

using nlohmann::json;

void Checkpoint::save(const std::string& path) const {
  std::vector<io::ZipEntry> entries;
  auto add_text = [&](const std::string& name, const std::string& text) {
    io::ZipEntry e;
    e.name = name;
    e.data.assign(text.begin(), text.end());
    entries.push_back(std::move(e));
  };
  add_text("meta.json", meta_json);
  add_text("config.json", config_json);
  add_text("metrics.jsonl", metrics_jsonl);
  for (const auto& [name, t] : tensors) {
    io::ZipEntry e;
    e.name = "tensors/" + name + ".npy";
    e.data = io::npy_encode(t);
    entries.push_back(std::move(e));
  }
  io::write_zip(path, entries);
}

Checkpoint Checkpoint::load(const std::string& path) {
  check_state(file_exists(path), "checkpoint not found: " + path);
  Checkpoint ckpt;
  for (auto& e : io::read_zip(path)) {
    if (e.name == "meta.json") {
      ckpt.meta_json.assign(e.data.begin(), e.data.end());
    } else if (e.name == "config.json") {
      ckpt.config_json.assign(e.data.begin(), e.data.end());
    } else if (e.name == "metrics.jsonl") {
      ckpt.metrics_jsonl.assign(e.data.begin(), e.data.end());
    } else if (e.name.rfind("tensors/", 0) == 0) {
      std::string name = e.name.substr(8);
      if (name.size() > 4 && name.substr(name.size() - 4) == ".npy") {
        name = name.substr(0, name.size() - 4);
      }
      ckpt.tensors.emplace(name, io::as_f32(io::npy_decode(e.data.data(), e.data.size())));
    }
  }
  check_state(!ckpt.meta_json.empty(), "checkpoint missing metadata: " + path);
  check_state(ckpt.schema_version() == kSchemaVersion,
              "checkpoint schema version mismatch in " + path + ": expected " +
                  std::to_string(kSchemaVersion) + ", found " +
                  std::to_string(ckpt.schema_version()));
  return ckpt;
}

namespace {
json parse_meta(const std::string& meta_json) {
  check_state(!meta_json.empty(), "checkpoint has no metadata");
  return json::parse(meta_json);
}
}  // namespace

int Checkpoint::schema_version() const { return parse_meta(meta_json).value("schema_version", -1); }
std::string Checkpoint::kind() const { return parse_meta(meta_json).value("kind", ""); }
std::string Checkpoint::backbone() const { return parse_meta(meta_json).value("backbone", ""); }
int Checkpoint::image_height() const {
  auto m = parse_meta(meta_json);
  return m.contains("image_size") ? m["image_size"][0].get<int>() : 0;
}
int Checkpoint::image_width() const {
  auto m = parse_meta(meta_json);
  return m.contains("image_size") ? m["image_size"][1].get<int>() : 0;
}
std::string Checkpoint::meta_str(const std::string& key) const {
  return parse_meta(meta_json).value(key, std::string());
}
double Checkpoint::meta_num(const std::string& key, double fallback) const {
  return parse_meta(meta_json).value(key, fallback);
}

void store_params(Checkpoint& ckpt, const nn::ParamMap& pm) {
  for (const auto& [name, v] : pm.params) ckpt.tensors[name] = v->value;
  for (const auto& [name, t] : pm.buffers) ckpt.tensors[name] = *t;
}

void load_params(const Checkpoint& ckpt, const nn::ParamMap& pm) {
  auto fetch = [&](const std::string& name) -> const Tensor& {
    auto it = ckpt.tensors.find(name);
    check_state(it != ckpt.tensors.end(), "checkpoint missing tensor: " + name);
    return it->second;
  };
  for (const auto& [name, v] : pm.params) {
    const Tensor& src = fetch(name);
    check_state(src.same_shape(v->value), "checkpoint tensor shape mismatch: " + name);
    v->value = src;
  }
  for (const auto& [name, t] : pm.buffers) {
    const Tensor& src = fetch(name);
    check_state(src.same_shape(*t), "checkpoint buffer shape mismatch: " + name);
    *t = src;
  }
}

namespace {
constexpr int kEncChannels[5] = {64, 64, 128, 256, 512};
constexpr int kDecChannels[5] = {16, 32, 64, 128, 256};
}  // namespace

DepthNet DepthNet::create(Rng& rng, const std::string& backbone) {
  check_arg(backbone == "resnet18" || backbone == "resnet34",
            "DepthNet: unknown backbone " + backbone);
  DepthNet net;
  net.encoder = nn::ResNetEncoder::create(rng, backbone == "resnet34" ? 34 : 18, 3);
  net.upconv0.resize(5);
  net.upconv1.resize(5);
  for (int i = 4; i >= 0; --i) {
    const int cin0 = i == 4 ? kEncChannels[4] : kDecChannels[i + 1];
    net.upconv0[i] = nn::Conv2d::create(rng, cin0, kDecChannels[i], 3, 1, 1, true);
    const int cin1 = kDecChannels[i] + (i > 0 ? kEncChannels[i - 1] : 0);
    net.upconv1[i] = nn::Conv2d::create(rng, cin1, kDecChannels[i], 3, 1, 1, true);
  }
  net.dispconv.resize(4);
  for (int s = 0; s < 4; ++s) {
    net.dispconv[s] = nn::Conv2d::create(rng, kDecChannels[s], 1, 3, 1, 1, true);
  }
  return net;
}

std::vector<ag::Var> DepthNet::forward(const ag::Var& image, bool training) {
  using namespace ag;
  const auto& s = image->shape();
  check_arg(s.size() == 4 && s[1] == 3, "DepthNet: expects (N,3,H,W) input");
  check_arg(s[2] % 32 == 0 && s[3] % 32 == 0,
            "DepthNet: image dimensions must be divisible by 32, got " + Tensor::shape_str(s));
  std::vector<Var> feats = encoder(image, training);
  std::vector<Var> disps(4);
  Var x = feats[4];
  for (int i = 4; i >= 0; --i) {
    x = elu(upconv0[i](x));
    x = upsample_nearest2x(x);
    if (i > 0) x = concat_channels({x, feats[i - 1]});
    x = elu(upconv1[i](x));
    if (i <= 3) disps[i] = sigmoid(dispconv[i](x));  // x sits at stride 2^i
  }
  return disps;
}

nn::ParamMap DepthNet::params(const std::string& prefix) {
  nn::ParamMap pm;
  encoder.collect(prefix + ".encoder", pm);
  for (int i = 0; i < 5; ++i) {
    upconv0[i].collect(prefix + ".decoder.upconv" + std::to_string(i) + "_0", pm);
    upconv1[i].collect(prefix + ".decoder.upconv" + std::to_string(i) + "_1", pm);
  }
  for (int s = 0; s < 4; ++s) {
    dispconv[s].collect(prefix + ".decoder.dispconv" + std::to_string(s), pm);
  }
  return pm;
}

geometry::IntrinsicsVar decode_intrinsics(const ag::Var& raw, int width, int height) {
  using namespace ag;
  check_arg(raw->value.ndim() == 2 && raw->shape()[1] == 4, "decode_intrinsics: raw must be (N,4)");
  geometry::IntrinsicsVar k;
  k.fx = smul(softplus(select_col(raw, 0)), float(width));
  k.fy = smul(softplus(select_col(raw, 1)), float(width));
  k.cx = smul(sigmoid(select_col(raw, 2)), float(width));
  k.cy = smul(sigmoid(select_col(raw, 3)), float(height));
  k.width = width;
  k.height = height;
  return k;
}

PoseNet PoseNet::create(Rng& rng, const std::string& backbone, float motion_scale) {
  check_arg(backbone == "resnet18" || backbone == "resnet34",
            "PoseNet: unknown backbone " + backbone);
  PoseNet net;
  net.motion_scale = motion_scale;
  net.encoder = nn::ResNetEncoder::create(rng, backbone == "resnet34" ? 34 : 18, 6);
  net.pconv0 = nn::Conv2d::create(rng, 512, 256, 1, 1, 0, true);
  net.pconv1 = nn::Conv2d::create(rng, 256, 256, 3, 1, 1, true);
  net.pconv2 = nn::Conv2d::create(rng, 256, 256, 3, 1, 1, true);
  net.pconv3 = nn::Conv2d::create(rng, 256, 6, 1, 1, 0, true);
  net.focal_fc0 = nn::Linear::create(rng, 512, 256);
  net.focal_fc1 = nn::Linear::create(rng, 256, 2);
  net.center_fc0 = nn::Linear::create(rng, 512, 256);
  net.center_fc1 = nn::Linear::create(rng, 256, 2);
  return net;
}

namespace {

// Concatenates a (N,2) focal pair and (N,2) center pair into (N,4).
ag::Var concat_cols2(const ag::Var& a, const ag::Var& b) {
  using namespace ag;
  const int n = a->shape()[0];
  Tensor raw({n, 4});
  for (int i = 0; i < n; ++i) {
    raw.at(i, 0) = a->value.at(i, 0);
    raw.at(i, 1) = a->value.at(i, 1);
    raw.at(i, 2) = b->value.at(i, 0);
    raw.at(i, 3) = b->value.at(i, 1);
  }
  return make_op(std::move(raw), {a, b}, [n](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    for (int i = 0; i < n; ++i) {
      if (an.requires_grad) {
        Tensor& g = ensure_grad(an);
        g.at(i, 0) += self.grad.at(i, 0);
        g.at(i, 1) += self.grad.at(i, 1);
      }
      if (bn.requires_grad) {
        Tensor& g = ensure_grad(bn);
        g.at(i, 0) += self.grad.at(i, 2);
        g.at(i, 1) += self.grad.at(i, 3);
      }
    }
  });
}

}  // namespace

PoseNet::Out PoseNet::forward(const ag::Var& frame_a, const ag::Var& frame_b, bool training) {
  using namespace ag;
  check_arg(frame_a->value.same_shape(frame_b->value),
            "PoseNet: frame shape mismatch " + Tensor::shape_str(frame_a->shape()) + " vs " +
                Tensor::shape_str(frame_b->shape()));
  Var x = concat_channels({frame_a, frame_b});
  Var bottleneck = encoder(x, training)[4];

  Var p = relu(pconv0(bottleneck));
  p = relu(pconv1(p));
  p = relu(pconv2(p));
  p = pconv3(p);
  Out out;
  out.motion = smul(spatial_mean(p), motion_scale);

  Var pooled = spatial_mean(bottleneck);
  Var f = focal_fc1(relu(focal_fc0(pooled)));
  Var c = center_fc1(relu(center_fc0(pooled)));
  out.intr_raw = concat_cols2(f, c);
  return out;
}

nn::ParamMap PoseNet::params(const std::string& prefix) {
  nn::ParamMap pm;
  encoder.collect(prefix + ".encoder", pm);
  pconv0.collect(prefix + ".head.pconv0", pm);
  pconv1.collect(prefix + ".head.pconv1", pm);
  pconv2.collect(prefix + ".head.pconv2", pm);
  pconv3.collect(prefix + ".head.pconv3", pm);
  focal_fc0.collect(prefix + ".focal.fc0", pm);
  focal_fc1.collect(prefix + ".focal.fc1", pm);
  center_fc0.collect(prefix + ".center.fc0", pm);
  center_fc1.collect(prefix + ".center.fc1", pm);
  return pm;
}

VisualEncoder VisualEncoder::create(Rng& rng, const std::string& backbone, float motion_scale) {
  check_arg(backbone == "resnet18" || backbone == "resnet34",
            "VisualEncoder: unknown backbone " + backbone);
  VisualEncoder enc;
  enc.motion_scale = motion_scale;
  enc.backbone = nn::ResNetEncoder::create(rng, backbone == "resnet34" ? 34 : 18, 3);
  enc.mconv0 = nn::Conv2d::create(rng, 512, 256, 1, 1, 0, true);
  enc.mconv1 = nn::Conv2d::create(rng, 256, 256, 3, 1, 1, true);
  enc.mconv2 = nn::Conv2d::create(rng, 256, 256, 3, 1, 1, true);
  enc.mconv3 = nn::Conv2d::create(rng, 256, 6, 1, 1, 0, true);
  return enc;
}

VisualEncoder::Out VisualEncoder::forward(const ag::Var& image, bool training) {
  using namespace ag;
  Var f4 = backbone(image, training)[4];
  Out out;
  out.embedding = spatial_mean(f4);
  Var m = relu(mconv0(f4));
  m = relu(mconv1(m));
  m = relu(mconv2(m));
  m = mconv3(m);
  out.motion = smul(spatial_mean(m), motion_scale);
  return out;
}

nn::ParamMap VisualEncoder::params(const std::string& prefix) {
  nn::ParamMap pm = backbone_params(prefix);
  mconv0.collect(prefix + ".head.mconv0", pm);
  mconv1.collect(prefix + ".head.mconv1", pm);
  mconv2.collect(prefix + ".head.mconv2", pm);
  mconv3.collect(prefix + ".head.mconv3", pm);
  return pm;
}

nn::ParamMap VisualEncoder::backbone_params(const std::string& prefix) {
  nn::ParamMap pm;
  backbone.collect(prefix + ".backbone", pm);
  return pm;
}

geometry::RigidTransform motion_row_to_transform(const Tensor& motion, int row) {
  check_arg(motion.ndim() == 2 && motion.dim(1) == 6 && row < motion.dim(0),
            "motion_row_to_transform: bad input");
  Eigen::Vector3d rot(motion.at(row, 0), motion.at(row, 1), motion.at(row, 2));
  Eigen::Vector3d tr(motion.at(row, 3), motion.at(row, 4), motion.at(row, 5));
  return geometry::RigidTransform::from_params(rot, tr);
}

void export_backbone(VisualEncoder& enc, const std::string& backbone_name,
                     const std::string& source_meta_json, const std::string& path) {
  Checkpoint ckpt;
  json meta;
  meta["schema_version"] = Checkpoint::kSchemaVersion;
  meta["kind"] = "backbone";
  meta["backbone"] = backbone_name;
  meta["feature_dim"] = enc.feature_dim();
  if (!source_meta_json.empty()) meta["source"] = json::parse(source_meta_json);
  ckpt.meta_json = meta.dump(2);
  ckpt.config_json = "{}";
  store_params(ckpt, enc.backbone_params("enc"));
  ckpt.save(path);
}

}  // namespace models
}  // namespace geopre
