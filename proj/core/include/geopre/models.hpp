#pragma once

#include <map>
#include <string>
#include <vector>

#include "geopre/geometry.hpp"
#include "geopre/nn.hpp"

namespace geopre {
namespace models {

// Single-file parameter archive: a zip of npy tensors plus metadata records.
// Round trips are byte-exact, so freeze digests survive save/load.
struct Checkpoint {
  std::string meta_json;      // kind, backbone, image size, schema version...
  std::string config_json;    // resolved config snapshot
  std::string metrics_jsonl;  // metric history
  std::map<std::string, Tensor> tensors;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  static constexpr int kSchemaVersion = 1;
  int schema_version() const;
  std::string kind() const;      // stage1 | stage2 | single_stage | ... | backbone
  std::string backbone() const;  // resnet18 | resnet34
  int image_height() const;
  int image_width() const;
  std::string meta_str(const std::string& key) const;
  double meta_num(const std::string& key, double fallback) const;
};

// Writes params and buffers of a ParamMap into ckpt.tensors.
void store_params(Checkpoint& ckpt, const nn::ParamMap& pm);
// Copies matching tensors back; every ParamMap entry must be present.
// Extra checkpoint tensors (other subsystems) are ignored.
void load_params(const Checkpoint& ckpt, const nn::ParamMap& pm);

// Disparity network: residual encoder plus skip-connected decoder emitting
// sigmoid disparities at 4 scales (full resolution down to 1/8).
struct DepthNet {
  nn::ResNetEncoder encoder;
  // Decoder: two 3x3 convs per level with nearest upsampling and skips.
  std::vector<nn::Conv2d> upconv0, upconv1;  // indexed 0..4
  std::vector<nn::Conv2d> dispconv;          // scales 0..3

  static DepthNet create(Rng& rng, const std::string& backbone);
  // image (N,3,H,W) with H,W divisible by 32; returns scales 0..3, scale s
  // at (H/2^s, W/2^s), values strictly inside (0,1).
  std::vector<ag::Var> forward(const ag::Var& image, bool training);
  nn::ParamMap params(const std::string& prefix);
};

// Decodes raw intrinsics head outputs into valid pinhole parameters:
// f = softplus(raw)*W, c = sigmoid(raw)*(W,H).
geometry::IntrinsicsVar decode_intrinsics(const ag::Var& raw, int width, int height);

// Pair encoder with ego-motion and intrinsics heads. Input is two frames
// stacked on channels; motion is T_a_to_b for forward(a, b).
struct PoseNet {
  nn::ResNetEncoder encoder;  // 6-channel input
  nn::Conv2d pconv0, pconv1, pconv2, pconv3;
  nn::Linear focal_fc0, focal_fc1;
  nn::Linear center_fc0, center_fc1;
  float motion_scale = 0.01f;

  struct Out {
    ag::Var motion;    // (N,6): axis-angle then translation, pre-scaled
    ag::Var intr_raw;  // (N,4): raw head outputs, decode with decode_intrinsics
  };

  static PoseNet create(Rng& rng, const std::string& backbone, float motion_scale);
  Out forward(const ag::Var& frame_a, const ag::Var& frame_b, bool training);
  nn::ParamMap params(const std::string& prefix);
};

// Single-frame policy encoder: backbone embedding for downstream heads plus
// a conv-stack motion head predicting the future ego-motion.
struct VisualEncoder {
  nn::ResNetEncoder backbone;
  nn::Conv2d mconv0, mconv1, mconv2, mconv3;
  float motion_scale = 0.01f;

  struct Out {
    ag::Var embedding;  // (N, feature_dim): spatially pooled backbone output
    ag::Var motion;     // (N,6)
  };

  static VisualEncoder create(Rng& rng, const std::string& backbone, float motion_scale);
  Out forward(const ag::Var& image, bool training);
  int feature_dim() const { return 512; }
  nn::ParamMap params(const std::string& prefix);
  nn::ParamMap backbone_params(const std::string& prefix);
};

// Extracts a (N,6) motion value row into a RigidTransform.
geometry::RigidTransform motion_row_to_transform(const Tensor& motion, int row);

// Backbone-only archive for downstream use; round-trip save/load/save is
// byte-identical.
void export_backbone(VisualEncoder& enc, const std::string& backbone_name,
                     const std::string& source_meta_json, const std::string& path);

}  // namespace models
}  // namespace geopre
