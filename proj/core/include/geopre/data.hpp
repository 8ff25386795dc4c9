#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "geopre/config.hpp"
#include "geopre/geometry.hpp"
#include "geopre/rng.hpp"
#include "geopre/tensor.hpp"

namespace geopre {
namespace data {

// Dataset layout on disk:
//   <root>/<sequence>/<index>.png     16-bit RGB frames
//   <root>/manifest.jsonl             one record per frame
//   <root>/truth.npz                  synthetic ground truth (synth datasets)
//   <root>/scene_config.json          generator parameters (synth datasets)
//
// truth.npz arrays:
//   depth            (N,H,W) f32   per-frame depth, camera z
//   plane_id         (N,H,W) f32   hit surface id (0 ground, 1 backdrop, 2+ billboards)
//   pose_cam_to_world(N,4,4) f64   camera-to-world transforms
//   intrinsics       (4,)    f64   fx, fy, cx, cy
//   image_size       (2,)    f64   height, width
//   frame_rate_hz    (1,)    f64
//   obstacles        (M,4)   f64   ground-plane boxes x0, z0, x1, z1 (world)

struct FrameRecord {
  std::string sequence;
  std::int64_t index = 0;
  double timestamp = 0.0;
  std::string path;  // relative to the dataset root
};

struct FrameManifest {
  std::string root;
  std::vector<FrameRecord> records;  // sorted by (sequence, index)

  // Timestamps strictly increasing within each sequence; files present.
  void validate() const;
  void save() const;  // writes <root>/manifest.jsonl
  static FrameManifest load(const std::string& root);

  std::string frame_path(int i) const;
  // Record positions with both temporal neighbors inside the same sequence
  // (consecutive indices); triplets never span sequence boundaries.
  std::vector<int> triplet_positions() const;
};

// Adapter interface for external frame sources (real dataset loaders would
// implement this); only the directory/video ingester ships here.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual FrameManifest build_manifest() = 0;
};

// Builds a manifest from a video file or a directory. Directories may hold
// per-sequence subdirectories of frames (referenced in place, assumed to be
// at rate_hz already) and/or video files (decoded and resampled at rate_hz
// into out_root). Throws when no frames can be found.
FrameManifest ingest_frames(const std::string& source, double rate_hz,
                            const std::string& out_root);

struct AugmentParams {
  double brightness = 1.0;  // multiplicative
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;  // fraction of the hue circle
  bool grayscale = false;
  double blur_sigma = 0.0;  // 0 = no blur

  static AugmentParams identity() { return {}; }
  // ColorJitter +-0.2/0.2/0.2/0.05, grayscale p=0.2, blur p=0.5 sigma in
  // [0.1, 2.0]. Magnitudes are the common contrastive-pipeline defaults.
  static AugmentParams sample(Rng& rng);
};

// Applies jitter in fixed order (brightness, contrast, saturation, hue),
// then optional grayscale and Gaussian blur; output clipped to [0,1].
Tensor augment(const Tensor& image, const AugmentParams& params);

struct FrameTriplet {
  std::string sequence;
  std::int64_t index = 0;
  Tensor prev, target, next;              // clean frames, reconstruction side
  Tensor prev_aug, target_aug, next_aug;  // network-input side
};

// Decoded-frame cache (quantized to 16 bits, which is lossless for frames
// loaded from 16-bit PNGs).
class FrameCache {
 public:
  explicit FrameCache(std::size_t max_bytes = std::size_t(1) << 30) : max_bytes_(max_bytes) {}
  Tensor get(const std::string& path);

 private:
  struct Entry {
    std::vector<int> shape;
    std::vector<std::uint16_t> q;
  };
  std::unordered_map<std::string, Entry> entries_;
  std::vector<std::string> order_;
  std::size_t bytes_ = 0, max_bytes_;
};

// Loads the triplet around `position` (an index into manifest.records); the
// same augmentation parameters apply to all three frames. Boundary
// positions are rejected.
FrameTriplet sample_triplet(const FrameManifest& manifest, int position,
                            std::uint64_t augment_seed, FrameCache* cache = nullptr,
                            bool do_augment = true);

struct ObstacleBox {
  double x0, z0, x1, z1;  // world ground-plane extent
};

struct SceneTruth {
  Tensor depth;     // (N,H,W) f32
  Tensor plane_id;  // (N,H,W) f32, integral surface ids
  std::vector<Eigen::Matrix4d> cam_to_world;
  geometry::CameraIntrinsics intrinsics;
  double frame_rate_hz = 2.0;
  std::vector<ObstacleBox> obstacles;

  int num_frames() const { return int(cam_to_world.size()); }
  DTensor depth_frame(int t) const;  // (H,W) f64 view copy
  // T_{a -> b} between camera frames.
  geometry::RigidTransform motion(int a, int b) const;
  // Future camera position at frame t+k expressed in the ego frame of t,
  // reduced to the ground plane: (x lateral-right, z forward).
  Eigen::Vector2d future_waypoint(int t, int k) const;

  void save(const std::string& root) const;  // writes <root>/truth.npz
  static SceneTruth load(const std::string& root);
};

// Renders the procedural driving scene (textured ground, road band,
// billboards, backdrop) along a road-following trajectory, writes the
// dataset to out_root and returns the manifest plus exact ground truth.
struct SceneResult {
  FrameManifest manifest;
  SceneTruth truth;
};
SceneResult generate_synthetic_scene(const config::SynthConfig& cfg, std::uint64_t seed,
                                     const std::string& out_root);

}  // namespace data
}  // namespace geopre
