#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "geopre/config.hpp"
#include "geopre/data.hpp"
#include "geopre/models.hpp"
#include "geopre/photometry.hpp"

namespace geopre {
namespace training {

// Triplet view over a manifest with an optional interleaved holdout split.
struct TripletDataset {
  data::FrameManifest manifest;
  std::vector<int> train_positions;    // positions usable as triplet centers
  std::vector<int> holdout_positions;  // every k-th center when holdout_every > 0
  std::unique_ptr<data::FrameCache> cache;

  static TripletDataset open(const std::string& root, int holdout_every);
  int frame_height() const;
  int frame_width() const;
};

struct StepStats {
  std::int64_t step = 0;
  int epoch = 0;
  double loss = 0, photometric = 0, smoothness = 0;
  double mask_fraction = 0;
  double lr = 0;
  double wall_ms = 0;
};

// Per-step metric records as line-delimited JSON. In deterministic mode wall
// times are recorded as 0 so reruns produce identical files.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, bool zero_walltime);
  void log(const StepStats& s);
  std::string history() const { return history_; }

 private:
  std::string path_;
  bool zero_walltime_;
  std::string history_;
};

double schedule_lr(const config::ScheduleConfig& s, int epoch, int total_epochs,
                   std::int64_t step, std::int64_t total_steps);

// Stage One: joint depth / ego-motion / intrinsics optimization on frame
// triplets with the min-reprojection photometric objective plus edge-aware
// smoothness at 4 scales.
class Stage1Trainer {
 public:
  Stage1Trainer(TripletDataset& dataset, const config::RunConfig& cfg,
                const std::string& out_dir);

  void run();             // all epochs; writes checkpoint_final.ckpt
  StepStats step_once();  // single optimizer step (tests, resume checks)
  bool done() const;

  models::Checkpoint make_checkpoint() const;
  void restore(const models::Checkpoint& ckpt);

  models::DepthNet& depth() { return depth_; }
  models::PoseNet& pose() { return pose_; }
  const config::RunConfig& cfg() const { return cfg_; }

 private:
  std::vector<int> epoch_order(int epoch) const;
  TripletDataset& data_;
  config::RunConfig cfg_;
  std::string out_dir_;
  models::DepthNet depth_;
  models::PoseNet pose_;
  nn::ParamMap depth_params_, pose_params_;
  std::unique_ptr<nn::Adam> opt_;
  std::unique_ptr<MetricsWriter> metrics_;
  int epoch_ = 0;
  int step_in_epoch_ = 0;
  std::int64_t global_step_ = 0;
  std::int64_t total_steps_ = 0;
};

enum class Stage2Mode { kDefault, kNoFreeze, kPseudoLabel, kSingleStage };
Stage2Mode stage2_mode_from_string(const std::string& name);

// Stage Two: single-frame encoder pre-training. The default mode freezes
// DepthNet and the intrinsics path (evaluated without gradients); ablations
// unfreeze them, supervise with PoseNet pseudo labels, or train everything
// from scratch in a single stage.
class Stage2Trainer {
 public:
  Stage2Trainer(TripletDataset& dataset, const config::RunConfig& cfg, Stage2Mode mode,
                const models::Checkpoint* stage1_ckpt, const std::string& out_dir);

  void run();
  StepStats step_once();
  bool done() const;

  models::Checkpoint make_checkpoint() const;
  void restore(const models::Checkpoint& ckpt);

  models::VisualEncoder& encoder() { return encoder_; }
  models::DepthNet& depth() { return *depth_; }
  models::PoseNet& pose() { return *pose_; }
  bool has_geometry_nets() const { return depth_ != nullptr; }
  std::string frozen_digest() const;  // digest of DepthNet + PoseNet params
  const std::vector<ag::Var>& frozen_params() const { return frozen_params_; }

 private:
  std::vector<int> epoch_order(int epoch) const;
  geometry::IntrinsicsVar batch_intrinsics(const ag::Var& target, const ag::Var& prev,
                                           const ag::Var& next, bool training);
  TripletDataset& data_;
  config::RunConfig cfg_;
  Stage2Mode mode_;
  std::string out_dir_;
  models::VisualEncoder encoder_;
  std::unique_ptr<models::DepthNet> depth_;
  std::unique_ptr<models::PoseNet> pose_;
  ag::Var intr_raw_param_;  // single-stage global intrinsics (1,4)
  nn::ParamMap trainable_, frozen_map_;
  std::vector<ag::Var> frozen_params_;
  std::unique_ptr<nn::Adam> opt_;
  std::unique_ptr<MetricsWriter> metrics_;
  int epoch_ = 0;
  int step_in_epoch_ = 0;
  std::int64_t global_step_ = 0;
  std::int64_t total_steps_ = 0;
};

// Appendix-style sample filtering: removes frames whose single-frame motion
// disagrees with the pair-based motion by more than `threshold` (translation
// norm plus rotation angle, 1.0 weight per radian).
struct FilterReport {
  data::FrameManifest manifest;
  int total = 0;
  int removed = 0;
  double fraction() const { return total > 0 ? double(removed) / total : 0.0; }
};
FilterReport filter_samples(const data::FrameManifest& manifest,
                            const models::Checkpoint& stage1_ckpt,
                            const models::Checkpoint& encoder_ckpt, double threshold,
                            const config::RunConfig& cfg);

}  // namespace training
}  // namespace geopre
