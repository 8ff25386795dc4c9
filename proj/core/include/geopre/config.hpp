#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace geopre {
namespace config {

// Synthetic driving-scene generator parameters. Defaults are desk-scale; the
// acceptance suite overrides sizes per experiment.
struct SynthConfig {
  int num_frames = 240;
  int height = 64;
  int width = 128;
  // Ground-truth pinhole parameters; <= 0 means derived defaults
  // (fx = fy = 0.58 * width, principal point at the image center).
  double fx = -1, fy = -1, cx = -1, cy = -1;
  double frame_rate_hz = 2.0;
  // forward_yaw: road-following with curvature-driven yaw and marked slow
  // zones; constant: straight line at constant speed; static: no motion;
  // stop_and_go: road-following with unmarked full stops.
  std::string motion_profile = "forward_yaw";
  double speed = 0.30;           // scene units per frame at cruise
  double road_amplitude = 7.0;   // lateral amplitude of the lane curve
  double road_wavelength = 70.0; // along-track wavelength of the lane curve
  int num_billboards = 18;
  double backdrop_distance = 70.0;  // backdrop plane beyond the path end
  double texture_amplitude = 1.0;   // global texture contrast multiplier
};

struct ModelConfig {
  std::string backbone = "resnet18";  // resnet18 | resnet34
  float motion_scale = 0.01f;         // small-motion prior on raw head outputs
  float min_depth = 0.1f;
  float max_depth = 100.0f;
};

struct LossConfig {
  float alpha = 0.85f;
  float smooth_weight = 1e-3f;  // per-scale weight is smooth_weight * 2^-s
  bool auto_mask = true;
};

struct ScheduleConfig {
  std::string type = "step";  // step | cyclic | const
  double lr = 1e-4;
  int drop_epoch = -1;        // step: epoch index where lr drops (-1 = 5/6 of epochs)
  double drop_factor = 0.1;
  double lr_min = 1e-6;       // cyclic bounds
  double lr_max = 1e-4;
  int cycle_steps = 0;        // cyclic period in steps (0 = one cycle per run)
};

struct TrainConfig {
  int epochs = 5;
  int batch_size = 8;
  ScheduleConfig stage1_schedule{"step", 1e-4, -1, 0.1, 1e-6, 1e-4, 0};
  ScheduleConfig stage2_schedule{"cyclic", 1e-4, -1, 0.1, 1e-6, 1e-4, 0};
  LossConfig loss;
  std::string ablation = "none";  // none | single_stage | no_freeze | pseudo_label
  bool augment = true;
  // Feed the encoder clean frames in stage two instead of augmented ones.
  bool encoder_input_clean = false;
  int holdout_every = 0;  // reserve every k-th triplet (0 = none)
  int log_every = 1;
  int max_steps = 0;  // 0 = no cap; otherwise stops after this many steps
};

struct ProbeConfig {
  int waypoints = 6;
  double dt = 0.5;  // seconds between waypoints (3 s horizon)
  int epochs = 120;
  int batch_size = 32;
  double lr = 1e-3;
  int bottleneck = 256;
  int hidden = 256;
  double train_fraction = 0.7;
  bool finetune_backbone = false;
  double ego_length = 4.0;
  double ego_width = 1.8;
  double grid_half_width = 12.0;  // ego-frame occupancy extent, lateral
  double grid_forward = 30.0;     // ego-frame occupancy extent, forward
  double grid_resolution = 0.25;
};

struct EvalConfig {
  double clamp_min = 0.1;
  double clamp_max = 100.0;
  int snippet_length = 5;
  int depth_frame_stride = 5;  // evaluate depth on every k-th frame
};

struct RunConfig {
  std::uint64_t seed = 0;
  bool deterministic = true;
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  ProbeConfig probe;
  EvalConfig eval;
};

// Overlays: embedded defaults <- optional JSON file <- dotted-path overrides
// ("train.batch_size=4"). Unknown keys are rejected.
RunConfig load(const std::string& config_path, const std::vector<std::string>& overrides);
RunConfig from_json_text(const std::string& text);
void apply_override(RunConfig& cfg, const std::string& dotted_assignment);
std::string to_json_text(const RunConfig& cfg);

// Resolved true intrinsics for a synth config (applies derived defaults).
void resolve_intrinsics(SynthConfig& synth);

}  // namespace config
}  // namespace geopre
