#pragma once

#include <string>
#include <vector>

#include "geopre/config.hpp"
#include "geopre/data.hpp"
#include "geopre/models.hpp"

namespace geopre {
namespace eval {

// Seven-metric depth suite with per-image median scaling.
struct DepthMetrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double a1 = 0, a2 = 0, a3 = 0;
  void validate() const;      // 0 <= a1 <= a2 <= a3 <= 1, lower-better >= 0
  std::string to_json() const;  // keys: abs_rel sq_rel rmse rmse_log a1 a2 a3
};

// pred/gt: per-image depth maps (matched shapes). Predictions are scaled by
// median(gt)/median(pred) over the validity mask (gt inside the clamp
// range), clamped, and metrics averaged over images.
DepthMetrics eval_depth(const std::vector<DTensor>& pred, const std::vector<DTensor>& gt,
                        double clamp_min, double clamp_max);

struct OdometryResult {
  double mean = 0, stddev = 0;
  std::string to_json() const;  // keys: mean std
};

// Snippet trajectory error: adjacent-frame motions are composed into
// snippet_len-frame trajectories, translation scale is least-squares aligned
// per snippet, and the per-snippet translational RMSE is summarized.
OdometryResult eval_odometry(const std::vector<geometry::RigidTransform>& pred,
                             const std::vector<geometry::RigidTransform>& gt,
                             int snippet_len = 5);

// Feature -> waypoint probe: two-layer bottleneck plus a GRU decoder
// emitting 2-D waypoints autoregressively (delta accumulation).
struct WaypointProbe {
  nn::Linear bottleneck0, bottleneck1;
  nn::Linear gru_ih, gru_hh;  // gate order: r, z, n
  nn::Linear out_fc;
  int hidden = 256;
  int num_waypoints = 6;

  static WaypointProbe create(Rng& rng, int feature_dim, const config::ProbeConfig& cfg);
  // features (N,D) -> waypoints (N, num_waypoints, 2) flattened as (N, 2K).
  ag::Var forward(const ag::Var& features);
  nn::ParamMap params(const std::string& prefix);
};

struct ProbeDataset {
  Tensor features;   // (M, D) frozen-backbone embeddings
  Tensor waypoints;  // (M, K, 2) ego-frame ground truth
  std::vector<int> frame_ids;
  std::vector<int> train_indices, val_indices;
};

// Extracts embeddings for every frame with a full waypoint horizon and
// splits train/val by interleaving. The backbone runs in eval mode and its
// parameters are untouched (digest-checkable).
ProbeDataset build_probe_dataset(const data::FrameManifest& manifest,
                                 const data::SceneTruth& truth, models::VisualEncoder& backbone,
                                 const config::ProbeConfig& cfg);

// Trains bottleneck+GRU on L1 waypoint loss over the train split.
WaypointProbe probe_train(const ProbeDataset& dataset, const config::ProbeConfig& cfg,
                          std::uint64_t seed);

struct OccupancyGrid {
  double half_width = 12.0, forward = 30.0, resolution = 0.25;
  int nx = 0, nz = 0;
  std::vector<std::uint8_t> cells;  // row-major over (z, x)

  bool box_overlaps(double x0, double z0, double x1, double z1) const;
};

// Ego-frame occupancy of the static obstacles at a given frame; identical
// for every future timestep since the scene is static, but callers receive
// one grid per required timestep to match the evaluation contract.
OccupancyGrid build_occupancy(const data::SceneTruth& truth, int frame,
                              const config::ProbeConfig& cfg);
// per_sample[i][k] = occupancy for val sample i at waypoint step k+1.
std::vector<std::vector<OccupancyGrid>> build_obstacle_maps(const data::SceneTruth& truth,
                                                            const ProbeDataset& dataset,
                                                            const config::ProbeConfig& cfg);

struct PlanningMetrics {
  double l2[3] = {0, 0, 0};              // meters at 1s / 2s / 3s
  double collision_rate[3] = {0, 0, 0};  // percent at 1s / 2s / 3s
  void validate() const;
  std::string to_json() const;  // keys: L2_{1,2,3}s collision_rate_{1,2,3}s
};

// L2 at horizon h compares the waypoint at h; collision at h counts any
// footprint overlap at steps up to h (ego box from the probe config).
PlanningMetrics probe_eval(WaypointProbe& probe, const ProbeDataset& dataset,
                           const std::vector<std::vector<OccupancyGrid>>& obstacle_maps,
                           const config::ProbeConfig& cfg);

}  // namespace eval
}  // namespace geopre
