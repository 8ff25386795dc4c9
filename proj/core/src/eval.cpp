#include "geopre/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

#include "geopre/io.hpp"
#include "geopre/util.hpp"

namespace geopre {
namespace eval {

using nlohmann::json;

void DepthMetrics::validate() const {
  check_state(abs_rel >= 0 && sq_rel >= 0 && rmse >= 0 && rmse_log >= 0,
              "DepthMetrics: lower-better metrics must be non-negative");
  check_state(0 <= a1 && a1 <= a2 && a2 <= a3 && a3 <= 1.0,
              "DepthMetrics: threshold metrics must be nested in [0,1]");
}

std::string DepthMetrics::to_json() const {
  json j{{"abs_rel", abs_rel}, {"sq_rel", sq_rel}, {"rmse", rmse}, {"rmse_log", rmse_log},
         {"a1", a1},           {"a2", a2},         {"a3", a3}};
  return j.dump(2) + "\n";
}

namespace {

double median_of(std::vector<double> v) {
  check_arg(!v.empty(), "median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

DepthMetrics eval_depth(const std::vector<DTensor>& pred, const std::vector<DTensor>& gt,
                        double clamp_min, double clamp_max) {
  check_arg(!pred.empty() && pred.size() == gt.size(), "eval_depth: image count mismatch");
  check_arg(clamp_min > 0 && clamp_min < clamp_max, "eval_depth: bad clamp range");
  DepthMetrics acc;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const DTensor& p = pred[i];
    const DTensor& g = gt[i];
    check_arg(p.same_shape(g), "eval_depth: shape mismatch at image " + std::to_string(i));
    std::vector<double> pv, gv;
    for (std::int64_t k = 0; k < g.numel(); ++k) {
      if (g[k] > clamp_min && g[k] < clamp_max) {
        pv.push_back(p[k]);
        gv.push_back(g[k]);
      }
    }
    check_arg(!pv.empty(), "eval_depth: empty validity mask at image " + std::to_string(i));
    const double scale = median_of(gv) / median_of(pv);
    double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0, a1 = 0, a2 = 0, a3 = 0;
    for (std::size_t k = 0; k < pv.size(); ++k) {
      const double pd = std::clamp(pv[k] * scale, clamp_min, clamp_max);
      const double gd = gv[k];
      const double err = pd - gd;
      abs_rel += std::abs(err) / gd;
      sq_rel += err * err / gd;
      rmse += err * err;
      const double le = std::log(pd) - std::log(gd);
      rmse_log += le * le;
      const double ratio = std::max(pd / gd, gd / pd);
      a1 += ratio < 1.25;
      a2 += ratio < 1.25 * 1.25;
      a3 += ratio < 1.25 * 1.25 * 1.25;
    }
    const double n = double(pv.size());
    acc.abs_rel += abs_rel / n;
    acc.sq_rel += sq_rel / n;
    acc.rmse += std::sqrt(rmse / n);
    acc.rmse_log += std::sqrt(rmse_log / n);
    acc.a1 += a1 / n;
    acc.a2 += a2 / n;
    acc.a3 += a3 / n;
  }
  const double m = double(pred.size());
  acc.abs_rel /= m; acc.sq_rel /= m; acc.rmse /= m; acc.rmse_log /= m;
  acc.a1 /= m; acc.a2 /= m; acc.a3 /= m;
  acc.validate();
  return acc;
}

std::string OdometryResult::to_json() const {
  json j{{"mean", mean}, {"std", stddev}};
  return j.dump(2) + "\n";
}

OdometryResult eval_odometry(const std::vector<geometry::RigidTransform>& pred,
                             const std::vector<geometry::RigidTransform>& gt, int snippet_len) {
  check_arg(pred.size() == gt.size(),
            "eval_odometry: sequence length mismatch (" + std::to_string(pred.size()) + " vs " +
                std::to_string(gt.size()) + ")");
  check_arg(snippet_len >= 2, "eval_odometry: snippet length must be >= 2");
  const int steps = snippet_len - 1;
  check_arg(int(pred.size()) >= steps, "eval_odometry: sequence shorter than one snippet");

  auto positions = [&](const std::vector<geometry::RigidTransform>& motions, int start) {
    std::vector<Eigen::Vector3d> pos{Eigen::Vector3d::Zero()};
    Eigen::Matrix4d to_start = Eigen::Matrix4d::Identity();  // frame j -> frame start
    for (int j = 0; j < steps; ++j) {
      to_start = to_start * motions[std::size_t(start + j)].matrix().inverse();
      pos.push_back(to_start.topRightCorner<3, 1>());
    }
    return pos;
  };

  std::vector<double> errs;
  for (int s = 0; s + steps <= int(pred.size()); ++s) {
    const auto pp = positions(pred, s);
    const auto gp = positions(gt, s);
    double num = 0, den = 0;
    for (int j = 0; j <= steps; ++j) {
      num += gp[std::size_t(j)].dot(pp[std::size_t(j)]);
      den += pp[std::size_t(j)].squaredNorm();
    }
    const double scale = den > 1e-18 ? num / den : 1.0;
    double se = 0;
    for (int j = 0; j <= steps; ++j) {
      se += (scale * pp[std::size_t(j)] - gp[std::size_t(j)]).squaredNorm();
    }
    errs.push_back(std::sqrt(se / double(steps + 1)));
  }
  OdometryResult out;
  for (double e : errs) out.mean += e;
  out.mean /= double(errs.size());
  double var = 0;
  for (double e : errs) var += (e - out.mean) * (e - out.mean);
  out.stddev = std::sqrt(var / double(errs.size()));
  return out;
}

WaypointProbe WaypointProbe::create(Rng& rng, int feature_dim, const config::ProbeConfig& cfg) {
  WaypointProbe p;
  p.hidden = cfg.hidden;
  p.num_waypoints = cfg.waypoints;
  p.bottleneck0 = nn::Linear::create(rng, feature_dim, cfg.bottleneck);
  p.bottleneck1 = nn::Linear::create(rng, cfg.bottleneck, cfg.hidden);
  p.gru_ih = nn::Linear::create(rng, 2, 3 * cfg.hidden);
  p.gru_hh = nn::Linear::create(rng, cfg.hidden, 3 * cfg.hidden);
  p.out_fc = nn::Linear::create(rng, cfg.hidden, 2);
  return p;
}

ag::Var WaypointProbe::forward(const ag::Var& features) {
  using namespace ag;
  const int n = features->shape()[0];
  Var h = bottleneck1(relu(bottleneck0(features)));
  Var wp = constant(Tensor::zeros({n, 2}));
  std::vector<Var> cols;
  for (int k = 0; k < num_waypoints; ++k) {
    Var gi = gru_ih(wp);
    Var gh = gru_hh(h);
    Var r = sigmoid(add(slice_cols(gi, 0, hidden), slice_cols(gh, 0, hidden)));
    Var z = sigmoid(add(slice_cols(gi, hidden, 2 * hidden), slice_cols(gh, hidden, 2 * hidden)));
    Var ng = tanh_op(add(slice_cols(gi, 2 * hidden, 3 * hidden),
                         mul(r, slice_cols(gh, 2 * hidden, 3 * hidden))));
    h = add(mul(z, h), mul(sadd(neg(z), 1.0f), ng));
    wp = add(wp, out_fc(h));
    cols.push_back(wp);
  }
  // Assemble (N, 2K).
  Tensor out({n, 2 * num_waypoints});
  for (int k = 0; k < num_waypoints; ++k) {
    for (int i = 0; i < n; ++i) {
      out.at(i, 2 * k) = cols[std::size_t(k)]->value.at(i, 0);
      out.at(i, 2 * k + 1) = cols[std::size_t(k)]->value.at(i, 1);
    }
  }
  const int kk = num_waypoints;
  return make_op(std::move(out), cols, [n, kk](Node& self) {
    for (int k = 0; k < kk; ++k) {
      Node& in = *self.inputs[std::size_t(k)];
      if (!in.requires_grad) continue;
      Tensor& g = ensure_grad(in);
      for (int i = 0; i < n; ++i) {
        g.at(i, 0) += self.grad.at(i, 2 * k);
        g.at(i, 1) += self.grad.at(i, 2 * k + 1);
      }
    }
  });
}

nn::ParamMap WaypointProbe::params(const std::string& prefix) {
  nn::ParamMap pm;
  bottleneck0.collect(prefix + ".bottleneck0", pm);
  bottleneck1.collect(prefix + ".bottleneck1", pm);
  gru_ih.collect(prefix + ".gru_ih", pm);
  gru_hh.collect(prefix + ".gru_hh", pm);
  out_fc.collect(prefix + ".out_fc", pm);
  return pm;
}

ProbeDataset build_probe_dataset(const data::FrameManifest& manifest,
                                 const data::SceneTruth& truth, models::VisualEncoder& backbone,
                                 const config::ProbeConfig& cfg) {
  const double step_f = cfg.dt * truth.frame_rate_hz;
  const int step = int(std::lround(step_f));
  check_arg(std::abs(step_f - step) < 1e-6 && step >= 1,
            "probe: waypoint spacing is not an integer number of frames");
  const int horizon = step * cfg.waypoints;
  const int n = truth.num_frames();
  check_arg(int(manifest.records.size()) == n, "probe: manifest/truth frame count mismatch");
  check_arg(n > horizon, "probe: trajectory shorter than the waypoint horizon");

  ProbeDataset ds;
  for (int t = 0; t + horizon < n; ++t) ds.frame_ids.push_back(t);
  const int m = int(ds.frame_ids.size());
  const int d = backbone.feature_dim();
  ds.features = Tensor({m, d});
  ds.waypoints = Tensor({m, cfg.waypoints, 2});

  data::FrameCache cache;
  constexpr int kBatch = 16;
  for (int b0 = 0; b0 < m; b0 += kBatch) {
    const int b1 = std::min(m, b0 + kBatch);
    const Tensor probe_img = cache.get(manifest.frame_path(ds.frame_ids[std::size_t(b0)]));
    Tensor imgs({b1 - b0, 3, probe_img.dim(1), probe_img.dim(2)});
    for (int i = b0; i < b1; ++i) {
      const Tensor img = cache.get(manifest.frame_path(ds.frame_ids[std::size_t(i)]));
      std::copy(img.data(), img.data() + img.numel(),
                imgs.data() + std::int64_t(i - b0) * img.numel());
    }
    models::VisualEncoder::Out out = backbone.forward(ag::constant(std::move(imgs)), false);
    for (int i = b0; i < b1; ++i) {
      for (int j = 0; j < d; ++j) ds.features.at(i, j) = out.embedding->value.at(i - b0, j);
    }
    ag::release_graph(out.embedding);
    ag::release_graph(out.motion);
  }

  for (int i = 0; i < m; ++i) {
    const int t = ds.frame_ids[std::size_t(i)];
    for (int k = 1; k <= cfg.waypoints; ++k) {
      const Eigen::Vector2d wp = truth.future_waypoint(t, k * step);
      ds.waypoints[((std::int64_t(i) * cfg.waypoints) + (k - 1)) * 2 + 0] = float(wp.x());
      ds.waypoints[((std::int64_t(i) * cfg.waypoints) + (k - 1)) * 2 + 1] = float(wp.y());
    }
  }

  // Interleaved split keeps both halves covering the whole trajectory.
  const int period = std::max(2, int(std::lround(1.0 / std::max(0.05, 1.0 - cfg.train_fraction))));
  for (int i = 0; i < m; ++i) {
    if (i % period == period - 1) ds.val_indices.push_back(i);
    else ds.train_indices.push_back(i);
  }
  check_state(!ds.train_indices.empty() && !ds.val_indices.empty(),
              "probe: degenerate train/val split");
  return ds;
}

WaypointProbe probe_train(const ProbeDataset& dataset, const config::ProbeConfig& cfg,
                          std::uint64_t seed) {
  using namespace ag;
  Rng init_rng(derive_seed(seed, "probe.init"));
  WaypointProbe probe = WaypointProbe::create(init_rng, dataset.features.dim(1), cfg);
  nn::ParamMap pm = probe.params("probe");
  nn::AdamParams hp;
  nn::Adam opt(pm.param_vars(), hp);

  const int kk = cfg.waypoints;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = dataset.train_indices;
    Rng shuffle_rng(derive_seed(seed, "probe.shuffle", std::uint64_t(epoch)));
    shuffle_rng.shuffle(order);
    for (std::size_t b0 = 0; b0 < order.size(); b0 += std::size_t(cfg.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + std::size_t(cfg.batch_size));
      const int bn = int(b1 - b0);
      Tensor feats({bn, dataset.features.dim(1)});
      Tensor targets({bn, 2 * kk});
      for (int i = 0; i < bn; ++i) {
        const int idx = order[b0 + std::size_t(i)];
        for (int j = 0; j < dataset.features.dim(1); ++j) {
          feats.at(i, j) = dataset.features.at(idx, j);
        }
        for (int k = 0; k < kk; ++k) {
          targets.at(i, 2 * k) = dataset.waypoints[((std::int64_t(idx) * kk) + k) * 2 + 0];
          targets.at(i, 2 * k + 1) = dataset.waypoints[((std::int64_t(idx) * kk) + k) * 2 + 1];
        }
      }
      Var pred = probe.forward(constant(std::move(feats)));
      Var loss = mean_all(abs_op(sub(pred, constant(std::move(targets)))));
      check_state(std::isfinite(loss->value[0]), "probe_train: non-finite loss");
      opt.zero_grad();
      backward(loss);
      opt.step(float(cfg.lr));
    }
  }
  return probe;
}

bool OccupancyGrid::box_overlaps(double x0, double z0, double x1, double z1) const {
  const int ix0 = std::max(0, int(std::floor((x0 + half_width) / resolution)));
  const int ix1 = std::min(nx - 1, int(std::floor((x1 + half_width) / resolution)));
  const int iz0 = std::max(0, int(std::floor(z0 / resolution)));
  const int iz1 = std::min(nz - 1, int(std::floor(z1 / resolution)));
  for (int iz = iz0; iz <= iz1; ++iz) {
    for (int ix = ix0; ix <= ix1; ++ix) {
      if (cells[std::size_t(iz) * nx + ix]) return true;
    }
  }
  return false;
}

OccupancyGrid build_occupancy(const data::SceneTruth& truth, int frame,
                              const config::ProbeConfig& cfg) {
  OccupancyGrid g;
  g.half_width = cfg.grid_half_width;
  g.forward = cfg.grid_forward;
  g.resolution = cfg.grid_resolution;
  g.nx = int(std::ceil(2.0 * g.half_width / g.resolution));
  g.nz = int(std::ceil(g.forward / g.resolution));
  g.cells.assign(std::size_t(g.nx) * g.nz, 0);

  const Eigen::Matrix4d w2c = truth.cam_to_world[std::size_t(frame)].inverse();
  for (const auto& ob : truth.obstacles) {
    // Transform the world box corners into this frame's ego coordinates.
    Eigen::Vector2d corners[4];
    const double xs[2] = {ob.x0, ob.x1};
    const double zs[2] = {ob.z0, ob.z1};
    int ci = 0;
    for (double wx : xs) {
      for (double wz : zs) {
        const Eigen::Vector4d e = w2c * Eigen::Vector4d(wx, 0.0, wz, 1.0);
        corners[ci++] = Eigen::Vector2d(e.x(), e.z());
      }
    }
    std::swap(corners[2], corners[3]);  // order as a convex quad
    double minx = 1e18, maxx = -1e18, minz = 1e18, maxz = -1e18;
    for (const auto& cpt : corners) {
      minx = std::min(minx, cpt.x()); maxx = std::max(maxx, cpt.x());
      minz = std::min(minz, cpt.y()); maxz = std::max(maxz, cpt.y());
    }
    if (maxx < -g.half_width || minx > g.half_width || maxz < 0 || minz > g.forward) continue;
    auto inside = [&](double px, double pz) {
      // Convex quad point test (counter-clockwise or clockwise consistent).
      double sign = 0;
      for (int e = 0; e < 4; ++e) {
        const Eigen::Vector2d& a = corners[e];
        const Eigen::Vector2d& b = corners[(e + 1) % 4];
        const double cross = (b.x() - a.x()) * (pz - a.y()) - (b.y() - a.y()) * (px - a.x());
        if (std::abs(cross) < 1e-12) continue;
        if (sign == 0) sign = cross > 0 ? 1 : -1;
        else if ((cross > 0 ? 1 : -1) != sign) return false;
      }
      return true;
    };
    const int ix0 = std::max(0, int(std::floor((minx + g.half_width) / g.resolution)));
    const int ix1 = std::min(g.nx - 1, int(std::floor((maxx + g.half_width) / g.resolution)));
    const int iz0 = std::max(0, int(std::floor(minz / g.resolution)));
    const int iz1 = std::min(g.nz - 1, int(std::floor(maxz / g.resolution)));
    for (int iz = iz0; iz <= iz1; ++iz) {
      for (int ix = ix0; ix <= ix1; ++ix) {
        const double px = -g.half_width + (ix + 0.5) * g.resolution;
        const double pz = (iz + 0.5) * g.resolution;
        if (inside(px, pz)) g.cells[std::size_t(iz) * g.nx + ix] = 1;
      }
    }
  }
  return g;
}

std::vector<std::vector<OccupancyGrid>> build_obstacle_maps(const data::SceneTruth& truth,
                                                            const ProbeDataset& dataset,
                                                            const config::ProbeConfig& cfg) {
  std::vector<std::vector<OccupancyGrid>> maps;
  maps.reserve(dataset.val_indices.size());
  for (int idx : dataset.val_indices) {
    const int frame = dataset.frame_ids[std::size_t(idx)];
    OccupancyGrid g = build_occupancy(truth, frame, cfg);
    std::vector<OccupancyGrid> per_step(std::size_t(cfg.waypoints), g);
    maps.push_back(std::move(per_step));
  }
  return maps;
}

void PlanningMetrics::validate() const {
  for (int i = 0; i < 3; ++i) {
    check_state(l2[i] >= 0, "PlanningMetrics: L2 must be non-negative");
    check_state(collision_rate[i] >= 0 && collision_rate[i] <= 100.0,
                "PlanningMetrics: collision rate out of [0,100]");
  }
}

std::string PlanningMetrics::to_json() const {
  json j{{"L2_1s", l2[0]},
         {"L2_2s", l2[1]},
         {"L2_3s", l2[2]},
         {"collision_rate_1s", collision_rate[0]},
         {"collision_rate_2s", collision_rate[1]},
         {"collision_rate_3s", collision_rate[2]}};
  return j.dump(2) + "\n";
}

PlanningMetrics probe_eval(WaypointProbe& probe, const ProbeDataset& dataset,
                           const std::vector<std::vector<OccupancyGrid>>& obstacle_maps,
                           const config::ProbeConfig& cfg) {
  check_arg(cfg.waypoints * cfg.dt >= 3.0 - 1e-9, "probe_eval: horizon must reach 3 s");
  check_arg(obstacle_maps.size() == dataset.val_indices.size(),
            "probe_eval: obstacle maps do not cover the evaluation set");
  const int kk = cfg.waypoints;
  // Waypoint steps (1-based) hitting the 1s/2s/3s horizons.
  int hk[3];
  for (int h = 1; h <= 3; ++h) {
    const double steps = double(h) / cfg.dt;
    hk[h - 1] = int(std::lround(steps));
    check_arg(std::abs(steps - hk[h - 1]) < 1e-9 && hk[h - 1] >= 1 && hk[h - 1] <= kk,
              "probe_eval: horizon " + std::to_string(h) + "s is not a waypoint step");
  }

  PlanningMetrics out;
  const int m = int(dataset.val_indices.size());
  check_arg(m > 0, "probe_eval: empty evaluation set");
  for (int vi = 0; vi < m; ++vi) {
    const int idx = dataset.val_indices[std::size_t(vi)];
    Tensor feats({1, dataset.features.dim(1)});
    for (int j = 0; j < dataset.features.dim(1); ++j) feats.at(0, j) = dataset.features.at(idx, j);
    ag::Var pred = probe.forward(ag::constant(std::move(feats)));
    std::vector<Eigen::Vector2d> wp(static_cast<std::size_t>(kk));
    for (int k = 0; k < kk; ++k) {
      wp[std::size_t(k)] = {pred->value.at(0, 2 * k), pred->value.at(0, 2 * k + 1)};
    }
    ag::release_graph(pred);

    const auto& grids = obstacle_maps[std::size_t(vi)];
    check_arg(int(grids.size()) >= hk[2],
              "probe_eval: missing occupancy for timestep " + std::to_string(grids.size() + 1));
    bool collided = false;
    int first_collision_step = kk + 1;
    for (int k = 1; k <= hk[2]; ++k) {
      const Eigen::Vector2d& p = wp[std::size_t(k - 1)];
      const auto& g = grids[std::size_t(k - 1)];
      if (g.box_overlaps(p.x() - cfg.ego_width / 2, p.y() - cfg.ego_length / 2,
                         p.x() + cfg.ego_width / 2, p.y() + cfg.ego_length / 2)) {
        collided = true;
        first_collision_step = k;
        break;
      }
    }
    (void)collided;
    for (int h = 0; h < 3; ++h) {
      const int k = hk[h];
      const Eigen::Vector2d gtv(dataset.waypoints[((std::int64_t(idx) * kk) + (k - 1)) * 2 + 0],
                                dataset.waypoints[((std::int64_t(idx) * kk) + (k - 1)) * 2 + 1]);
      out.l2[h] += (wp[std::size_t(k - 1)] - gtv).norm();
      if (first_collision_step <= k) out.collision_rate[h] += 1.0;
    }
  }
  for (int h = 0; h < 3; ++h) {
    out.l2[h] /= m;
    out.collision_rate[h] = 100.0 * out.collision_rate[h] / m;
  }
  out.validate();
  return out;
}

}  // namespace eval
}  // namespace geopre
