#include <nlohmann/json.hpp>

#include <cmath>

#include "geopre/data.hpp"
#include "geopre/io.hpp"
#include "geopre/util.hpp"

namespace geopre {
namespace data {

namespace {

using nlohmann::json;

constexpr double kPi = 3.14159265358979323846;
constexpr double kGroundY = 1.5;       // camera height above the ground plane
constexpr double kPrefilterSigma = 1.1;  // screen-space Gaussian prefilter (px)

// Sum of band-limited sinusoids over plane-local coordinates. Rendering
// attenuates each octave by the pixel-footprint prefilter so images stay
// resample-consistent between nearby views.
struct Octave {
  double amp[3];   // per-channel amplitude
  double fu, fv;   // cycles per scene unit
  double phase;
};

struct TextureSpec {
  double base[3] = {0.5, 0.5, 0.5};
  std::vector<Octave> octaves;
  // Prefilter multiplier; the ground uses a stronger filter because grazing
  // pixel footprints vary too fast for the constant-Jacobian model.
  double sigma_scale = 1.0;
};

struct Road {
  double amp1 = 7.0, wav1 = 70.0, phase1 = 0.0;
  double amp2 = 2.2, wav2 = 27.0, phase2 = 0.0;
  bool enabled = true;

  double center(double z) const {
    if (!enabled) return 0.0;
    return amp1 * std::sin(2.0 * kPi * z / wav1 + phase1) +
           amp2 * std::sin(2.0 * kPi * z / wav2 + phase2);
  }
  double slope(double z) const {
    if (!enabled) return 0.0;
    return amp1 * 2.0 * kPi / wav1 * std::cos(2.0 * kPi * z / wav1 + phase1) +
           amp2 * 2.0 * kPi / wav2 * std::cos(2.0 * kPi * z / wav2 + phase2);
  }
};

struct SpeedZone {
  double z0, z1;  // slow interval along the track
};

struct Billboard {
  double z;
  double x0, x1, y0, y1;
  TextureSpec tex;
};

struct Scene {
  Road road;
  std::vector<SpeedZone> zones;
  std::vector<Billboard> billboards;
  double backdrop_z = 0.0;
  TextureSpec ground_tex, backdrop_tex;
  double road_width_sigma = 1.1;
  double road_brightness = 0.16;
  double zone_tint_r = 0.14, zone_tint_g = -0.06;
  double zone_edge = 4.0;  // smoothstep half-width along z
};

struct CameraPose {
  Eigen::Matrix3d r_wc;
  Eigen::Vector3d center;
};

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

// 1 inside a slow zone, 0 outside, with smooth edges.
double zone_indicator(const Scene& scene, double z, double edge) {
  double v = 0.0;
  for (const auto& zn : scene.zones) {
    const double in = smoothstep((z - zn.z0) / edge) * smoothstep((zn.z1 - z) / edge);
    v = std::max(v, in);
  }
  return v;
}

// Octave evaluation with Gaussian prefilter. (su,sv,tu,tv) is the screen
// Jacobian of the plane-local coordinates in units per pixel.
double eval_octaves(const TextureSpec& tex, int ch, double s, double t, double su, double sv,
                    double tu, double tv) {
  const double sigma = kPrefilterSigma * tex.sigma_scale;
  double v = tex.base[ch];
  for (const auto& o : tex.octaves) {
    const double wx = 2.0 * kPi * (o.fu * su + o.fv * tu);
    const double wy = 2.0 * kPi * (o.fu * sv + o.fv * tv);
    const double att = std::exp(-0.5 * sigma * sigma * (wx * wx + wy * wy));
    v += att * o.amp[ch] * std::sin(2.0 * kPi * (o.fu * s + o.fv * t) + o.phase);
  }
  return v;
}

TextureSpec make_texture(Rng& rng, double contrast, const std::vector<double>& wavelengths,
                         const std::vector<double>& amps) {
  TextureSpec tex;
  for (int c = 0; c < 3; ++c) tex.base[c] = rng.uniform(0.40, 0.62);
  for (std::size_t i = 0; i < wavelengths.size(); ++i) {
    Octave o;
    const double ang = rng.uniform(0.0, 2.0 * kPi);
    const double f = 1.0 / wavelengths[i];
    o.fu = f * std::cos(ang);
    o.fv = f * std::sin(ang);
    o.phase = rng.uniform(0.0, 2.0 * kPi);
    const double a = amps[i] * contrast;
    for (int c = 0; c < 3; ++c) o.amp[c] = a * rng.uniform(0.55, 1.0);
    tex.octaves.push_back(o);
  }
  return tex;
}

struct Hit {
  double depth = -1.0;
  int plane = -1;  // 0 ground, 1 backdrop, 2+i billboard i
};

Hit cast_ray(const Scene& scene, const CameraPose& cam, const Eigen::Vector3d& dir_w) {
  Hit best;
  auto consider = [&](double t, int plane) {
    if (t > 0.05 && (best.depth < 0.0 || t < best.depth)) {
      best.depth = t;
      best.plane = plane;
    }
  };
  // Ground plane y = kGroundY (y axis points down).
  if (dir_w.y() > 1e-9) {
    consider((kGroundY - cam.center.y()) / dir_w.y(), 0);
  }
  // Backdrop.
  if (dir_w.z() > 1e-9) {
    consider((scene.backdrop_z - cam.center.z()) / dir_w.z(), 1);
  }
  for (std::size_t i = 0; i < scene.billboards.size(); ++i) {
    const auto& b = scene.billboards[i];
    if (std::abs(dir_w.z()) < 1e-9) continue;
    const double t = (b.z - cam.center.z()) / dir_w.z();
    if (t <= 0.05) continue;
    if (best.depth > 0.0 && t >= best.depth) continue;
    const double x = cam.center.x() + t * dir_w.x();
    const double y = cam.center.y() + t * dir_w.y();
    if (x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1) {
      best.depth = t;
      best.plane = 2 + int(i);
    }
  }
  return best;
}

// Shades a hit, including the analytic screen Jacobian of the plane-local
// coordinates needed by the prefilter.
void shade(const Scene& scene, const CameraPose& cam, const geometry::CameraIntrinsics& K,
           double u, double v, const Hit& hit, float rgb[3]) {
  const Eigen::Vector3d d_cam((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
  const Eigen::Vector3d dw = cam.r_wc * d_cam;
  const Eigen::Vector3d du_w = cam.r_wc.col(0) / K.fx;  // d(dir_w)/du
  const Eigen::Vector3d dv_w = cam.r_wc.col(1) / K.fy;  // d(dir_w)/dv
  const double t = hit.depth;
  const Eigen::Vector3d p = cam.center + t * dw;

  auto plane_jacobian = [&](int axis_s, int axis_t, int axis_n, double& su, double& sv,
                            double& tu, double& tv) {
    // Hit parameter: t = (plane - C_n) / D_n; s = C_s + t D_s; t-coord likewise.
    const double dn = dw[axis_n];
    const double dts_du = -t * du_w[axis_n] / dn;
    const double dts_dv = -t * dv_w[axis_n] / dn;
    su = dts_du * dw[axis_s] + t * du_w[axis_s];
    sv = dts_dv * dw[axis_s] + t * dv_w[axis_s];
    tu = dts_du * dw[axis_t] + t * du_w[axis_t];
    tv = dts_dv * dw[axis_t] + t * dv_w[axis_t];
  };

  if (hit.plane == 0) {
    // Ground: local coords (x, z).
    double su, sv, tu, tv;
    plane_jacobian(0, 2, 1, su, sv, tu, tv);
    const double s = p.x(), zz = p.z();
    for (int c = 0; c < 3; ++c) {
      rgb[c] = float(eval_octaves(scene.ground_tex, c, s, zz, su, sv, tu, tv));
    }
    // Road band: lateral Gaussian bump around the lane center, prefiltered
    // by widening with the projected pixel footprint.
    const double slope = scene.road.slope(zz);
    const double lat = s - scene.road.center(zz);
    const double glat_u = su - slope * tu;
    const double glat_v = sv - slope * tv;
    const double foot2 = kPrefilterSigma * kPrefilterSigma * (glat_u * glat_u + glat_v * glat_v);
    const double sig0 = scene.road_width_sigma;
    const double sig_eff = std::sqrt(sig0 * sig0 + foot2);
    const double bump = (sig0 / sig_eff) * std::exp(-0.5 * lat * lat / (sig_eff * sig_eff));
    for (int c = 0; c < 3; ++c) rgb[c] += float(scene.road_brightness * bump);
    if (!scene.zones.empty()) {
      const double zfoot = kPrefilterSigma * std::sqrt(tu * tu + tv * tv);
      const double edge = std::sqrt(scene.zone_edge * scene.zone_edge + zfoot * zfoot);
      const double zi = zone_indicator(scene, zz, edge) * bump;
      rgb[0] += float(scene.zone_tint_r * zi);
      rgb[1] += float(scene.zone_tint_g * zi);
    }
  } else if (hit.plane == 1) {
    double su, sv, tu, tv;
    plane_jacobian(0, 1, 2, su, sv, tu, tv);
    for (int c = 0; c < 3; ++c) {
      rgb[c] = float(eval_octaves(scene.backdrop_tex, c, p.x(), p.y(), su, sv, tu, tv));
    }
  } else {
    const auto& b = scene.billboards[static_cast<std::size_t>(hit.plane - 2)];
    double su, sv, tu, tv;
    plane_jacobian(0, 1, 2, su, sv, tu, tv);
    for (int c = 0; c < 3; ++c) {
      rgb[c] = float(eval_octaves(b.tex, c, p.x(), p.y(), su, sv, tu, tv));
    }
  }
  for (int c = 0; c < 3; ++c) rgb[c] = std::clamp(rgb[c], 0.02f, 0.98f);
}

}  // namespace

SceneResult generate_synthetic_scene(const config::SynthConfig& cfg_in, std::uint64_t seed,
                                     const std::string& out_root) {
  config::SynthConfig cfg = cfg_in;
  check_arg(cfg.num_frames >= 3, "generate_synthetic_scene: need at least 3 frames");
  check_arg(cfg.height >= 2 && cfg.width >= 2, "generate_synthetic_scene: degenerate image size");
  config::resolve_intrinsics(cfg);
  check_arg(cfg.fx > 0 && cfg.fy > 0, "generate_synthetic_scene: focal length must be positive");
  check_arg(cfg.motion_profile == "forward_yaw" || cfg.motion_profile == "constant" ||
                cfg.motion_profile == "static" || cfg.motion_profile == "stop_and_go",
            "generate_synthetic_scene: unknown motion profile '" + cfg.motion_profile + "'");

  geometry::CameraIntrinsics K;
  K.fx = cfg.fx; K.fy = cfg.fy; K.cx = cfg.cx; K.cy = cfg.cy;
  K.width = cfg.width; K.height = cfg.height;
  K.validate();

  Rng rng(derive_seed(seed, "scene"));
  Scene scene;
  const bool road_on = cfg.motion_profile == "forward_yaw" || cfg.motion_profile == "stop_and_go";
  scene.road.enabled = road_on;
  scene.road.amp1 = cfg.road_amplitude;
  scene.road.wav1 = cfg.road_wavelength;
  scene.road.phase1 = rng.uniform(0.0, 2.0 * kPi);
  scene.road.amp2 = 0.3 * cfg.road_amplitude;
  scene.road.wav2 = 0.37 * cfg.road_wavelength;
  scene.road.phase2 = rng.uniform(0.0, 2.0 * kPi);

  const double path_len = std::max(20.0, cfg.num_frames * cfg.speed * 1.1 + 30.0);
  scene.backdrop_z = path_len + cfg.backdrop_distance;

  // Slow zones (visually marked); only meaningful for road profiles.
  if (road_on) {
    double z = rng.uniform(18.0, 30.0);
    while (z < path_len - 10.0) {
      const double len = rng.uniform(8.0, 15.0);
      scene.zones.push_back({z, z + len});
      z += len + rng.uniform(26.0, 48.0);
    }
  }

  scene.ground_tex = make_texture(rng, cfg.texture_amplitude, {14.0, 6.0, 3.2},
                                  {0.05, 0.035, 0.08});
  scene.ground_tex.sigma_scale = 1.4;
  // The finest ground octave is lateral-only so grazing rows stay clean.
  if (scene.ground_tex.octaves.size() == 3) {
    auto& o = scene.ground_tex.octaves[2];
    const double f = std::hypot(o.fu, o.fv);
    o.fu = f;
    o.fv = 0.0;
  }
  scene.backdrop_tex = make_texture(rng, cfg.texture_amplitude, {26.0, 11.0}, {0.10, 0.06});

  std::vector<double> used_z;
  for (int i = 0; i < cfg.num_billboards; ++i) {
    Billboard b;
    // Keep billboard planes depth-separated so surfaces never coincide.
    for (int attempt = 0; attempt < 64; ++attempt) {
      b.z = rng.uniform(12.0, path_len + 18.0);
      bool clear = true;
      for (double uz : used_z) clear = clear && std::abs(uz - b.z) > 1.5;
      if (clear) break;
    }
    used_z.push_back(b.z);
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double offset = rng.uniform(4.5, 9.5);
    const double cx_b = scene.road.center(b.z) + side * offset;
    const double halfw = rng.uniform(1.6, 3.6);
    const double height = rng.uniform(2.6, 5.2);
    b.x0 = cx_b - halfw;
    b.x1 = cx_b + halfw;
    b.y1 = kGroundY;
    b.y0 = kGroundY - height;
    b.tex = make_texture(rng, cfg.texture_amplitude, {2.4, 1.1, 0.55}, {0.07, 0.05, 0.04});
    scene.billboards.push_back(b);
  }

  // Trajectory. Road profiles follow the lane center with curvature-driven
  // yaw; speed is modulated by the marked slow zones. stop_and_go adds
  // time-based full stops with no visual counterpart.
  Rng traj_rng(derive_seed(seed, "trajectory"));
  std::vector<std::pair<int, int>> stops;
  if (cfg.motion_profile == "stop_and_go") {
    int t = int(traj_rng.uniform(10.0, 25.0));
    while (t < cfg.num_frames - 12) {
      const int len = int(traj_rng.uniform(5.0, 9.0));
      stops.emplace_back(t, t + len);
      t += len + int(traj_rng.uniform(18.0, 36.0));
    }
  }
  auto stop_gate = [&](int t) {
    double gate = 1.0;
    for (const auto& [s0, s1] : stops) {
      // Two-frame ramps around a full stop.
      double g;
      if (t < s0 - 2 || t > s1 + 2) g = 1.0;
      else if (t >= s0 && t <= s1) g = 0.0;
      else if (t < s0) g = (s0 - t) / 3.0;
      else g = (t - s1) / 3.0;
      gate = std::min(gate, g);
    }
    return gate;
  };

  std::vector<CameraPose> poses;
  const double wobble_phase = traj_rng.uniform(0.0, 2.0 * kPi);
  const double pitch_phase = traj_rng.uniform(0.0, 2.0 * kPi);
  double z = 0.0;
  for (int t = 0; t < cfg.num_frames; ++t) {
    double vel = cfg.speed;
    if (cfg.motion_profile == "static") {
      vel = 0.0;
    } else if (road_on) {
      vel *= 1.0 + 0.12 * std::sin(2.0 * kPi * z / 43.0 + wobble_phase);
      const double zi = zone_indicator(scene, z, scene.zone_edge);
      vel *= 1.0 - 0.55 * zi;
    }
    if (cfg.motion_profile == "stop_and_go") vel *= stop_gate(t);

    const double slope = scene.road.slope(z);
    const double yaw = road_on ? std::atan(slope) : 0.0;
    const double pitch =
        cfg.motion_profile == "static" ? 0.0 : 0.015 * std::sin(2.0 * kPi * z / 23.0 + pitch_phase);

    CameraPose cam;
    const double cy_ = std::cos(yaw), sy_ = std::sin(yaw);
    const double cp = std::cos(pitch), sp = std::sin(pitch);
    Eigen::Matrix3d ry, rx;
    ry << cy_, 0, sy_, 0, 1, 0, -sy_, 0, cy_;
    rx << 1, 0, 0, 0, cp, -sp, 0, sp, cp;
    cam.r_wc = ry * rx;
    cam.center = Eigen::Vector3d(scene.road.center(z), 0.0, z);
    poses.push_back(cam);

    // Advance along the lane curve by arc length vel.
    z += road_on ? vel / std::sqrt(1.0 + slope * slope) : vel;
  }

  // Render.
  ensure_dir(out_root);
  ensure_dir(path_join(out_root, "seq000"));
  SceneResult out;
  out.manifest.root = out_root;
  out.truth.intrinsics = K;
  out.truth.frame_rate_hz = cfg.frame_rate_hz;
  out.truth.depth = Tensor({cfg.num_frames, cfg.height, cfg.width});
  out.truth.plane_id = Tensor({cfg.num_frames, cfg.height, cfg.width});
  const std::int64_t hw = std::int64_t(cfg.height) * cfg.width;

  for (int t = 0; t < cfg.num_frames; ++t) {
    const CameraPose& cam = poses[static_cast<std::size_t>(t)];
    Tensor img({3, cfg.height, cfg.width});
    float* dp = out.truth.depth.data() + std::int64_t(t) * hw;
    float* pidp = out.truth.plane_id.data() + std::int64_t(t) * hw;
    for (int v = 0; v < cfg.height; ++v) {
      for (int u = 0; u < cfg.width; ++u) {
        const Eigen::Vector3d d_cam((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
        const Eigen::Vector3d dw = cam.r_wc * d_cam;
        const Hit hit = cast_ray(scene, cam, dw);
        check_state(hit.plane >= 0, "renderer: ray escaped the scene");
        const std::int64_t p = std::int64_t(v) * cfg.width + u;
        dp[p] = float(hit.depth);
        pidp[p] = float(hit.plane);
        float rgb[3];
        shade(scene, cam, K, u, v, hit, rgb);
        for (int c = 0; c < 3; ++c) img[std::int64_t(c) * hw + p] = rgb[c];
      }
    }
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", t);
    const std::string rel = std::string("seq000/") + name;
    io::write_image_png(path_join(out_root, rel), img);
    out.manifest.records.push_back({"seq000", t, double(t) / cfg.frame_rate_hz, rel});

    Eigen::Matrix4d c2w = Eigen::Matrix4d::Identity();
    c2w.topLeftCorner<3, 3>() = cam.r_wc;
    c2w.topRightCorner<3, 1>() = cam.center;
    out.truth.cam_to_world.push_back(c2w);
  }

  for (const auto& b : scene.billboards) {
    out.truth.obstacles.push_back({b.x0, b.z - 0.4, b.x1, b.z + 0.4});
  }

  out.manifest.save();
  out.truth.save(out_root);
  {
    json j;
    j["seed"] = seed;
    j["num_frames"] = cfg.num_frames;
    j["height"] = cfg.height;
    j["width"] = cfg.width;
    j["fx"] = cfg.fx; j["fy"] = cfg.fy; j["cx"] = cfg.cx; j["cy"] = cfg.cy;
    j["frame_rate_hz"] = cfg.frame_rate_hz;
    j["motion_profile"] = cfg.motion_profile;
    j["speed"] = cfg.speed;
    j["road_amplitude"] = cfg.road_amplitude;
    j["road_wavelength"] = cfg.road_wavelength;
    j["num_billboards"] = cfg.num_billboards;
    j["backdrop_distance"] = cfg.backdrop_distance;
    j["texture_amplitude"] = cfg.texture_amplitude;
    write_text_file(path_join(out_root, "scene_config.json"), j.dump(2) + "\n");
  }
  return out;
}

}  // namespace data
}  // namespace geopre
