#include "geopre/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "geopre/io.hpp"
#include "geopre/util.hpp"

namespace geopre {
namespace data {

namespace fs = std::filesystem;
using nlohmann::json;

void FrameManifest::validate() const {
  check_state(!records.empty(), "manifest: no frames");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (i > 0) {
      const auto& p = records[i - 1];
      const bool same_seq = p.sequence == r.sequence;
      check_state(!same_seq || p.index < r.index, "manifest: indices not increasing in sequence " +
                                                      r.sequence);
      check_state(!same_seq || p.timestamp < r.timestamp,
                  "manifest: timestamps not strictly increasing in sequence " + r.sequence);
      check_state(same_seq || p.sequence < r.sequence, "manifest: sequences not sorted");
    }
    check_state(file_exists(frame_path(int(i))), "manifest: missing frame file " + r.path);
  }
}

void FrameManifest::save() const {
  std::string out;
  for (const auto& r : records) {
    json j{{"sequence", r.sequence},
           {"index", r.index},
           {"timestamp", r.timestamp},
           {"path", r.path}};
    out += j.dump() + "\n";
  }
  write_text_file(path_join(root, "manifest.jsonl"), out);
}

FrameManifest FrameManifest::load(const std::string& root) {
  const std::string mpath = path_join(root, "manifest.jsonl");
  check_state(file_exists(mpath), "manifest not found: " + mpath);
  FrameManifest m;
  m.root = root;
  std::ifstream f(mpath);
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    FrameRecord r;
    r.sequence = j.at("sequence").get<std::string>();
    r.index = j.at("index").get<std::int64_t>();
    r.timestamp = j.at("timestamp").get<double>();
    r.path = j.at("path").get<std::string>();
    m.records.push_back(std::move(r));
  }
  std::sort(m.records.begin(), m.records.end(), [](const FrameRecord& a, const FrameRecord& b) {
    return a.sequence != b.sequence ? a.sequence < b.sequence : a.index < b.index;
  });
  return m;
}

std::string FrameManifest::frame_path(int i) const {
  return path_join(root, records[static_cast<std::size_t>(i)].path);
}

std::vector<int> FrameManifest::triplet_positions() const {
  std::vector<int> out;
  for (int i = 1; i + 1 < int(records.size()); ++i) {
    const auto& p = records[i - 1];
    const auto& c = records[i];
    const auto& n = records[i + 1];
    if (p.sequence == c.sequence && n.sequence == c.sequence && p.index + 1 == c.index &&
        c.index + 1 == n.index) {
      out.push_back(i);
    }
  }
  return out;
}

namespace {

bool is_video_file(const fs::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".avi" || ext == ".mp4" || ext == ".mkv" || ext == ".mov";
}

bool is_image_file(const fs::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::string frame_name(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld.png", static_cast<long long>(index));
  return buf;
}

void ingest_video(const std::string& video_path, const std::string& sequence, double rate_hz,
                  const std::string& out_root, FrameManifest& manifest) {
  auto frames = io::sample_video_frames(video_path, rate_hz);
  ensure_dir(path_join(out_root, sequence));
  std::int64_t index = 0;
  for (auto& [t, img] : frames) {
    const std::string rel = sequence + "/" + frame_name(index);
    io::write_image_png(path_join(out_root, rel), img);
    manifest.records.push_back({sequence, index, double(index) / rate_hz, rel});
    ++index;
  }
}

}  // namespace

FrameManifest ingest_frames(const std::string& source, double rate_hz,
                            const std::string& out_root) {
  check_arg(rate_hz > 0.0, "ingest_frames: rate must be positive");
  check_state(fs::exists(source), "ingest_frames: unreadable source " + source);
  ensure_dir(out_root);
  FrameManifest manifest;
  manifest.root = out_root;

  if (fs::is_regular_file(source)) {
    check_arg(is_video_file(source), "ingest_frames: unsupported file type " + source);
    ingest_video(source, fs::path(source).stem().string(), rate_hz, out_root, manifest);
  } else {
    std::vector<fs::path> entries;
    for (const auto& e : fs::directory_iterator(source)) entries.push_back(e.path());
    std::sort(entries.begin(), entries.end());
    int seq_counter = 0;
    for (const auto& entry : entries) {
      if (fs::is_regular_file(entry) && is_video_file(entry)) {
        ingest_video(entry.string(), entry.stem().string(), rate_hz, out_root, manifest);
        ++seq_counter;
      } else if (fs::is_directory(entry)) {
        // Image-directory sequence, referenced in place when out_root is the
        // source itself, otherwise linked by relative path from out_root.
        std::vector<fs::path> imgs;
        for (const auto& f : fs::directory_iterator(entry)) {
          if (fs::is_regular_file(f.path()) && is_image_file(f.path())) imgs.push_back(f.path());
        }
        if (imgs.empty()) continue;
        std::sort(imgs.begin(), imgs.end());
        const std::string seq = entry.filename().string();
        std::int64_t index = 0;
        for (const auto& img : imgs) {
          std::string rel;
          if (fs::equivalent(fs::path(source), fs::path(out_root))) {
            rel = seq + "/" + img.filename().string();
          } else {
            ensure_dir(path_join(out_root, seq));
            rel = seq + "/" + frame_name(index);
            fs::copy_file(img, path_join(out_root, rel), fs::copy_options::overwrite_existing);
          }
          manifest.records.push_back({seq, index, double(index) / rate_hz, rel});
          ++index;
        }
        ++seq_counter;
      }
    }
    (void)seq_counter;
  }

  check_state(!manifest.records.empty(), "ingest_frames: no frames decoded from " + source);
  std::sort(manifest.records.begin(), manifest.records.end(),
            [](const FrameRecord& a, const FrameRecord& b) {
              return a.sequence != b.sequence ? a.sequence < b.sequence : a.index < b.index;
            });
  manifest.save();
  return manifest;
}

AugmentParams AugmentParams::sample(Rng& rng) {
  AugmentParams p;
  p.brightness = rng.uniform(0.8, 1.2);
  p.contrast = rng.uniform(0.8, 1.2);
  p.saturation = rng.uniform(0.8, 1.2);
  p.hue = rng.uniform(-0.05, 0.05);
  p.grayscale = rng.uniform() < 0.2;
  p.blur_sigma = rng.uniform() < 0.5 ? rng.uniform(0.1, 2.0) : 0.0;
  return p;
}

namespace {

inline float luma(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  v = mx;
  const float d = mx - mn;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r) h = (g - b) / d + (g < b ? 6.0f : 0.0f);
  else if (mx == g) h = (b - r) / d + 2.0f;
  else h = (r - g) / d + 4.0f;
  h /= 6.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  const float i = std::floor(h * 6.0f);
  const float f = h * 6.0f - i;
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - f * s);
  const float t = v * (1.0f - (1.0f - f) * s);
  switch (int(i) % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

void gaussian_blur_inplace(Tensor& img, double sigma) {
  const int h = img.dim(1), w = img.dim(2);
  const int radius = std::max(1, int(std::ceil(2.5 * sigma)));
  std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = float(v);
    sum += v;
  }
  for (auto& k : kernel) k = float(k / sum);
  const std::int64_t hw = std::int64_t(h) * w;
  std::vector<float> tmp(static_cast<std::size_t>(hw));
  for (int c = 0; c < 3; ++c) {
    float* plane = img.data() + std::int64_t(c) * hw;
    // Horizontal pass (replicate borders), then vertical.
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) {
          const int ix = std::clamp(x + k, 0, w - 1);
          acc += kernel[static_cast<std::size_t>(k + radius)] * plane[std::int64_t(y) * w + ix];
        }
        tmp[static_cast<std::size_t>(y) * w + x] = acc;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) {
          const int iy = std::clamp(y + k, 0, h - 1);
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 tmp[static_cast<std::size_t>(iy) * w + x];
        }
        plane[std::int64_t(y) * w + x] = acc;
      }
    }
  }
}

}  // namespace

Tensor augment(const Tensor& image, const AugmentParams& params) {
  check_arg(image.ndim() == 3 && image.dim(0) == 3, "augment: expects (3,H,W)");
  Tensor out = image;
  const std::int64_t hw = std::int64_t(image.dim(1)) * image.dim(2);
  float* r = out.data();
  float* g = out.data() + hw;
  float* b = out.data() + 2 * hw;

  if (params.brightness != 1.0) {
    const float f = float(params.brightness);
    for (std::int64_t i = 0; i < 3 * hw; ++i) out[i] *= f;
  }
  if (params.contrast != 1.0) {
    double mean_gray = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) mean_gray += luma(r[i], g[i], b[i]);
    const float m = float(mean_gray / double(hw));
    const float f = float(params.contrast);
    for (std::int64_t i = 0; i < 3 * hw; ++i) out[i] = (out[i] - m) * f + m;
  }
  if (params.saturation != 1.0) {
    const float f = float(params.saturation);
    for (std::int64_t i = 0; i < hw; ++i) {
      const float gray = luma(r[i], g[i], b[i]);
      r[i] = (r[i] - gray) * f + gray;
      g[i] = (g[i] - gray) * f + gray;
      b[i] = (b[i] - gray) * f + gray;
    }
  }
  if (params.hue != 0.0) {
    for (std::int64_t i = 0; i < hw; ++i) {
      float h, s, v;
      const float rc = std::clamp(r[i], 0.0f, 1.0f);
      const float gc = std::clamp(g[i], 0.0f, 1.0f);
      const float bc = std::clamp(b[i], 0.0f, 1.0f);
      rgb_to_hsv(rc, gc, bc, h, s, v);
      hsv_to_rgb(h + float(params.hue), s, v, r[i], g[i], b[i]);
    }
  }
  if (params.grayscale) {
    for (std::int64_t i = 0; i < hw; ++i) {
      const float gray = luma(r[i], g[i], b[i]);
      r[i] = gray;
      g[i] = gray;
      b[i] = gray;
    }
  }
  if (params.blur_sigma > 0.0) gaussian_blur_inplace(out, params.blur_sigma);
  for (std::int64_t i = 0; i < 3 * hw; ++i) out[i] = std::clamp(out[i], 0.0f, 1.0f);
  return out;
}

Tensor FrameCache::get(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) {
    Tensor img = io::read_image(path);
    Entry e;
    e.shape = img.shape();
    e.q.resize(static_cast<std::size_t>(img.numel()));
    for (std::int64_t i = 0; i < img.numel(); ++i) {
      e.q[static_cast<std::size_t>(i)] =
          std::uint16_t(std::lround(std::clamp(img[i], 0.0f, 1.0f) * 65535.0f));
    }
    bytes_ += e.q.size() * sizeof(std::uint16_t);
    while (bytes_ > max_bytes_ && !order_.empty()) {
      auto victim = entries_.find(order_.front());
      order_.erase(order_.begin());
      if (victim != entries_.end()) {
        bytes_ -= victim->second.q.size() * sizeof(std::uint16_t);
        entries_.erase(victim);
      }
    }
    order_.push_back(path);
    it = entries_.emplace(path, std::move(e)).first;
    return img;
  }
  const Entry& e = it->second;
  Tensor img(e.shape);
  for (std::int64_t i = 0; i < img.numel(); ++i) {
    img[i] = float(e.q[static_cast<std::size_t>(i)]) / 65535.0f;
  }
  return img;
}

FrameTriplet sample_triplet(const FrameManifest& manifest, int position,
                            std::uint64_t augment_seed, FrameCache* cache, bool do_augment) {
  check_arg(position >= 0 && position < int(manifest.records.size()),
            "sample_triplet: position out of range");
  const auto& rec = manifest.records[static_cast<std::size_t>(position)];
  check_arg(position > 0 && position + 1 < int(manifest.records.size()),
            "sample_triplet: position " + std::to_string(position) +
                " has no temporal neighbors");
  const auto& prev = manifest.records[static_cast<std::size_t>(position - 1)];
  const auto& next = manifest.records[static_cast<std::size_t>(position + 1)];
  check_arg(prev.sequence == rec.sequence && next.sequence == rec.sequence &&
                prev.index + 1 == rec.index && rec.index + 1 == next.index,
            "sample_triplet: frames around position " + std::to_string(position) +
                " are not consecutive within one sequence");

  auto fetch = [&](int i) {
    const std::string p = manifest.frame_path(i);
    return cache ? cache->get(p) : io::read_image(p);
  };
  FrameTriplet t;
  t.sequence = rec.sequence;
  t.index = rec.index;
  t.prev = fetch(position - 1);
  t.target = fetch(position);
  t.next = fetch(position + 1);

  AugmentParams params = AugmentParams::identity();
  if (do_augment) {
    Rng rng(augment_seed);
    params = AugmentParams::sample(rng);
  }
  t.prev_aug = augment(t.prev, params);
  t.target_aug = augment(t.target, params);
  t.next_aug = augment(t.next, params);
  return t;
}

DTensor SceneTruth::depth_frame(int t) const {
  const int h = depth.dim(1), w = depth.dim(2);
  DTensor out({h, w});
  const std::int64_t hw = std::int64_t(h) * w;
  for (std::int64_t i = 0; i < hw; ++i) out[i] = double(depth[std::int64_t(t) * hw + i]);
  return out;
}

geometry::RigidTransform SceneTruth::motion(int a, int b) const {
  check_arg(a >= 0 && a < num_frames() && b >= 0 && b < num_frames(), "SceneTruth: frame range");
  const Eigen::Matrix4d m = cam_to_world[static_cast<std::size_t>(b)].inverse() *
                            cam_to_world[static_cast<std::size_t>(a)];
  return geometry::RigidTransform::from_matrix(m);
}

Eigen::Vector2d SceneTruth::future_waypoint(int t, int k) const {
  check_arg(t + k < num_frames(), "SceneTruth: waypoint beyond trajectory");
  const Eigen::Matrix4d w2c = cam_to_world[static_cast<std::size_t>(t)].inverse();
  const Eigen::Vector4d cw =
      cam_to_world[static_cast<std::size_t>(t + k)] * Eigen::Vector4d(0, 0, 0, 1);
  const Eigen::Vector4d ego = w2c * cw;
  return {ego.x(), ego.z()};
}

void SceneTruth::save(const std::string& root) const {
  const int n = num_frames();
  DTensor poses({n, 4, 4});
  for (int t = 0; t < n; ++t) {
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        poses[std::int64_t(t) * 16 + i * 4 + j] = cam_to_world[static_cast<std::size_t>(t)](i, j);
  }
  DTensor intr({4});
  intr[0] = intrinsics.fx; intr[1] = intrinsics.fy;
  intr[2] = intrinsics.cx; intr[3] = intrinsics.cy;
  DTensor size({2});
  size[0] = intrinsics.height; size[1] = intrinsics.width;
  DTensor rate({1});
  rate[0] = frame_rate_hz;
  DTensor obs({int(obstacles.size()), 4});
  for (std::size_t i = 0; i < obstacles.size(); ++i) {
    obs[std::int64_t(i) * 4 + 0] = obstacles[i].x0;
    obs[std::int64_t(i) * 4 + 1] = obstacles[i].z0;
    obs[std::int64_t(i) * 4 + 2] = obstacles[i].x1;
    obs[std::int64_t(i) * 4 + 3] = obstacles[i].z1;
  }
  io::write_npz(path_join(root, "truth.npz"),
                {{"depth", depth},
                 {"plane_id", plane_id},
                 {"pose_cam_to_world", poses},
                 {"intrinsics", intr},
                 {"image_size", size},
                 {"frame_rate_hz", rate},
                 {"obstacles", obs}});
}

SceneTruth SceneTruth::load(const std::string& root) {
  const std::string npz = path_join(root, "truth.npz");
  check_state(file_exists(npz), "truth archive not found: " + npz);
  auto arrays = io::read_npz(npz);
  auto need = [&](const char* name) {
    auto it = arrays.find(name);
    check_state(it != arrays.end(), std::string("truth.npz missing array ") + name);
    return it->second;
  };
  SceneTruth t;
  t.depth = io::as_f32(need("depth"));
  t.plane_id = io::as_f32(need("plane_id"));
  const DTensor poses = io::as_f64(need("pose_cam_to_world"));
  const int n = poses.dim(0);
  t.cam_to_world.resize(static_cast<std::size_t>(n));
  for (int ti = 0; ti < n; ++ti) {
    Eigen::Matrix4d m;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) m(i, j) = poses[std::int64_t(ti) * 16 + i * 4 + j];
    t.cam_to_world[static_cast<std::size_t>(ti)] = m;
  }
  const DTensor intr = io::as_f64(need("intrinsics"));
  const DTensor size = io::as_f64(need("image_size"));
  t.intrinsics.fx = intr[0]; t.intrinsics.fy = intr[1];
  t.intrinsics.cx = intr[2]; t.intrinsics.cy = intr[3];
  t.intrinsics.height = int(size[0]); t.intrinsics.width = int(size[1]);
  t.frame_rate_hz = io::as_f64(need("frame_rate_hz"))[0];
  const DTensor obs = io::as_f64(need("obstacles"));
  for (int i = 0; i < obs.dim(0); ++i) {
    t.obstacles.push_back({obs[std::int64_t(i) * 4 + 0], obs[std::int64_t(i) * 4 + 1],
                           obs[std::int64_t(i) * 4 + 2], obs[std::int64_t(i) * 4 + 3]});
  }
  return t;
}

}  // namespace data
}  // namespace geopre
