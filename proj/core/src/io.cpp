#include "geopre/io.hpp"

#include <zlib.h>

#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/videoio.hpp>

#include "geopre/util.hpp"

namespace geopre {
namespace io {

namespace {

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}
void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}
std::uint16_t get_u16(const std::uint8_t* p) { return std::uint16_t(p[0]) | (std::uint16_t(p[1]) << 8); }
std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

// Fixed DOS timestamp (2020-01-01 00:00:00) for byte-stable archives.
constexpr std::uint16_t kDosTime = 0;
constexpr std::uint16_t kDosDate = ((2020 - 1980) << 9) | (1 << 5) | 1;

}  // namespace

void write_zip(const std::string& path, const std::vector<ZipEntry>& entries) {
  std::vector<std::uint8_t> out;
  struct Central {
    std::string name;
    std::uint32_t crc, size, offset;
  };
  std::vector<Central> centrals;
  for (const auto& e : entries) {
    const std::uint32_t crc =
        std::uint32_t(::crc32(0L, e.data.data(), static_cast<uInt>(e.data.size())));
    const std::uint32_t offset = std::uint32_t(out.size());
    put_u32(out, 0x04034b50);
    put_u16(out, 20);        // version needed
    put_u16(out, 0);         // flags
    put_u16(out, 0);         // method: store
    put_u16(out, kDosTime);
    put_u16(out, kDosDate);
    put_u32(out, crc);
    put_u32(out, std::uint32_t(e.data.size()));
    put_u32(out, std::uint32_t(e.data.size()));
    put_u16(out, std::uint16_t(e.name.size()));
    put_u16(out, 0);  // extra len
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.insert(out.end(), e.data.begin(), e.data.end());
    centrals.push_back({e.name, crc, std::uint32_t(e.data.size()), offset});
  }
  const std::uint32_t cd_offset = std::uint32_t(out.size());
  for (const auto& c : centrals) {
    put_u32(out, 0x02014b50);
    put_u16(out, 20);
    put_u16(out, 20);
    put_u16(out, 0);
    put_u16(out, 0);
    put_u16(out, kDosTime);
    put_u16(out, kDosDate);
    put_u32(out, c.crc);
    put_u32(out, c.size);
    put_u32(out, c.size);
    put_u16(out, std::uint16_t(c.name.size()));
    put_u16(out, 0);
    put_u16(out, 0);
    put_u16(out, 0);
    put_u16(out, 0);
    put_u32(out, 0);
    put_u32(out, c.offset);
    out.insert(out.end(), c.name.begin(), c.name.end());
  }
  const std::uint32_t cd_size = std::uint32_t(out.size()) - cd_offset;
  put_u32(out, 0x06054b50);
  put_u16(out, 0);
  put_u16(out, 0);
  put_u16(out, std::uint16_t(centrals.size()));
  put_u16(out, std::uint16_t(centrals.size()));
  put_u32(out, cd_size);
  put_u32(out, cd_offset);
  put_u16(out, 0);
  write_file_atomic(path, out.data(), out.size());
}

std::vector<ZipEntry> read_zip(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check_state(f.good(), "cannot open archive: " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  check_state(buf.size() >= 22, "archive too small: " + path);
  // Locate end-of-central-directory (no archive comments are ever written).
  std::size_t eocd = buf.size() - 22;
  while (get_u32(buf.data() + eocd) != 0x06054b50) {
    check_state(eocd > 0, "corrupt archive (no EOCD): " + path);
    --eocd;
  }
  const std::uint16_t count = get_u16(buf.data() + eocd + 10);
  std::uint32_t cd = get_u32(buf.data() + eocd + 16);
  std::vector<ZipEntry> out;
  for (int i = 0; i < count; ++i) {
    check_state(get_u32(buf.data() + cd) == 0x02014b50, "corrupt central directory: " + path);
    const std::uint16_t method = get_u16(buf.data() + cd + 10);
    const std::uint32_t size = get_u32(buf.data() + cd + 24);
    const std::uint16_t name_len = get_u16(buf.data() + cd + 28);
    const std::uint16_t extra_len = get_u16(buf.data() + cd + 30);
    const std::uint16_t comment_len = get_u16(buf.data() + cd + 32);
    const std::uint32_t offset = get_u32(buf.data() + cd + 42);
    check_state(method == 0, "unsupported compression method in: " + path);
    std::string name(reinterpret_cast<const char*>(buf.data() + cd + 46), name_len);
    // Local header: skip to payload.
    const std::uint16_t lh_name = get_u16(buf.data() + offset + 26);
    const std::uint16_t lh_extra = get_u16(buf.data() + offset + 28);
    const std::size_t payload = offset + 30 + lh_name + lh_extra;
    check_state(payload + size <= buf.size(), "truncated entry in: " + path);
    ZipEntry e;
    e.name = std::move(name);
    e.data.assign(buf.begin() + payload, buf.begin() + payload + size);
    out.push_back(std::move(e));
    cd += 46 + name_len + extra_len + comment_len;
  }
  return out;
}

namespace {

template <typename T>
std::vector<std::uint8_t> npy_encode_impl(const BasicTensor<T>& t, const char* descr) {
  std::string shape = "(";
  for (int i = 0; i < t.ndim(); ++i) shape += std::to_string(t.dim(i)) + ", ";
  if (t.ndim() == 1) shape = "(" + std::to_string(t.dim(0)) + ",";
  shape += ")";
  std::string header =
      "{'descr': '" + std::string(descr) + "', 'fortran_order': False, 'shape': " + shape + ", }";
  std::size_t total = 10 + header.size() + 1;
  const std::size_t padded = (total + 63) / 64 * 64;
  header.append(padded - total, ' ');
  header += '\n';

  std::vector<std::uint8_t> out;
  out.reserve(padded + sizeof(T) * static_cast<std::size_t>(t.numel()));
  const char magic[] = "\x93NUMPY";
  out.insert(out.end(), magic, magic + 6);
  out.push_back(1);
  out.push_back(0);
  put_u16(out, std::uint16_t(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  const auto* raw = reinterpret_cast<const std::uint8_t*>(t.data());
  out.insert(out.end(), raw, raw + sizeof(T) * static_cast<std::size_t>(t.numel()));
  return out;
}

}  // namespace

std::vector<std::uint8_t> npy_encode(const Tensor& t) { return npy_encode_impl(t, "<f4"); }
std::vector<std::uint8_t> npy_encode(const DTensor& t) { return npy_encode_impl(t, "<f8"); }

ArrayVariant npy_decode(const std::uint8_t* data, std::size_t n) {
  check_state(n > 10 && std::memcmp(data, "\x93NUMPY", 6) == 0, "not an npy payload");
  const std::uint16_t hlen = get_u16(data + 8);
  std::string header(reinterpret_cast<const char*>(data + 10), hlen);
  auto find_str = [&](const std::string& key) {
    const auto k = header.find(key);
    check_state(k != std::string::npos, "npy header missing " + key);
    return k + key.size();
  };
  const auto dpos = find_str("'descr': '");
  const std::string descr = header.substr(dpos, 3);
  check_state(header.find("'fortran_order': False") != std::string::npos,
              "fortran-order npy not supported");
  const auto spos = find_str("'shape': (");
  std::vector<int> shape;
  std::size_t i = spos;
  while (header[i] != ')') {
    if (std::isdigit(header[i])) {
      int v = 0;
      while (std::isdigit(header[i])) v = v * 10 + (header[i++] - '0');
      shape.push_back(v);
    } else {
      ++i;
    }
  }
  if (shape.empty()) shape.push_back(1);
  const std::uint8_t* payload = data + 10 + hlen;
  const std::size_t avail = n - 10 - hlen;
  std::int64_t numel = 1;
  for (int d : shape) numel *= d;
  if (descr == "<f4") {
    check_state(avail >= sizeof(float) * std::size_t(numel), "truncated npy payload");
    Tensor t(shape);
    std::memcpy(t.data(), payload, sizeof(float) * std::size_t(numel));
    return t;
  }
  if (descr == "<f8") {
    check_state(avail >= sizeof(double) * std::size_t(numel), "truncated npy payload");
    DTensor t(shape);
    std::memcpy(t.data(), payload, sizeof(double) * std::size_t(numel));
    return t;
  }
  throw std::runtime_error("unsupported npy dtype: " + descr);
}

void write_npz(const std::string& path,
               const std::vector<std::pair<std::string, ArrayVariant>>& arrays) {
  std::vector<ZipEntry> entries;
  for (const auto& [name, arr] : arrays) {
    ZipEntry e;
    e.name = name + ".npy";
    e.data = std::visit([](const auto& t) { return npy_encode(t); }, arr);
    entries.push_back(std::move(e));
  }
  write_zip(path, entries);
}

std::map<std::string, ArrayVariant> read_npz(const std::string& path) {
  std::map<std::string, ArrayVariant> out;
  for (const auto& e : read_zip(path)) {
    std::string name = e.name;
    if (name.size() > 4 && name.substr(name.size() - 4) == ".npy") {
      name = name.substr(0, name.size() - 4);
    }
    out.emplace(name, npy_decode(e.data.data(), e.data.size()));
  }
  return out;
}

Tensor as_f32(const ArrayVariant& v) {
  if (std::holds_alternative<Tensor>(v)) return std::get<Tensor>(v);
  return std::get<DTensor>(v).cast<float>();
}

DTensor as_f64(const ArrayVariant& v) {
  if (std::holds_alternative<DTensor>(v)) return std::get<DTensor>(v);
  return std::get<Tensor>(v).cast<double>();
}

void write_image_png(const std::string& path, const Tensor& chw) {
  check_arg(chw.ndim() == 3 && chw.dim(0) == 3, "write_image_png: expects (3,H,W)");
  const int h = chw.dim(1), w = chw.dim(2);
  const std::int64_t hw = std::int64_t(h) * w;
  cv::Mat img(h, w, CV_16UC3);
  for (int y = 0; y < h; ++y) {
    auto* row = img.ptr<std::uint16_t>(y);
    for (int x = 0; x < w; ++x) {
      const std::int64_t p = std::int64_t(y) * w + x;
      for (int c = 0; c < 3; ++c) {
        float v = chw[std::int64_t(c) * hw + p];
        v = std::min(std::max(v, 0.0f), 1.0f);
        // OpenCV stores BGR.
        row[3 * x + (2 - c)] = std::uint16_t(std::lround(v * 65535.0f));
      }
    }
  }
  const std::string tmp = path + ".tmp.png";
  check_state(cv::imwrite(tmp, img), "failed to write image: " + path);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  check_state(!ec, "rename failed for image: " + path);
}

Tensor read_image(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_UNCHANGED);
  check_state(!img.empty(), "cannot decode image: " + path);
  check_state(img.channels() == 3, "expected 3-channel image: " + path);
  const int h = img.rows, w = img.cols;
  const std::int64_t hw = std::int64_t(h) * w;
  Tensor out({3, h, w});
  const bool is16 = img.depth() == CV_16U;
  const float scale = is16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::int64_t p = std::int64_t(y) * w + x;
      for (int c = 0; c < 3; ++c) {
        const float v = is16 ? float(img.ptr<std::uint16_t>(y)[3 * x + (2 - c)])
                             : float(img.ptr<std::uint8_t>(y)[3 * x + (2 - c)]);
        out[std::int64_t(c) * hw + p] = v * scale;
      }
    }
  }
  return out;
}

std::vector<std::pair<double, Tensor>> sample_video_frames(const std::string& path,
                                                           double rate_hz) {
  check_arg(rate_hz > 0.0, "sample_video_frames: rate must be positive");
  cv::VideoCapture cap(path);
  check_state(cap.isOpened(), "cannot open video: " + path);
  const double fps = cap.get(cv::CAP_PROP_FPS);
  check_state(fps > 0.0, "video has no frame rate metadata: " + path);
  std::vector<std::pair<double, Tensor>> out;
  cv::Mat frame;
  std::int64_t index = 0;
  double next_sample_t = 0.0;
  while (cap.read(frame)) {
    const double t = double(index) / fps;
    if (t + 1e-9 >= next_sample_t) {
      cv::Mat f3;
      if (frame.channels() == 3) {
        f3 = frame;
      } else {
        cv::Mat tmp;
        cv::merge(std::vector<cv::Mat>{frame, frame, frame}, tmp);
        f3 = tmp;
      }
      const int h = f3.rows, w = f3.cols;
      const std::int64_t hw = std::int64_t(h) * w;
      Tensor img({3, h, w});
      for (int y = 0; y < h; ++y) {
        const auto* row = f3.ptr<std::uint8_t>(y);
        for (int x = 0; x < w; ++x) {
          const std::int64_t p = std::int64_t(y) * w + x;
          for (int c = 0; c < 3; ++c) {
            img[std::int64_t(c) * hw + p] = float(row[3 * x + (2 - c)]) / 255.0f;
          }
        }
      }
      out.emplace_back(t, std::move(img));
      next_sample_t += 1.0 / rate_hz;
    }
    ++index;
  }
  return out;
}

void write_video_mjpg(const std::string& path, const std::vector<Tensor>& frames,
                      double native_fps) {
  check_arg(!frames.empty(), "write_video_mjpg: no frames");
  const int h = frames[0].dim(1), w = frames[0].dim(2);
  cv::VideoWriter writer(path, cv::VideoWriter::fourcc('M', 'J', 'P', 'G'), native_fps,
                         cv::Size(w, h));
  check_state(writer.isOpened(), "cannot open video writer: " + path);
  const std::int64_t hw = std::int64_t(h) * w;
  for (const auto& f : frames) {
    cv::Mat img(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y) {
      auto* row = img.ptr<std::uint8_t>(y);
      for (int x = 0; x < w; ++x) {
        const std::int64_t p = std::int64_t(y) * w + x;
        for (int c = 0; c < 3; ++c) {
          float v = std::min(std::max(f[std::int64_t(c) * hw + p], 0.0f), 1.0f);
          row[3 * x + (2 - c)] = std::uint8_t(std::lround(v * 255.0f));
        }
      }
    }
    writer.write(img);
  }
}

}  // namespace io
}  // namespace geopre
