#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "geopre/tensor.hpp"

namespace geopre {
namespace io {

// ---- deterministic zip container (store method only) ----
// Timestamps are fixed so identical content produces identical bytes.
struct ZipEntry {
  std::string name;
  std::vector<std::uint8_t> data;
};
void write_zip(const std::string& path, const std::vector<ZipEntry>& entries);
std::vector<ZipEntry> read_zip(const std::string& path);

// ---- npy / npz ----
using ArrayVariant = std::variant<Tensor, DTensor>;

std::vector<std::uint8_t> npy_encode(const Tensor& t);
std::vector<std::uint8_t> npy_encode(const DTensor& t);
ArrayVariant npy_decode(const std::uint8_t* data, std::size_t n);

void write_npz(const std::string& path,
               const std::vector<std::pair<std::string, ArrayVariant>>& arrays);
std::map<std::string, ArrayVariant> read_npz(const std::string& path);

Tensor as_f32(const ArrayVariant& v);
DTensor as_f64(const ArrayVariant& v);

// ---- images ----
// Images are (3,H,W) float tensors in [0,1]. PNGs are written as 16-bit RGB
// so quantization stays far below the photometric tolerances.
void write_image_png(const std::string& path, const Tensor& chw);
Tensor read_image(const std::string& path);

// ---- video ----
// Decodes a video and returns frames sampled at rate_hz as (timestamp,
// image) pairs. Throws if the container cannot be opened.
std::vector<std::pair<double, Tensor>> sample_video_frames(const std::string& path,
                                                           double rate_hz);
// Writes frames (at native_fps) into a small MJPG clip; used by tests.
void write_video_mjpg(const std::string& path, const std::vector<Tensor>& frames,
                      double native_fps);

}  // namespace io
}  // namespace geopre
