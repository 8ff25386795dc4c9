#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace geopre {

// Argument/state validation. Throws std::invalid_argument with the given
// message; use for precondition failures that callers can act on.
inline void check_arg(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

inline void check_state(bool ok, const std::string& msg) {
  if (!ok) throw std::runtime_error(msg);
}

// 64-bit FNV-1a. Stable across platforms; used for labeled sub-seed
// derivation, not for integrity.
std::uint64_t fnv1a64(const void* data, std::size_t n);
std::uint64_t fnv1a64(const std::string& s);

// SHA-256 of a byte buffer, returned as lowercase hex. Used for parameter
// digests and run records.
std::string sha256_hex(const void* data, std::size_t n);

class Sha256 {
 public:
  Sha256();
  void update(const void* data, std::size_t n);
  std::string hex_digest();  // finalizes; do not update() afterwards

 private:
  std::uint32_t state_[8];
  std::uint64_t bitlen_ = 0;
  std::uint8_t buf_[64];
  std::size_t buflen_ = 0;
  void process_block(const std::uint8_t* p);
};

// Filesystem helpers (thin std::filesystem wrappers with error context).
void ensure_dir(const std::string& path);
bool file_exists(const std::string& path);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
// Writes to <path>.tmp then renames, so readers never observe partial files.
void write_file_atomic(const std::string& path, const void* data, std::size_t n);
std::string path_join(const std::string& a, const std::string& b);

std::string format_double(double v, int precision = 9);

}  // namespace geopre
