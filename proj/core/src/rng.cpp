#include "geopre/rng.hpp"

#include <cmath>

#include "geopre/util.hpp"

namespace geopre {

namespace {
inline std::uint64_t splitmix64(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace

std::uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t Rng::next_below(std::uint64_t n) {
  check_arg(n > 0, "Rng::next_below: n must be positive");
  // Rejection sampling to avoid modulo bias.
  std::uint64_t limit = ~0ull - (~0ull % n + 1) % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x > limit);
  return x % n;
}

std::uint64_t derive_seed(std::uint64_t parent, const std::string& label) {
  std::uint64_t s = parent ^ fnv1a64(label);
  return splitmix64(s);
}

std::uint64_t derive_seed(std::uint64_t parent, const std::string& label, std::uint64_t a) {
  std::uint64_t s = derive_seed(parent, label) ^ (a * 0x9e3779b97f4a7c15ull + 0x7f4a7c15ull);
  return splitmix64(s);
}

std::uint64_t derive_seed(std::uint64_t parent, const std::string& label, std::uint64_t a,
                          std::uint64_t b) {
  std::uint64_t s = derive_seed(parent, label, a) ^ (b * 0xbf58476d1ce4e5b9ull + 0x133111ebull);
  return splitmix64(s);
}

}  // namespace geopre
