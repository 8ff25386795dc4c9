#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace geopre {

// Deterministic 64-bit generator (splitmix64). All randomness in the project
// flows from one root seed through labeled children, so any component can be
// re-derived in isolation: seed -> child("shuffle", epoch) -> ...
//
// The uniform/normal transforms are implemented here rather than with
// <random> distributions so that streams are identical across standard
// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller (consumes two draws per pair).
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Labeled sub-seed derivation: mixes the parent seed with a string label and
// integer qualifiers. Children with distinct labels have independent streams.
std::uint64_t derive_seed(std::uint64_t parent, const std::string& label);
std::uint64_t derive_seed(std::uint64_t parent, const std::string& label, std::uint64_t a);
std::uint64_t derive_seed(std::uint64_t parent, const std::string& label, std::uint64_t a,
                          std::uint64_t b);

}  // namespace geopre
