#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace pun {

// Seeded generator with distribution code pinned here rather than in the
// standard library, whose distributions are implementation-defined. Output is
// identical across compilers for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Derives an independent stream from a base seed and a list of salts
  // (step index, instance index, ...).
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> salts) {
    std::uint64_t h = seed ^ 0x9E3779B97F4A7C15ull;
    for (std::uint64_t s : salts) {
      h ^= s + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
      h = splitmix(h);
    }
    return Rng(h);
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
};

}  // namespace pun
