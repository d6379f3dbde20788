#pragma once

#include <cstdint>
#include <string>

namespace raydet {

// Counter-based random source. Every draw is a pure function of
// (seed, stream, counter), so independent streams can be split off a single
// run seed without sharing state:
//
//   raw(seed, stream, counter) = mix(mix(seed ^ mix(stream)) + counter)
//
// where mix is the splitmix64 finalizer. Streams are either small integers
// or FNV-1a hashes of a name. Identical seeds reproduce identical draws on
// any platform; the scheme is the only randomness source in the project.
class Rng {
 public:
  Rng() = default;
  Rng(std::uint64_t seed, std::uint64_t stream)
      : base_(mix(seed ^ mix(stream ^ 0x9e3779b97f4a7c15ull))) {}

  static std::uint64_t hash_name(const std::string& name) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
    for (unsigned char c : name) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

  std::uint64_t next_u64() { return mix(base_ + counter_++); }

  // Uniform in [0, 1).
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  std::uint64_t counter() const { return counter_; }
  std::uint64_t base() const { return base_; }
  void restore(std::uint64_t base, std::uint64_t counter) {
    base_ = base;
    counter_ = counter;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t base_ = 0;
  std::uint64_t counter_ = 0;
};

// Fixed stream ids; names hash into their own streams.
namespace streams {
constexpr std::uint64_t kSceneGen = 1;
constexpr std::uint64_t kParamInit = 2;
constexpr std::uint64_t kTrainLoop = 3;
constexpr std::uint64_t kTestData = 100;
}  // namespace streams

}  // namespace raydet
