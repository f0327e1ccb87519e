#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace fino {

// Counter-based generator in the splitmix64 family. Draw k is a pure
// function of (seed, counter at draw time), so any consumer that draws a
// fixed number of values replays identically no matter what ran before it.
// Copying the struct forks the stream; derive() gives independent
// substreams for (seed, purpose, index) without sharing state.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  std::uint64_t next_u64() {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * ++counter;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_uniform();
  }

  bool next_bernoulli(double p) { return next_uniform() < p; }

  // Uniform integer in [0, n). Fixed-width multiply keeps the draw count
  // constant (bias is O(n / 2^64), irrelevant at our range sizes).
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Box-Muller; consumes exactly two uniforms per call.
  double next_normal() {
    double u1 = next_uniform();
    double u2 = next_uniform();
    // Guard the log against u1 == 0.
    double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Independent substream for a named purpose. Tag goes through FNV-1a so
  // distinct purposes cannot collide by counter arithmetic.
  static RngState derive(std::uint64_t root, std::string_view tag,
                         std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : tag) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ull;
    }
    auto mix = [](std::uint64_t z) {
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
      return z ^ (z >> 31);
    };
    RngState out;
    out.seed = mix(root ^ mix(h ^ mix(a * 0x9E3779B97F4A7C15ull + b)));
    out.counter = 0;
    return out;
  }
};

}  // namespace fino
