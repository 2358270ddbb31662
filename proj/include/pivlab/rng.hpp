#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace pivlab {

// Purpose tags that separate independent streams drawn for the same
// (path, step) coordinate.
enum class Stream : std::uint32_t {
  kBrownian = 1,
  kJumpCount = 2,
  kJumpMark = 3,
  kBessel = 4,
  kHidden = 5,
  kHiddenInit = 6,
  kAux = 7,
};

// Counter-based generator (Philox4x32-10). Every draw is a pure function of
// (seed, path, step, stream, draw index), so results never depend on how
// paths are scheduled across workers.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) noexcept
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

  std::array<std::uint32_t, 4> block(std::uint32_t path, std::uint32_t step, Stream stream,
                                     std::uint32_t draw) const noexcept {
    std::array<std::uint32_t, 4> ctr{step, draw, path, static_cast<std::uint32_t>(stream)};
    std::array<std::uint32_t, 2> key = key_;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }

  // Two independent uniforms in the open interval (0, 1).
  std::array<double, 2> uniforms(std::uint32_t path, std::uint32_t step, Stream stream,
                                 std::uint32_t draw) const noexcept {
    const auto b = block(path, step, stream, draw);
    const std::uint64_t a = (std::uint64_t{b[0]} << 32) | b[1];
    const std::uint64_t c = (std::uint64_t{b[2]} << 32) | b[3];
    return {to_open_unit(a), to_open_unit(c)};
  }

  double uniform(std::uint32_t path, std::uint32_t step, Stream stream,
                 std::uint32_t draw = 0) const noexcept {
    return uniforms(path, step, stream, draw)[0];
  }

  // Box-Muller pair of independent standard normals.
  std::array<double, 2> normals(std::uint32_t path, std::uint32_t step, Stream stream,
                                std::uint32_t draw = 0) const noexcept {
    const auto u = uniforms(path, step, stream, draw);
    const double r = std::sqrt(-2.0 * std::log(u[0]));
    const double angle = 2.0 * std::numbers::pi * u[1];
    return {r * std::cos(angle), r * std::sin(angle)};
  }

  double normal(std::uint32_t path, std::uint32_t step, Stream stream,
                std::uint32_t draw = 0) const noexcept {
    return normals(path, step, stream, draw)[0];
  }

  // Poisson(mean) by inversion of the CDF.
  int poisson(double mean, std::uint32_t path, std::uint32_t step, Stream stream) const noexcept {
    if (mean <= 0.0) return 0;
    const double u = uniform(path, step, stream);
    double prob = std::exp(-mean);
    double cdf = prob;
    int k = 0;
    while (u > cdf && k < 10000) {
      ++k;
      prob *= mean / k;
      cdf += prob;
      if (prob == 0.0) break;
    }
    return k;
  }

 private:
  static double to_open_unit(std::uint64_t bits) noexcept {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
  }

  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  std::array<std::uint32_t, 2> key_;
};

}  // namespace pivlab
