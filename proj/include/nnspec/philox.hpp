#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>

namespace nnspec {

// Philox4x32-10 (Salmon et al., SC'11). Counter-based, so any draw can be
// recomputed from (key, counter) without carrying generator state around.
struct Philox4x32 {
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Block apply(Block ctr, Key key) {
    constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int r = 0; r < 10; ++r) {
      std::uint64_t p0 = std::uint64_t(M0) * ctr[0];
      std::uint64_t p1 = std::uint64_t(M1) * ctr[2];
      auto hi0 = std::uint32_t(p0 >> 32), lo0 = std::uint32_t(p0);
      auto hi1 = std::uint32_t(p1 >> 32), lo1 = std::uint32_t(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += W0;
      key[1] += W1;
    }
    return ctr;
  }
};

// Standard normals indexed by a 64-bit position inside a stream. The stream
// is named by two 32-bit words; the seed is the key. Box-Muller on one Philox
// block gives the pair (2k, 2k+1).
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint32_t s0, std::uint32_t s1)
      : key_{std::uint32_t(seed), std::uint32_t(seed >> 32)}, s0_(s0), s1_(s1) {}

  void fill(double* out, std::size_t n, std::uint64_t start = 0) const {
    std::size_t i = 0;
    std::uint64_t k = start;
    if (k & 1) {
      out[i++] = pair(k >> 1)[1];
      ++k;
    }
    for (; i + 1 < n; i += 2, k += 2) {
      auto p = pair(k >> 1);
      out[i] = p[0];
      out[i + 1] = p[1];
    }
    if (i < n) out[i] = pair(k >> 1)[0];
  }

  double at(std::uint64_t k) const { return pair(k >> 1)[k & 1]; }

 private:
  std::array<double, 2> pair(std::uint64_t block) const {
    auto r = Philox4x32::apply(
        {std::uint32_t(block), std::uint32_t(block >> 32), s0_, s1_}, key_);
    // 53-bit uniforms strictly inside (0,1)
    auto u53 = [](std::uint32_t hi, std::uint32_t lo) {
      std::uint64_t x = (std::uint64_t(hi) << 32 | lo) >> 11;
      return (double(x) + 0.5) * 0x1.0p-53;
    };
    double u1 = u53(r[0], r[1]);
    double u2 = u53(r[2], r[3]);
    double rad = std::sqrt(-2.0 * std::log(u1));
    double ang = 2.0 * std::numbers::pi * u2;
    return {rad * std::cos(ang), rad * std::sin(ang)};
  }

  Philox4x32::Key key_;
  std::uint32_t s0_, s1_;
};

}  // namespace nnspec
