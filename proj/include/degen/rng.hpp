#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>

#include "degen/errors.hpp"

namespace degen::rng {

// Philox-4x32-10 counter-based generator (Salmon et al. constants).
inline constexpr std::uint32_t kPhiloxW32A = 0x9E3779B9u;
inline constexpr std::uint32_t kPhiloxW32B = 0xBB67AE85u;
inline constexpr std::uint32_t kPhiloxM4x32A = 0xD2511F53u;
inline constexpr std::uint32_t kPhiloxM4x32B = 0xCD9E8D57u;

inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::uint32_t k0, std::uint32_t k1) {
  for (int round = 0; round < 10; ++round) {
    std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM4x32A) * ctr[0];
    std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM4x32B) * ctr[2];
    std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
    std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
    std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
    std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
    k0 += kPhiloxW32A;
    k1 += kPhiloxW32B;
  }
  return ctr;
}

/// splitmix64 finalizer; used to derive per-point seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(master ^ mix64(index + 0x9E3779B97F4A7C15ull));
}

/// Uniform in the open interval (0, 1) from 64 random bits.
inline double uniform_open(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Inverse normal CDF, Wichura's AS 241 (PPND16), |error| ~ 1e-15.
inline double normal_icdf(double p) {
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
               1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
             1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
               5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
             4.2313330701600911252e1) * r + 1.0);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  if (r <= 0.0) return q < 0.0 ? -HUGE_VAL : HUGE_VAL;
  r = std::sqrt(-std::log(r));
  double v;
  if (r <= 5.0) {
    r -= 1.6;
    v = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
            3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
          4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
          2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    v = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
          5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0.0 ? -v : v;
}

/// Standard-normal variates keyed by (seed, path, step, block): reproducible
/// across platforms and independent of how paths are scheduled to workers.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint64_t path)
      : k0_(static_cast<std::uint32_t>(seed)),
        k1_(static_cast<std::uint32_t>(seed >> 32)),
        path_(static_cast<std::uint32_t>(path)) {
    if (path >> 32) throw Error("path index exceeds 2^32");
  }

  /// Fills `out` with normals for the given step.
  void normals(std::uint64_t step, std::span<double> out) const {
    std::size_t i = 0;
    for (std::uint32_t block = 0; i < out.size(); ++block) {
      auto [a, b] = draw_pair(step, block);
      out[i++] = normal_icdf(a);
      if (i < out.size()) out[i++] = normal_icdf(b);
    }
  }

  /// One uniform in (0,1) from the given block of this step (used for the
  /// Brownian-bridge test; pass a block index past the normals' blocks).
  double uniform(std::uint64_t step, std::uint32_t block) const {
    return draw_pair(step, block).first;
  }

 private:
  std::pair<double, double> draw_pair(std::uint64_t step, std::uint32_t block) const {
    std::array<std::uint32_t, 4> ctr = {block, path_, static_cast<std::uint32_t>(step),
                                        static_cast<std::uint32_t>(step >> 32)};
    auto r = philox4x32(ctr, k0_, k1_);
    std::uint64_t u = static_cast<std::uint64_t>(r[0]) | (static_cast<std::uint64_t>(r[1]) << 32);
    std::uint64_t v = static_cast<std::uint64_t>(r[2]) | (static_cast<std::uint64_t>(r[3]) << 32);
    return {uniform_open(u), uniform_open(v)};
  }

  std::uint32_t k0_, k1_, path_;
};

}  // namespace degen::rng
