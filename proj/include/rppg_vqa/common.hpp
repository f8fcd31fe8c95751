#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rppgvqa {

/// Canonical analysis rate; every trace is resampled to this before extraction.
inline constexpr double kCanonicalRateHz = 30.0;

/// Heart-rate analysis band.
inline constexpr double kBandLowHz = 0.75;
inline constexpr double kBandHighHz = 2.5;

/// Half-width of the fundamental and harmonic windows of the SNR signal band.
inline constexpr double kSignalHalfWidthHz = 0.1;

inline constexpr double kSnrFloorDb = -20.0;
inline constexpr double kSnrCeilDb = 20.0;

inline constexpr double bpm_to_hz(double bpm) { return bpm / 60.0; }
inline constexpr double hz_to_bpm(double hz) { return hz * 60.0; }

/// Base class of every error the library throws.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition violated by the caller (bad sizes, out-of-range parameters).
class invalid_argument : public error {
 public:
  using error::error;
};

using rng_type = std::mt19937_64;

// The engine is portable; std distributions are not, so the uniform draws
// that decide sampling outcomes are built directly from engine bits.

/// Uniform double in [0, 1).
inline double uniform01(rng_type& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). n must be > 0.
inline std::size_t uniform_index(rng_type& rng, std::size_t n) {
  // Lemire's multiply-shift with rejection, unbiased.
  const std::uint64_t range = n;
  std::uint64_t x = rng();
  unsigned __int128 m = static_cast<unsigned __int128>(x) * range;
  auto low = static_cast<std::uint64_t>(m);
  if (low < range) {
    const std::uint64_t threshold = (0 - range) % range;
    while (low < threshold) {
      x = rng();
      m = static_cast<unsigned __int128>(x) * range;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::size_t>(m >> 64);
}

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

}  // namespace rppgvqa
