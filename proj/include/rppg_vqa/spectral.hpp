#pragma once

// Welch PSD, in-band peak picking, and the band-ratio SNR.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "rppg_vqa/common.hpp"
#include "rppg_vqa/dsp.hpp"
#include "rppg_vqa/pulse_extraction.hpp"

namespace rppgvqa {

struct Spectrum {
  std::vector<double> freqs_hz;  // uniform, starting at 0
  std::vector<double> power;

  std::size_t size() const { return freqs_hz.size(); }
  double resolution_hz() const { return freqs_hz.size() > 1 ? freqs_hz[1] - freqs_hz[0] : 0.0; }
};

struct PeakEstimate {
  double hz = 0.0;
  bool no_peak = false;  // spectrum empty over the band; hz is the band midpoint
};

class spectral_error : public error {
 public:
  using error::error;
};

struct WelchOptions {
  double segment_s = 10.0;
  double overlap = 0.5;
  std::size_t min_nfft = 4096;
};

/// Welch PSD: Hann segments with mean removal, zero-padded FFT, one-sided
/// density scaling. Signals shorter than one segment use a single window over
/// the full length.
inline Spectrum welch_psd(std::span<const double> x, double fs = kCanonicalRateHz, const WelchOptions& opt = {}) {
  if (x.size() < kMinExtractSamples)
    throw spectral_error("welch_psd: signal has " + std::to_string(x.size()) + " samples; need at least " +
                         std::to_string(kMinExtractSamples));
  const auto seg_target = static_cast<std::size_t>(std::lround(opt.segment_s * fs));
  const std::size_t seg = std::min(seg_target, x.size());
  const std::size_t hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(seg * (1.0 - opt.overlap))));
  const std::size_t nfft = std::max(opt.min_nfft, dsp::next_pow2(seg));

  const auto window = dsp::hann(seg);
  double wss = 0;
  for (double w : window) wss += w * w;

  Spectrum s;
  s.freqs_hz.resize(nfft / 2 + 1);
  s.power.assign(nfft / 2 + 1, 0.0);
  for (std::size_t i = 0; i < s.freqs_hz.size(); ++i) s.freqs_hz[i] = static_cast<double>(i) * fs / static_cast<double>(nfft);

  std::size_t segments = 0;
  std::vector<double> buf(seg);
  for (std::size_t start = 0; start + seg <= x.size(); start += hop) {
    const double m = dsp::mean(x.subspan(start, seg));
    for (std::size_t i = 0; i < seg; ++i) buf[i] = (x[start + i] - m) * window[i];
    const auto p = dsp::power_spectrum(buf, nfft);
    for (std::size_t i = 0; i < p.size(); ++i) s.power[i] += p[i];
    ++segments;
  }
  const double scale = 1.0 / (fs * wss * static_cast<double>(segments));
  for (std::size_t i = 0; i < s.power.size(); ++i) {
    const bool edge = i == 0 || (nfft % 2 == 0 && i == s.power.size() - 1);
    s.power[i] *= edge ? scale : 2.0 * scale;
  }
  return s;
}

inline Spectrum welch_psd(const PulseSignal& signal, const WelchOptions& opt = {}) {
  return welch_psd(signal.samples, kCanonicalRateHz, opt);
}

namespace detail {
// Tolerance on band-edge comparisons so edge bins are counted as inside.
inline constexpr double kEdgeTol = 1e-9;

inline bool in_range(double f, double lo, double hi) { return f >= lo - kEdgeTol && f <= hi + kEdgeTol; }
}  // namespace detail

inline bool in_analysis_band(double f) { return detail::in_range(f, kBandLowHz, kBandHighHz); }

/// Argmax of power over [0.75, 2.5] Hz.
inline PeakEstimate find_peak(const Spectrum& spec) {
  PeakEstimate best{0.5 * (kBandLowHz + kBandHighHz), true};
  double best_power = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (!in_analysis_band(spec.freqs_hz[i])) continue;
    if (spec.power[i] > best_power) {
      best_power = spec.power[i];
      best = {spec.freqs_hz[i], false};
    }
  }
  return best;
}

enum class Band { outside, signal, noise };

/// Classifies frequency `f` against the SNR bands for heart rate `f1`: the
/// signal band is the union of f1 +/- 0.1 Hz and 2 f1 +/- 0.1 Hz clipped to the
/// analysis band, the noise band is the rest of the analysis band.
inline Band classify_band(double f, double f1) {
  if (!in_analysis_band(f)) return Band::outside;
  const double f2 = 2.0 * f1;
  if (detail::in_range(f, f1 - kSignalHalfWidthHz, f1 + kSignalHalfWidthHz) ||
      detail::in_range(f, f2 - kSignalHalfWidthHz, f2 + kSignalHalfWidthHz))
    return Band::signal;
  return Band::noise;
}

/// Band-ratio SNR in dB, clamped to [-20, 20].
inline double snr_db(const Spectrum& spec, double f1) {
  if (!in_analysis_band(f1)) throw invalid_argument("snr_db: f1 must lie in [0.75, 2.5] Hz");
  double sig = 0.0, noise = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    switch (classify_band(spec.freqs_hz[i], f1)) {
      case Band::signal: sig += spec.power[i]; break;
      case Band::noise: noise += spec.power[i]; break;
      case Band::outside: break;
    }
  }
  if (!(sig > 0.0)) return kSnrFloorDb;
  if (!(noise > 0.0)) return kSnrCeilDb;
  return std::clamp(10.0 * std::log10(sig / noise), kSnrFloorDb, kSnrCeilDb);
}

}  // namespace rppgvqa
