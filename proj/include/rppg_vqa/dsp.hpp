#pragma once

// Filtering and FFT primitives shared by extraction and spectral analysis.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "rppg_vqa/common.hpp"

namespace rppgvqa::dsp {

/// One second-order section, transposed direct form II, a0 normalized to 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;

  std::complex<double> response(double omega) const {
    const std::complex<double> z1 = std::polar(1.0, -omega);
    const std::complex<double> z2 = z1 * z1;
    return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
  }
};

using Sos = std::vector<Biquad>;

/// Digital Butterworth band-pass from an analog prototype of `prototype_order`
/// poles (2 * prototype_order poles overall), bilinear transform with
/// pre-warped edges, unit gain at the geometric centre.
inline Sos butterworth_bandpass(int prototype_order, double low_hz, double high_hz, double fs) {
  if (prototype_order < 1 || !(0 < low_hz && low_hz < high_hz && high_hz < fs / 2))
    throw invalid_argument("butterworth_bandpass: need order >= 1 and 0 < low < high < fs/2");
  using cd = std::complex<double>;
  const double k = 2.0 * fs;
  const double wl = k * std::tan(std::numbers::pi * low_hz / fs);
  const double wh = k * std::tan(std::numbers::pi * high_hz / fs);
  const double bw = wh - wl;
  const double w0sq = wl * wh;

  // Upper-half-plane prototype poles; each maps to two band-pass poles, and
  // each band-pass pole with its conjugate forms one section.
  Sos sos;
  const int n = prototype_order;
  for (int i = 0; i < n; ++i) {
    const double theta = std::numbers::pi * (2.0 * i + n + 1) / (2.0 * n);
    const cd p = std::polar(1.0, theta);
    if (p.imag() < -1e-12) continue;
    const cd half = p * bw / 2.0;
    const cd disc = std::sqrt(half * half - w0sq);
    for (cd s : {half + disc, half - disc}) {
      if (p.imag() <= 1e-12 && s.imag() < 0) s = std::conj(s);
      const cd z = (k + s) / (k - s);
      Biquad q;
      q.b0 = 1.0;
      q.b1 = 0.0;
      q.b2 = -1.0;  // one zero at z = 1 and one at z = -1
      q.a1 = -2.0 * z.real();
      q.a2 = std::norm(z);
      sos.push_back(q);
    }
    if (p.imag() <= 1e-12) sos.pop_back();  // real prototype pole yields a conjugate pair already covered
  }
  const double centre = 2.0 * std::atan(std::sqrt(w0sq) / k);
  double gain = 1.0;
  for (const auto& q : sos) gain *= std::abs(q.response(centre));
  const double per = std::pow(gain, -1.0 / static_cast<double>(sos.size()));
  for (auto& q : sos) {
    q.b0 *= per;
    q.b2 *= per;
  }
  return sos;
}

inline std::complex<double> frequency_response(const Sos& sos, double freq_hz, double fs) {
  std::complex<double> h = 1.0;
  const double omega = 2.0 * std::numbers::pi * freq_hz / fs;
  for (const auto& q : sos) h *= q.response(omega);
  return h;
}

/// Causal filtering. With `x0` set, the cascade starts in its steady state for
/// an input that had been constant at x0 forever.
inline std::vector<double> sosfilt(const Sos& sos, std::span<const double> x, std::optional<double> x0 = {}) {
  std::vector<double> y(x.begin(), x.end());
  double level = x0.value_or(0.0);
  for (const auto& q : sos) {
    double z1 = 0, z2 = 0;
    if (x0) {
      const double dc = (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
      const double out = dc * level;
      z2 = q.b2 * level - q.a2 * out;
      z1 = q.b1 * level - q.a1 * out + z2;
      level = out;
    }
    for (double& v : y) {
      const double in = v;
      const double out = q.b0 * in + z1;
      z1 = q.b1 * in - q.a1 * out + z2;
      z2 = q.b2 * in - q.a2 * out;
      v = out;
    }
  }
  return y;
}

/// Zero-phase forward-backward filtering with odd-extension padding of
/// 3 * (2 * sections + 1) samples and steady-state initial conditions.
inline std::vector<double> filtfilt(const Sos& sos, std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  const std::size_t pad = std::min<std::size_t>(n - 1, 3 * (2 * sos.size() + 1));
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  std::vector<double> fwd = sosfilt(sos, ext, ext.front());
  std::reverse(fwd.begin(), fwd.end());
  std::vector<double> bwd = sosfilt(sos, fwd, fwd.front());
  std::reverse(bwd.begin(), bwd.end());
  return {bwd.begin() + static_cast<std::ptrdiff_t>(pad), bwd.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

/// 0.75-2.5 Hz zero-phase band-pass used on every extracted pulse.
inline std::vector<double> bandpass(std::span<const double> x, double fs = kCanonicalRateHz) {
  static const Sos sos = butterworth_bandpass(2, kBandLowHz, kBandHighHz, kCanonicalRateHz);
  if (fs == kCanonicalRateHz) return filtfilt(sos, x);
  return filtfilt(butterworth_bandpass(2, kBandLowHz, kBandHighHz, fs), x);
}

/// Periodic Hann window.
inline std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// |FFT|^2 of `x` zero-padded to `nfft`, bins 0..nfft/2.
inline std::vector<double> power_spectrum(std::span<const double> x, std::size_t nfft) {
  std::vector<double> buf(nfft, 0.0);
  std::copy_n(x.begin(), std::min(x.size(), nfft), buf.begin());
  std::vector<std::complex<double>> spec;
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  fft.fwd(spec, buf);
  std::vector<double> p(nfft / 2 + 1);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::norm(spec[i]);
  return p;
}

inline double mean(std::span<const double> x) {
  double s = 0;
  for (double v : x) s += v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

/// Population standard deviation.
inline double stddev(std::span<const double> x) {
  if (x.empty()) return 0.0;
  const double m = mean(x);
  double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size()));
}

}  // namespace rppgvqa::dsp
