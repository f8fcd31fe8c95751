#pragma once

// Signal-level quality: per-method SNRs fused with weights that reward
// agreement on the heart-rate frequency (RANSAC consensus + Gaussian kernel)
// and on spectral shape (mean squared Pearson correlation with peers).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rppg_vqa/common.hpp"
#include "rppg_vqa/pulse_extraction.hpp"
#include "rppg_vqa/spectral.hpp"

namespace rppgvqa {

struct ConsensusConfig {
  double epsilon_hz = bpm_to_hz(5.0);  // RANSAC inlier threshold
  int iterations = 100;                // RANSAC K
  std::uint64_t seed = 0;
  ExtractionOptions extraction{};
};

struct RansacResult {
  double consensus_hz = 0.0;
  std::vector<std::size_t> inliers;  // ascending indices into the input
};

struct MethodReport {
  Method method = Method::green;
  double snr_db = kSnrFloorDb;
  double peak_hz = 0.0;
  bool no_peak = false;
  bool degenerate = false;
  double w_f = 0.0;
  double w_s = 0.0;
  double w = 0.0;  // normalized fusion weight
};

struct ConsensusReport {
  std::vector<MethodReport> per_method;
  double consensus_hz = 0.0;
  double sigma_f_hz = 0.0;
  double q_sig_raw = kSnrFloorDb;
  std::vector<Method> inlier_methods;

  bool all_degenerate() const {
    return std::all_of(per_method.begin(), per_method.end(), [](const MethodReport& m) { return m.degenerate; });
  }
};

struct FusedScore {
  double q_sig_raw = 0.0;
  std::vector<double> weights;
};

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// RANSAC over scalar frequency estimates: hypotheses are means of random
/// samples of size min(2, M); the largest inlier set (first found on ties)
/// wins; consensus is the median of its members, or of all points when no
/// hypothesis gathered any inlier.
inline RansacResult ransac_consensus(std::span<const double> peaks, double epsilon, int iterations, rng_type& rng) {
  if (peaks.empty()) throw invalid_argument("ransac_consensus: no frequency estimates");
  if (!(epsilon > 0.0)) throw invalid_argument("ransac_consensus: epsilon must be > 0");
  const std::size_t m = peaks.size();
  const std::size_t s = std::min<std::size_t>(2, m);

  std::vector<std::size_t> best, current;
  for (int k = 0; k < iterations; ++k) {
    double hypothesis;
    if (s == 1) {
      hypothesis = peaks[uniform_index(rng, m)];
    } else {
      const std::size_t i = uniform_index(rng, m);
      std::size_t j = uniform_index(rng, m - 1);
      if (j >= i) ++j;
      hypothesis = 0.5 * (peaks[i] + peaks[j]);
    }
    current.clear();
    for (std::size_t j = 0; j < m; ++j)
      if (std::abs(peaks[j] - hypothesis) <= epsilon) current.push_back(j);
    if (current.size() > best.size()) best = current;
  }

  RansacResult out;
  out.inliers = best;
  std::vector<double> members;
  if (best.empty()) {
    members.assign(peaks.begin(), peaks.end());
  } else {
    for (std::size_t j : best) members.push_back(peaks[j]);
  }
  out.consensus_hz = detail::median(std::move(members));
  return out;
}

inline RansacResult ransac_consensus(std::span<const double> peaks, double epsilon, int iterations = 100,
                                     std::uint64_t seed = 0) {
  rng_type rng(seed);
  return ransac_consensus(peaks, epsilon, iterations, rng);
}

/// Below this spread every method is taken to agree exactly.
inline constexpr double kMinSigmaHz = 1e-6;

/// Gaussian kernel on the deviation from consensus.
inline std::vector<double> frequency_weights(std::span<const double> peaks, double consensus_hz, double sigma_f) {
  if (sigma_f < 0.0) throw invalid_argument("frequency_weights: sigma_f must be >= 0");
  std::vector<double> w(peaks.size(), 1.0);
  if (sigma_f < kMinSigmaHz) return w;
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    const double d = peaks[i] - consensus_hz;
    w[i] = std::exp(-d * d / (2.0 * sigma_f * sigma_f));
  }
  return w;
}

namespace detail {

/// In-band slice of a spectrum normalized to unit sum (left at zero if empty).
inline std::vector<double> normalized_band(const Spectrum& s) {
  std::vector<double> v;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (in_analysis_band(s.freqs_hz[i])) v.push_back(s.power[i]);
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  if (total > 0.0)
    for (double& x : v) x /= total;
  return v;
}

/// Pearson correlation; 0 when either input has zero variance.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  auto constant = [](std::span<const double> x) {
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    return x.empty() || *lo == *hi;
  };
  if (constant(a) || constant(b)) return 0.0;
  const double ma = dsp::mean(a), mb = dsp::mean(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace detail

/// Mean squared correlation of each method's normalized in-band PSD with every
/// other method's.
inline std::vector<double> spectral_weights(std::span<const Spectrum> spectra) {
  const std::size_t m = spectra.size();
  if (m == 0) throw invalid_argument("spectral_weights: no spectra");
  if (m == 1) return {1.0};
  std::vector<std::vector<double>> bands;
  for (const auto& s : spectra) {
    if (s.freqs_hz != spectra.front().freqs_hz)
      throw invalid_argument("spectral_weights: spectra must share a frequency grid");
    bands.push_back(detail::normalized_band(s));
  }
  std::vector<double> w(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      const double rho = detail::pearson(bands[i], bands[j]);
      w[i] += rho * rho;
      w[j] += rho * rho;
    }
  for (double& x : w) x /= static_cast<double>(m - 1);
  return w;
}

/// Weighted average of SNRs with raw weights w_f + w_s normalized to unit sum
/// (uniform when every raw weight is zero).
inline FusedScore fuse_signal_score(std::span<const double> snrs, std::span<const double> w_f,
                                    std::span<const double> w_s) {
  const std::size_t m = snrs.size();
  if (m == 0 || w_f.size() != m || w_s.size() != m)
    throw invalid_argument("fuse_signal_score: need equal, non-empty input lengths");
  FusedScore out;
  out.weights.resize(m);
  double total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    out.weights[i] = w_f[i] + w_s[i];
    total += out.weights[i];
  }
  for (double& w : out.weights) w = total > 0.0 ? w / total : 1.0 / static_cast<double>(m);
  out.q_sig_raw = 0;
  for (std::size_t i = 0; i < m; ++i) out.q_sig_raw += out.weights[i] * snrs[i];
  return out;
}

/// Full signal branch for one resampled trace.
inline ConsensusReport assess_signal(const RgbTrace& trace, const MethodSet& methods, const ConsensusConfig& cfg = {},
                                     std::string_view video_id = {}) {
  if (trace.size() < kMinExtractSamples)
    throw extraction_error("trace has " + std::to_string(trace.size()) + " samples; need at least " +
                           std::to_string(kMinExtractSamples));
  const auto pulses = extract_all(trace, methods, video_id, cfg.extraction);

  ConsensusReport report;
  std::vector<Spectrum> spectra;
  std::vector<double> peaks, snrs;
  for (const auto& p : pulses) {
    spectra.push_back(welch_psd(p));
    const PeakEstimate peak = find_peak(spectra.back());
    MethodReport mr;
    mr.method = p.method;
    mr.degenerate = p.degenerate;
    mr.peak_hz = peak.hz;
    mr.no_peak = peak.no_peak;
    mr.snr_db = snr_db(spectra.back(), peak.hz);
    peaks.push_back(peak.hz);
    snrs.push_back(mr.snr_db);
    report.per_method.push_back(mr);
  }

  rng_type rng(cfg.seed);
  const RansacResult consensus = ransac_consensus(peaks, cfg.epsilon_hz, cfg.iterations, rng);
  report.consensus_hz = consensus.consensus_hz;
  for (std::size_t i : consensus.inliers) report.inlier_methods.push_back(pulses[i].method);

  report.sigma_f_hz = dsp::stddev(peaks);
  const auto w_f = frequency_weights(peaks, report.consensus_hz, report.sigma_f_hz);
  const auto w_s = spectral_weights(spectra);
  const FusedScore fused = fuse_signal_score(snrs, w_f, w_s);
  for (std::size_t i = 0; i < report.per_method.size(); ++i) {
    report.per_method[i].w_f = w_f[i];
    report.per_method[i].w_s = w_s[i];
    report.per_method[i].w = fused.weights[i];
  }
  report.q_sig_raw = fused.q_sig_raw;
  return report;
}

// --- JSON -----------------------------------------------------------------

inline void to_json(nlohmann::json& j, const MethodReport& m) {
  j = nlohmann::json{{"method", std::string(to_string(m.method))},
                     {"snr_db", m.snr_db},
                     {"peak_hz", m.peak_hz},
                     {"no_peak", m.no_peak},
                     {"degenerate", m.degenerate},
                     {"w_f", m.w_f},
                     {"w_s", m.w_s},
                     {"w", m.w}};
}

inline void from_json(const nlohmann::json& j, MethodReport& m) {
  auto method = parse_method(j.at("method").get<std::string>());
  if (!method) throw invalid_argument("unknown method in report: " + j.at("method").get<std::string>());
  m.method = *method;
  j.at("snr_db").get_to(m.snr_db);
  j.at("peak_hz").get_to(m.peak_hz);
  m.no_peak = j.value("no_peak", false);
  m.degenerate = j.value("degenerate", false);
  j.at("w_f").get_to(m.w_f);
  j.at("w_s").get_to(m.w_s);
  j.at("w").get_to(m.w);
}

inline void to_json(nlohmann::json& j, const ConsensusReport& r) {
  std::vector<std::string> inliers;
  for (Method m : r.inlier_methods) inliers.emplace_back(to_string(m));
  j = nlohmann::json{{"per_method", r.per_method},
                     {"consensus_hz", r.consensus_hz},
                     {"sigma_f_hz", r.sigma_f_hz},
                     {"q_sig_raw", r.q_sig_raw},
                     {"inlier_methods", inliers}};
}

inline void from_json(const nlohmann::json& j, ConsensusReport& r) {
  j.at("per_method").get_to(r.per_method);
  j.at("consensus_hz").get_to(r.consensus_hz);
  j.at("sigma_f_hz").get_to(r.sigma_f_hz);
  j.at("q_sig_raw").get_to(r.q_sig_raw);
  r.inlier_methods.clear();
  for (const auto& s : j.at("inlier_methods")) {
    auto m = parse_method(s.get<std::string>());
    if (m) r.inlier_methods.push_back(*m);
  }
}

}  // namespace rppgvqa
