#pragma once

// Conventional rPPG extractors: RGB trace (30 Hz) -> single-channel pulse.
//
// All methods share the same tail: 0.75-2.5 Hz zero-phase Butterworth
// band-pass, then mean removal. Windowed methods use 1.6 s windows.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "rppg_vqa/common.hpp"
#include "rppg_vqa/dsp.hpp"
#include "rppg_vqa/trace_io.hpp"

namespace rppgvqa {

enum class Method { green, ica, chrom, lgi, pbv, pos, omit };

inline constexpr std::array<Method, 7> kAllMethods = {Method::green, Method::ica, Method::chrom, Method::lgi,
                                                      Method::pbv,   Method::pos, Method::omit};

inline constexpr std::string_view to_string(Method m) {
  switch (m) {
    case Method::green: return "green";
    case Method::ica: return "ica";
    case Method::chrom: return "chrom";
    case Method::lgi: return "lgi";
    case Method::pbv: return "pbv";
    case Method::pos: return "pos";
    case Method::omit: return "omit";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (Method m : kAllMethods)
    if (to_string(m) == s) return m;
  return std::nullopt;
}

/// Ordered, duplicate-free, non-empty selection of extraction methods.
class MethodSet {
 public:
  MethodSet() : methods_(kAllMethods.begin(), kAllMethods.end()) {}

  explicit MethodSet(std::vector<Method> methods) : methods_(std::move(methods)) {
    if (methods_.empty()) throw invalid_argument("MethodSet must contain at least one method");
    for (std::size_t i = 0; i < methods_.size(); ++i)
      for (std::size_t j = i + 1; j < methods_.size(); ++j)
        if (methods_[i] == methods_[j])
          throw invalid_argument("duplicate method '" + std::string(rppgvqa::to_string(methods_[i])) + "'");
  }

  /// Parses a comma-separated list such as "green,pos,chrom".
  static MethodSet parse(std::string_view list) {
    std::vector<Method> out;
    while (!list.empty()) {
      const auto comma = list.find(',');
      std::string_view tok = list.substr(0, comma);
      while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
      while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
      auto m = parse_method(tok);
      if (!m) throw invalid_argument("unknown method '" + std::string(tok) + "'");
      out.push_back(*m);
      if (comma == std::string_view::npos) break;
      list.remove_prefix(comma + 1);
    }
    return MethodSet(std::move(out));
  }

  std::size_t size() const { return methods_.size(); }
  auto begin() const { return methods_.begin(); }
  auto end() const { return methods_.end(); }
  Method operator[](std::size_t i) const { return methods_[i]; }
  std::string to_string() const {
    std::string s;
    for (Method m : methods_) {
      if (!s.empty()) s += ',';
      s += rppgvqa::to_string(m);
    }
    return s;
  }

 private:
  std::vector<Method> methods_;
};

struct PulseSignal {
  std::vector<double> samples;
  Method method = Method::green;
  std::string video_id;
  bool degenerate = false;  // no usable variation; samples are all zero

  std::size_t size() const { return samples.size(); }
};

class extraction_error : public error {
 public:
  using error::error;
};

/// Shortest trace accepted for extraction (about 2.1 s at 30 Hz).
inline constexpr std::size_t kMinExtractSamples = 64;

struct ExtractionOptions {
  double window_s = 1.6;
  int ica_max_iterations = 200;
  double ica_tolerance = 1e-6;
};

namespace detail {

using Mat3X = Eigen::Matrix<double, 3, Eigen::Dynamic>;
using RowVec = Eigen::RowVectorXd;

// Guard threshold for every normalizing denominator.
inline constexpr double kTiny = 1e-12;

inline Mat3X channels(const RgbTrace& t) {
  const auto n = static_cast<Eigen::Index>(t.size());
  Mat3X c(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    c(0, i) = t.r[static_cast<std::size_t>(i)];
    c(1, i) = t.g[static_cast<std::size_t>(i)];
    c(2, i) = t.b[static_cast<std::size_t>(i)];
  }
  return c;
}

/// Divides each channel by its mean; nullopt when any mean is below kTiny.
inline std::optional<Mat3X> normalize_by_mean(const Mat3X& c) {
  const Eigen::Vector3d mu = c.rowwise().mean();
  if ((mu.array() < kTiny).any()) return std::nullopt;
  return Mat3X(mu.cwiseInverse().asDiagonal() * c);
}

inline double row_std(const RowVec& x) {
  const double m = x.mean();
  return std::sqrt((x.array() - m).square().mean());
}

/// Window start offsets covering [0, n): regular hops plus a final flush window.
inline std::vector<Eigen::Index> window_starts(Eigen::Index n, Eigen::Index len, Eigen::Index hop) {
  std::vector<Eigen::Index> starts;
  if (n <= len) return {0};
  for (Eigen::Index s = 0; s + len <= n; s += hop) starts.push_back(s);
  if (starts.back() + len < n) starts.push_back(n - len);
  return starts;
}

/// Weighted overlap-add of per-window estimates. `fn` returns an empty vector
/// when its guard trips, in which case the window contributes zeros.
template <typename Fn>
RowVec overlap_add(const Mat3X& c, Eigen::Index len, Eigen::Index hop, bool hann_weight, Fn&& fn) {
  const Eigen::Index n = c.cols();
  len = std::min(len, n);
  RowVec acc = RowVec::Zero(n);
  RowVec wsum = RowVec::Zero(n);
  RowVec w = RowVec::Ones(len);
  if (hann_weight) {
    const auto h = dsp::hann(static_cast<std::size_t>(len));
    for (Eigen::Index i = 0; i < len; ++i) w(i) = h[static_cast<std::size_t>(i)];
  }
  for (Eigen::Index s : window_starts(n, len, hop)) {
    RowVec est = fn(Mat3X(c.middleCols(s, len)));
    wsum.segment(s, len) += w;
    if (est.size() == len) acc.segment(s, len) += w.cwiseProduct(est);
  }
  for (Eigen::Index i = 0; i < n; ++i) acc(i) = wsum(i) > kTiny ? acc(i) / wsum(i) : 0.0;
  return acc;
}

inline RowVec chrom_window(const Mat3X& c) {
  auto cn = normalize_by_mean(c);
  if (!cn) return {};
  RowVec x = 3.0 * cn->row(0) - 2.0 * cn->row(1);
  RowVec y = 1.5 * cn->row(0) + cn->row(1) - 1.5 * cn->row(2);
  x.array() -= x.mean();
  y.array() -= y.mean();
  const double sy = row_std(y);
  if (sy < kTiny) return {};
  return x - (row_std(x) / sy) * y;
}

inline RowVec pos_window(const Mat3X& c) {
  auto cn = normalize_by_mean(c);
  if (!cn) return {};
  RowVec s1 = cn->row(1) - cn->row(2);
  RowVec s2 = cn->row(1) + cn->row(2) - 2.0 * cn->row(0);
  const double sd2 = row_std(s2);
  if (sd2 < kTiny) return {};
  RowVec h = s1 + (row_std(s1) / sd2) * s2;
  h.array() -= h.mean();
  return h;
}

inline RowVec pbv_window(const Mat3X& c) {
  auto cn = normalize_by_mean(c);
  if (!cn) return {};
  Mat3X centered = *cn;
  centered.colwise() -= centered.rowwise().mean();
  const Eigen::Vector3d pbv = Eigen::Vector3d(0.33, 0.77, 0.53).normalized();
  Eigen::Matrix3d q = centered * centered.transpose();
  const double scale = q.trace() / 3.0;
  if (scale < kTiny * kTiny) return {};
  // Small ridge keeps rank-deficient (noise-free) windows solvable.
  q.diagonal().array() += 1e-9 * scale;
  const Eigen::Vector3d w = q.ldlt().solve(pbv);
  const double denom = pbv.dot(w);
  if (!(std::abs(denom) > kTiny)) return {};
  return (w.transpose() * centered) / denom;
}

/// Projection onto the complement of `dir` (unit vector).
inline Eigen::Matrix3d complement_projector(const Eigen::Vector3d& dir) {
  return Eigen::Matrix3d::Identity() - dir * dir.transpose();
}

inline RowVec lgi_window(const Mat3X& c) {
  auto cn = normalize_by_mean(c);
  if (!cn) return {};
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(*cn, Eigen::ComputeThinU);
  const Eigen::Vector3d lead = svd.matrixU().col(0);
  Mat3X y = complement_projector(lead) * (*cn);
  y.colwise() -= y.rowwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(y * y.transpose() / static_cast<double>(y.cols()));
  if (eig.eigenvalues()(2) < kTiny * kTiny) return {};
  Eigen::Vector3d dir = eig.eigenvectors().col(2);
  if (dir(1) < 0) dir = -dir;  // orient toward green so windows add coherently
  return dir.transpose() * y;
}

inline RowVec omit_signal(const Mat3X& c) {
  auto cn = normalize_by_mean(c);
  if (!cn) return {};
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(*cn);
  const Eigen::Matrix3d q = qr.householderQ();
  const Eigen::Vector3d tone = q.col(0);
  Mat3X y = complement_projector(tone) * (*cn);
  RowVec s = y.row(1);
  s.array() -= s.mean();
  return s;
}

/// Symmetric FastICA (tanh contrast) on whitened rows of `z`, identity start.
inline Eigen::MatrixXd fastica_unmixing(const Eigen::MatrixXd& z, int max_iter, double tol) {
  const Eigen::Index k = z.rows();
  const double n = static_cast<double>(z.cols());
  auto decorrelate = [](const Eigen::MatrixXd& w) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(w * w.transpose());
    return Eigen::MatrixXd(eig.eigenvectors() * eig.eigenvalues().cwiseMax(1e-300).cwiseSqrt().cwiseInverse().asDiagonal() *
                           eig.eigenvectors().transpose() * w);
  };
  Eigen::MatrixXd w = Eigen::MatrixXd::Identity(k, k);
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd wx = w * z;
    const Eigen::MatrixXd g = wx.array().tanh().matrix();
    const Eigen::VectorXd gp_mean = (1.0 - g.array().square()).rowwise().mean();
    Eigen::MatrixXd w_new = (g * z.transpose()) / n - gp_mean.asDiagonal() * w;
    w_new = decorrelate(w_new);
    const double change = ((w_new * w.transpose()).diagonal().cwiseAbs().array() - 1.0).abs().maxCoeff();
    w = std::move(w_new);
    if (change < tol) break;
  }
  return w;
}

/// Ratio of the largest in-band periodogram bin to total in-band power.
inline double peak_prominence(std::span<const double> x) {
  const std::size_t nfft = std::max<std::size_t>(4096, dsp::next_pow2(x.size()));
  const auto p = dsp::power_spectrum(x, nfft);
  double peak = 0, total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double f = static_cast<double>(i) * kCanonicalRateHz / static_cast<double>(nfft);
    if (f < kBandLowHz || f > kBandHighHz) continue;
    peak = std::max(peak, p[i]);
    total += p[i];
  }
  return total > 0 ? peak / total : 0.0;
}

inline RowVec ica_signal(const Mat3X& c, const ExtractionOptions& opt) {
  auto cn = normalize_by_mean(c);
  if (!cn) return {};
  // z-score the channels that vary; constant channels carry no sources.
  std::vector<Eigen::Index> rows;
  for (Eigen::Index r = 0; r < 3; ++r)
    if (row_std(cn->row(r)) > kTiny) rows.push_back(r);
  if (rows.empty()) return {};
  const Eigen::Index n = c.cols();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    RowVec v = cn->row(rows[i]);
    v.array() -= v.mean();
    x.row(static_cast<Eigen::Index>(i)) = v / row_std(v);
  }

  // Whitening by eigendecomposition; drop numerically empty directions.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(x * x.transpose() / static_cast<double>(n));
  const Eigen::VectorXd lambda = eig.eigenvalues();
  const double lmax = lambda.maxCoeff();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = lambda.size() - 1; i >= 0; --i)
    if (lambda(i) > 1e-10 * lmax) keep.push_back(i);
  Eigen::MatrixXd whiten(static_cast<Eigen::Index>(keep.size()), x.rows());
  for (std::size_t i = 0; i < keep.size(); ++i)
    whiten.row(static_cast<Eigen::Index>(i)) =
        eig.eigenvectors().col(keep[i]).transpose() / std::sqrt(lambda(keep[i]));
  // Rounded to single precision: on near-Gaussian input the iteration does not
  // converge and would otherwise amplify last-bit differences (e.g. from
  // rescaling the trace) into a different source.
  const Eigen::MatrixXd z = (whiten * x).cast<float>().cast<double>();

  const Eigen::MatrixXd w = fastica_unmixing(z, opt.ica_max_iterations, opt.ica_tolerance);
  const Eigen::MatrixXd sources = w * z;

  Eigen::Index best = 0;
  double best_score = -1.0;
  for (Eigen::Index i = 0; i < sources.rows(); ++i) {
    std::vector<double> s(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) s[static_cast<std::size_t>(j)] = sources(i, j);
    const auto filtered = dsp::bandpass(s);
    const double score = peak_prominence(filtered);
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  RowVec out = sources.row(best);
  // Orient the selected source with the green channel when green varies.
  const RowVec g = cn->row(1).array() - cn->row(1).mean();
  if (out.dot(g) < 0) out = -out;
  return out;
}

inline RowVec green_signal(const Mat3X& c) {
  RowVec g = c.row(1);
  g.array() -= g.mean();
  return g;
}

}  // namespace detail

/// Extracts a pulse waveform from a uniform 30 Hz trace. Throws
/// extraction_error when the trace is too short or not on the 30 Hz grid.
inline PulseSignal extract(const RgbTrace& trace, Method method, std::string_view video_id = {},
                           const ExtractionOptions& opt = {}) {
  if (trace.size() < kMinExtractSamples)
    throw extraction_error("trace has " + std::to_string(trace.size()) + " samples; extraction needs at least " +
                           std::to_string(kMinExtractSamples));
  if (!is_uniform(trace)) throw extraction_error("extraction requires a uniform 30 Hz trace; resample first");

  const detail::Mat3X c = detail::channels(trace);
  const Eigen::Index n = c.cols();
  const auto win = static_cast<Eigen::Index>(std::lround(opt.window_s * kCanonicalRateHz));

  detail::RowVec raw;
  switch (method) {
    case Method::green: raw = detail::green_signal(c); break;
    case Method::chrom: raw = detail::overlap_add(c, win, win / 2, true, detail::chrom_window); break;
    case Method::pos: raw = detail::overlap_add(c, win, 1, false, detail::pos_window); break;
    case Method::pbv: raw = detail::overlap_add(c, win, win / 2, true, detail::pbv_window); break;
    case Method::lgi: raw = detail::overlap_add(c, win, win / 2, true, detail::lgi_window); break;
    case Method::omit: raw = detail::omit_signal(c); break;
    case Method::ica: raw = detail::ica_signal(c, opt); break;
  }

  PulseSignal out;
  out.method = method;
  out.video_id = std::string(video_id);
  out.samples.assign(static_cast<std::size_t>(n), 0.0);
  if (raw.size() == n && raw.allFinite()) {
    std::vector<double> x(raw.data(), raw.data() + n);
    x = dsp::bandpass(x);
    const double m = dsp::mean(x);
    for (double& v : x) v -= m;
    // GREEN stays in trace units; every other method is in normalized units.
    const double reference = method == Method::green ? std::abs(c.row(1).mean()) : 1.0;
    const double rms = dsp::stddev(x);
    if (rms > 1e-9 * reference) out.samples = std::move(x);
  }
  out.degenerate = std::all_of(out.samples.begin(), out.samples.end(), [](double v) { return v == 0.0; });
  return out;
}

/// Applies `extract` per method, preserving order. Per-method failures come
/// back as degenerate signals instead of aborting the set.
inline std::vector<PulseSignal> extract_all(const RgbTrace& trace, const MethodSet& methods,
                                            std::string_view video_id = {}, const ExtractionOptions& opt = {}) {
  std::vector<PulseSignal> out;
  out.reserve(methods.size());
  for (Method m : methods) {
    try {
      out.push_back(extract(trace, m, video_id, opt));
    } catch (const extraction_error&) {
      PulseSignal p;
      p.method = m;
      p.video_id = std::string(video_id);
      p.samples.assign(trace.size(), 0.0);
      p.degenerate = true;
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace rppgvqa
