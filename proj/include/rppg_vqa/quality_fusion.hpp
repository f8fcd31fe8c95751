#pragma once

// Corpus-level normalization of the two branch scores and their fusion into
// the unified quality score Q = alpha * q_sig + (1 - alpha) * q_sce.

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rppg_vqa/common.hpp"

namespace rppgvqa {

inline constexpr double kDefaultAlpha = 0.8;
inline constexpr double kTukeyFence = 1.5;

/// Raw branch scores of one video, as produced by the two assessors.
struct BranchScores {
  std::string video_id;
  double q_sig_raw = 0.0;  // dB
  double q_sce_raw = 0.0;  // [0, 10]
  std::set<std::string> flags;
};

struct QualityRecord {
  std::string video_id;
  double q_sig_raw = 0.0;
  double q_sce_raw = 0.0;
  double q_sig_norm = 0.0;
  double q_sce_norm = 0.0;
  double q_unified = 0.0;
  std::set<std::string> flags;
};

/// Percentile with linear interpolation between order statistics
/// (position p * (n - 1) in the sorted data). `sorted` must be ascending.
inline double percentile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw invalid_argument("percentile of empty data");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// Clamps every value to the Tukey fences [Q1 - 1.5 IQR, Q3 + 1.5 IQR].
inline std::vector<double> iqr_truncate(std::span<const double> values) {
  if (values.empty()) throw invalid_argument("iqr_truncate: empty input");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double q1 = percentile_sorted(sorted, 0.25);
  const double q3 = percentile_sorted(sorted, 0.75);
  const double iqr = q3 - q1;
  const double lo = q1 - kTukeyFence * iqr;
  const double hi = q3 + kTukeyFence * iqr;
  std::vector<double> out(values.begin(), values.end());
  for (double& v : out) v = std::clamp(v, lo, hi);
  return out;
}

/// Min-max scaling to [0, 1]; a degenerate range maps everything to 0.5.
inline std::vector<double> minmax_norm(std::span<const double> values) {
  if (values.empty()) throw invalid_argument("minmax_norm: empty input");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn, range = *mx - *mn;
  std::vector<double> out(values.size(), 0.5);
  if (range > 0.0)
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = std::clamp((values[i] - lo) / range, 0.0, 1.0);
  return out;
}

/// IQR truncation then min-max scaling per branch over the whole corpus, then
/// the alpha-weighted sum per video. Output order follows the input.
inline std::vector<QualityRecord> unify(std::span<const BranchScores> corpus, double alpha = kDefaultAlpha) {
  if (corpus.empty()) throw invalid_argument("unify: empty corpus");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw invalid_argument("unify: alpha must be in [0, 1]");
  std::vector<double> sig, sce;
  for (const auto& b : corpus) {
    sig.push_back(b.q_sig_raw);
    sce.push_back(b.q_sce_raw);
  }
  const auto sig_norm = minmax_norm(iqr_truncate(sig));
  const auto sce_norm = minmax_norm(iqr_truncate(sce));

  std::vector<QualityRecord> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    QualityRecord r;
    r.video_id = corpus[i].video_id;
    r.q_sig_raw = corpus[i].q_sig_raw;
    r.q_sce_raw = corpus[i].q_sce_raw;
    r.q_sig_norm = sig_norm[i];
    r.q_sce_norm = sce_norm[i];
    r.q_unified = alpha * r.q_sig_norm + (1.0 - alpha) * r.q_sce_norm;
    r.flags = corpus[i].flags;
    out.push_back(std::move(r));
  }
  return out;
}

inline void to_json(nlohmann::json& j, const QualityRecord& r) {
  j = nlohmann::json{{"video_id", r.video_id},     {"q_sig_raw", r.q_sig_raw},   {"q_sce_raw", r.q_sce_raw},
                     {"q_sig_norm", r.q_sig_norm}, {"q_sce_norm", r.q_sce_norm}, {"q_unified", r.q_unified},
                     {"flags", r.flags}};
}

inline void from_json(const nlohmann::json& j, QualityRecord& r) {
  j.at("video_id").get_to(r.video_id);
  j.at("q_sig_raw").get_to(r.q_sig_raw);
  j.at("q_sce_raw").get_to(r.q_sce_raw);
  j.at("q_sig_norm").get_to(r.q_sig_norm);
  j.at("q_sce_norm").get_to(r.q_sce_norm);
  j.at("q_unified").get_to(r.q_unified);
  r.flags = j.value("flags", std::set<std::string>{});
}

}  // namespace rppgvqa
