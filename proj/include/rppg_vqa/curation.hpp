#pragma once

// Target training-set construction: two-stage adaptive sampling (rank filter,
// duration-aware softmax, stochastic rounding) plus baseline samplers.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "rppg_vqa/common.hpp"

namespace rppgvqa {

enum class Strategy { tas, wrs, topk, bottomk, random };

inline constexpr std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::tas: return "tas";
    case Strategy::wrs: return "wrs";
    case Strategy::topk: return "topk";
    case Strategy::bottomk: return "bottomk";
    case Strategy::random: return "random";
  }
  return "?";
}

inline std::optional<Strategy> parse_strategy(std::string_view s) {
  for (Strategy v : {Strategy::tas, Strategy::wrs, Strategy::topk, Strategy::bottomk, Strategy::random})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

class curation_error : public error {
 public:
  using error::error;
};

struct SamplingConfig {
  Strategy strategy = Strategy::tas;
  std::size_t target_size = 140;
  double eta = 2.0;
  double tau = 1.0;
  double clip_len_s = 10.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (target_size == 0) throw invalid_argument("SamplingConfig: target_size must be > 0");
    if (!(eta > 1.0)) throw invalid_argument("SamplingConfig: eta must be > 1");
    if (!(tau > 0.0)) throw invalid_argument("SamplingConfig: tau must be > 0");
    if (!(clip_len_s > 0.0)) throw invalid_argument("SamplingConfig: clip_len_s must be > 0");
  }
};

/// Minimal per-video view that the samplers need.
struct ScoredVideo {
  std::string id;
  double q = 0.0;
  double duration_s = 0.0;
  std::string source_tag;
};

struct CurationEntry {
  std::string video_id;
  double clip_start_s = 0.0;
  double clip_end_s = 0.0;

  friend bool operator==(const CurationEntry&, const CurationEntry&) = default;
};

struct CurationManifest {
  std::vector<CurationEntry> entries;
  Strategy strategy = Strategy::tas;
  std::uint64_t seed = 0;
  std::size_t target_size = 0;
  std::string source_scores_digest;
  bool size_alert = false;            // realized size outside target +/- 2 sqrt(target)
  std::size_t duplicate_windows = 0;  // entries repeating an earlier (id, start, end)
};

/// Candidate-set size ceil(eta * target), guarded against float noise.
inline std::size_t candidate_count(double eta, std::size_t target_size) {
  return static_cast<std::size_t>(std::ceil(eta * static_cast<double>(target_size) - 1e-9));
}

namespace detail {

/// Descending Q, ascending id on ties.
inline bool rank_before(const ScoredVideo& a, const ScoredVideo& b) {
  if (a.q != b.q) return a.q > b.q;
  return a.id < b.id;
}

inline std::vector<ScoredVideo> ranked(std::span<const ScoredVideo> records) {
  std::vector<ScoredVideo> v(records.begin(), records.end());
  std::sort(v.begin(), v.end(), rank_before);
  return v;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw invalid_argument("softmax: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += (p[i] = std::exp(logits[i] - mx));
  for (double& x : p) x /= total;
  return p;
}

}  // namespace detail

/// The top ceil(eta * target) videos by Q.
inline std::vector<ScoredVideo> rank_filter(std::span<const ScoredVideo> records, double eta, std::size_t target_size) {
  const std::size_t need = candidate_count(eta, target_size);
  if (records.size() < need)
    throw curation_error("corpus has " + std::to_string(records.size()) + " videos; the candidate set needs " +
                         std::to_string(need));
  auto v = detail::ranked(records);
  v.resize(need);
  return v;
}

inline double duration_factor(double duration_s, double mean_duration_s) {
  if (!(mean_duration_s > 0.0)) throw invalid_argument("duration_factor: mean duration must be > 0");
  return std::log1p(duration_s / mean_duration_s);
}

/// p_i proportional to exp(lambda_i * Q_i / tau), lambda from the candidates' own mean duration.
inline std::vector<double> tas_probabilities(std::span<const ScoredVideo> candidates, double tau) {
  if (candidates.empty()) throw invalid_argument("tas_probabilities: no candidates");
  if (!(tau > 0.0)) throw invalid_argument("tas_probabilities: tau must be > 0");
  double mean_t = 0.0;
  for (const auto& c : candidates) mean_t += c.duration_s;
  mean_t /= static_cast<double>(candidates.size());
  std::vector<double> logits;
  for (const auto& c : candidates) logits.push_back(duration_factor(c.duration_s, mean_t) * c.q / tau);
  return detail::softmax(logits);
}

inline std::vector<double> wrs_probabilities(std::span<const ScoredVideo> records, double tau) {
  if (records.empty()) throw invalid_argument("wrs_probabilities: empty corpus");
  if (!(tau > 0.0)) throw invalid_argument("wrs_probabilities: tau must be > 0");
  std::vector<double> logits;
  for (const auto& r : records) logits.push_back(r.q / tau);
  return detail::softmax(logits);
}

/// floor(p_i * target) plus a Bernoulli draw on the fractional part.
inline std::vector<std::size_t> stochastic_round_counts(std::span<const double> p, std::size_t target_size,
                                                        rng_type& rng) {
  std::vector<std::size_t> counts(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double r = p[i] * static_cast<double>(target_size);
    const double fl = std::floor(r);
    counts[i] = static_cast<std::size_t>(fl);
    if (uniform01(rng) < r - fl) ++counts[i];
  }
  return counts;
}

inline std::vector<std::size_t> stochastic_round_counts(std::span<const double> p, std::size_t target_size,
                                                        std::uint64_t seed) {
  rng_type rng(seed);
  return stochastic_round_counts(p, target_size, rng);
}

/// Uniformly placed window of min(clip_len, duration) seconds.
inline CurationEntry random_clip(const ScoredVideo& v, double clip_len_s, rng_type& rng) {
  const double len = std::min(clip_len_s, v.duration_s);
  const double start = (v.duration_s - len) * uniform01(rng);
  return {v.id, start, start + len};
}

namespace detail {

inline void expand_counts(std::span<const ScoredVideo> pool, std::span<const std::size_t> counts, double clip_len_s,
                          rng_type& rng, std::vector<CurationEntry>& out) {
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (std::size_t k = 0; k < counts[i]; ++k) out.push_back(random_clip(pool[i], clip_len_s, rng));
}

inline std::size_t count_duplicates(std::span<const CurationEntry> entries) {
  std::vector<std::tuple<std::string, double, double>> keys;
  for (const auto& e : entries) keys.emplace_back(e.video_id, e.clip_start_s, e.clip_end_s);
  std::sort(keys.begin(), keys.end());
  std::size_t dup = 0;
  for (std::size_t i = 1; i < keys.size(); ++i)
    if (keys[i] == keys[i - 1]) ++dup;
  return dup;
}

}  // namespace detail

inline CurationManifest curate(std::span<const ScoredVideo> records, const SamplingConfig& cfg,
                               std::string source_scores_digest = {}) {
  cfg.validate();
  std::map<std::string, int> seen;
  for (const auto& r : records) {
    if (++seen[r.id] > 1) throw curation_error("duplicate video id in scores: " + r.id);
    if (!(r.duration_s > 0.0)) throw curation_error("video " + r.id + " has non-positive duration");
  }

  CurationManifest m;
  m.strategy = cfg.strategy;
  m.seed = cfg.seed;
  m.target_size = cfg.target_size;
  m.source_scores_digest = std::move(source_scores_digest);
  rng_type rng(cfg.seed);

  switch (cfg.strategy) {
    case Strategy::tas: {
      const auto pool = rank_filter(records, cfg.eta, cfg.target_size);
      const auto counts = stochastic_round_counts(tas_probabilities(pool, cfg.tau), cfg.target_size, rng);
      detail::expand_counts(pool, counts, cfg.clip_len_s, rng, m.entries);
      break;
    }
    case Strategy::wrs: {
      const auto pool = detail::ranked(records);
      const auto counts = stochastic_round_counts(wrs_probabilities(pool, cfg.tau), cfg.target_size, rng);
      detail::expand_counts(pool, counts, cfg.clip_len_s, rng, m.entries);
      break;
    }
    case Strategy::topk:
    case Strategy::bottomk: {
      if (records.size() < cfg.target_size)
        throw curation_error("corpus has " + std::to_string(records.size()) + " videos; " +
                             std::string(to_string(cfg.strategy)) + " needs " + std::to_string(cfg.target_size));
      auto pool = detail::ranked(records);
      if (cfg.strategy == Strategy::bottomk)
        std::stable_sort(pool.begin(), pool.end(), [](const ScoredVideo& a, const ScoredVideo& b) {
          if (a.q != b.q) return a.q < b.q;
          return a.id < b.id;
        });
      for (std::size_t i = 0; i < cfg.target_size; ++i) m.entries.push_back({pool[i].id, 0.0, pool[i].duration_s});
      break;
    }
    case Strategy::random: {
      if (records.size() < cfg.target_size)
        throw curation_error("corpus has " + std::to_string(records.size()) + " videos; random needs " +
                             std::to_string(cfg.target_size));
      std::vector<ScoredVideo> pool(records.begin(), records.end());
      std::sort(pool.begin(), pool.end(), [](const ScoredVideo& a, const ScoredVideo& b) { return a.id < b.id; });
      // Partial Fisher-Yates with the portable index draw.
      for (std::size_t i = 0; i < cfg.target_size; ++i) {
        const std::size_t j = i + uniform_index(rng, pool.size() - i);
        std::swap(pool[i], pool[j]);
        m.entries.push_back(random_clip(pool[i], cfg.clip_len_s, rng));
      }
      break;
    }
  }

  const double dev = std::abs(static_cast<double>(m.entries.size()) - static_cast<double>(cfg.target_size));
  m.size_alert = dev > 2.0 * std::sqrt(static_cast<double>(cfg.target_size));
  m.duplicate_windows = detail::count_duplicates(m.entries);
  return m;
}

// --- JSON -----------------------------------------------------------------

inline void to_json(nlohmann::json& j, const CurationEntry& e) {
  j = nlohmann::json{{"video_id", e.video_id}, {"clip_start_s", e.clip_start_s}, {"clip_end_s", e.clip_end_s}};
}

inline void from_json(const nlohmann::json& j, CurationEntry& e) {
  j.at("video_id").get_to(e.video_id);
  j.at("clip_start_s").get_to(e.clip_start_s);
  j.at("clip_end_s").get_to(e.clip_end_s);
}

inline void to_json(nlohmann::json& j, const CurationManifest& m) {
  j = nlohmann::json{{"strategy", std::string(to_string(m.strategy))},
                     {"seed", m.seed},
                     {"target_size", m.target_size},
                     {"realized_size", m.entries.size()},
                     {"source_scores_digest", m.source_scores_digest},
                     {"size_alert", m.size_alert},
                     {"duplicate_windows", m.duplicate_windows},
                     {"entries", m.entries}};
}

inline void from_json(const nlohmann::json& j, CurationManifest& m) {
  const auto s = parse_strategy(j.at("strategy").get<std::string>());
  if (!s) throw invalid_argument("unknown strategy: " + j.at("strategy").get<std::string>());
  m.strategy = *s;
  j.at("seed").get_to(m.seed);
  j.at("target_size").get_to(m.target_size);
  m.source_scores_digest = j.value("source_scores_digest", std::string{});
  m.size_alert = j.value("size_alert", false);
  m.duplicate_windows = j.value("duplicate_windows", std::size_t{0});
  j.at("entries").get_to(m.entries);
}

}  // namespace rppgvqa
