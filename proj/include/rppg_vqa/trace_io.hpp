#pragma once

// Corpus manifests, the per-video RGB trace CSV format, and resampling onto
// the canonical 30 Hz grid.
//
// Manifest (JSON):
//   { "corpus_id": "...",
//     "videos": [ { "id": "...", "trace_path": "rel/path.csv",
//                   "duration_s": 10.0, "native_fps": 30.0,
//                   "source_tag": "..." }, ... ] }
//
// Trace (CSV, UTF-8, '.' decimal separator):
//   frame,timestamp_s,r_mean,g_mean,b_mean

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rppg_vqa/common.hpp"

namespace rppgvqa {

namespace fs = std::filesystem;

struct VideoEntry {
  std::string id;
  std::string trace_path;  // relative to the manifest's directory
  double duration_s = 0.0;
  double native_fps = 0.0;
  std::string source_tag;

  friend bool operator==(const VideoEntry&, const VideoEntry&) = default;
};

struct CorpusManifest {
  std::string corpus_id;
  std::vector<VideoEntry> videos;
  fs::path base_dir;  // directory holding the manifest; not serialized

  std::size_t size() const { return videos.size(); }
  fs::path resolve(const VideoEntry& v) const { return base_dir / v.trace_path; }
};

struct RgbTrace {
  std::vector<double> timestamps_s;
  std::vector<double> r, g, b;

  std::size_t size() const { return timestamps_s.size(); }
  double duration_s() const {
    return timestamps_s.empty() ? 0.0 : timestamps_s.back() - timestamps_s.front();
  }
};

class manifest_error : public error {
 public:
  enum class kind { io, parse, duplicate_id, missing_trace, invalid_field };

  manifest_error(kind k, std::string entry, const std::string& what)
      : error(what), kind_(k), entry_(std::move(entry)) {}

  kind code() const { return kind_; }
  /// Offending video id (or field path for parse errors); may be empty.
  const std::string& entry() const { return entry_; }

 private:
  kind kind_;
  std::string entry_;
};

class trace_error : public error {
 public:
  enum class kind { io, header, malformed_row, non_monotone, too_short, non_finite, duration_mismatch };

  trace_error(kind k, std::size_t row, const std::string& what) : error(what), kind_(k), row_(row) {}

  kind code() const { return kind_; }
  /// 0-based data row index (header excluded) where the problem was found.
  std::size_t row() const { return row_; }

 private:
  kind kind_;
  std::size_t row_;
};

inline constexpr std::string_view kTraceHeader = "frame,timestamp_s,r_mean,g_mean,b_mean";

/// Longest run of consecutive non-finite samples that is repaired by interpolation.
inline constexpr std::size_t kMaxNanRun = 2;

// --- manifest -------------------------------------------------------------

inline void to_json(nlohmann::json& j, const VideoEntry& v) {
  j = nlohmann::json{{"id", v.id},
                     {"trace_path", v.trace_path},
                     {"duration_s", v.duration_s},
                     {"native_fps", v.native_fps},
                     {"source_tag", v.source_tag}};
}

inline nlohmann::json manifest_to_json(const CorpusManifest& m) {
  nlohmann::json j;
  j["corpus_id"] = m.corpus_id;
  j["videos"] = m.videos;
  return j;
}

namespace detail {

inline VideoEntry parse_video_entry(const nlohmann::json& j, std::size_t index) {
  const std::string where = "videos[" + std::to_string(index) + "]";
  if (!j.is_object()) throw manifest_error(manifest_error::kind::parse, where, where + " is not an object");
  auto field = [&](const char* name) -> const nlohmann::json& {
    auto it = j.find(name);
    if (it == j.end())
      throw manifest_error(manifest_error::kind::parse, where, where + " is missing field '" + name + "'");
    return *it;
  };
  VideoEntry v;
  try {
    v.id = field("id").get<std::string>();
    v.trace_path = field("trace_path").get<std::string>();
    v.duration_s = field("duration_s").get<double>();
    v.native_fps = field("native_fps").get<double>();
    v.source_tag = j.value("source_tag", std::string{});
  } catch (const nlohmann::json::type_error& e) {
    throw manifest_error(manifest_error::kind::parse, where, where + ": " + e.what());
  }
  return v;
}

}  // namespace detail

/// Validates the manifest invariants; `check_files` also requires every trace to exist.
inline void validate_manifest(const CorpusManifest& m, bool check_files = true) {
  std::set<std::string> seen;
  for (const auto& v : m.videos) {
    if (v.id.empty())
      throw manifest_error(manifest_error::kind::invalid_field, v.id, "video with empty id");
    if (!seen.insert(v.id).second)
      throw manifest_error(manifest_error::kind::duplicate_id, v.id, "duplicate video id '" + v.id + "'");
    if (!(v.duration_s > 0.0) || !std::isfinite(v.duration_s))
      throw manifest_error(manifest_error::kind::invalid_field, v.id, "video '" + v.id + "': duration_s must be > 0");
    if (!(v.native_fps > 0.0) || !std::isfinite(v.native_fps))
      throw manifest_error(manifest_error::kind::invalid_field, v.id, "video '" + v.id + "': native_fps must be > 0");
    if (v.trace_path.empty() || fs::path(v.trace_path).is_absolute())
      throw manifest_error(manifest_error::kind::invalid_field, v.id,
                           "video '" + v.id + "': trace_path must be a relative path");
    if (check_files && !fs::is_regular_file(m.resolve(v)))
      throw manifest_error(manifest_error::kind::missing_trace, v.id,
                           "video '" + v.id + "': trace file not found: " + m.resolve(v).string());
  }
}

inline CorpusManifest parse_manifest(std::string_view text, const fs::path& base_dir, bool check_files = true) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw manifest_error(manifest_error::kind::parse, "", std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("videos") || !j["videos"].is_array())
    throw manifest_error(manifest_error::kind::parse, "videos", "manifest must be an object with a 'videos' array");
  CorpusManifest m;
  m.base_dir = base_dir;
  if (auto it = j.find("corpus_id"); it != j.end() && it->is_string()) m.corpus_id = it->get<std::string>();
  const auto& videos = j["videos"];
  m.videos.reserve(videos.size());
  for (std::size_t i = 0; i < videos.size(); ++i) m.videos.push_back(detail::parse_video_entry(videos[i], i));
  validate_manifest(m, check_files);
  return m;
}

inline CorpusManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw manifest_error(manifest_error::kind::io, "", "cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

inline void save_manifest(const CorpusManifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw manifest_error(manifest_error::kind::io, "", "cannot write manifest " + path.string());
  out << manifest_to_json(m).dump(2) << '\n';
}

// --- trace CSV ------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Empty fields and "nan" parse to NaN; anything else unparseable is malformed.
inline bool parse_number(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) {
    out = std::numeric_limits<double>::quiet_NaN();
    return true;
  }
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

/// Repairs runs of at most kMaxNanRun non-finite samples by linear interpolation
/// (edge runs hold the nearest finite value). Returns the row of the first
/// unrepairable run, or npos.
inline std::size_t repair_nan_runs(std::vector<double>& x) {
  const std::size_t n = x.size();
  std::size_t i = 0;
  while (i < n) {
    if (std::isfinite(x[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && !std::isfinite(x[j])) ++j;
    if (j - i > kMaxNanRun || (i == 0 && j == n)) return i;
    for (std::size_t k = i; k < j; ++k) {
      if (i == 0) {
        x[k] = x[j];
      } else if (j == n) {
        x[k] = x[i - 1];
      } else {
        const double t = static_cast<double>(k - i + 1) / static_cast<double>(j - i + 1);
        x[k] = x[i - 1] + t * (x[j] - x[i - 1]);
      }
    }
    i = j;
  }
  return std::string::npos;
}

inline void format_number(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace detail

inline RgbTrace parse_trace_csv(std::string_view text) {
  RgbTrace t;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    line = text.substr(pos, end - pos);
    pos = end + 1;
    return true;
  };

  std::string_view line;
  if (!next_line(line)) throw trace_error(trace_error::kind::header, 0, "trace file is empty");
  if (line.starts_with("\xEF\xBB\xBF")) line.remove_prefix(3);
  if (detail::trim(line) != kTraceHeader)
    throw trace_error(trace_error::kind::header, 0,
                      "unexpected trace header '" + std::string(detail::trim(line)) + "'");

  std::size_t row = 0;
  while (next_line(line)) {
    if (detail::trim(line).empty()) continue;
    double fields[5];
    std::size_t start = 0;
    int count = 0;
    for (; count < 5; ++count) {
      std::size_t comma = line.find(',', start);
      const bool last = comma == std::string_view::npos;
      if (last != (count == 4)) break;
      std::string_view f = line.substr(start, last ? std::string_view::npos : comma - start);
      if (!detail::parse_number(f, fields[count])) break;
      start = comma + 1;
    }
    if (count != 5)
      throw trace_error(trace_error::kind::malformed_row, row,
                        "malformed trace row " + std::to_string(row) + ": '" + std::string(detail::trim(line)) + "'");
    const double ts = fields[1];
    if (!std::isfinite(ts))
      throw trace_error(trace_error::kind::malformed_row, row, "non-finite timestamp at row " + std::to_string(row));
    if (!t.timestamps_s.empty() && !(ts > t.timestamps_s.back()))
      throw trace_error(trace_error::kind::non_monotone, row,
                        "timestamps not strictly increasing at row " + std::to_string(row));
    for (int c = 2; c < 5; ++c) {
      if (std::isfinite(fields[c]) && fields[c] < 0.0)
        throw trace_error(trace_error::kind::malformed_row, row,
                          "negative channel value at row " + std::to_string(row));
    }
    t.timestamps_s.push_back(ts);
    t.r.push_back(fields[2]);
    t.g.push_back(fields[3]);
    t.b.push_back(fields[4]);
    ++row;
  }
  if (t.size() < 2)
    throw trace_error(trace_error::kind::too_short, t.size(),
                      "trace has " + std::to_string(t.size()) + " samples; at least 2 required");
  for (auto* ch : {&t.r, &t.g, &t.b}) {
    if (auto bad = detail::repair_nan_runs(*ch); bad != std::string::npos)
      throw trace_error(trace_error::kind::non_finite, bad,
                        "run of more than " + std::to_string(kMaxNanRun) + " non-finite samples at row " +
                            std::to_string(bad));
  }
  return t;
}

inline RgbTrace load_trace(const fs::path& csv_path) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw trace_error(trace_error::kind::io, 0, "cannot open trace " + csv_path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_trace_csv(ss.str());
}

/// Loads the entry's trace and checks its span against the declared duration
/// (tolerance: one native frame period).
inline RgbTrace load_trace(const CorpusManifest& manifest, const VideoEntry& entry) {
  RgbTrace t = load_trace(manifest.resolve(entry));
  const double tol = 1.0 / entry.native_fps + 1e-9;
  if (std::abs(t.duration_s() - entry.duration_s) > tol) {
    std::ostringstream msg;
    msg << "video '" << entry.id << "': trace spans " << t.duration_s() << " s but manifest declares "
        << entry.duration_s << " s";
    throw trace_error(trace_error::kind::duration_mismatch, t.size() - 1, msg.str());
  }
  return t;
}

inline std::string format_trace_csv(const RgbTrace& t) {
  std::string out;
  out.reserve(64 * t.size() + 64);
  out.append(kTraceHeader);
  out.push_back('\n');
  for (std::size_t i = 0; i < t.size(); ++i) {
    out.append(std::to_string(i));
    for (double v : {t.timestamps_s[i], t.r[i], t.g[i], t.b[i]}) {
      out.push_back(',');
      detail::format_number(out, v);
    }
    out.push_back('\n');
  }
  return out;
}

inline void save_trace(const RgbTrace& t, const fs::path& csv_path) {
  std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
  if (!out) throw trace_error(trace_error::kind::io, 0, "cannot write trace " + csv_path.string());
  out << format_trace_csv(t);
}

// --- resampling -----------------------------------------------------------

/// Linear interpolation onto a uniform 30 Hz grid starting at the first
/// timestamp. Each input frame is taken to cover one mean frame period, so the
/// output holds round(N * 30 / native_rate) samples; grid points past the last
/// input timestamp hold the last value.
inline RgbTrace resample_30fps(const RgbTrace& in) {
  const std::size_t n = in.size();
  if (n < 2 || in.r.size() != n || in.g.size() != n || in.b.size() != n)
    throw invalid_argument("resample_30fps: trace needs >= 2 samples with equal-length channels");

  const double t0 = in.timestamps_s.front();
  const double span = in.timestamps_s.back() - t0;
  const double mean_dt = span / static_cast<double>(n - 1);
  const auto m = static_cast<std::size_t>(std::llround((span + mean_dt) * kCanonicalRateHz));

  RgbTrace out;
  out.timestamps_s.resize(m);
  out.r.resize(m);
  out.g.resize(m);
  out.b.resize(m);
  std::size_t k = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double t = t0 + static_cast<double>(i) / kCanonicalRateHz;
    out.timestamps_s[i] = t;
    while (k + 2 < n && in.timestamps_s[k + 1] <= t) ++k;
    const double ta = in.timestamps_s[k];
    const double tb = in.timestamps_s[k + 1];
    double w = (t - ta) / (tb - ta);
    w = std::clamp(w, 0.0, 1.0);
    auto lerp = [&](const std::vector<double>& c) { return w == 0.0 ? c[k] : w == 1.0 ? c[k + 1] : c[k] + w * (c[k + 1] - c[k]); };
    out.r[i] = lerp(in.r);
    out.g[i] = lerp(in.g);
    out.b[i] = lerp(in.b);
  }
  return out;
}

/// True when timestamps form a uniform grid at `rate_hz` (relative tolerance 1e-6 per step).
inline bool is_uniform(const RgbTrace& t, double rate_hz = kCanonicalRateHz) {
  const double dt = 1.0 / rate_hz;
  for (std::size_t i = 1; i < t.size(); ++i)
    if (std::abs(t.timestamps_s[i] - t.timestamps_s[i - 1] - dt) > 1e-6 * dt) return false;
  return true;
}

}  // namespace rppgvqa
