#pragma once

// End-to-end commands behind the CLI: score a corpus, sample a training
// manifest, summarize a scores file, write a synthetic corpus.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rppg_vqa/curation.hpp"
#include "rppg_vqa/quality_fusion.hpp"
#include "rppg_vqa/remote_scorer.hpp"
#include "rppg_vqa/scene_assessment.hpp"
#include "rppg_vqa/signal_consensus.hpp"
#include "rppg_vqa/synth_bench.hpp"
#include "rppg_vqa/trace_io.hpp"

namespace rppgvqa {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFatal = 1;
inline constexpr int kExitFlagged = 2;

inline constexpr std::string_view kFlagDegenerate = "degenerate";
inline constexpr std::string_view kFlagSceneUnscored = "scene-unscored";
inline constexpr std::string_view kFlagTraceError = "trace-error";

enum class LogLevel { error, warn, info, debug };

inline std::optional<LogLevel> parse_log_level(std::string_view s) {
  if (s == "error") return LogLevel::error;
  if (s == "warn") return LogLevel::warn;
  if (s == "info") return LogLevel::info;
  if (s == "debug") return LogLevel::debug;
  return std::nullopt;
}

struct RunConfig {
  fs::path manifest_path;
  fs::path scores_path;
  fs::path out_path;
  MethodSet methods;
  double alpha = kDefaultAlpha;
  ConsensusConfig consensus;
  ScorerConfig scorer{.prompt_templates = default_prompt_templates()};
  SamplingConfig sampling;
  std::size_t workers = 1;
  LogLevel log_level = LogLevel::info;
  std::string preset = "separation";

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw invalid_argument("alpha must be in [0, 1]");
    if (workers < 1) throw invalid_argument("workers must be >= 1");
  }
};

// --- configuration --------------------------------------------------------

namespace detail {

inline double to_double(std::string_view key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw invalid_argument(std::string(key) + ": not a number: " + v);
  return out;
}

inline std::uint64_t to_uint(std::string_view key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw invalid_argument(std::string(key) + ": not a non-negative integer: " + v);
  return out;
}

}  // namespace detail

/// Applies one `key = value` setting. Unknown keys are errors.
inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::to_double;
  using detail::to_uint;
  if (key == "manifest") cfg.manifest_path = value;
  else if (key == "scores") cfg.scores_path = value;
  else if (key == "out") cfg.out_path = value;
  else if (key == "methods") cfg.methods = MethodSet::parse(value);
  else if (key == "alpha") cfg.alpha = to_double(key, value);
  else if (key == "epsilon_bpm") cfg.consensus.epsilon_hz = bpm_to_hz(to_double(key, value));
  else if (key == "ransac_iterations") cfg.consensus.iterations = static_cast<int>(to_uint(key, value));
  else if (key == "ransac_seed") cfg.consensus.seed = to_uint(key, value);
  else if (key == "scorer") {
    if (value == "mock") cfg.scorer.kind = ScorerConfig::Kind::mock;
    else if (value == "remote") cfg.scorer.kind = ScorerConfig::Kind::remote;
    else throw invalid_argument("scorer must be 'remote' or 'mock', got '" + value + "'");
  }
  else if (key == "endpoint") cfg.scorer.endpoint_url = value;
  else if (key == "model") cfg.scorer.model_name = value;
  else if (key == "api_key_env") cfg.scorer.api_key_env = value;
  else if (key == "prompt_dir") cfg.scorer.prompt_templates = load_prompt_templates(value);
  else if (key == "frame_budget") cfg.scorer.frame_budget = to_uint(key, value);
  else if (key == "timeout_s") cfg.scorer.timeout_s = to_double(key, value);
  else if (key == "max_retries") cfg.scorer.max_retries = static_cast<int>(to_uint(key, value));
  else if (key == "rate_limit") cfg.scorer.rate_limit = to_double(key, value);
  else if (key == "workers") cfg.workers = to_uint(key, value);
  else if (key == "strategy") {
    const auto s = parse_strategy(value);
    if (!s) throw invalid_argument("unknown strategy '" + value + "'");
    cfg.sampling.strategy = *s;
  }
  else if (key == "target_size") cfg.sampling.target_size = to_uint(key, value);
  else if (key == "eta") cfg.sampling.eta = to_double(key, value);
  else if (key == "tau") cfg.sampling.tau = to_double(key, value);
  else if (key == "clip_len") cfg.sampling.clip_len_s = to_double(key, value);
  else if (key == "seed") cfg.sampling.seed = to_uint(key, value);
  else if (key == "log_level") {
    const auto l = parse_log_level(value);
    if (!l) throw invalid_argument("unknown log level '" + value + "'");
    cfg.log_level = *l;
  }
  else if (key == "preset") cfg.preset = value;
  else throw invalid_argument("unknown config key '" + key + "'");
}

/// Parses `key = value` lines; `#` starts a comment; blank lines ignored.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string_view t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key(detail::trim(t.substr(0, eq)));
    const std::string value(detail::trim(t.substr(eq + 1)));
    if (key.empty()) throw invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(key, value);
  }
  return out;
}

inline void load_config_file(RunConfig& cfg, const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  for (const auto& [k, v] : parse_config_text(ss.str())) apply_setting(cfg, k, v);
}

// --- logging --------------------------------------------------------------

class Logger {
 public:
  explicit Logger(LogLevel level, std::ostream& out = std::cerr) : level_(level), out_(out) {}

  void log(LogLevel l, const std::string& msg) {
    if (l > level_) return;
    static constexpr const char* names[] = {"error", "warn", "info", "debug"};
    std::lock_guard lock(mu_);
    out_ << "[" << names[static_cast<int>(l)] << "] " << msg << '\n';
  }

 private:
  LogLevel level_;
  std::ostream& out_;
  std::mutex mu_;
};

// --- scoring ----------------------------------------------------------------

/// One line of the scores file.
struct ScoreLine {
  QualityRecord quality;
  std::string source_tag;
  double duration_s = 0.0;
  double native_fps = 0.0;
  std::optional<ConsensusReport> signal;  // absent when the trace could not be read
  SceneScores scene;
  std::string trace_note;
};

inline nlohmann::json to_score_json(const ScoreLine& s) {
  nlohmann::json j = s.quality;
  j["source_tag"] = s.source_tag;
  j["duration_s"] = s.duration_s;
  j["native_fps"] = s.native_fps;
  j["signal"] = s.signal ? nlohmann::json(*s.signal) : nlohmann::json(nullptr);
  j["scene"] = s.scene;
  if (!s.trace_note.empty()) j["trace_note"] = s.trace_note;
  return j;
}

inline ScoreLine from_score_json(const nlohmann::json& j) {
  ScoreLine s;
  s.quality = j.get<QualityRecord>();
  s.source_tag = j.value("source_tag", std::string{});
  j.at("duration_s").get_to(s.duration_s);
  s.native_fps = j.value("native_fps", 0.0);
  if (j.contains("signal") && !j.at("signal").is_null()) s.signal = j.at("signal").get<ConsensusReport>();
  if (j.contains("scene")) s.scene = j.at("scene").get<SceneScores>();
  s.trace_note = j.value("trace_note", std::string{});
  return s;
}

struct VideoResult {
  BranchScores branches;
  ScoreLine line;
};

/// Both branches for one video. Per-video failures become flags.
inline VideoResult score_video(const CorpusManifest& manifest, const VideoEntry& entry, const RunConfig& cfg,
                               SceneScorer& scorer) {
  VideoResult out;
  out.branches.video_id = entry.id;
  out.line.source_tag = entry.source_tag;
  out.line.duration_s = entry.duration_s;
  out.line.native_fps = entry.native_fps;

  try {
    const RgbTrace trace = resample_30fps(load_trace(manifest, entry));
    ConsensusConfig cc = cfg.consensus;
    out.line.signal = assess_signal(trace, cfg.methods, cc, entry.id);
    out.branches.q_sig_raw = out.line.signal->q_sig_raw;
    if (out.line.signal->all_degenerate()) out.branches.flags.emplace(kFlagDegenerate);
  } catch (const trace_error& e) {
    out.branches.q_sig_raw = kSnrFloorDb;
    out.branches.flags.emplace(kFlagTraceError);
    out.line.trace_note = e.what();
  } catch (const extraction_error& e) {
    out.branches.q_sig_raw = kSnrFloorDb;
    out.branches.flags.emplace(kFlagTraceError);
    out.line.trace_note = e.what();
  }

  out.line.scene = scorer.score({entry, manifest.resolve(entry)});
  if (!out.line.scene.scored) out.branches.flags.emplace(kFlagSceneUnscored);
  out.branches.q_sce_raw = out.line.scene.q_sce_raw;
  return out;
}

struct ScoreRun {
  std::vector<ScoreLine> lines;  // sorted by video id
  std::size_t flagged = 0;
  int exit_code = kExitOk;
};

/// Scores every video of the manifest with `cfg.workers` threads.
inline ScoreRun score_corpus(const CorpusManifest& manifest, const RunConfig& cfg, SceneScorer& scorer,
                             Logger* log = nullptr) {
  cfg.validate();
  if (manifest.videos.empty()) throw error("manifest lists no videos");
  const std::size_t n = manifest.videos.size();
  std::vector<VideoResult> results(n);
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr failure;

  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        results[i] = score_video(manifest, manifest.videos[i], cfg, scorer);
        if (log)
          log->log(LogLevel::debug, "scored " + manifest.videos[i].id + ": q_sig_raw=" +
                                        std::to_string(results[i].branches.q_sig_raw) +
                                        " q_sce_raw=" + std::to_string(results[i].branches.q_sce_raw));
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < std::min(cfg.workers, n); ++w) pool.emplace_back(work);
    work();
  }
  if (failure) std::rethrow_exception(failure);

  std::sort(results.begin(), results.end(),
            [](const VideoResult& a, const VideoResult& b) { return a.branches.video_id < b.branches.video_id; });
  const bool any_scoreable = std::any_of(results.begin(), results.end(), [](const VideoResult& r) {
    return !r.branches.flags.contains(std::string(kFlagTraceError));
  });
  if (!any_scoreable) throw error("no scoreable videos: every trace failed to load");

  std::vector<BranchScores> branches;
  for (const auto& r : results) branches.push_back(r.branches);
  const auto quality = unify(branches, cfg.alpha);

  ScoreRun run;
  for (std::size_t i = 0; i < n; ++i) {
    ScoreLine line = std::move(results[i].line);
    line.quality = quality[i];
    if (!line.quality.flags.empty()) {
      ++run.flagged;
      if (log) {
        std::string flags;
        for (const auto& f : line.quality.flags) flags += (flags.empty() ? "" : ",") + f;
        log->log(LogLevel::warn, line.quality.video_id + " flagged: " + flags +
                                     (line.trace_note.empty() ? "" : " (" + line.trace_note + ")") +
                                     (line.scene.audit_note.empty() ? "" : " (" + line.scene.audit_note + ")"));
      }
    }
    run.lines.push_back(std::move(line));
  }
  run.exit_code = run.flagged > 0 ? kExitFlagged : kExitOk;
  return run;
}

inline std::string format_scores(std::span<const ScoreLine> lines) {
  std::string out;
  for (const auto& l : lines) out += to_score_json(l).dump() + '\n';
  return out;
}

inline std::vector<ScoreLine> parse_scores(std::string_view text) {
  std::vector<ScoreLine> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    try {
      out.push_back(from_score_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw error("scores line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw error("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, std::string_view content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw error("cannot write " + p.string());
  out << content;
}

/// `score`: manifest -> scores file (JSON lines). Returns the exit code.
inline int cmd_score(const RunConfig& cfg, std::ostream& out = std::cout) {
  Logger log(cfg.log_level);
  if (cfg.manifest_path.empty()) throw invalid_argument("score needs a manifest");
  if (cfg.scores_path.empty()) throw invalid_argument("score needs an output scores path");
  const CorpusManifest manifest = load_manifest(cfg.manifest_path);
  auto scorer = make_scorer(cfg.scorer);
  log.log(LogLevel::info, "scoring " + std::to_string(manifest.size()) + " videos with " + cfg.methods.to_string() +
                              " and scorer " + scorer->id());
  const ScoreRun run = score_corpus(manifest, cfg, *scorer, &log);
  write_file(cfg.scores_path, format_scores(run.lines));
  out << "scored " << run.lines.size() << " videos, " << run.flagged << " flagged -> " << cfg.scores_path.string()
      << '\n';
  return run.exit_code;
}

// --- sampling ---------------------------------------------------------------

inline std::vector<ScoredVideo> to_scored_videos(std::span<const ScoreLine> lines) {
  std::vector<ScoredVideo> out;
  for (const auto& l : lines) out.push_back({l.quality.video_id, l.quality.q_unified, l.duration_s, l.source_tag});
  return out;
}

/// `sample`: scores file -> curation manifest (JSON).
inline int cmd_sample(const RunConfig& cfg, std::ostream& out = std::cout) {
  if (cfg.scores_path.empty()) throw invalid_argument("sample needs a scores file");
  if (cfg.out_path.empty()) throw invalid_argument("sample needs an output path");
  const std::string text = read_file(cfg.scores_path);
  const auto lines = parse_scores(text);
  if (lines.empty()) throw error("scores file is empty");
  const auto videos = to_scored_videos(lines);
  const CurationManifest m = curate(videos, cfg.sampling, fnv1a_hex(text));
  write_file(cfg.out_path, nlohmann::json(m).dump(2) + '\n');

  std::map<std::string, std::string> tag_of;
  for (const auto& v : videos) tag_of[v.id] = v.source_tag;
  std::map<std::string, std::size_t> per_tag;
  std::set<std::string> distinct;
  for (const auto& e : m.entries) {
    ++per_tag[tag_of[e.video_id]];
    distinct.insert(e.video_id);
  }
  out << "strategy " << to_string(m.strategy) << ", target " << m.target_size << ", realized " << m.entries.size()
      << " entries from " << distinct.size() << " videos -> " << cfg.out_path.string() << '\n';
  for (const auto& [tag, count] : per_tag)
    out << "  " << (tag.empty() ? "(untagged)" : tag) << ": " << count << '\n';
  if (m.size_alert) out << "  warning: realized size is more than 2 sqrt(target) from the target\n";
  if (m.duplicate_windows > 0) out << "  note: " << m.duplicate_windows << " duplicate clip windows\n";
  return kExitOk;
}

// --- report -----------------------------------------------------------------

inline constexpr std::size_t kReportBins = 20;

namespace detail {

inline std::string csv_number(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace detail

/// CSV summary of a scores file: per-tag Q histograms, branch statistics,
/// flag counts.
inline std::string format_report(std::span<const ScoreLine> lines) {
  using detail::csv_field;
  using detail::csv_number;
  if (lines.empty()) throw error("scores file is empty");
  std::map<std::string, std::vector<const ScoreLine*>> by_tag;
  for (const auto& l : lines) by_tag[l.source_tag].push_back(&l);

  std::ostringstream out;
  out << "# histogram of q_unified, " << kReportBins << " bins over [0,1]\n";
  out << "source_tag,bin,bin_lo,bin_hi,count\n";
  for (const auto& [tag, group] : by_tag) {
    std::vector<std::size_t> bins(kReportBins, 0);
    for (const auto* l : group) {
      const double q = std::clamp(l->quality.q_unified, 0.0, 1.0);
      ++bins[std::min(kReportBins - 1, static_cast<std::size_t>(q * kReportBins))];
    }
    for (std::size_t b = 0; b < kReportBins; ++b)
      out << csv_field(tag) << ',' << b << ',' << csv_number(double(b) / kReportBins) << ','
          << csv_number(double(b + 1) / kReportBins) << ',' << bins[b] << '\n';
  }

  out << "\n# branch statistics\n";
  out << "source_tag,score,count,min,q1,median,q3,max,mean\n";
  auto stats_rows = [&](const std::string& tag, const std::vector<const ScoreLine*>& group) {
    const std::pair<const char*, double QualityRecord::*> fields[] = {{"q_sig_raw", &QualityRecord::q_sig_raw},
                                                                      {"q_sce_raw", &QualityRecord::q_sce_raw},
                                                                      {"q_unified", &QualityRecord::q_unified}};
    for (const auto& [name, member] : fields) {
      std::vector<double> v;
      for (const auto* l : group) v.push_back(l->quality.*member);
      std::sort(v.begin(), v.end());
      out << csv_field(tag) << ',' << name << ',' << v.size() << ',' << csv_number(v.front()) << ','
          << csv_number(percentile_sorted(v, 0.25)) << ',' << csv_number(percentile_sorted(v, 0.5)) << ','
          << csv_number(percentile_sorted(v, 0.75)) << ',' << csv_number(v.back()) << ','
          << csv_number(dsp::mean(v)) << '\n';
    }
  };
  for (const auto& [tag, group] : by_tag) stats_rows(tag, group);
  std::vector<const ScoreLine*> all;
  for (const auto& l : lines) all.push_back(&l);
  stats_rows("(all)", all);

  out << "\n# flags\n";
  out << "flag,count,fraction\n";
  std::map<std::string, std::size_t> flag_counts;
  std::size_t any = 0;
  for (const auto& l : lines) {
    if (!l.quality.flags.empty()) ++any;
    for (const auto& f : l.quality.flags) ++flag_counts[f];
  }
  const double n = static_cast<double>(lines.size());
  for (const auto& [flag, count] : flag_counts)
    out << csv_field(flag) << ',' << count << ',' << csv_number(count / n) << '\n';
  out << "(any)," << any << ',' << csv_number(any / n) << '\n';
  return out.str();
}

/// `report`: scores file -> CSV on `out` (or `cfg.out_path` when set).
inline int cmd_report(const RunConfig& cfg, std::ostream& out = std::cout) {
  if (cfg.scores_path.empty()) throw invalid_argument("report needs a scores file");
  const std::string csv = format_report(parse_scores(read_file(cfg.scores_path)));
  if (cfg.out_path.empty()) out << csv;
  else write_file(cfg.out_path, csv);
  return kExitOk;
}

// --- synthetic corpora ------------------------------------------------------

inline const std::vector<std::string>& synth_presets() {
  static const std::vector<std::string> names = {"separation", "flicker", "synthetic-face", "mixed-fps", "small"};
  return names;
}

/// Named synthetic corpora, deterministic in `seed`.
inline std::vector<SynthVideo> synth_preset(const std::string& name, std::uint64_t seed) {
  if (name == "separation") return separation_corpus(25, 25, seed);
  if (name == "small") return separation_corpus(10, 0, seed);
  rng_type rng(seed);
  auto numbered = [](const std::string& stem, std::size_t i) { return stem + "_" + std::to_string(1000 + i).substr(1); };
  std::vector<SynthVideo> out = separation_corpus(10, 0, seed);
  if (name == "flicker") {
    for (std::size_t i = 0; i < 10; ++i) {
      SynthVideo v;
      v.id = numbered("flicker", i);
      v.source_tag = "flicker";
      v.spec = flicker_spec(rng());
      v.scene = {3, 0, 2, 2};
      out.push_back(v);
    }
    return out;
  }
  if (name == "synthetic-face") {
    for (std::size_t i = 0; i < 10; ++i) {
      SynthVideo v;
      v.id = numbered("synthface", i);
      v.source_tag = "synthetic-face";
      v.spec = noise_spec(rng());
      v.spec.noise_sigma = 0.01;
      v.scene = {3, 3, 2, 2};
      out.push_back(v);
    }
    return out;
  }
  if (name == "mixed-fps") {
    out.clear();
    const double rates[] = {15.0, 30.0, 60.0};
    for (std::size_t i = 0; i < 9; ++i) {
      SynthVideo v;
      v.id = numbered("fps" + std::to_string(int(rates[i % 3])), i / 3);
      v.source_tag = "fps" + std::to_string(int(rates[i % 3]));
      v.spec = clean_spec(60.0 + 5.0 * double(i), rng());
      v.spec.fps = rates[i % 3];
      out.push_back(v);
    }
    return out;
  }
  throw invalid_argument("unknown synth preset '" + name + "'");
}

/// `synth`: writes a ready-to-score corpus into `cfg.out_path`.
inline int cmd_synth(const RunConfig& cfg, std::ostream& out = std::cout) {
  if (cfg.out_path.empty()) throw invalid_argument("synth needs an output directory");
  const auto videos = synth_preset(cfg.preset, cfg.sampling.seed);
  const CorpusManifest m = make_corpus(videos, cfg.out_path, "synth-" + cfg.preset);
  out << "wrote " << m.size() << " videos (preset " << cfg.preset << ") -> "
      << (cfg.out_path / "manifest.json").string() << '\n';
  return kExitOk;
}

}  // namespace rppgvqa
