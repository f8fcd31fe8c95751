#pragma once

// HTTP scene scorer speaking a chat-completions style protocol: one POST per
// scene dimension carrying the dimension's prompt and the video's frames as
// base64 data URLs; the reply text is parsed for a single integer.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>
// <resolv.h> (pulled in by httplib) defines `_res`, which collides with Eigen parameter names.
#ifdef _res
#undef _res
#endif
#include <json.hpp>

#include "rppg_vqa/scene_assessment.hpp"

namespace rppgvqa {

inline std::string base64_encode(std::string_view bytes) {
  static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const auto n = (std::uint32_t(std::uint8_t(bytes[i])) << 16) | (std::uint32_t(std::uint8_t(bytes[i + 1])) << 8) |
                   std::uint8_t(bytes[i + 2]);
    out += table[(n >> 18) & 63];
    out += table[(n >> 12) & 63];
    out += table[(n >> 6) & 63];
    out += table[n & 63];
  }
  if (const std::size_t rest = bytes.size() - i; rest > 0) {
    std::uint32_t n = std::uint32_t(std::uint8_t(bytes[i])) << 16;
    if (rest == 2) n |= std::uint32_t(std::uint8_t(bytes[i + 1])) << 8;
    out += table[(n >> 18) & 63];
    out += table[(n >> 12) & 63];
    out += rest == 2 ? table[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

/// Spaces requests at least 1/rate seconds apart, shared by all workers.
class RateLimiter {
 public:
  explicit RateLimiter(double per_second) : interval_(per_second > 0.0 ? 1.0 / per_second : 0.0) {}

  void acquire() {
    if (interval_ <= 0.0) return;
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard lock(mu_);
      const auto now = std::chrono::steady_clock::now();
      slot = std::max(now, next_);
      next_ = slot + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                         std::chrono::duration<double>(interval_));
    }
    std::this_thread::sleep_until(slot);
  }

 private:
  double interval_;
  std::mutex mu_;
  std::chrono::steady_clock::time_point next_{};
};

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

inline ParsedUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw invalid_argument("endpoint URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

class RemoteSceneScorer final : public SceneScorer {
 public:
  explicit RemoteSceneScorer(ScorerConfig cfg) : cfg_(std::move(cfg)), limiter_(cfg_.rate_limit) {
    cfg_.validate();
    url_ = split_url(cfg_.endpoint_url);
    if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
  }

  std::string id() const override { return "remote:" + cfg_.model_name; }

  /// Requests sent so far, retries included.
  std::size_t request_count() const { return requests_.load(); }

  SceneScores score(const SceneRequest& req) override {
    const FrameEvidence ev = load_frame_evidence(req.trace_file, cfg_.frame_budget);
    if (ev.empty()) return unscored_scene(req.entry.native_fps, id(), "no frame evidence for " + req.entry.id);
    std::map<SceneDimension, int> got;
    for (SceneDimension d : kSceneDimensions) {
      std::string note;
      auto v = score_dimension(d, ev, note);
      if (!v) return unscored_scene(req.entry.native_fps, id(), std::string(to_string(d)) + ": " + note);
      got[d] = *v;
    }
    return make_scene_scores(got[SceneDimension::head], got[SceneDimension::illumination], got[SceneDimension::skin],
                             got[SceneDimension::camera], req.entry.native_fps, id());
  }

 private:
  nlohmann::json request_body(const std::string& prompt, const FrameEvidence& ev) const {
    nlohmann::json content = nlohmann::json::array();
    content.push_back({{"type", "text"}, {"text", prompt}});
    for (const auto& jpg : ev.jpeg_frames)
      content.push_back(
          {{"type", "image_url"}, {"image_url", {{"url", "data:image/jpeg;base64," + base64_encode(jpg)}}}});
    return {{"model", cfg_.model_name},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};
  }

  /// Reply text, or nullopt after exhausting transport retries.
  std::optional<std::string> post(const nlohmann::json& body, std::string& note) {
    httplib::Client cli(url_.origin);
    const auto timeout = std::chrono::duration<double>(cfg_.timeout_s);
    cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    cli.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    const std::string payload = body.dump();
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      limiter_.acquire();
      ++requests_;
      auto res = cli.Post(url_.path, headers, payload, "application/json");
      if (!res) {
        note = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        note = "HTTP status " + std::to_string(res->status);
        if (res->status >= 400 && res->status < 500 && res->status != 429) return std::nullopt;
        continue;
      }
      try {
        const auto j = nlohmann::json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const std::exception& e) {
        note = std::string("unreadable reply body: ") + e.what();
        return std::nullopt;
      }
    }
    return std::nullopt;
  }

  std::optional<int> score_dimension(SceneDimension d, const FrameEvidence& ev, std::string& note) {
    const std::string& prompt = cfg_.prompt_templates.at(d);
    auto text = post(request_body(prompt, ev), note);
    if (!text) return std::nullopt;
    if (auto v = parse_scorer_reply(*text, d)) return v;
    // One reformat retry with a stricter instruction.
    const std::string strict = prompt + "\n\nYour previous reply could not be read. Answer with one integer from 0 to " +
                               std::to_string(max_score(d)) + " and nothing else.";
    text = post(request_body(strict, ev), note);
    if (!text) return std::nullopt;
    if (auto v = parse_scorer_reply(*text, d)) return v;
    note = "malformed reply: " + text->substr(0, 80);
    return std::nullopt;
  }

  ScorerConfig cfg_;
  ParsedUrl url_;
  std::string api_key_;
  RateLimiter limiter_;
  std::atomic<std::size_t> requests_{0};
};

inline std::unique_ptr<SceneScorer> make_scorer(const ScorerConfig& cfg) {
  if (cfg.kind == ScorerConfig::Kind::remote) return std::make_unique<RemoteSceneScorer>(cfg);
  return std::make_unique<MockSceneScorer>();
}

}  // namespace rppgvqa
