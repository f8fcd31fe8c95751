#pragma once

// Scene-level quality: four integer sub-scores (head movement, illumination,
// skin, camera), camera scaled by the frame-rate factor, summed into q_sce.
//
// The scorer is pluggable. MockSceneScorer reads a per-video sidecar
// `<trace stem>.scene.json` = {"head":..,"illumination":..,"skin":..,"camera":..}
// and is what the test suite and offline runs use. The HTTP client lives in
// remote_scorer.hpp.

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rppg_vqa/common.hpp"
#include "rppg_vqa/trace_io.hpp"

namespace rppgvqa {

enum class SceneDimension { head, illumination, skin, camera };

inline constexpr std::array<SceneDimension, 4> kSceneDimensions = {SceneDimension::head, SceneDimension::illumination,
                                                                   SceneDimension::skin, SceneDimension::camera};

inline constexpr std::string_view to_string(SceneDimension d) {
  switch (d) {
    case SceneDimension::head: return "head";
    case SceneDimension::illumination: return "illumination";
    case SceneDimension::skin: return "skin";
    case SceneDimension::camera: return "camera";
  }
  return "?";
}

/// Highest valid score per dimension; every range starts at 0.
inline constexpr int max_score(SceneDimension d) {
  return d == SceneDimension::head || d == SceneDimension::illumination ? 3 : 2;
}

struct SceneScores {
  int head = 0;
  int illumination = 0;
  int skin = 0;
  int camera_raw = 0;
  double gamma = 1.0;
  double q_sce_raw = 0.0;
  std::string scorer_id;
  bool scored = true;       // false: scorer failed, q_sce_raw forced to 0
  std::string audit_note;   // why scoring failed, if it did
};

/// Frame-rate compensation for the camera score: min(fps, 30) / 30.
inline double gamma_factor(double native_fps) {
  if (!(native_fps > 0.0)) throw invalid_argument("gamma_factor: native_fps must be > 0");
  return std::min(native_fps, kCanonicalRateHz) / kCanonicalRateHz;
}

inline SceneScores make_scene_scores(int head, int illumination, int skin, int camera, double native_fps,
                                     std::string scorer_id) {
  auto check = [](SceneDimension d, int v) {
    if (v < 0 || v > max_score(d))
      throw invalid_argument(std::string(to_string(d)) + " score " + std::to_string(v) + " outside [0, " +
                             std::to_string(max_score(d)) + "]");
  };
  check(SceneDimension::head, head);
  check(SceneDimension::illumination, illumination);
  check(SceneDimension::skin, skin);
  check(SceneDimension::camera, camera);
  SceneScores s;
  s.head = head;
  s.illumination = illumination;
  s.skin = skin;
  s.camera_raw = camera;
  s.gamma = gamma_factor(native_fps);
  s.q_sce_raw = head + illumination + skin + s.gamma * camera;
  s.scorer_id = std::move(scorer_id);
  return s;
}

/// Fail-closed record for a video the scorer could not assess.
inline SceneScores unscored_scene(double native_fps, std::string scorer_id, std::string note) {
  SceneScores s;
  s.gamma = gamma_factor(native_fps);
  s.q_sce_raw = 0.0;
  s.scorer_id = std::move(scorer_id);
  s.scored = false;
  s.audit_note = std::move(note);
  return s;
}

/// First integer token of a free-text reply, accepted only when it lies in
/// the dimension's range. Digits glued to letters ("Qwen3") or part of a
/// decimal ("2.5") are not integer tokens.
inline std::optional<int> parse_scorer_reply(std::string_view text, SceneDimension dim) {
  auto is_alpha = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; };
  auto is_digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_digit(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_digit(text[j])) ++j;
    const bool glued = (i > 0 && (is_alpha(text[i - 1]) || text[i - 1] == '_')) ||
                       (j < text.size() && (is_alpha(text[j]) || text[j] == '_'));
    const bool decimal = (i > 1 && text[i - 1] == '.' && is_digit(text[i - 2])) ||
                         (j + 1 < text.size() && text[j] == '.' && is_digit(text[j + 1]));
    if (glued || decimal) {
      i = j;
      continue;
    }
    const bool negative = i > 0 && text[i - 1] == '-';
    if (negative || j - i > 3) return std::nullopt;
    const int v = std::stoi(std::string(text.substr(i, j - i)));
    if (v < 0 || v > max_score(dim)) return std::nullopt;
    return v;
  }
  return std::nullopt;
}

// --- scorer configuration -------------------------------------------------

struct ScorerConfig {
  enum class Kind { remote, mock };
  Kind kind = Kind::mock;
  std::string endpoint_url;  // full URL of a chat-completions style endpoint
  std::string model_name;
  std::string api_key_env = "RPPG_VQA_API_KEY";
  std::map<SceneDimension, std::string> prompt_templates;
  std::size_t frame_budget = 8;
  double timeout_s = 60.0;
  int max_retries = 3;
  double rate_limit = 1.0;  // requests per second, across all workers; <= 0 disables

  void validate() const {
    for (SceneDimension d : kSceneDimensions)
      if (!prompt_templates.contains(d) || prompt_templates.at(d).empty())
        throw invalid_argument("scorer config: missing prompt template for '" + std::string(to_string(d)) + "'");
    if (kind == Kind::remote && endpoint_url.empty()) throw invalid_argument("scorer config: remote scorer needs endpoint_url");
    if (frame_budget == 0) throw invalid_argument("scorer config: frame_budget must be >= 1");
    if (max_retries < 0) throw invalid_argument("scorer config: max_retries must be >= 0");
  }
};

/// Built-in prompt templates; the files under prompts/ carry the same text and
/// can be edited and loaded with load_prompt_templates().
inline std::map<SceneDimension, std::string> default_prompt_templates() {
  const std::string tail =
      "\n\nReply with a single integer only, with no other text.";
  return {
      {SceneDimension::head,
       "You are assessing a facial video for remote photoplethysmography (heart-rate measurement from skin "
       "colour). Rate HEAD MOVEMENT of the subject across the frames.\n"
       "3 = head essentially still; natural expressions and blinking only.\n"
       "2 = small movements or talking that keep the face in place.\n"
       "1 = frequent or moderate head motion, turning or nodding.\n"
       "0 = large, fast or continuous motion; face leaves view or is heavily rotated." +
           tail},
      {SceneDimension::illumination,
       "You are assessing a facial video for remote photoplethysmography (heart-rate measurement from skin "
       "colour). Rate the ILLUMINATION on the face across the frames.\n"
       "3 = stable, even lighting with well-exposed skin.\n"
       "2 = mostly stable; mild shadows or slight exposure issues.\n"
       "1 = noticeable flicker, changing light, strong shadows, or clear over/under-exposure.\n"
       "0 = severe flicker, strobing or periodic lighting, or the face is barely visible." +
           tail},
      {SceneDimension::skin,
       "You are assessing a facial video for remote photoplethysmography (heart-rate measurement from skin "
       "colour). Rate how much VISIBLE SKIN is available and how clean its optical signal is.\n"
       "2 = large areas of bare facial skin (forehead, cheeks) clearly visible.\n"
       "1 = skin partly covered by facial hair, heavy makeup, glasses, hair or accessories.\n"
       "0 = little usable skin, or skin appears artificial or heavily processed." +
           tail},
      {SceneDimension::camera,
       "You are assessing a facial video for remote photoplethysmography (heart-rate measurement from skin "
       "colour). Rate CAMERA QUALITY: sensor noise, compression artifacts and blur.\n"
       "2 = clean image, fine skin texture visible, no blocking.\n"
       "1 = some noise, blur or compression blocking.\n"
       "0 = heavy noise, strong compression artifacts or severe blur." +
           tail},
  };
}

/// Reads `<dimension>.txt` for each dimension from `dir`.
inline std::map<SceneDimension, std::string> load_prompt_templates(const fs::path& dir) {
  std::map<SceneDimension, std::string> out;
  for (SceneDimension d : kSceneDimensions) {
    const fs::path p = dir / (std::string(to_string(d)) + ".txt");
    std::ifstream in(p, std::ios::binary);
    if (!in) throw invalid_argument("missing prompt template " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    out[d] = ss.str();
  }
  return out;
}

// --- frame evidence and sidecars ----------------------------------------

/// JPEG-encoded frames sent to a remote scorer.
struct FrameEvidence {
  std::vector<std::string> jpeg_frames;
  bool empty() const { return jpeg_frames.empty(); }
};

inline fs::path scene_sidecar_path(const fs::path& trace_file) {
  fs::path p = trace_file;
  p.replace_extension(".scene.json");
  return p;
}

inline fs::path frame_dir_path(const fs::path& trace_file) {
  fs::path p = trace_file;
  p.replace_extension(".frames");
  return p;
}

/// Loads up to `budget` frames, uniformly spaced over the sorted *.jpg / *.jpeg
/// files in `<trace stem>.frames/`. Missing directory gives empty evidence.
inline FrameEvidence load_frame_evidence(const fs::path& trace_file, std::size_t budget) {
  FrameEvidence ev;
  const fs::path dir = frame_dir_path(trace_file);
  if (!fs::is_directory(dir)) return ev;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && (ext == ".jpg" || ext == ".jpeg")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty() || budget == 0) return ev;
  const std::size_t take = std::min(budget, files.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t idx = take == 1 ? 0 : i * (files.size() - 1) / (take - 1);
    std::ifstream in(files[idx], std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    ev.jpeg_frames.push_back(ss.str());
  }
  return ev;
}

struct SceneSidecar {
  int head = 0;
  int illumination = 0;
  int skin = 0;
  int camera = 0;
};

inline void to_json(nlohmann::json& j, const SceneSidecar& s) {
  j = nlohmann::json{{"head", s.head}, {"illumination", s.illumination}, {"skin", s.skin}, {"camera", s.camera}};
}

inline void from_json(const nlohmann::json& j, SceneSidecar& s) {
  j.at("head").get_to(s.head);
  j.at("illumination").get_to(s.illumination);
  j.at("skin").get_to(s.skin);
  j.at("camera").get_to(s.camera);
}

inline void save_scene_sidecar(const SceneSidecar& s, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw error("cannot write scene sidecar " + path.string());
  out << nlohmann::json(s).dump() << '\n';
}

// --- scorers --------------------------------------------------------------

/// What a scorer needs to know about one video.
struct SceneRequest {
  VideoEntry entry;
  fs::path trace_file;
};

class SceneScorer {
 public:
  virtual ~SceneScorer() = default;
  virtual std::string id() const = 0;
  /// Never throws for per-video failures; those come back unscored.
  virtual SceneScores score(const SceneRequest& request) = 0;
};

class MockSceneScorer final : public SceneScorer {
 public:
  std::string id() const override { return "mock"; }

  SceneScores score(const SceneRequest& req) override {
    const fs::path path = scene_sidecar_path(req.trace_file);
    std::ifstream in(path, std::ios::binary);
    if (!in) return unscored_scene(req.entry.native_fps, id(), "missing scene sidecar " + path.filename().string());
    try {
      const auto j = nlohmann::json::parse(in);
      const auto s = j.get<SceneSidecar>();
      return make_scene_scores(s.head, s.illumination, s.skin, s.camera, req.entry.native_fps, id());
    } catch (const std::exception& e) {
      return unscored_scene(req.entry.native_fps, id(), std::string("invalid scene sidecar: ") + e.what());
    }
  }
};

// --- JSON -----------------------------------------------------------------

inline void to_json(nlohmann::json& j, const SceneScores& s) {
  j = nlohmann::json{{"head", s.head},           {"illumination", s.illumination}, {"skin", s.skin},
                     {"camera_raw", s.camera_raw}, {"gamma", s.gamma},               {"q_sce_raw", s.q_sce_raw},
                     {"scorer_id", s.scorer_id}, {"scored", s.scored}};
  if (!s.audit_note.empty()) j["audit_note"] = s.audit_note;
}

inline void from_json(const nlohmann::json& j, SceneScores& s) {
  j.at("head").get_to(s.head);
  j.at("illumination").get_to(s.illumination);
  j.at("skin").get_to(s.skin);
  j.at("camera_raw").get_to(s.camera_raw);
  j.at("gamma").get_to(s.gamma);
  j.at("q_sce_raw").get_to(s.q_sce_raw);
  j.at("scorer_id").get_to(s.scorer_id);
  s.scored = j.value("scored", true);
  s.audit_note = j.value("audit_note", std::string{});
}

}  // namespace rppgvqa
