// rppg-vqa: score a facial-video trace corpus, sample a training manifest,
// report score distributions, and generate synthetic corpora.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rppg_vqa/pipeline.hpp"

namespace {

using namespace rppgvqa;

/// Flag values are collected as strings and applied after the config file so
/// that flags win.
struct FlagSink {
  std::vector<std::pair<std::string, CLI::Option*>> options;
  std::map<std::string, std::string> values;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    options.emplace_back(key, app->add_option(flag, values[key], help));
  }

  void apply(RunConfig& cfg) const {
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) apply_setting(cfg, key, values.at(key));
  }
};

void add_scoring_flags(CLI::App* app, FlagSink& sink) {
  sink.add(app, "--manifest", "manifest", "Corpus manifest (JSON)");
  sink.add(app, "--scores,--out", "scores", "Scores file to write (JSON lines)");
  sink.add(app, "--methods", "methods", "Comma-separated extraction methods (default: all)");
  sink.add(app, "--alpha", "alpha", "Signal-branch fusion weight in [0,1] (default 0.8)");
  sink.add(app, "--epsilon-bpm", "epsilon_bpm", "RANSAC inlier threshold in bpm (default 5)");
  sink.add(app, "--scorer", "scorer", "Scene scorer: remote or mock (default mock)");
  sink.add(app, "--endpoint", "endpoint", "Remote scorer URL");
  sink.add(app, "--model", "model", "Remote scorer model name");
  sink.add(app, "--api-key-env", "api_key_env", "Environment variable holding the API key");
  sink.add(app, "--prompt-dir", "prompt_dir", "Directory with <dimension>.txt prompt templates");
  sink.add(app, "--rate-limit", "rate_limit", "Remote requests per second across workers");
  sink.add(app, "--workers", "workers", "Parallel scoring workers (default 1)");
}

void add_sampling_flags(CLI::App* app, FlagSink& sink) {
  sink.add(app, "--scores", "scores", "Scores file (JSON lines)");
  sink.add(app, "--out", "out", "Curation manifest to write (JSON)");
  sink.add(app, "--strategy", "strategy", "tas, wrs, topk, bottomk or random (default tas)");
  sink.add(app, "--target-size", "target_size", "Target training-set size (default 140)");
  sink.add(app, "--eta", "eta", "Candidate-set ratio, > 1 (default 2)");
  sink.add(app, "--tau", "tau", "Softmax temperature, > 0 (default 1)");
  sink.add(app, "--clip-len", "clip_len", "Clip length in seconds (default 10)");
  sink.add(app, "--seed", "seed", "Sampling seed (default 0)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rPPG video quality assessment and training-set curation"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "key = value config file; flags override it");
  FlagSink global;
  global.add(&app, "--log-level", "log_level", "error, warn, info or debug (default info)");

  FlagSink score_flags, sample_flags, report_flags, synth_flags;
  auto* score = app.add_subcommand("score", "Score every video of a corpus manifest");
  add_scoring_flags(score, score_flags);
  auto* sample = app.add_subcommand("sample", "Build a training manifest from a scores file");
  add_sampling_flags(sample, sample_flags);
  auto* report = app.add_subcommand("report", "CSV summary of a scores file");
  report_flags.add(report, "--scores", "scores", "Scores file (JSON lines)");
  report_flags.add(report, "--out", "out", "CSV file to write (default: standard output)");
  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus with mock scene sidecars");
  synth_flags.add(synth, "--out", "out", "Output directory");
  synth_flags.add(synth, "--preset", "preset", "separation, flicker, synthetic-face, mixed-fps or small");
  synth_flags.add(synth, "--seed", "seed", "Generator seed (default 0)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitFatal;
  }

  try {
    RunConfig cfg;
#ifdef RPPG_VQA_PROMPT_DIR
    if (fs::is_directory(RPPG_VQA_PROMPT_DIR)) cfg.scorer.prompt_templates = load_prompt_templates(RPPG_VQA_PROMPT_DIR);
#endif
    if (!config_path.empty()) load_config_file(cfg, config_path);
    global.apply(cfg);
    if (*score) {
      score_flags.apply(cfg);
      return cmd_score(cfg);
    }
    if (*sample) {
      sample_flags.apply(cfg);
      return cmd_sample(cfg);
    }
    if (*report) {
      report_flags.apply(cfg);
      return cmd_report(cfg);
    }
    if (*synth) {
      synth_flags.apply(cfg);
      return cmd_synth(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "rppg-vqa: error: " << e.what() << '\n';
    return kExitFatal;
  }
  return kExitFatal;
}
