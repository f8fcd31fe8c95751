#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "oracles.hpp"
#include "rppg_vqa/pipeline.hpp"
#include "test_util.hpp"

using namespace rppgvqa;
using testutil::TempDir;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args, const TempDir& scratch) {
  const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd =
      std::string("\"") + RPPG_VQA_CLI + "\" " + args + " > \"" + out.string() + "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = testutil::read_text(out);
  r.err = testutil::read_text(err);
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::vector<SynthVideo> ten_clean() {
  auto v = separation_corpus(10, 0, 3);
  for (auto& x : v) x.spec.duration_s = 20;
  return v;
}

/// Shared 50-video corpus, scored once per test binary.
class Scored50 : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("rppgvqa_scored50");
    make_corpus(separation_corpus(25, 25, 21), *dir_ / "corpus");
    RunConfig cfg;
    cfg.scorer.kind = ScorerConfig::Kind::mock;
    cfg.manifest_path = *dir_ / "corpus/manifest.json";
    cfg.scores_path = *dir_ / "scores.jsonl";
    cfg.workers = 2;
    std::ostringstream sink;
    ASSERT_EQ(cmd_score(cfg, sink), kExitOk);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path scores() { return *dir_ / "scores.jsonl"; }
  static TempDir* dir_;
};
TempDir* Scored50::dir_ = nullptr;

}  // namespace

TEST(Config, ParsesKeyValueText) {
  const auto kv = parse_config_text("# comment\n\nalpha = 0.6  # trailing\n strategy=topk\nmethods = green, pos\n");
  ASSERT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"alpha", "0.6"}));
  EXPECT_EQ(kv[2].second, "green, pos");
  RunConfig cfg;
  for (const auto& [k, v] : kv) apply_setting(cfg, k, v);
  EXPECT_EQ(cfg.alpha, 0.6);
  EXPECT_EQ(cfg.sampling.strategy, Strategy::topk);
  EXPECT_EQ(cfg.methods.to_string(), "green,pos");
  EXPECT_THROW(parse_config_text("novalue\n"), rppgvqa::invalid_argument);
  EXPECT_THROW(apply_setting(cfg, "bogus", "1"), rppgvqa::invalid_argument);
  EXPECT_THROW(apply_setting(cfg, "alpha", "0.5x"), rppgvqa::invalid_argument);
  EXPECT_THROW(apply_setting(cfg, "strategy", "best"), rppgvqa::invalid_argument);
}

TEST(Config, Defaults) {
  RunConfig cfg;
  EXPECT_EQ(cfg.alpha, 0.8);
  EXPECT_EQ(cfg.sampling.eta, 2.0);
  EXPECT_EQ(cfg.sampling.tau, 1.0);
  EXPECT_NEAR(cfg.consensus.epsilon_hz * 60, 5.0, 1e-12);
  EXPECT_EQ(cfg.workers, 1u);
  cfg.workers = 0;
  EXPECT_THROW(cfg.validate(), rppgvqa::invalid_argument);
  cfg.workers = 1;
  cfg.alpha = 1.2;
  EXPECT_THROW(cfg.validate(), rppgvqa::invalid_argument);
}

TEST(Cli, FlagsOverrideConfigFile) {
  TempDir dir;
  make_corpus(ten_clean(), dir / "c");
  testutil::write_text(dir / "run.cfg", "scorer = mock\nmanifest = " + (dir / "c/manifest.json").string() +
                                            "\nscores = " + (dir / "from_config.jsonl").string() + "\n");
  const auto r = run_cli("--config " + q(dir / "run.cfg") + " --log-level error score --scores " + q(dir / "flag.jsonl"), dir);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "flag.jsonl"));
  EXPECT_FALSE(fs::exists(dir / "from_config.jsonl"));
}

TEST(Cli, ScoreTenVideosExitZero) {
  TempDir dir;
  make_corpus(ten_clean(), dir / "c");
  const auto r = run_cli("score --scorer mock --manifest " + q(dir / "c/manifest.json") + " --out " + q(dir / "s.jsonl"), dir);
  EXPECT_EQ(r.code, 0) << r.err;
  const std::string text = testutil::read_text(dir / "s.jsonl");
  EXPECT_EQ(count_lines(text), 10u);
  for (const auto& l : parse_scores(text)) {
    EXPECT_TRUE(l.quality.flags.empty());
    EXPECT_GE(l.quality.q_unified, 0.0);
    EXPECT_LE(l.quality.q_unified, 1.0);
  }
}

TEST(Cli, ConstantTraceFlaggedExitTwo) {
  TempDir dir;
  auto videos = ten_clean();
  videos.pop_back();
  SynthVideo flat{"flat", "synth", {}, {3, 3, 2, 2}};
  flat.spec.pulse_amp = 0;
  flat.spec.noise_sigma = 0;
  flat.spec.duration_s = 20;
  videos.push_back(flat);
  make_corpus(videos, dir / "c");
  const auto r = run_cli("score --scorer mock --manifest " + q(dir / "c/manifest.json") + " --out " + q(dir / "s.jsonl"), dir);
  EXPECT_EQ(r.code, 2) << r.err;
  const auto lines = parse_scores(testutil::read_text(dir / "s.jsonl"));
  ASSERT_EQ(lines.size(), 10u);
  for (const auto& l : lines)
    EXPECT_EQ(l.quality.flags.contains("degenerate"), l.quality.video_id == "flat") << l.quality.video_id;
}

TEST(Cli, MissingTraceFatalNamesEntry) {
  TempDir dir;
  make_corpus(ten_clean(), dir / "c");
  fs::remove(dir / "c/clean_004.csv");
  const auto r = run_cli("score --scorer mock --manifest " + q(dir / "c/manifest.json") + " --out " + q(dir / "s.jsonl"), dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("clean_004"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "s.jsonl"));
}

TEST(Cli, UnknownSubcommandOrOptionIsFatal) {
  TempDir dir;
  EXPECT_EQ(run_cli("frobnicate", dir).code, 1);
  EXPECT_EQ(run_cli("sample --strategy nope --scores x --out y", dir).code, 1);
}

TEST(Cli, SynthWritesScoreableCorpus) {
  TempDir dir;
  const auto r = run_cli("synth --preset mixed-fps --seed 4 --out " + q(dir / "m"), dir);
  EXPECT_EQ(r.code, 0) << r.err;
  const auto m = load_manifest(dir / "m/manifest.json");
  ASSERT_EQ(m.size(), 9u);
  std::set<double> rates;
  for (const auto& e : m.videos) rates.insert(e.native_fps);
  EXPECT_EQ(rates, (std::set<double>{15, 30, 60}));
}

TEST(ScoreCorpus, AllTracesBrokenIsFatal) {
  TempDir dir;
  auto m = make_corpus(ten_clean(), dir.path());
  for (const auto& e : m.videos) testutil::write_text(m.resolve(e), "frame,timestamp_s,r_mean,g_mean,b_mean\n0,0,1,1,1\n");
  RunConfig cfg;
  MockSceneScorer mock;
  EXPECT_THROW(score_corpus(m, cfg, mock), rppgvqa::error);
}

TEST(ScoreCorpus, BrokenTraceFlaggedAtFloor) {
  TempDir dir;
  auto m = make_corpus(ten_clean(), dir.path());
  testutil::write_text(m.resolve(m.videos[2]), "frame,timestamp_s,r_mean,g_mean,b_mean\n0,0,1,1,1\n1,0,1,1,1\n");
  RunConfig cfg;
  MockSceneScorer mock;
  const auto run = score_corpus(m, cfg, mock);
  EXPECT_EQ(run.exit_code, kExitFlagged);
  const auto& bad = run.lines[2];
  EXPECT_TRUE(bad.quality.flags.contains("trace-error"));
  EXPECT_EQ(bad.quality.q_sig_raw, -20.0);
  EXPECT_FALSE(bad.signal.has_value());
  EXPECT_FALSE(bad.trace_note.empty());
  const auto back = parse_scores(format_scores(run.lines));
  EXPECT_EQ(format_scores(back), format_scores(run.lines));
}

TEST(ScoreCorpus, WorkerCountDoesNotChangeOutput) {
  TempDir dir;
  auto m = make_corpus(separation_corpus(6, 6, 9), dir.path());
  MockSceneScorer mock;
  RunConfig one, four;
  four.workers = 4;
  const auto a = format_scores(score_corpus(m, one, mock).lines);
  const auto b = format_scores(score_corpus(m, four, mock).lines);
  EXPECT_EQ(a, b);
  const auto lines = parse_scores(a);
  EXPECT_TRUE(std::is_sorted(lines.begin(), lines.end(), [](const ScoreLine& x, const ScoreLine& y) {
    return x.quality.video_id < y.quality.video_id;
  }));
}

TEST_F(Scored50, TasManifestDrawsFromTopCandidates) {
  TempDir dir;
  const auto r = run_cli("sample --scores " + q(scores()) + " --strategy tas --target-size 20 --eta 2 --seed 5 --out " +
                             q(dir / "m.json"),
                         dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("realized"), std::string::npos);

  auto lines = parse_scores(testutil::read_text(scores()));
  ASSERT_EQ(lines.size(), 50u);
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& l : lines) ranked.emplace_back(-l.quality.q_unified, l.quality.video_id);
  std::sort(ranked.begin(), ranked.end());
  std::set<std::string> pool;
  for (std::size_t i = 0; i < 40; ++i) pool.insert(ranked[i].second);

  const auto m = nlohmann::json::parse(testutil::read_text(dir / "m.json")).get<CurationManifest>();
  EXPECT_EQ(m.strategy, Strategy::tas);
  EXPECT_NEAR(static_cast<double>(m.entries.size()), 20.0, 2 * std::sqrt(20.0));
  std::map<std::string, double> duration;
  for (const auto& l : lines) duration[l.quality.video_id] = l.duration_s;
  for (const auto& e : m.entries) {
    EXPECT_TRUE(pool.contains(e.video_id)) << e.video_id;
    EXPECT_GE(e.clip_start_s, 0.0);
    EXPECT_NEAR(e.clip_end_s - e.clip_start_s, 10.0, 1e-9);
    EXPECT_LE(e.clip_end_s, duration[e.video_id] + 1e-9);
  }
}

TEST_F(Scored50, TopkExactlyFive) {
  TempDir dir;
  const auto r = run_cli("sample --scores " + q(scores()) + " --strategy topk --target-size 5 --out " + q(dir / "m.json"), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = nlohmann::json::parse(testutil::read_text(dir / "m.json")).get<CurationManifest>();
  EXPECT_EQ(m.entries.size(), 5u);
}

TEST_F(Scored50, TasTargetTooLargeIsFatal) {
  TempDir dir;
  const auto r = run_cli("sample --scores " + q(scores()) + " --strategy tas --target-size 30 --out " + q(dir / "m.json"), dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
  EXPECT_FALSE(fs::exists(dir / "m.json"));
}

TEST_F(Scored50, ReportHasOneHistogramBlockPerTag) {
  TempDir dir;
  const auto r = run_cli("report --scores " + q(scores()), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t clean_bins = 0, noise_bins = 0;
  std::istringstream in(r.out);
  std::string line;
  while (std::getline(in, line) && !line.empty()) {
    if (line.rfind("clean,", 0) == 0) ++clean_bins;
    if (line.rfind("noise,", 0) == 0) ++noise_bins;
  }
  EXPECT_EQ(clean_bins, 20u);
  EXPECT_EQ(noise_bins, 20u);
  EXPECT_NE(r.out.find("(all),q_unified,50,"), std::string::npos);
  EXPECT_NE(r.out.find("(any),0,0"), std::string::npos);
}

TEST(Report, SingleVideoOneNonzeroBin) {
  ScoreLine l;
  l.quality.video_id = "only";
  l.quality.q_unified = 0.5;
  l.source_tag = "t";
  l.duration_s = 10;
  const std::vector<ScoreLine> lines = {l};
  const std::string csv = format_report(lines);
  std::size_t nonzero = 0;
  std::istringstream in(csv);
  std::string row;
  while (std::getline(in, row) && !row.empty())
    if (row.rfind("t,", 0) == 0 && row.back() != '0') ++nonzero;
  EXPECT_EQ(nonzero, 1u);
  EXPECT_NE(csv.find("t,10,0.5,0.55,1\n"), std::string::npos);
}

TEST(Report, AllFlaggedIsHundredPercent) {
  std::vector<ScoreLine> lines(3);
  for (std::size_t i = 0; i < 3; ++i) {
    lines[i].quality.video_id = "v" + std::to_string(i);
    lines[i].quality.flags = {i == 0 ? "degenerate" : "scene-unscored"};
  }
  const std::string csv = format_report(lines);
  EXPECT_NE(csv.find("(any),3,1\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("scene-unscored,2,"), std::string::npos);
  EXPECT_THROW(format_report(std::vector<ScoreLine>{}), rppgvqa::error);
}

TEST(Cli, EmptyScoresFileIsFatal) {
  TempDir dir;
  testutil::write_text(dir / "empty.jsonl", "");
  EXPECT_EQ(run_cli("report --scores " + q(dir / "empty.jsonl"), dir).code, 1);
  EXPECT_EQ(run_cli("sample --scores " + q(dir / "empty.jsonl") + " --out " + q(dir / "m.json"), dir).code, 1);
}

TEST(Cli, ScoreThenSampleIsByteIdentical) {
  TempDir dir;
  make_corpus(separation_corpus(8, 8, 2), dir / "c");
  std::string scores[2], manifests[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path s = dir / ("s" + std::to_string(run) + ".jsonl");
    const fs::path m = dir / ("m" + std::to_string(run) + ".json");
    ASSERT_EQ(run_cli("score --scorer mock --workers " + std::to_string(1 + 2 * run) + " --manifest " +
                          q(dir / "c/manifest.json") + " --out " + q(s),
                      dir)
                  .code,
              0);
    ASSERT_EQ(run_cli("sample --scores " + q(s) + " --target-size 6 --seed 3 --out " + q(m), dir).code, 0);
    scores[run] = testutil::read_text(s);
    manifests[run] = testutil::read_text(m);
  }
  EXPECT_EQ(scores[0], scores[1]);
  EXPECT_EQ(manifests[0], manifests[1]);
  EXPECT_FALSE(manifests[0].empty());
}
