// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>

#include "oracles.hpp"
#include "rppg_vqa/pipeline.hpp"
#include "test_util.hpp"

using namespace rppgvqa;
using testutil::TempDir;

namespace {

/// Collects failed checks of one criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    ++total_;
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    failed_ += !ok;
  }
  void near(double got, double want, double tol, const std::string& what) {
    std::ostringstream s;
    s << what << ": got " << got << ", want " << want << " +/- " << tol;
    expect(std::abs(got - want) <= tol, s.str());
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }

  bool ok() const { return failed_ == 0; }
  std::string summary() const {
    std::ostringstream s;
    s << (total_ - failed_) << "/" << total_ << " checks";
    if (!notes_.empty()) s << "; " << notes_;
    for (const auto& f : failures_) s << "\n      failed: " << f;
    return s.str();
  }

 private:
  std::size_t total_ = 0, failed_ = 0;
  std::vector<std::string> failures_;
  std::string notes_;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

RunConfig mock_config() {
  RunConfig cfg;
  cfg.scorer.kind = ScorerConfig::Kind::mock;
  return cfg;
}

ScoreRun score_synthetic(const std::vector<SynthVideo>& videos, const TempDir& dir) {
  const auto m = make_corpus(videos, dir.path());
  MockSceneScorer mock;
  return score_corpus(m, mock_config(), mock);
}

// --- criteria -----------------------------------------------------------------

void formula_fidelity(Check& c) {
  c.expect(gamma_factor(30) == 1.0, "gamma(30) == 1");
  c.expect(gamma_factor(60) == 1.0, "gamma(60) == 1");
  c.expect(gamma_factor(15) == 0.5, "gamma(15) == 0.5");
  c.near(duration_factor(17.5, 17.5), std::log(2.0), 1e-12, "lambda(T = mean)");

  std::vector<BranchScores> corpus;
  const double sig[] = {-7.5, 2.0, 11.0, 4.5, -1.0, 9.0};
  const double sce[] = {4.0, 9.5, 7.0, 10.0, 2.5, 6.0};
  for (int i = 0; i < 6; ++i) corpus.push_back({"v" + std::to_string(i), sig[i], sce[i], {}});
  const auto q1 = unify(corpus, 1.0), q0 = unify(corpus, 0.0), qd = unify(corpus);
  const auto sig_norm = minmax_norm(iqr_truncate(std::vector<double>(std::begin(sig), std::end(sig))));
  const auto sce_norm = minmax_norm(iqr_truncate(std::vector<double>(std::begin(sce), std::end(sce))));
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    c.expect(q1[i].q_unified == sig_norm[i], "alpha = 1 reproduces the signal branch");
    c.expect(q0[i].q_unified == sce_norm[i], "alpha = 0 reproduces the scene branch");
    c.near(qd[i].q_unified, 0.8 * sig_norm[i] + 0.2 * sce_norm[i], 1e-12, "default alpha 0.8");
  }
  c.expect(candidate_count(2.0, 140) == 280, "|D_cand| = 280 for eta 2, target 140");
  const SamplingConfig defaults;
  c.expect(defaults.eta == 2.0 && defaults.tau == 1.0 && defaults.target_size == 140, "sampling defaults");
}

void snr_band_oracle(Check& c) {
  Spectrum flat;
  for (int i = 0; i <= 150000; ++i) {
    flat.freqs_hz.push_back(i * 1e-4);
    flat.power.push_back(1.0);
  }
  const double closed_form = 10.0 * std::log10(0.4 / 1.35);
  const double integrated = oracle::flat_spectrum_snr_db(1.2);
  const double got = snr_db(flat, 1.2);
  c.near(got, -5.28, 0.1, "flat-spectrum SNR at 1.2 Hz");
  c.near(integrated, closed_form, 1e-3, "integration oracle vs closed form");
  c.near(got, integrated, 0.01, "SNR vs integration oracle");
  c.note("SNR " + fmt(got) + " dB, oracle " + fmt(integrated) + " dB");

  for (int k = 0; k < 50; ++k) {
    const double f1 = 0.75 + 1.75 * k / 49.0;
    std::size_t sig = 0, noise = 0, inside = 0;
    bool labels_ok = true;
    for (double f : flat.freqs_hz) {
      const Band b = classify_band(f, f1);
      const bool in = f >= 0.75 - 1e-9 && f <= 2.5 + 1e-9;
      const bool near = std::abs(f - f1) <= 0.1 + 1e-9 || std::abs(f - 2 * f1) <= 0.1 + 1e-9;
      const Band want = !in ? Band::outside : near ? Band::signal : Band::noise;
      labels_ok &= b == want;
      inside += in;
      sig += b == Band::signal;
      noise += b == Band::noise;
    }
    c.expect(labels_ok && sig + noise == inside, "band partition at f1 = " + fmt(f1));
  }
}

void ransac_oracle(Check& c) {
  std::vector<double> peaks;
  for (double bpm : {70.0, 71.0, 70.5, 120.0, 69.5}) peaks.push_back(bpm_to_hz(bpm));
  const double eps = bpm_to_hz(5.0);
  const auto [best, med] = oracle::exhaustive_consensus(peaks, eps);
  const auto r = ransac_consensus(peaks, eps);
  c.expect(best == 4, "exhaustive maximal inlier count is 4");
  c.expect(r.inliers == std::vector<std::size_t>{0, 1, 2, 4}, "inliers {70, 71, 70.5, 69.5}");
  c.near(hz_to_bpm(r.consensus_hz), 70.25, 1e-9, "consensus bpm");
  c.near(r.consensus_hz, med, 1e-15, "consensus equals exhaustive median");

  rng_type rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + uniform_index(rng, 7);
    const double centre = 0.9 + uniform01(rng);
    std::vector<double> tight;
    for (std::size_t i = 0; i < m; ++i) tight.push_back(centre + (uniform01(rng) - 0.5) * 0.9 * eps);
    std::vector<double> sorted = tight;
    std::sort(sorted.begin(), sorted.end());
    const double want = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
    const auto rr = ransac_consensus(tight, eps, 100, static_cast<std::uint64_t>(trial));
    c.expect(rr.inliers.size() == m && std::abs(rr.consensus_hz - want) < 1e-15,
             "spread < eps gives the median (trial " + std::to_string(trial) + ")");
  }
}

void extraction_oracle(Check& c) {
  double worst = 0.0;
  std::size_t degenerate = 0;
  for (double hr : {50.0, 72.0, 90.0, 120.0}) {
    const RgbTrace trace = resample_30fps(generate(clean_spec(hr, static_cast<std::uint64_t>(hr))));
    for (Method m : kAllMethods) {
      const PulseSignal p = extract(trace, m);
      if (p.degenerate) {
        ++degenerate;
        continue;
      }
      const double err = std::abs(hz_to_bpm(find_peak(welch_psd(p)).hz) - hr);
      worst = std::max(worst, err);
      c.expect(err <= 3.0, std::string(to_string(m)) + " at " + fmt(hr) + " bpm off by " + fmt(err) + " bpm");
    }
    const auto report = assess_signal(trace, MethodSet{});
    const double err = std::abs(hz_to_bpm(report.consensus_hz) - hr);
    worst = std::max(worst, err);
    c.expect(err <= 3.0, "consensus at " + fmt(hr) + " bpm off by " + fmt(err) + " bpm");
  }
  c.note("worst error " + fmt(worst) + " bpm, " + std::to_string(degenerate) + " degenerate extractions");
}

void separation_property(Check& c) {
  TempDir dir("rppgvqa_accept_sep");
  const auto run = score_synthetic(separation_corpus(25, 25, 2024), dir);
  std::vector<double> sig_pos, sig_neg, q_pos, q_neg;
  for (const auto& l : run.lines) {
    const bool clean = l.source_tag == "clean";
    (clean ? sig_pos : sig_neg).push_back(l.quality.q_sig_raw);
    (clean ? q_pos : q_neg).push_back(l.quality.q_unified);
  }
  c.expect(sig_pos.size() == 25 && sig_neg.size() == 25, "25 clean + 25 noise videos scored");
  const double auc_sig = oracle::auc(sig_pos, sig_neg), auc_q = oracle::auc(q_pos, q_neg);
  c.expect(auc_sig == 1.0, "AUC of q_sig_raw = " + fmt(auc_sig));
  c.expect(auc_q == 1.0, "AUC of Q (alpha 0.8) = " + fmt(auc_q));
  c.note("min clean q_sig " + fmt(*std::min_element(sig_pos.begin(), sig_pos.end())) + " dB, max noise q_sig " +
         fmt(*std::max_element(sig_neg.begin(), sig_neg.end())) + " dB");
}

void failure_cases(Check& c) {
  {
    TempDir dir("rppgvqa_accept_flicker");
    const auto run = score_synthetic(synth_preset("flicker", 11), dir);
    double min_flicker_sig = 1e9, max_flicker_q = 0, min_clean_q = 1;
    std::vector<double> clean_sig, flicker_sig, clean_q, flicker_q;
    for (const auto& l : run.lines) {
      if (l.source_tag == "flicker") {
        min_flicker_sig = std::min(min_flicker_sig, l.quality.q_sig_raw);
        max_flicker_q = std::max(max_flicker_q, l.quality.q_unified);
        flicker_sig.push_back(l.quality.q_sig_raw);
        flicker_q.push_back(l.quality.q_unified);
        c.expect(l.signal && std::abs(l.signal->consensus_hz - 1.5) < 0.05, l.quality.video_id + " locks onto 1.5 Hz");
      } else {
        min_clean_q = std::min(min_clean_q, l.quality.q_unified);
        clean_sig.push_back(l.quality.q_sig_raw);
        clean_q.push_back(l.quality.q_unified);
      }
    }
    c.expect(min_flicker_sig > 0.0, "flicker q_sig_raw > 0 dB (min " + fmt(min_flicker_sig) + ")");
    c.expect(max_flicker_q < min_clean_q,
             "every flicker Q below every clean Q (max flicker " + fmt(max_flicker_q) + ", min clean " +
                 fmt(min_clean_q) + ")");
    c.note("flicker min q_sig " + fmt(min_flicker_sig) + " dB; mean Q flicker " + fmt(dsp::mean(flicker_q)) +
           " vs clean " + fmt(dsp::mean(clean_q)) + "; clean-over-flicker AUC " + fmt(oracle::auc(clean_sig, flicker_sig)) +
           " by q_sig, " + fmt(oracle::auc(clean_q, flicker_q)) + " by Q");
  }
  {
    double sum = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      SynthSpec s = noise_spec(seed);
      s.noise_sigma = 0.01;
      sum += assess_signal(resample_30fps(generate(s)), MethodSet{}).q_sig_raw;
    }
    c.expect(sum / 20 < -3.0, "synthetic-face 20-seed mean q_sig_raw " + fmt(sum / 20) + " < -3 dB");
    c.note("synthetic-face mean q_sig " + fmt(sum / 20) + " dB");

    TempDir dir("rppgvqa_accept_face");
    const auto run = score_synthetic(synth_preset("synthetic-face", 12), dir);
    double max_face_q = 0, min_clean_q = 1;
    for (const auto& l : run.lines) {
      if (l.source_tag == "synthetic-face") {
        c.expect(l.scene.q_sce_raw == 10.0, "synthetic face has perfect scene scores");
        max_face_q = std::max(max_face_q, l.quality.q_unified);
      } else {
        min_clean_q = std::min(min_clean_q, l.quality.q_unified);
      }
    }
    c.expect(max_face_q < 0.5 && max_face_q < min_clean_q,
             "synthetic-face Q low (max " + fmt(max_face_q) + ", min clean " + fmt(min_clean_q) + ")");
  }
}

void sampling_statistics(Check& c) {
  std::vector<ScoredVideo> corpus;
  rng_type gen(99);
  for (int i = 0; i < 300; ++i)
    corpus.push_back({"v" + std::to_string(1000 + i), uniform01(gen), 12.0 + 48.0 * uniform01(gen), ""});
  SamplingConfig cfg;
  double total = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    cfg.seed = seed;
    total += static_cast<double>(curate(corpus, cfg).entries.size());
  }
  const double mean = total / 1000;
  c.expect(std::abs(mean - 140.0) <= 0.02 * 140.0, "mean realized size " + fmt(mean, 6) + " within 2% of 140");
  c.note("mean realized size " + fmt(mean, 6));

  std::vector<ScoredVideo> by_q, by_t;
  for (int i = 0; i < 12; ++i) {
    by_q.push_back({"q" + std::to_string(i), 0.05 + 0.08 * i, 30.0, ""});
    by_t.push_back({"t" + std::to_string(i), 0.6, 5.0 + 10.0 * i, ""});
  }
  for (double tau : {0.1, 1.0, 5.0}) {
    const auto pq = tas_probabilities(by_q, tau), pt = tas_probabilities(by_t, tau);
    for (std::size_t i = 1; i < pq.size(); ++i) {
      c.expect(pq[i] > pq[i - 1], "TAS probability increases with Q (tau " + fmt(tau) + ")");
      c.expect(pt[i] > pt[i - 1], "TAS probability increases with T (tau " + fmt(tau) + ")");
    }
    for (const auto* p : {&pq, &pt}) {
      double s = 0;
      for (double v : *p) s += v;
      c.near(s, 1.0, 1e-12, "softmax sums to 1");
    }
  }
  const std::vector<double> extreme = {700.0, -700.0, 0.0, 1e-3};
  double s = 0;
  for (double v : detail::softmax(extreme)) s += v;
  c.near(s, 1.0, 1e-12, "softmax with extreme logits sums to 1");

  const auto uniform = tas_probabilities(std::span<const ScoredVideo>(corpus).first(280), 1e9);
  double dev = 0;
  for (double p : uniform) dev = std::max(dev, std::abs(p - 1.0 / 280));
  c.expect(dev <= 1e-5, "tau -> infinity gives uniform probabilities (max deviation " + fmt(dev) + ")");
}

int run_cli(const std::string& args, const TempDir& dir) {
  const std::string cmd = std::string("\"") + RPPG_VQA_CLI + "\" " + args + " > \"" + (dir / "cli.log").string() +
                          "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void determinism(Check& c) {
  TempDir dir("rppgvqa_accept_det");
  const auto q = [](const fs::path& p) { return "\"" + p.string() + "\""; };
  c.expect(run_cli("synth --preset separation --seed 8 --out " + q(dir / "corpus"), dir) == 0, "synth corpus");
  std::string scores[2], manifests[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path s = dir / ("scores" + std::to_string(run) + ".jsonl");
    const fs::path m = dir / ("manifest" + std::to_string(run) + ".json");
    const std::string workers = run == 0 ? "1" : "3";
    c.expect(run_cli("--log-level error score --scorer mock --workers " + workers + " --manifest " +
                         q(dir / "corpus/manifest.json") + " --out " + q(s),
                     dir) == 0,
             "score run " + std::to_string(run));
    c.expect(run_cli("sample --scores " + q(s) + " --strategy tas --target-size 20 --seed 13 --out " + q(m), dir) == 0,
             "sample run " + std::to_string(run));
    scores[run] = testutil::read_text(s);
    manifests[run] = testutil::read_text(m);
  }
  c.expect(!scores[0].empty() && scores[0] == scores[1], "scores files byte-identical");
  c.expect(!manifests[0].empty() && manifests[0] == manifests[1], "manifests byte-identical");
  c.note("scores digest " + fnv1a_hex(scores[0]) + ", manifest digest " + fnv1a_hex(manifests[0]));
}

void scale_invariants(Check& c) {
  for (const auto& spec : {clean_spec(66, 3), noise_spec(4), flicker_spec(5)}) {
    const RgbTrace base = resample_30fps(generate(spec));
    const auto ref = assess_signal(base, MethodSet{});
    double wsum = 0;
    for (const auto& m : ref.per_method) wsum += m.w;
    c.near(wsum, 1.0, 1e-12, "fusion weights sum to 1");
    for (double k : {0.01, 0.5, 3.0, 250.0}) {
      RgbTrace scaled = base;
      for (auto* ch : {&scaled.r, &scaled.g, &scaled.b})
        for (double& v : *ch) v *= k;
      const auto r = assess_signal(scaled, MethodSet{});
      c.near(r.q_sig_raw, ref.q_sig_raw, 1e-6, "q_sig_raw under scaling by " + fmt(k));
      for (std::size_t i = 0; i < r.per_method.size(); ++i) {
        const auto& a = r.per_method[i];
        const auto& b = ref.per_method[i];
        const std::string tag = std::string(to_string(a.method)) + " x" + fmt(k);
        c.near(a.snr_db, b.snr_db, 1e-6, "SNR " + tag);
        c.near(a.w_f, b.w_f, 1e-6, "w_f " + tag);
        c.near(a.w_s, b.w_s, 1e-6, "w_s " + tag);
        c.near(a.w, b.w, 1e-6, "w " + tag);
      }
    }
  }

  rng_type rng(31);
  std::cauchy_distribution<double> heavy(0.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<BranchScores> corpus;
    std::vector<double> raw;
    const std::size_t n = 1 + uniform_index(rng, 40);
    for (std::size_t i = 0; i < n; ++i) {
      corpus.push_back({"v" + std::to_string(i), heavy(rng), 10.0 * uniform01(rng), {}});
      raw.push_back(corpus.back().q_sig_raw);
    }
    bool in_range = true;
    for (const auto& r : unify(corpus, uniform01(rng))) in_range &= r.q_unified >= 0.0 && r.q_unified <= 1.0;
    c.expect(in_range, "Q in [0, 1] (trial " + std::to_string(trial) + ")");
    const auto once = iqr_truncate(raw);
    c.expect(iqr_truncate(once) == once, "IQR truncation idempotent (trial " + std::to_string(trial) + ")");
  }
}

struct Criterion {
  const char* name;
  double budget_s;
  std::function<void(Check&)> run;
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {"formula fidelity", 1, formula_fidelity},
      {"SNR band oracle", 1, snr_band_oracle},
      {"RANSAC oracle", 1, ransac_oracle},
      {"extraction oracle", 30, extraction_oracle},
      {"separation property", 60, separation_property},
      {"failure-case reproduction", 30, failure_cases},
      {"sampling statistics", 60, sampling_statistics},
      {"end-to-end determinism", 60, determinism},
      {"scale/normalization invariants", 60, scale_invariants},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Check check;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.run(check);
    } catch (const std::exception& e) {
      check.expect(false, std::string("exception: ") + e.what());
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    check.expect(elapsed < cr.budget_s, "runtime " + fmt(elapsed, 3) + " s within " + fmt(cr.budget_s) + " s");
    const bool ok = check.ok();
    failed += !ok;
    std::cout << (ok ? "PASS" : "FAIL") << "  " << cr.name << " (" << fmt(elapsed, 3) << " s): " << check.summary()
              << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
