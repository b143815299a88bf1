#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "rio/common.hpp"
#include "rio/config.hpp"
#include "rio/infer.hpp"
#include "rio/world.hpp"

namespace rio {

constexpr int kMosHistBins = 16;  // [1, 5] in steps of 0.25

struct MetricsReport {
  std::string model_label;
  uint64_t model_hash = 0;  // parameter hash of the evaluated checkpoint
  int n_eval = 0;
  double mean_wer = 0.0;
  double median_wer = 0.0;
  double mean_sim = 0.0;
  double mean_mos = 0.0;
  double bad_case_mos = 0.0;  // fraction with quality <= bad_mos_threshold
  double bad_case_wer = 0.0;  // fraction with transcription error > bad_wer_threshold
  double ppc_ratio = std::numeric_limits<double>::quiet_NaN();  // NaN: no good generations
  int n_good = 0;      // generations with quality > good_threshold
  int n_ppc_pass = 0;  // of those, reconstructions also above good_threshold
  std::array<int, kMosHistBins> mos_hist{};  // counts sum to n_eval
  double good_threshold = 3.0;
  double bad_mos_threshold = 3.0;
  double bad_wer_threshold = 20.0;
  uint64_t seed = 0;
  uint64_t config_hash = 0;
  uint64_t lineage_hash = 0;
  uint64_t corpus_hash = 0;  // content hash of the eval pairs
};

/// Histogram bin for a quality score in [1, 5]: bin 0 is [1, 1.25], every
/// later bin is a half-open (lo, hi] interval, so a score sitting exactly on
/// a bin edge counts toward the lower bin and "quality <= 3" is exactly the
/// first eight bins.
inline int mos_bin(double mos) {
  int b = static_cast<int>(std::ceil((mos - 1.0) / 0.25)) - 1;
  if (b < 0) b = 0;
  if (b >= kMosHistBins) b = kMosHistBins - 1;
  return b;
}

/// Content hash of a corpus slice, independent of file formatting.
inline uint64_t corpus_content_hash(const std::vector<CorpusPair>& pairs) {
  uint64_t h = 0xcbf29ce484222325ull;
  std::string buf;
  for (const CorpusPair& p : pairs) {
    buf.clear();
    buf += std::to_string(p.id);
    buf += '|';
    buf += to_string(p.split);
    buf += '|';
    buf += std::to_string(p.style.offset);
    buf += ',';
    buf += std::to_string(p.style.duration);
    auto app = [&buf](const std::vector<int>& v) {
      buf += '|';
      for (int x : v) {
        buf += std::to_string(x);
        buf += ',';
      }
    };
    app(p.context.prompt_text);
    app(p.context.prompt_speech);
    app(p.context.target_text);
    app(p.target_speech);
    h = fnv1a64(buf, h);
  }
  return h;
}

/// Runs the full evaluation protocol: one forward generation per held-out
/// pair, oracle scoring, and a reverse reconstruction for every generation
/// whose quality clears the good threshold. The reconstruction uses the same
/// model that produced the generation.
template <typename Sampler>
MetricsReport evaluate(const Sampler& sampler, const WorldParams& w,
                       const std::vector<CorpusPair>& eval_pairs, const DecodeConfig& dc,
                       const EvalConfig& ec, uint64_t seed) {
  require(!eval_pairs.empty(), ErrKind::precondition, "evaluation needs at least one pair");
  require(ec.good_threshold >= 1.0 && ec.good_threshold < 5.0, ErrKind::precondition,
          "good_threshold must lie in [1, 5)");

  MetricsReport rep;
  rep.n_eval = static_cast<int>(eval_pairs.size());
  rep.good_threshold = ec.good_threshold;
  rep.bad_mos_threshold = ec.bad_mos_threshold;
  rep.bad_wer_threshold = ec.bad_wer_threshold;
  rep.seed = seed;
  rep.corpus_hash = corpus_content_hash(eval_pairs);

  std::vector<double> wers;
  wers.reserve(eval_pairs.size());
  int n_bad_mos = 0, n_bad_wer = 0;
  double sum_wer = 0.0, sum_sim = 0.0, sum_mos = 0.0;

  for (const CorpusPair& p : eval_pairs) {
    uint64_t fs = derive_seed(seed, "eval.forward", static_cast<uint64_t>(p.id));
    Generation g = zero_shot(sampler, w, p.context, dc, fs);
    sum_wer += g.scores.wer;
    sum_sim += g.scores.sim;
    sum_mos += g.scores.mos;
    wers.push_back(g.scores.wer);
    if (g.scores.mos <= ec.bad_mos_threshold) n_bad_mos++;
    if (g.scores.wer > ec.bad_wer_threshold) n_bad_wer++;
    rep.mos_hist[mos_bin(g.scores.mos)]++;

    if (g.scores.mos > ec.good_threshold) {
      rep.n_good++;
      uint64_t rs = derive_seed(seed, "eval.reverse", static_cast<uint64_t>(p.id));
      Generation rev = reverse_infer(sampler, w, p.context, g.tokens, dc, rs);
      if (rev.scores.mos > ec.good_threshold) rep.n_ppc_pass++;
    }
  }

  double n = static_cast<double>(rep.n_eval);
  rep.mean_wer = sum_wer / n;
  rep.mean_sim = sum_sim / n;
  rep.mean_mos = sum_mos / n;
  rep.bad_case_mos = n_bad_mos / n;
  rep.bad_case_wer = n_bad_wer / n;
  std::sort(wers.begin(), wers.end());
  size_t m = wers.size();
  rep.median_wer = m % 2 ? wers[m / 2] : 0.5 * (wers[m / 2 - 1] + wers[m / 2]);
  if (rep.n_good > 0) rep.ppc_ratio = static_cast<double>(rep.n_ppc_pass) / rep.n_good;
  return rep;
}

/// Reconstruction-consistency ratio of a report; refuses to divide by zero.
inline double ppc_ratio_of(const MetricsReport& rep) {
  require(rep.n_good > 0, ErrKind::undefined_ratio,
          "reconstruction ratio is undefined for '" + rep.model_label +
              "': no generation cleared the good threshold (n_good = 0)");
  return rep.ppc_ratio;
}

namespace detail {

inline std::string fmt(double v, const char* spec = "%.4f") {
  if (std::isnan(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

inline std::string fmt_delta(double v, double base) {
  if (std::isnan(v) || std::isnan(base)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%+.4f", v - base);
  return buf;
}

inline void check_comparable(const std::vector<MetricsReport>& reps) {
  require(reps.size() >= 2, ErrKind::precondition, "comparison needs at least two reports");
  const MetricsReport& a = reps.front();
  for (size_t i = 1; i < reps.size(); ++i) {
    const MetricsReport& b = reps[i];
    if (b.corpus_hash != a.corpus_hash)
      fail(ErrKind::incomparable, "reports were produced on different eval corpora ('" +
                                      a.model_label + "' vs '" + b.model_label + "')");
    if (b.lineage_hash != a.lineage_hash)
      fail(ErrKind::incomparable, "reports come from different experiment lineages ('" +
                                      a.model_label + "' vs '" + b.model_label + "')");
    if (b.seed != a.seed)
      fail(ErrKind::incomparable, "reports used different evaluation seeds ('" +
                                      a.model_label + "' vs '" + b.model_label + "')");
    if (b.good_threshold != a.good_threshold || b.bad_mos_threshold != a.bad_mos_threshold ||
        b.bad_wer_threshold != a.bad_wer_threshold)
      fail(ErrKind::incomparable, "reports used different scoring thresholds ('" +
                                      a.model_label + "' vs '" + b.model_label + "')");
  }
}

}  // namespace detail

/// Renders a side-by-side metrics table. Every report after the first also
/// shows its delta against the first. Reports must share the eval corpus,
/// lineage, seed, and thresholds, otherwise the comparison is refused.
inline std::string compare_reports(const std::vector<MetricsReport>& reps) {
  detail::check_comparable(reps);
  const MetricsReport& base = reps.front();
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-14s %10s %12s %10s %12s %10s %10s\n", "model",
                "mean_mos", "bad_mos", "mean_wer", "bad_wer", "mean_sim", "ppc");
  out += line;
  for (size_t i = 0; i < reps.size(); ++i) {
    const MetricsReport& r = reps[i];
    std::snprintf(line, sizeof(line), "%-14s %10s %12s %10s %12s %10s %10s\n",
                  r.model_label.c_str(), detail::fmt(r.mean_mos).c_str(),
                  detail::fmt(r.bad_case_mos).c_str(), detail::fmt(r.mean_wer, "%.2f").c_str(),
                  detail::fmt(r.bad_case_wer).c_str(), detail::fmt(r.mean_sim).c_str(),
                  detail::fmt(r.ppc_ratio).c_str());
    out += line;
    if (i > 0) {
      std::snprintf(line, sizeof(line), "%-14s %10s %12s %10s %12s %10s %10s\n", "  vs first",
                    detail::fmt_delta(r.mean_mos, base.mean_mos).c_str(),
                    detail::fmt_delta(r.bad_case_mos, base.bad_case_mos).c_str(),
                    detail::fmt_delta(r.mean_wer, base.mean_wer).c_str(),
                    detail::fmt_delta(r.bad_case_wer, base.bad_case_wer).c_str(),
                    detail::fmt_delta(r.mean_sim, base.mean_sim).c_str(),
                    detail::fmt_delta(r.ppc_ratio, base.ppc_ratio).c_str());
      out += line;
    }
  }
  return out;
}

/// Reconstruction-consistency comparison across reports. Unlike the general
/// table this one refuses any report whose ratio is undefined.
inline std::string ppc_study(const std::vector<MetricsReport>& reps) {
  detail::check_comparable(reps);
  std::string out;
  char line[192];
  std::snprintf(line, sizeof(line), "%-14s %8s %8s %10s\n", "model", "n_good", "n_pass", "ppc");
  out += line;
  for (const MetricsReport& r : reps) {
    double ratio = ppc_ratio_of(r);
    std::snprintf(line, sizeof(line), "%-14s %8d %8d %10.4f\n", r.model_label.c_str(), r.n_good,
                  r.n_ppc_pass, ratio);
    out += line;
  }
  return out;
}

}  // namespace rio
