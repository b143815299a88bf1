#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "rio/common.hpp"
#include "rio/model.hpp"
#include "rio/world.hpp"

namespace rio {

// Any sampler usable by the pipeline exposes:
//   SampleResult generate(const Context&, const DecodeConfig&, uint64_t seed) const;
// The transformer adapter is below; tests plug in oracle samplers through the
// same interface.
struct ModelSampler {
  const Model* model;
  explicit ModelSampler(const Model& m) : model(&m) {}
  SampleResult generate(const Context& ctx, const DecodeConfig& dc, uint64_t seed) const {
    return sample(*model, ctx, dc, seed);
  }
};

/// Emits the exact ground-truth continuation for any clean prompt: recovers
/// the style from the prompt speech and renders the target text with it.
struct GroundTruthSampler {
  const WorldParams* world;
  explicit GroundTruthSampler(const WorldParams& w) : world(&w) {}
  SampleResult generate(const Context& ctx, const DecodeConfig&, uint64_t) const {
    StyleEstimate est = estimate_style(*world, ctx.prompt_speech);
    SampleResult r;
    r.tokens = emit(*world, ctx.target_text, est.style);
    r.trace.per_token.assign(r.tokens.size() + 1, 0.0);
    r.trace.total = 0.0;
    r.ended_with_eos = true;
    return r;
  }
};

/// Emits nothing but the end marker. Used to probe degenerate-output handling.
struct EmptySampler {
  SampleResult generate(const Context&, const DecodeConfig&, uint64_t) const {
    SampleResult r;
    r.trace.per_token.assign(1, 0.0);
    r.trace.total = 0.0;
    r.ended_with_eos = true;
    return r;
  }
};

struct GenScores {
  double mos = 0.0;
  double wer = 0.0;
  double sim = 0.0;
};

struct Generation {
  std::vector<int> tokens;   // acoustic tokens only, end marker stripped
  LogProbTrace trace;        // under the sampling-time distribution
  bool ended_with_eos = false;
  bool degenerate = false;   // empty output; scores below are floored
  GenScores scores;
  uint64_t seed = 0;
};

/// Scores a generation against the conditioning context: quality of the
/// output itself, transcription error against the target text, and style
/// similarity against the prompt speech. Empty outputs cannot be scored by
/// the similarity oracle, so they get floored scores and a degenerate flag.
inline GenScores score_generation(const WorldParams& w, const Context& ctx,
                                  const std::vector<int>& tokens) {
  GenScores s;
  if (tokens.empty()) {
    s.mos = 1.0;
    s.wer = 100.0;
    s.sim = 0.0;
    return s;
  }
  s.mos = quality_score(w, tokens, ctx.target_text);
  s.wer = wer_score(w, tokens, ctx.target_text);
  s.sim = sim_score(w, tokens, ctx.prompt_speech);
  return s;
}

/// Forward pass of the pipeline: condition on (prompt speech, prompt text,
/// target text), draw a continuation, and attach oracle scores.
template <typename Sampler>
Generation zero_shot(const Sampler& sampler, const WorldParams& w, const Context& ctx,
                     const DecodeConfig& dc, uint64_t seed) {
  SampleResult raw = sampler.generate(ctx, dc, seed);
  Generation g;
  g.tokens = std::move(raw.tokens);
  g.trace = std::move(raw.trace);
  g.ended_with_eos = raw.ended_with_eos;
  g.degenerate = g.tokens.empty();
  g.scores = score_generation(w, ctx, g.tokens);
  g.seed = seed;
  return g;
}

/// Reverse pass: the forward generation becomes the prompt speech, the two
/// texts swap roles, and the model is asked to reproduce the original prompt
/// speech. The result is scored against that original prompt.
template <typename Sampler>
Generation reverse_infer(const Sampler& sampler, const WorldParams& w, const Context& fwd_ctx,
                         const std::vector<int>& fwd_generation, const DecodeConfig& dc,
                         uint64_t seed) {
  require(!fwd_generation.empty(), ErrKind::degenerate_input,
          "reverse inference requires a non-empty forward generation");
  Context rev;
  rev.prompt_speech = fwd_generation;
  rev.prompt_text = fwd_ctx.target_text;
  rev.target_text = fwd_ctx.prompt_text;

  SampleResult raw = sampler.generate(rev, dc, seed);
  Generation g;
  g.tokens = std::move(raw.tokens);
  g.trace = std::move(raw.trace);
  g.ended_with_eos = raw.ended_with_eos;
  g.degenerate = g.tokens.empty();
  g.seed = seed;
  if (g.degenerate) {
    g.scores.mos = 1.0;
    g.scores.wer = 100.0;
    g.scores.sim = 0.0;
    return g;
  }
  // The reconstruction is judged against the original prompt: does it say the
  // original prompt text, and does it carry the original prompt's style?
  g.scores.mos = quality_score(w, g.tokens, rev.target_text);
  g.scores.wer = wer_score(w, g.tokens, rev.target_text);
  g.scores.sim = sim_score(w, g.tokens, fwd_ctx.prompt_speech);
  return g;
}

// ---------------------------------------------------------------------------
// Consistency check of the probabilistic identity behind reverse inference:
//     p(Y | T_Y, T_X, X) * p(X | T_X)  ==  p(X | T_X, T_Y, Y) * p(Y | T_Y)
// on a fully enumerable two-utterance world. The identity holds whenever the
// prompt utterance is independent of the other utterance's text given its own
// text (shared style only); a "broken" world plants a dependence of X's
// emission on T_Y and must produce a measurable violation.
// ---------------------------------------------------------------------------

struct BayesWorld {
  int acoustic_size = 4;           // alphabet for both texts and speech
  int n_offsets = 4;               // style prior is uniform over offsets [0, n_offsets)
  int slope = 5;                   // same affine emission family as the big world
  std::vector<int> text_x = {0};   // prompt-side text
  std::vector<int> text_y = {1};   // target-side text
  double flip_eps = 0.1;           // per-token emission noise; 0 => point masses
  bool broken = false;             // plant X <- T_Y dependence
  uint64_t max_states = 1 << 20;   // enumeration budget
};

struct BayesReport {
  double max_violation = 0.0;
  uint64_t n_states = 0;           // number of (X, Y) outcomes enumerated
};

namespace detail {

inline double emit_prob(const BayesWorld& bw, const std::vector<int>& text, int offset,
                        const std::vector<int>& speech) {
  const int a = bw.acoustic_size;
  double p = 1.0;
  for (size_t i = 0; i < text.size(); ++i) {
    int clean = static_cast<int>((static_cast<long long>(bw.slope) * text[i] + offset) % a);
    if (speech[i] == clean)
      p *= 1.0 - bw.flip_eps;
    else
      p *= bw.flip_eps / (a - 1);
  }
  return p;
}

inline bool next_tuple(std::vector<int>& t, int base) {
  for (size_t i = 0; i < t.size(); ++i) {
    if (++t[i] < base) return true;
    t[i] = 0;
  }
  return false;
}

}  // namespace detail

inline BayesReport bayes_check(const BayesWorld& bw) {
  require(bw.acoustic_size >= 2 && bw.acoustic_size <= 4, ErrKind::precondition,
          "bayes check world must have an alphabet of 2..4 symbols");
  require(bw.n_offsets >= 1 && bw.n_offsets <= bw.acoustic_size, ErrKind::precondition,
          "n_offsets must lie in [1, acoustic_size]");
  require(!bw.text_x.empty() && bw.text_x.size() <= 2 && !bw.text_y.empty() &&
              bw.text_y.size() <= 2,
          ErrKind::precondition, "bayes check texts must have length 1 or 2");
  require(bw.flip_eps >= 0.0 && bw.flip_eps < 1.0, ErrKind::precondition,
          "flip_eps must lie in [0, 1)");
  for (int t : bw.text_x)
    require(t >= 0 && t < bw.acoustic_size, ErrKind::precondition, "text symbol out of range");
  for (int t : bw.text_y)
    require(t >= 0 && t < bw.acoustic_size, ErrKind::precondition, "text symbol out of range");

  const int a = bw.acoustic_size;
  const size_t lx = bw.text_x.size(), ly = bw.text_y.size();
  double states = std::pow(static_cast<double>(a), static_cast<double>(lx + ly));
  require(states <= static_cast<double>(bw.max_states), ErrKind::size_limit,
          "bayes check enumeration budget exceeded");

  // Joint over (X, Y) given both texts, marginalizing the shared style.
  // Styles are offsets with a uniform prior. In the broken world the prompt
  // utterance X ignores the shared style and takes its offset straight from
  // the first symbol of T_Y — a dependence the identity's prior cannot see.
  const int no = bw.n_offsets;
  std::map<std::pair<std::vector<int>, std::vector<int>>, double> joint;
  std::map<std::vector<int>, double> marg_x_true;  // p(X | T_X, T_Y) under the world
  std::map<std::vector<int>, double> marg_y;       // p(Y | T_Y, T_X) under the world
  std::vector<int> xs(lx, 0);
  do {
    std::vector<int> ys(ly, 0);
    do {
      double p = 0.0;
      for (int o = 0; o < no; ++o) {
        int ox = bw.broken ? bw.text_y[0] % a : o;
        p += (1.0 / no) * detail::emit_prob(bw, bw.text_x, ox, xs) *
             detail::emit_prob(bw, bw.text_y, o, ys);
      }
      joint[{xs, ys}] = p;
      marg_x_true[xs] += p;
      marg_y[ys] += p;
    } while (detail::next_tuple(ys, a));
  } while (detail::next_tuple(xs, a));

  // The prior the reverse-inference identity assumes: X depends on nothing
  // but its own text and the style. Computed from the clean emission family
  // regardless of `broken`, because this is the modeling assumption whose
  // failure the check must detect.
  std::map<std::vector<int>, double> prior_x;
  std::vector<int> xs2(lx, 0);
  do {
    double p = 0.0;
    for (int o = 0; o < no; ++o) p += (1.0 / no) * detail::emit_prob(bw, bw.text_x, o, xs2);
    prior_x[xs2] = p;
  } while (detail::next_tuple(xs2, a));

  BayesReport rep;
  for (const auto& [xy, pxy] : joint) {
    rep.n_states++;
    if (pxy <= 0.0) continue;
    const auto& x = xy.first;
    const auto& y = xy.second;
    double p_y_given_x = pxy / marg_x_true.at(x);   // p(Y | T_Y, T_X, X)
    double p_x_given_y = pxy / marg_y.at(y);        // p(X | T_X, T_Y, Y)
    double lhs = p_y_given_x * prior_x.at(x);
    double rhs = p_x_given_y * marg_y.at(y);
    rep.max_violation = std::max(rep.max_violation, std::abs(lhs - rhs));
  }
  return rep;
}

}  // namespace rio
