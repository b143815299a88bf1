#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "rio/common.hpp"
#include "rio/vocab.hpp"

namespace rio {

// ---------------------------------------------------------------------------
// Synthetic speech world. A "voice" is a style (duration, offset); rendering
// text symbol t under style (d, o) emits d copies of (slope*t + offset) mod A.
// Rule-based scorers stand in for learned quality / transcription / voice
// judges: they are exact on clean renderings and degrade smoothly under
// corruption, which is what makes them usable as test oracles.
// ---------------------------------------------------------------------------

struct Style {
  int duration = 1;  // tokens emitted per text symbol
  int offset = 0;    // additive code shift; acts as the speaker identity
};

struct WorldParams {
  int acoustic_size = 16;
  int text_size = 8;
  int slope = 5;  // must be coprime with acoustic_size
  std::vector<int> durations = {1};
  int prompt_speech_len = 8;  // every duration in `durations` must divide this
  // target speech length ranges (inclusive), drawn before snapping to blocks
  int train_len_min = 4, train_len_max = 16;
  int eval_len_min = 6, eval_len_max = 18;
  int max_pairs_per_style = 1024;

  int slope_inverse() const {
    for (int x = 1; x < acoustic_size; ++x)
      if ((slope * x) % acoustic_size == 1) return x;
    fail(ErrKind::precondition, "slope is not invertible modulo acoustic_size");
  }

  Vocab vocab() const {
    // A prompt field must hold the longest utterance the world produces in
    // either direction: enrollments, targets, and sampled renderings that
    // re-enter as the enrollment when inference is run in reverse.
    int slot = std::max({prompt_speech_len, train_len_max, eval_len_max});
    return Vocab{acoustic_size, text_size, slot};
  }
};

inline void validate(const WorldParams& w) {
  require(w.acoustic_size >= 2 && w.text_size >= 2, ErrKind::precondition, "world too small");
  require(w.text_size <= w.acoustic_size, ErrKind::precondition,
          "text alphabet cannot exceed acoustic alphabet");
  require(std::gcd(w.slope, w.acoustic_size) == 1, ErrKind::precondition,
          "slope must be coprime with acoustic_size");
  require(!w.durations.empty(), ErrKind::precondition, "no durations");
  for (int d : w.durations) {
    require(d >= 1, ErrKind::precondition, "duration must be positive");
    require(w.prompt_speech_len % d == 0, ErrKind::precondition,
            "prompt_speech_len must be divisible by every duration");
  }
}

inline std::vector<int> emit(const WorldParams& w, const std::vector<int>& text,
                             const Style& style) {
  std::vector<int> speech;
  speech.reserve(text.size() * style.duration);
  for (int t : text) {
    require(t >= 0 && t < w.text_size, ErrKind::precondition, "text symbol out of range");
    int code = (w.slope * t + style.offset) % w.acoustic_size;
    for (int k = 0; k < style.duration; ++k) speech.push_back(code);
  }
  return speech;
}

// ---------------------------------------------------------------------------
// Style estimation. The emission map has a shift degeneracy: (text - s,
// offset + slope*s) renders identically. Corpus texts are canonical -- they
// contain symbol 0 and never repeat a symbol in adjacent positions -- which
// pins the true candidate: it alone keeps every block decodable with minimum
// decoded symbol 0 while winning the per-position vote.
// ---------------------------------------------------------------------------

struct StyleEstimate {
  Style style;
  int votes = 0;         // positions agreeing with the winning hypothesis
  int valid_blocks = 0;  // blocks whose majority code decodes to a text symbol
};

namespace detail {

/// Majority token over d consecutive positions; ties go to the smallest id.
inline int block_majority(const std::vector<int>& speech, size_t begin, int d, int acoustic_size) {
  int best = -1, best_count = 0;
  for (int k = 0; k < d; ++k) {
    int v = speech[begin + k];
    if (v < 0 || v >= acoustic_size) continue;
    int count = 0;
    for (int k2 = 0; k2 < d; ++k2)
      if (speech[begin + k2] == v) ++count;
    if (count > best_count || (count == best_count && (best == -1 || v < best))) {
      best = v;
      best_count = count;
    }
  }
  return best;  // -1 when no acoustic token in the block
}

}  // namespace detail

inline StyleEstimate estimate_style(const WorldParams& w, const std::vector<int>& speech) {
  const int A = w.acoustic_size;
  const int ainv = w.slope_inverse();
  StyleEstimate best;
  bool have = false;
  // score(hypothesis) = (votes, duration, -min decoded symbol, -offset), maximized
  long best_votes = -1;
  int best_dur = 0, best_min_sym = 0, best_off = 0;
  for (int d : w.durations) {
    const size_t n_blocks = speech.size() / static_cast<size_t>(d);
    std::vector<int> majority(n_blocks);
    for (size_t b = 0; b < n_blocks; ++b)
      majority[b] = detail::block_majority(speech, b * d, d, A);
    for (int o = 0; o < A; ++o) {
      long votes = 0;
      int valid = 0;
      int min_sym = A;  // sentinel above any decodable symbol
      for (size_t b = 0; b < n_blocks; ++b) {
        if (majority[b] < 0) continue;
        int sym = (ainv * ((majority[b] - o) % A + A)) % A;
        if (sym >= w.text_size) continue;
        ++valid;
        min_sym = std::min(min_sym, sym);
        for (int k = 0; k < d; ++k)
          if (speech[b * d + k] == majority[b]) ++votes;
      }
      bool better;
      if (!have) {
        better = true;
      } else {
        auto lhs = std::make_tuple(votes, d, -min_sym, -o);
        auto rhs = std::make_tuple(best_votes, best_dur, -best_min_sym, -best_off);
        better = lhs > rhs;
      }
      if (better) {
        have = true;
        best_votes = votes;
        best_dur = d;
        best_min_sym = min_sym;
        best_off = o;
        best.style = Style{d, o};
        best.votes = static_cast<int>(votes);
        best.valid_blocks = valid;
      }
    }
  }
  return best;
}

/// Transcribe speech under its estimated style. Undecodable blocks become -1,
/// which never matches a reference symbol.
inline std::vector<int> decode_text(const WorldParams& w, const std::vector<int>& speech) {
  StyleEstimate est = estimate_style(w, speech);
  const int d = est.style.duration, o = est.style.offset;
  const int A = w.acoustic_size, ainv = w.slope_inverse();
  std::vector<int> out;
  const size_t n_blocks = speech.size() / static_cast<size_t>(d);
  out.reserve(n_blocks);
  for (size_t b = 0; b < n_blocks; ++b) {
    int maj = detail::block_majority(speech, b * d, d, A);
    if (maj < 0) {
      out.push_back(-1);
      continue;
    }
    int sym = (ainv * ((maj - o) % A + A)) % A;
    out.push_back(sym < w.text_size ? sym : -1);
  }
  return out;
}

inline int levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

/// Word error rate in percent: edit distance between the transcription and
/// the reference text, normalized by reference length. Can exceed 100 when
/// the transcription is much longer than the reference.
inline double wer_score(const WorldParams& w, const std::vector<int>& speech,
                        const std::vector<int>& reference_text) {
  require(!reference_text.empty(), ErrKind::precondition, "empty reference text");
  std::vector<int> decoded = decode_text(w, speech);
  return 100.0 * levenshtein(decoded, reference_text) / static_cast<double>(reference_text.size());
}

namespace detail {

/// Distribution over implied offsets: for each position inside a decodable
/// block, the offset that position's code would imply for the block's symbol.
inline std::vector<double> offset_histogram(const WorldParams& w, const std::vector<int>& speech) {
  const int A = w.acoustic_size, ainv = w.slope_inverse();
  StyleEstimate est = estimate_style(w, speech);
  const int d = est.style.duration, o = est.style.offset;
  std::vector<double> hist(A, 0.0);
  double total = 0.0;
  const size_t n_blocks = speech.size() / static_cast<size_t>(d);
  for (size_t b = 0; b < n_blocks; ++b) {
    int maj = block_majority(speech, b * d, d, A);
    if (maj < 0) continue;
    int sym = (ainv * ((maj - o) % A + A)) % A;
    if (sym >= w.text_size) continue;
    for (int k = 0; k < d; ++k) {
      int v = speech[b * d + k];
      if (v < 0 || v >= A) continue;
      int omega = ((v - w.slope * sym) % A + A) % A;
      hist[omega] += 1.0;
      total += 1.0;
    }
  }
  if (total > 0.0)
    for (double& x : hist) x /= total;
  return total > 0.0 ? hist : std::vector<double>();
}

}  // namespace detail

/// Voice match in [0, 1]: histogram intersection of the implied-offset
/// distributions. Clean renderings of the same offset score exactly 1;
/// disjoint offsets score 0; no decodable content scores 0.
inline double sim_score(const WorldParams& w, const std::vector<int>& a,
                        const std::vector<int>& b) {
  require(!a.empty() && !b.empty(), ErrKind::precondition, "sim_score needs non-empty sequences");
  std::vector<double> ha = detail::offset_histogram(w, a);
  std::vector<double> hb = detail::offset_histogram(w, b);
  if (ha.empty() || hb.empty()) return 0.0;
  double s = 0.0;
  for (int i = 0; i < w.acoustic_size; ++i) s += std::min(ha[i], hb[i]);
  return s;
}

struct QualityScore {
  double mos = 1.0;
  double style_penalty = 0.0;
  double length_penalty = 0.0;
  double repetition_penalty = 0.0;
  double invalid_penalty = 0.0;
};

/// Quality score in [1, 5], anchored to the text the speech was meant to
/// render. Penalizes style inconsistency, length mismatch, stuck repetition,
/// and non-acoustic content. Exact 5.0 on any clean rendering of the text.
inline QualityScore quality_breakdown(const WorldParams& w, const std::vector<int>& speech,
                                      const std::vector<int>& text) {
  require(!text.empty(), ErrKind::precondition, "empty text");
  const int A = w.acoustic_size;
  const size_t L = speech.size(), Lt = text.size();

  // Fit a duration by length alone; ties prefer the smaller duration.
  int dhat = w.durations.front();
  long best_gap = -1;
  for (int d : w.durations) {
    long gap = std::labs(static_cast<long>(L) - static_cast<long>(d * Lt));
    if (best_gap < 0 || gap < best_gap || (gap == best_gap && d < dhat)) {
      dhat = d;
      best_gap = gap;
    }
  }

  // Style consistency: circular variance of implied offsets over positions
  // aligned against the text under dhat.
  double style_penalty = 0.0;
  {
    const size_t aligned = std::min(L, static_cast<size_t>(dhat) * Lt);
    std::vector<int> counts(A, 0);
    size_t n = 0;
    for (size_t j = 0; j < aligned; ++j) {
      int v = speech[j];
      if (v < 0 || v >= A) continue;
      int sym = text[j / dhat];
      int omega = ((v - w.slope * sym) % A + A) % A;
      ++counts[omega];
      ++n;
    }
    if (n > 0) {
      int distinct = 0;
      for (int c : counts) distinct += (c > 0);
      if (distinct > 1) {
        constexpr double two_pi = 6.283185307179586476925286766559;
        double cx = 0.0, cy = 0.0;
        for (int i = 0; i < A; ++i) {
          if (!counts[i]) continue;
          double ang = two_pi * i / A;
          cx += counts[i] * std::cos(ang);
          cy += counts[i] * std::sin(ang);
        }
        double resultant = std::sqrt(cx * cx + cy * cy) / static_cast<double>(n);
        style_penalty = 4.0 * (1.0 - resultant);
      }
      // single implied offset => exactly zero, no transcendental round-off
    }
  }

  double length_penalty = 0.0;
  {
    double want = static_cast<double>(dhat) * static_cast<double>(Lt);
    length_penalty =
        4.0 * std::min(1.0, std::abs(static_cast<double>(L) - want) / want);
  }

  double repetition_penalty = 0.0;
  if (L > 0) {
    size_t run = 1, longest = 1;
    for (size_t j = 1; j < L; ++j) {
      run = (speech[j] == speech[j - 1]) ? run + 1 : 1;
      longest = std::max(longest, run);
    }
    double excess = std::max(0.0, static_cast<double>(longest) - static_cast<double>(dhat));
    repetition_penalty = 2.0 * excess / static_cast<double>(L);
  }

  double invalid_penalty = 0.0;
  if (L > 0) {
    size_t bad = 0;
    for (int v : speech) bad += (v < 0 || v >= A);
    invalid_penalty = 2.0 * static_cast<double>(bad) / static_cast<double>(L);
  }

  QualityScore q;
  q.style_penalty = style_penalty;
  q.length_penalty = length_penalty;
  q.repetition_penalty = repetition_penalty;
  q.invalid_penalty = invalid_penalty;
  q.mos = std::clamp(
      5.0 - style_penalty - length_penalty - repetition_penalty - invalid_penalty, 1.0, 5.0);
  return q;
}

inline double quality_score(const WorldParams& w, const std::vector<int>& speech,
                            const std::vector<int>& text) {
  return quality_breakdown(w, speech, text).mos;
}

// ---------------------------------------------------------------------------
// Corpus generation. Styles are hash-partitioned into train / pool / eval so
// evaluation voices are never seen in training, and every record is derived
// from (master seed, split, index) alone -- extending a split never reshuffles
// earlier records.
// ---------------------------------------------------------------------------

enum class Split { train = 0, pool = 1, eval = 2 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::pool: return "pool";
    case Split::eval: return "eval";
  }
  return "?";
}

inline Split split_of_style(const Style& s) {
  uint64_t state = (static_cast<uint64_t>(s.offset) << 8) | static_cast<uint64_t>(s.duration);
  return static_cast<Split>(splitmix64(state) % 3);
}

inline std::vector<Style> styles_in_split(const WorldParams& w, Split split) {
  std::vector<Style> out;
  for (int d : w.durations)
    for (int o = 0; o < w.acoustic_size; ++o) {
      Style s{d, o};
      if (split_of_style(s) == split) out.push_back(s);
    }
  return out;
}

/// Text with no adjacent repeats and at least one symbol 0; both properties
/// make clean renderings uniquely decodable.
inline std::vector<int> canonical_text(const WorldParams& w, Rng& rng, int len) {
  require(len >= 1, ErrKind::precondition, "text length must be positive");
  std::vector<int> text(len);
  text[0] = static_cast<int>(rng.below(static_cast<uint64_t>(w.text_size)));
  for (int i = 1; i < len; ++i) {
    int draw = static_cast<int>(rng.below(static_cast<uint64_t>(w.text_size - 1)));
    text[i] = draw >= text[i - 1] ? draw + 1 : draw;
  }
  bool has_zero = std::find(text.begin(), text.end(), 0) != text.end();
  if (!has_zero) {
    // no zero anywhere means no neighbor is zero either, so this stays
    // adjacent-repeat free
    text[rng.below(static_cast<uint64_t>(len))] = 0;
  }
  return text;
}

/// Enrollment text: shuffled permutation blocks truncated to `len`, with
/// symbol 0 forced in. Sampling without replacement maximizes alphabet
/// coverage, so the enrollment demonstrates as many text-to-code bindings as
/// its length allows. Canonical-text properties still hold: entries within a
/// block are distinct (no adjacent repeats) and 0 is always present.
inline std::vector<int> enrollment_text(const WorldParams& w, Rng& rng, int len) {
  require(len >= 1, ErrKind::precondition, "text length must be positive");
  std::vector<int> text;
  text.reserve(static_cast<size_t>(len));
  std::vector<int> perm(static_cast<size_t>(w.text_size));
  while (static_cast<int>(text.size()) < len) {
    std::iota(perm.begin(), perm.end(), 0);
    for (size_t i = perm.size() - 1; i > 0; --i)
      std::swap(perm[i], perm[rng.below(i + 1)]);
    if (!text.empty() && perm.front() == text.back()) std::swap(perm.front(), perm.back());
    for (int s : perm) {
      if (static_cast<int>(text.size()) >= len) break;
      text.push_back(s);
    }
  }
  if (std::find(text.begin(), text.end(), 0) == text.end()) {
    // no zero anywhere means no neighbor is zero either (see canonical_text)
    text[rng.below(static_cast<uint64_t>(len))] = 0;
  }
  return text;
}

struct CorpusPair {
  int64_t id = 0;
  Split split = Split::train;
  uint64_t seed = 0;  // the derived seed this record was drawn from
  Style style;
  Context context;                // prompt text+speech and target text
  std::vector<int> target_speech; // clean rendering of the target text
};

inline CorpusPair make_pair_record(const WorldParams& w, Split split,
                                   const std::vector<Style>& split_styles, uint64_t master_seed,
                                   int64_t index) {
  std::string stage = std::string("corpus.") + to_string(split);
  uint64_t seed = derive_seed(master_seed, stage, static_cast<uint64_t>(index));
  Rng rng(seed);
  CorpusPair p;
  p.id = index;
  p.split = split;
  p.seed = seed;
  p.style = split_styles[rng.below(split_styles.size())];
  const int d = p.style.duration;

  p.context.prompt_text = enrollment_text(w, rng, w.prompt_speech_len / d);
  p.context.prompt_speech = emit(w, p.context.prompt_text, p.style);

  const int len_min = split == Split::train ? w.train_len_min : w.eval_len_min;
  const int len_max = split == Split::train ? w.train_len_max : w.eval_len_max;
  int speech_len = rng.range(len_min, len_max);
  int lt_min = (len_min + d - 1) / d, lt_max = std::max(lt_min, len_max / d);
  int lt = std::clamp((speech_len + d / 2) / d, lt_min, lt_max);
  p.context.target_text = canonical_text(w, rng, lt);
  p.target_speech = emit(w, p.context.target_text, p.style);
  return p;
}

inline std::vector<CorpusPair> gen_corpus(const WorldParams& w, int n, uint64_t master_seed,
                                          Split split) {
  validate(w);
  require(n >= 1, ErrKind::precondition, "corpus size must be at least 1");
  std::vector<Style> styles = styles_in_split(w, split);
  require(!styles.empty(), ErrKind::exhaustion,
          std::string("no styles assigned to split ") + to_string(split));
  int64_t capacity = static_cast<int64_t>(styles.size()) * w.max_pairs_per_style;
  require(n <= capacity, ErrKind::exhaustion,
          std::string("requested ") + std::to_string(n) + " pairs for split " + to_string(split) +
              " but capacity is " + std::to_string(capacity));
  std::vector<CorpusPair> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out.push_back(make_pair_record(w, split, styles, master_seed, i));
  return out;
}

inline std::vector<CorpusPair> gen_full_corpus(const WorldParams& w, uint64_t master_seed,
                                               int n_train, int n_pool, int n_eval) {
  std::vector<CorpusPair> out;
  out.reserve(static_cast<size_t>(n_train + n_pool + n_eval));
  for (auto [split, n] : {std::pair{Split::train, n_train}, {Split::pool, n_pool},
                          {Split::eval, n_eval}}) {
    if (n == 0) continue;
    auto part = gen_corpus(w, n, master_seed, split);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace rio
