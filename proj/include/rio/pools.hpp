#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rio/common.hpp"
#include "rio/infer.hpp"
#include "rio/world.hpp"

namespace rio {

/// One forward draw plus its reverse reconstruction and all oracle scores.
struct Candidate {
  int64_t id = 0;        // enumeration order, ties everywhere break on this
  int64_t input_id = 0;  // corpus pair the candidate was drawn for
  Context context;
  Generation forward;
  Generation reverse;    // floored scores when the forward draw is empty
  double avg_mos = 0.0;  // mean of forward and reverse quality
};

enum class Label { desirable, undesirable };

inline const char* to_string(Label l) {
  return l == Label::desirable ? "desirable" : "undesirable";
}

struct PreferenceSample {
  Candidate cand;
  Label label = Label::undesirable;
  std::string policy;  // selection policy that placed the sample
};

struct PreferencePools {
  std::vector<PreferenceSample> pos;
  std::vector<PreferenceSample> neg;
};

struct PairedPreferenceSample {
  Context context;
  Candidate winner;
  Candidate loser;
  double mos_gap = 0.0;  // winner avg_mos minus loser avg_mos, always > 0
};

/// Draws k continuations per corpus pair from the sampler, runs reverse
/// inference on each non-empty one, and scores everything. Candidate ids are
/// the enumeration order; all randomness is derived from the master seed and
/// the candidate id, so the same call yields the same candidates bit for bit.
template <typename Sampler>
std::vector<Candidate> sample_candidates(const Sampler& sampler, const WorldParams& w,
                                         const std::vector<CorpusPair>& pairs, int k_per_input,
                                         const DecodeConfig& dc, uint64_t master_seed) {
  require(!pairs.empty(), ErrKind::precondition, "candidate sampling needs at least one input");
  require(k_per_input >= 1, ErrKind::precondition, "k_per_input must be >= 1");

  std::vector<Candidate> out;
  out.reserve(pairs.size() * static_cast<size_t>(k_per_input));
  int64_t id = 0;
  for (const CorpusPair& pr : pairs) {
    for (int j = 0; j < k_per_input; ++j, ++id) {
      Candidate c;
      c.id = id;
      c.input_id = pr.id;
      c.context = pr.context;
      uint64_t fwd_seed = derive_seed(master_seed, "pool.forward", static_cast<uint64_t>(id));
      c.forward = zero_shot(sampler, w, pr.context, dc, fwd_seed);
      uint64_t rev_seed = derive_seed(master_seed, "pool.reverse", static_cast<uint64_t>(id));
      if (c.forward.degenerate) {
        // Nothing to feed back as a prompt; the reconstruction gets the same
        // floored scores an unusable generation would earn.
        c.reverse.degenerate = true;
        c.reverse.scores.mos = 1.0;
        c.reverse.scores.wer = 100.0;
        c.reverse.scores.sim = 0.0;
        c.reverse.seed = rev_seed;
      } else {
        c.reverse = reverse_infer(sampler, w, pr.context, c.forward.tokens, dc, rev_seed);
      }
      c.avg_mos = 0.5 * (c.forward.scores.mos + c.reverse.scores.mos);
      out.push_back(std::move(c));
    }
  }
  return out;
}

namespace detail {

inline std::vector<const Candidate*> rank_candidates(const std::vector<Candidate>& cands,
                                                     bool use_reverse) {
  std::vector<const Candidate*> order;
  order.reserve(cands.size());
  for (const Candidate& c : cands) order.push_back(&c);
  std::stable_sort(order.begin(), order.end(),
                   [use_reverse](const Candidate* a, const Candidate* b) {
                     double ka = use_reverse ? a->avg_mos : a->forward.scores.mos;
                     double kb = use_reverse ? b->avg_mos : b->forward.scores.mos;
                     if (ka != kb) return ka > kb;
                     if (a->forward.scores.mos != b->forward.scores.mos)
                       return a->forward.scores.mos > b->forward.scores.mos;
                     return a->id < b->id;
                   });
  return order;
}

inline PreferencePools select_pools(const std::vector<Candidate>& cands, int n_pos, int n_neg,
                                    double wer_threshold, bool filter_first,
                                    bool neg_require_reverse_fail, bool use_reverse,
                                    const std::string& policy) {
  require(n_pos >= 1 && n_neg >= 1, ErrKind::precondition, "pool sizes must be >= 1");
  require(static_cast<size_t>(n_pos) + static_cast<size_t>(n_neg) <= cands.size(),
          ErrKind::precondition, "n_pos + n_neg exceeds the number of candidates");

  auto pos_ok = [&](const Candidate* c) {
    return !c->forward.degenerate && c->forward.scores.wer < wer_threshold;
  };
  auto neg_ok = [&](const Candidate* c) {
    if (c->forward.scores.wer <= wer_threshold) return false;
    if (neg_require_reverse_fail)
      return c->reverse.degenerate || c->reverse.scores.wer > wer_threshold;
    return true;
  };

  std::vector<const Candidate*> order = rank_candidates(cands, use_reverse);
  PreferencePools pools;
  if (filter_first) {
    std::vector<const Candidate*> good, bad;
    for (const Candidate* c : order) {
      if (pos_ok(c)) good.push_back(c);
      if (neg_ok(c)) bad.push_back(c);
    }
    for (size_t i = 0; i < good.size() && i < static_cast<size_t>(n_pos); ++i)
      pools.pos.push_back({*good[i], Label::desirable, policy});
    for (size_t i = 0; i < static_cast<size_t>(n_neg) && i < bad.size(); ++i)
      pools.neg.push_back({*bad[bad.size() - 1 - i], Label::undesirable, policy});
    std::reverse(pools.neg.begin(), pools.neg.end());
  } else {
    for (size_t i = 0; i < static_cast<size_t>(n_pos); ++i)
      if (pos_ok(order[i])) pools.pos.push_back({*order[i], Label::desirable, policy});
    for (size_t i = order.size() - static_cast<size_t>(n_neg); i < order.size(); ++i)
      if (neg_ok(order[i])) pools.neg.push_back({*order[i], Label::undesirable, policy});
  }

  if (pools.pos.empty())
    fail(ErrKind::empty_pool, "desirable pool is empty after ranking and filtering");
  if (pools.neg.empty())
    fail(ErrKind::empty_pool, "undesirable pool is empty after ranking and filtering");
  return pools;
}

}  // namespace detail

/// Reverse-informed selection: rank by the average of forward and reverse
/// quality, take the top and bottom slices, then keep only entries whose
/// forward transcription error is strictly below (desirable) or strictly
/// above (undesirable) the threshold. `filter_first` flips the order of the
/// slice and the filter.
inline PreferencePools select_rio(const std::vector<Candidate>& cands, int n_pos, int n_neg,
                                  double wer_threshold, bool filter_first = false,
                                  bool neg_require_reverse_fail = false) {
  return detail::select_pools(cands, n_pos, n_neg, wer_threshold, filter_first,
                              neg_require_reverse_fail, /*use_reverse=*/true, "rio");
}

/// Ablation: identical machinery but ranking ignores the reverse pass.
inline PreferencePools select_forward_only(const std::vector<Candidate>& cands, int n_pos,
                                           int n_neg, double wer_threshold,
                                           bool filter_first = false) {
  return detail::select_pools(cands, n_pos, n_neg, wer_threshold, filter_first,
                              /*neg_require_reverse_fail=*/false,
                              /*use_reverse=*/false, "forward_only");
}

/// Pairs the best and worst candidate per input context by average quality.
/// A pair is kept only when the winner's margin is strictly positive and
/// strictly exceeds min_gap; exact ties never form a pair even at min_gap 0.
inline std::vector<PairedPreferenceSample> select_dpo_pairs(const std::vector<Candidate>& cands,
                                                            double min_gap = 2.0) {
  require(min_gap >= 0.0, ErrKind::precondition, "min_gap must be >= 0");
  std::map<int64_t, std::vector<const Candidate*>> groups;
  for (const Candidate& c : cands) groups[c.input_id].push_back(&c);
  for (const auto& [input, g] : groups)
    require(g.size() >= 2, ErrKind::precondition,
            "pairing needs at least two candidates per input (input " + std::to_string(input) +
                " has " + std::to_string(g.size()) + ")");

  auto better = [](const Candidate* a, const Candidate* b) {
    if (a->avg_mos != b->avg_mos) return a->avg_mos > b->avg_mos;
    if (a->forward.scores.mos != b->forward.scores.mos)
      return a->forward.scores.mos > b->forward.scores.mos;
    return a->id < b->id;
  };

  std::vector<PairedPreferenceSample> pairs;
  for (auto& [input, g] : groups) {
    std::stable_sort(g.begin(), g.end(), better);
    const Candidate* w = g.front();
    const Candidate* l = g.back();
    double gap = w->avg_mos - l->avg_mos;
    if (gap > 0.0 && gap > min_gap) {
      PairedPreferenceSample ps;
      ps.context = w->context;
      ps.winner = *w;
      ps.loser = *l;
      ps.mos_gap = gap;
      pairs.push_back(std::move(ps));
    }
  }
  if (pairs.empty())
    fail(ErrKind::empty_pool, "paired pool is empty: no input had a quality gap above min_gap");
  return pairs;
}

}  // namespace rio
