#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rio/adamw.hpp"
#include "rio/common.hpp"
#include "rio/config.hpp"
#include "rio/model.hpp"
#include "rio/pools.hpp"

namespace rio {

struct RewardBreakdown {
  double logp_theta = 0.0;
  double logp_ref = 0.0;
  double r = 0.0;
  double beta = 0.0;
};

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

/// -log(sigmoid(x)), computed without overflow on either tail.
inline double softplus_neg(double x) {
  if (x > 0.0) return std::log1p(std::exp(-x));
  return -x + std::log1p(std::exp(x));
}

/// Sequence-level implicit reward: beta times the log-probability ratio of
/// the completion under the policy and the frozen reference, summed over the
/// completion including the end marker. With length_normalize the sum is
/// divided by the number of scored tokens (ablation; off by default).
inline RewardBreakdown implicit_reward(const Model& theta, const Model& ref, const Context& ctx,
                                       const std::vector<int>& completion, double beta,
                                       bool length_normalize = false) {
  require(beta > 0.0, ErrKind::precondition, "beta must be > 0");
  RewardBreakdown rb;
  rb.beta = beta;
  LogProbTrace lt = log_likelihood(theta, ctx, completion);
  LogProbTrace lr = log_likelihood(ref, ctx, completion);
  double scale = length_normalize ? 1.0 / static_cast<double>(lt.per_token.size()) : 1.0;
  rb.logp_theta = lt.total * scale;
  rb.logp_ref = lr.total * scale;
  rb.r = beta * (rb.logp_theta - rb.logp_ref);
  return rb;
}

struct LossOptions {
  double beta = 0.1;
  double alpha = 1.0;                 // gap offset scale (paired loss with offset only)
  bool length_normalize = false;
  bool mismatched_reference = false;  // estimate z from cyclically shifted completions
  std::optional<double> fixed_z;      // pin z to a constant (finite-difference harness)
  // Optional cache of reference log-probs keyed by candidate id. The
  // reference is frozen, so these never change during a run.
  const std::unordered_map<int64_t, double>* ref_cache = nullptr;
};

struct BatchDiagnostics {
  double loss = 0.0;
  double z = 0.0;                 // reference point actually used by the batch
  std::vector<double> v;          // per-sample preference score, each in (0,1)
  double mean_r_pos = 0.0;        // NaN when the batch has no such samples
  double mean_r_neg = 0.0;
  int n_pos = 0;
  int n_neg = 0;
};

namespace detail {

struct ScoredCompletion {
  Model::Cache cache;                     // policy forward pass, kept for backward
  std::vector<ScoredPosition> scored;
  double logp_theta = 0.0;         // summed over completion + end marker
  double logp_ref = 0.0;
  int n_tokens = 0;                // scored positions (completion + end marker)
};

template <typename RefLogp>
ScoredCompletion run_completion(const Model& theta, RefLogp&& ref_logp, const Context& ctx,
                                const std::vector<int>& completion) {
  const Vocab& v = theta.vocab();
  std::vector<int> prompt = build_prompt(v, ctx);
  std::vector<int> seq = prompt;
  for (int t : completion) {
    require(v.is_acoustic(t), ErrKind::precondition, "completion tokens must be acoustic");
    seq.push_back(t);
  }
  ScoredCompletion sc;
  sc.scored = target_scored_positions(v, static_cast<int>(prompt.size()), completion);
  std::vector<double> lp = theta.forward(seq, sc.scored, sc.cache);
  for (double x : lp) sc.logp_theta += x;
  sc.logp_ref = ref_logp(ctx, completion);
  sc.n_tokens = static_cast<int>(sc.scored.size());
  return sc;
}

inline double plain_ref_logp(const Model& ref, const Context& ctx,
                             const std::vector<int>& completion) {
  return log_likelihood(ref, ctx, completion).total;
}

}  // namespace detail

/// Batch estimate of the policy/reference divergence used as the reference
/// point of the preference score: the mean matched-completion log-ratio,
/// clamped at zero. It is a measurement, not a training signal — gradients
/// never flow through it.
inline double z_reference(const Model& theta, const Model& ref,
                          const std::vector<const PreferenceSample*>& batch,
                          const LossOptions& opts) {
  require(!batch.empty(), ErrKind::precondition, "z estimate needs a non-empty batch");
  double acc = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    const PreferenceSample& s = *batch[i];
    const Candidate& donor = opts.mismatched_reference
                                 ? batch[(i + 1) % batch.size()]->cand
                                 : s.cand;
    LogProbTrace lt = log_likelihood(theta, s.cand.context, donor.forward.tokens);
    LogProbTrace lr = log_likelihood(ref, s.cand.context, donor.forward.tokens);
    double scale =
        opts.length_normalize ? 1.0 / static_cast<double>(lt.per_token.size()) : 1.0;
    acc += (lt.total - lr.total) * scale;
  }
  double z = acc / static_cast<double>(batch.size());
  return z < 0.0 ? 0.0 : z;
}

/// Preference score of one sample given its reward and the reference point.
inline double v_score(double r, double z, Label label) {
  return label == Label::desirable ? sigmoid(r - z) : sigmoid(z - r);
}

/// Pool-based preference loss: mean over the batch of (1 - v). Desirable
/// samples are pushed above the reference point, undesirable ones below it.
/// The reference point z is treated as a constant inside the batch.
inline BatchDiagnostics rio_loss(const Model& theta, const Model& ref,
                                 const std::vector<const PreferenceSample*>& batch,
                                 const LossOptions& opts, std::vector<double>* grad = nullptr) {
  require(!batch.empty(), ErrKind::precondition, "loss needs a non-empty batch");
  require(opts.beta > 0.0, ErrKind::precondition, "beta must be > 0");

  // One policy forward pass per sample, kept around for the backward pass and
  // reused by the matched-completion z estimate.
  std::vector<detail::ScoredCompletion> runs;
  runs.reserve(batch.size());
  std::vector<double> scales(batch.size()), rewards(batch.size());
  for (const PreferenceSample* sp : batch) {
    const PreferenceSample& s = *sp;
    double lref;
    if (opts.ref_cache) {
      auto it = opts.ref_cache->find(s.cand.id);
      require(it != opts.ref_cache->end(), ErrKind::missing_input,
              "reference log-prob cache is missing candidate " + std::to_string(s.cand.id));
      lref = it->second;
    } else {
      lref = detail::plain_ref_logp(ref, s.cand.context, s.cand.forward.tokens);
    }
    auto cached_ref = [&](const Context&, const std::vector<int>&) { return lref; };
    runs.push_back(
        detail::run_completion(theta, cached_ref, s.cand.context, s.cand.forward.tokens));
  }
  for (size_t i = 0; i < batch.size(); ++i) {
    scales[i] = opts.length_normalize ? 1.0 / static_cast<double>(runs[i].n_tokens) : 1.0;
    rewards[i] = opts.beta * (runs[i].logp_theta - runs[i].logp_ref) * scales[i];
  }

  BatchDiagnostics d;
  if (opts.fixed_z) {
    d.z = *opts.fixed_z;
  } else if (opts.mismatched_reference) {
    d.z = z_reference(theta, ref, batch, opts);
  } else {
    double acc = 0.0;
    for (size_t i = 0; i < batch.size(); ++i)
      acc += (runs[i].logp_theta - runs[i].logp_ref) * scales[i];
    double z = acc / static_cast<double>(batch.size());
    d.z = z < 0.0 ? 0.0 : z;
  }

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double sum_r_pos = 0.0, sum_r_neg = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    const PreferenceSample& s = *batch[i];
    double r = rewards[i];
    double x = s.label == Label::desirable ? r - d.z : d.z - r;
    double v = sigmoid(x);
    d.v.push_back(v);
    d.loss += (1.0 - v) * inv_b;
    if (s.label == Label::desirable) {
      d.n_pos++;
      sum_r_pos += r;
    } else {
      d.n_neg++;
      sum_r_neg += r;
    }
    if (grad) {
      double sign = s.label == Label::desirable ? 1.0 : -1.0;
      // d(loss)/d(logp_theta), identical for every scored position: the
      // reward is linear in the summed log-prob, and z is held constant.
      double g = -sign * v * (1.0 - v) * opts.beta * scales[i] * inv_b;
      std::vector<double> coeff(runs[i].scored.size(), -g);
      theta.backward(runs[i].cache, runs[i].scored, coeff, *grad);
    }
  }
  d.mean_r_pos = d.n_pos ? sum_r_pos / d.n_pos : std::numeric_limits<double>::quiet_NaN();
  d.mean_r_neg = d.n_neg ? sum_r_neg / d.n_neg : std::numeric_limits<double>::quiet_NaN();
  return d;
}

/// Paired preference loss: mean over pairs of -log(sigmoid(r_w - r_l)).
/// With use_gap_offset the margin is shifted by alpha times the observed
/// quality gap, demanding a wider separation for clearly better winners.
inline BatchDiagnostics paired_loss(const Model& theta, const Model& ref,
                                    const std::vector<const PairedPreferenceSample*>& batch,
                                    const LossOptions& opts, bool use_gap_offset,
                                    std::vector<double>* grad = nullptr) {
  require(!batch.empty(), ErrKind::precondition, "loss needs a non-empty batch");
  require(opts.beta > 0.0, ErrKind::precondition, "beta must be > 0");

  BatchDiagnostics d;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double sum_r_pos = 0.0, sum_r_neg = 0.0;
  for (const PairedPreferenceSample* pp : batch) {
    const PairedPreferenceSample& p = *pp;
    auto ref_for = [&](const Candidate& c) {
      if (opts.ref_cache) {
        auto it = opts.ref_cache->find(c.id);
        require(it != opts.ref_cache->end(), ErrKind::missing_input,
                "reference log-prob cache is missing candidate " + std::to_string(c.id));
        return it->second;
      }
      return detail::plain_ref_logp(ref, p.context, c.forward.tokens);
    };
    double lref_w = ref_for(p.winner);
    double lref_l = ref_for(p.loser);
    auto use_w = [&](const Context&, const std::vector<int>&) { return lref_w; };
    auto use_l = [&](const Context&, const std::vector<int>&) { return lref_l; };
    detail::ScoredCompletion scw =
        detail::run_completion(theta, use_w, p.context, p.winner.forward.tokens);
    detail::ScoredCompletion scl =
        detail::run_completion(theta, use_l, p.context, p.loser.forward.tokens);
    double scale_w = opts.length_normalize ? 1.0 / static_cast<double>(scw.n_tokens) : 1.0;
    double scale_l = opts.length_normalize ? 1.0 / static_cast<double>(scl.n_tokens) : 1.0;
    double rw = opts.beta * (scw.logp_theta - scw.logp_ref) * scale_w;
    double rl = opts.beta * (scl.logp_theta - scl.logp_ref) * scale_l;
    double h = rw - rl - (use_gap_offset ? opts.alpha * p.mos_gap : 0.0);
    d.loss += softplus_neg(h) * inv_b;
    d.v.push_back(sigmoid(h));
    d.n_pos++;
    d.n_neg++;
    sum_r_pos += rw;
    sum_r_neg += rl;
    if (grad) {
      double dh = sigmoid(h) - 1.0;  // d(-log sigmoid(h)) / dh
      double gw = dh * opts.beta * scale_w * inv_b;
      double gl = -dh * opts.beta * scale_l * inv_b;
      std::vector<double> cw(scw.scored.size(), -gw);
      std::vector<double> cl(scl.scored.size(), -gl);
      theta.backward(scw.cache, scw.scored, cw, *grad);
      theta.backward(scl.cache, scl.scored, cl, *grad);
    }
  }
  d.mean_r_pos = sum_r_pos * inv_b;
  d.mean_r_neg = sum_r_neg * inv_b;
  return d;
}

inline BatchDiagnostics dpo_loss(const Model& theta, const Model& ref,
                                 const std::vector<const PairedPreferenceSample*>& batch,
                                 const LossOptions& opts, std::vector<double>* grad = nullptr) {
  return paired_loss(theta, ref, batch, opts, /*use_gap_offset=*/false, grad);
}

inline BatchDiagnostics odpo_loss(const Model& theta, const Model& ref,
                                  const std::vector<const PairedPreferenceSample*>& batch,
                                  const LossOptions& opts, std::vector<double>* grad = nullptr) {
  return paired_loss(theta, ref, batch, opts, /*use_gap_offset=*/true, grad);
}

struct StepRow {
  int step = 0;
  double loss = 0.0;
  double z = 0.0;
  double mean_r_pos = 0.0;
  double mean_r_neg = 0.0;
  double grad_norm = 0.0;
};

namespace detail {

inline double l2_norm(const std::vector<double>& g) {
  double acc = 0.0;
  for (double x : g) acc += x * x;
  return std::sqrt(acc);
}

template <typename Item, typename BatchLoss>
std::vector<StepRow> run_optimizer(Model& theta, const std::vector<const Item*>& data,
                                   const OptimConfig& oc, uint64_t seed, BatchLoss&& batch_loss) {
  require(!data.empty(), ErrKind::precondition, "optimization needs data");
  require(oc.epochs >= 1, ErrKind::precondition, "epochs must be >= 1");
  require(oc.batch_size >= 1, ErrKind::precondition, "batch_size must be >= 1");
  require(oc.lr > 0.0, ErrKind::precondition, "learning rate must be > 0");

  AdamWConfig ac;
  ac.lr = oc.lr;
  ac.weight_decay = oc.weight_decay;
  AdamW opt(theta.n_params(), ac);

  Rng rng(derive_seed(seed, "optimize"));
  std::vector<const Item*> order = data;
  std::vector<double> grad(theta.n_params());
  std::vector<StepRow> log;
  double initial_loss = 0.0;
  int high_streak = 0;
  int step = 0;

  for (int epoch = 0; epoch < oc.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      uint64_t j = rng.below(i);
      std::swap(order[i - 1], order[j]);
    }
    for (size_t start = 0; start < order.size(); start += oc.batch_size) {
      size_t stop = std::min(order.size(), start + static_cast<size_t>(oc.batch_size));
      std::vector<const Item*> batch(order.begin() + start, order.begin() + stop);
      std::fill(grad.begin(), grad.end(), 0.0);
      BatchDiagnostics d = batch_loss(batch, &grad);
      require(std::isfinite(d.loss), ErrKind::numerical, "non-finite loss at step " +
                                                             std::to_string(step + 1));
      opt.step(theta.params(), grad);
      ++step;
      StepRow row;
      row.step = step;
      row.loss = d.loss;
      row.z = d.z;
      row.mean_r_pos = d.mean_r_pos;
      row.mean_r_neg = d.mean_r_neg;
      row.grad_norm = l2_norm(grad);
      log.push_back(row);

      if (step == 1) initial_loss = d.loss;
      if (d.loss > 10.0 * std::max(initial_loss, 1e-12))
        high_streak++;
      else
        high_streak = 0;
      require(high_streak < 50, ErrKind::divergence,
              "loss exceeded 10x its initial value for 50 consecutive steps");
    }
  }
  return log;
}

}  // namespace detail

/// Preference optimization from desirable/undesirable pools. The policy is
/// updated in place; the reference stays frozen and its per-candidate
/// log-probs are computed once up front.
inline std::vector<StepRow> optimize_pools(Model& theta, const Model& ref,
                                           const PreferencePools& pools, const OptimConfig& oc,
                                           uint64_t seed) {
  require(oc.method == "rio", ErrKind::config_mismatch,
          "pool-based optimization requires method 'rio', got '" + oc.method + "'");
  std::vector<const PreferenceSample*> data;
  for (const auto& s : pools.pos) data.push_back(&s);
  for (const auto& s : pools.neg) data.push_back(&s);

  std::unordered_map<int64_t, double> ref_cache;
  for (const PreferenceSample* s : data)
    ref_cache[s->cand.id] = detail::plain_ref_logp(ref, s->cand.context, s->cand.forward.tokens);

  LossOptions opts;
  opts.beta = oc.beta;
  opts.length_normalize = oc.length_normalize;
  opts.mismatched_reference = oc.mismatched_reference;
  opts.ref_cache = &ref_cache;

  return detail::run_optimizer<PreferenceSample>(
      theta, data, oc, seed,
      [&](const std::vector<const PreferenceSample*>& batch, std::vector<double>* grad) {
        return rio_loss(theta, ref, batch, opts, grad);
      });
}

/// Preference optimization from winner/loser pairs (plain or gap-offset).
inline std::vector<StepRow> optimize_pairs(Model& theta, const Model& ref,
                                           const std::vector<PairedPreferenceSample>& pairs,
                                           const OptimConfig& oc, uint64_t seed) {
  require(oc.method == "dpo" || oc.method == "odpo", ErrKind::config_mismatch,
          "paired optimization requires method 'dpo' or 'odpo', got '" + oc.method + "'");
  std::vector<const PairedPreferenceSample*> data;
  for (const auto& p : pairs) data.push_back(&p);

  std::unordered_map<int64_t, double> ref_cache;
  for (const PairedPreferenceSample* p : data) {
    ref_cache[p->winner.id] = detail::plain_ref_logp(ref, p->context, p->winner.forward.tokens);
    ref_cache[p->loser.id] = detail::plain_ref_logp(ref, p->context, p->loser.forward.tokens);
  }

  LossOptions opts;
  opts.beta = oc.beta;
  opts.alpha = oc.alpha;
  opts.length_normalize = oc.length_normalize;
  opts.ref_cache = &ref_cache;
  const bool gap = oc.method == "odpo";

  return detail::run_optimizer<PairedPreferenceSample>(
      theta, data, oc, seed,
      [&](const std::vector<const PairedPreferenceSample*>& batch, std::vector<double>* grad) {
        return paired_loss(theta, ref, batch, opts, gap, grad);
      });
}

}  // namespace rio
