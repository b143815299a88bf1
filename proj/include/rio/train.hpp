#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rio/adamw.hpp"
#include "rio/model.hpp"
#include "rio/world.hpp"

namespace rio {

struct PretrainConfig {
  int steps = 3000;
  double lr = 1e-3;
  int batch_size = 8;
  double weight_decay = 0.01;
};

/// Mean NLL over all scored tokens of a batch of (context, target) pairs.
/// Scored tokens are every acoustic token the head can predict: the
/// enrollment codes after the first (the first fixes the voice and carries
/// irreducible entropy), then the full target plus end marker. Supervising
/// the enrollment gives the code-binding circuit a dense short-range signal
/// it would otherwise have to discover from the target loss alone.
inline double supervised_loss(const Model& m, const std::vector<const CorpusPair*>& batch,
                              std::vector<double>* grad) {
  const Vocab& v = m.vocab();
  // enrollment codes start right after BOS and the first padded field
  const int enroll_base = 1 + (v.field_slot + 1);
  size_t total_scored = 0;
  for (const CorpusPair* p : batch) {
    total_scored += p->target_speech.size() + 1;
    if (p->context.prompt_speech.size() > 1) total_scored += p->context.prompt_speech.size() - 1;
  }
  require(total_scored > 0, ErrKind::precondition, "empty batch");
  double nll = 0.0;
  for (const CorpusPair* p : batch) {
    std::vector<int> prompt = build_prompt(v, p->context);
    std::vector<int> seq = build_training_sequence(v, p->context, p->target_speech);
    std::vector<ScoredPosition> scored;
    const auto& ps = p->context.prompt_speech;
    for (size_t i = 1; i < ps.size(); ++i)
      scored.push_back({enroll_base + static_cast<int>(i) - 1, v.output_index(ps[i])});
    for (ScoredPosition sp : target_scored_positions(v, prompt.size(), p->target_speech))
      scored.push_back(sp);
    Model::Cache cache;
    std::vector<double> logp = m.forward(seq, scored, cache);
    for (double lp : logp) nll -= lp;
    if (grad) {
      std::vector<double> coeff(scored.size(), 1.0 / static_cast<double>(total_scored));
      m.backward(cache, scored, coeff, *grad);
    }
  }
  return nll / static_cast<double>(total_scored);
}

/// Teacher-forced pretraining on clean renderings. Deterministic per seed;
/// raises a divergence error if the loss stays above 10x its initial value
/// for 50 consecutive steps.
inline std::vector<double> pretrain(Model& m, const std::vector<CorpusPair>& corpus,
                                    const PretrainConfig& pc, uint64_t seed) {
  require(!corpus.empty(), ErrKind::precondition, "empty pretraining corpus");
  require(pc.steps >= 0, ErrKind::precondition, "negative step count");
  require(pc.batch_size >= 1, ErrKind::precondition, "batch size must be positive");
  std::vector<double> curve;
  if (pc.steps == 0) return curve;
  curve.reserve(static_cast<size_t>(pc.steps));

  AdamWConfig ac;
  ac.lr = pc.lr;
  ac.weight_decay = pc.weight_decay;
  AdamW opt(m.n_params(), ac);
  Rng rng(derive_seed(seed, "pretrain"));
  std::vector<double> grad(m.n_params());

  double initial = 0.0;
  int high_streak = 0;
  for (int step = 0; step < pc.steps; ++step) {
    std::vector<const CorpusPair*> batch;
    batch.reserve(static_cast<size_t>(pc.batch_size));
    for (int b = 0; b < pc.batch_size; ++b) batch.push_back(&corpus[rng.below(corpus.size())]);
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = supervised_loss(m, batch, &grad);
    require(std::isfinite(loss), ErrKind::numerical,
            "non-finite pretraining loss at step " + std::to_string(step));
    curve.push_back(loss);
    if (step == 0) initial = loss;
    high_streak = loss > 10.0 * initial ? high_streak + 1 : 0;
    if (high_streak >= 50)
      fail(ErrKind::divergence,
           "loss exceeded 10x its initial value for 50 consecutive steps (step " +
               std::to_string(step) + ")");
    opt.step(m.params(), grad);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient verification.
// ---------------------------------------------------------------------------

/// Any differentiable objective over the model parameters: returns the loss
/// and, when grad is non-null, accumulates d(loss)/d(params) into it.
using LossFn = std::function<double(const Model&, std::vector<double>*)>;

/// Central-difference check of the analytic gradient on explicit coordinates.
/// Relative error is 0 by definition when both sides are below 1e-10.
inline double grad_check_at(Model& m, const LossFn& fn, double epsilon,
                            const std::vector<size_t>& coords) {
  require(epsilon >= 1e-6 && epsilon <= 1e-3, ErrKind::precondition,
          "epsilon out of the supported range [1e-6, 1e-3]");
  std::vector<double> grad(m.n_params(), 0.0);
  fn(m, &grad);
  double max_rel = 0.0;
  for (size_t c : coords) {
    require(c < m.n_params(), ErrKind::precondition, "coordinate out of range");
    const double saved = m.params()[c];
    m.params()[c] = saved + epsilon;
    double up = fn(m, nullptr);
    m.params()[c] = saved - epsilon;
    double down = fn(m, nullptr);
    m.params()[c] = saved;
    double numeric = (up - down) / (2.0 * epsilon);
    double analytic = grad[c];
    double rel;
    if (std::abs(analytic) < 1e-10 && std::abs(numeric) < 1e-10)
      rel = 0.0;
    else
      rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

/// Same check on `coords` uniformly random coordinates.
inline double grad_check(Model& m, const LossFn& fn, double epsilon, int coords, uint64_t seed) {
  require(coords >= 1, ErrKind::precondition, "need at least one coordinate");
  Rng rng(derive_seed(seed, "grad_check"));
  std::vector<size_t> cs;
  cs.reserve(static_cast<size_t>(coords));
  for (int i = 0; i < coords; ++i) cs.push_back(rng.below(m.n_params()));
  return grad_check_at(m, fn, epsilon, cs);
}

}  // namespace rio
