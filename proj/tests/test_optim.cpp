#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rio/optim.hpp"
#include "rio/train.hpp"

using namespace rio;

namespace {

WorldParams tiny_world() {
  WorldParams w;
  w.train_len_min = 4;
  w.train_len_max = 10;
  w.eval_len_min = 6;
  w.eval_len_max = 12;
  return w;
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.d_model = 8;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_ff = 16;
  mc.max_seq = 96;
  return mc;
}

struct Fixture {
  WorldParams w = tiny_world();
  Model theta;
  Model ref;
  std::vector<Candidate> cands;

  explicit Fixture(uint64_t theta_seed = 2, int n_inputs = 4, int k = 2)
      : theta(tiny_world().vocab(), tiny_model()), ref(tiny_world().vocab(), tiny_model()) {
    ref.init(1);
    theta.init(theta_seed);
    auto pairs = gen_corpus(w, n_inputs, 17, Split::pool);
    ModelSampler ms(ref);
    DecodeConfig dc;
    dc.max_len = 12;  // within the field slot, so reverse prompts always fit
    cands = sample_candidates(ms, w, pairs, k, dc, 55);
  }

  // Labels assigned by rank, so pools are never empty regardless of scores.
  PreferencePools halves() const {
    auto order = cands;
    std::stable_sort(order.begin(), order.end(),
                     [](const Candidate& a, const Candidate& b) { return a.avg_mos > b.avg_mos; });
    PreferencePools p;
    for (size_t i = 0; i < order.size(); ++i) {
      PreferenceSample s;
      s.cand = order[i];
      s.label = i < order.size() / 2 ? Label::desirable : Label::undesirable;
      s.policy = "rio";
      (i < order.size() / 2 ? p.pos : p.neg).push_back(std::move(s));
    }
    return p;
  }

  std::vector<const PreferenceSample*> batch_of(const PreferencePools& p) const {
    std::vector<const PreferenceSample*> b;
    for (const auto& s : p.pos) b.push_back(&s);
    for (const auto& s : p.neg) b.push_back(&s);
    return b;
  }

  std::vector<PairedPreferenceSample> make_pairs(double force_gap = -1.0) const {
    std::vector<PairedPreferenceSample> out;
    for (size_t i = 0; i + 1 < cands.size(); i += 2) {
      PairedPreferenceSample p;
      const Candidate& a = cands[i];
      const Candidate& b = cands[i + 1];
      p.context = a.context;
      p.winner = a.avg_mos >= b.avg_mos ? a : b;
      p.loser = a.avg_mos >= b.avg_mos ? b : a;
      p.mos_gap = force_gap > 0 ? force_gap : std::max(p.winner.avg_mos - p.loser.avg_mos, 0.5);
      out.push_back(std::move(p));
    }
    return out;
  }
};

}  // namespace

TEST_CASE("at the reference point the pool loss is exactly one half") {
  Fixture f;
  PreferencePools pools = f.halves();
  auto batch = f.batch_of(pools);
  LossOptions opts;
  BatchDiagnostics d = rio_loss(f.ref, f.ref, batch, opts);
  REQUIRE(std::abs(d.loss - 0.5) < 1e-12);
  REQUIRE(d.z == 0.0);
  for (double v : d.v) REQUIRE(std::abs(v - 0.5) < 1e-12);
}

TEST_CASE("at the reference point the paired loss is exactly log 2") {
  Fixture f;
  auto pairs = f.make_pairs();
  std::vector<const PairedPreferenceSample*> batch;
  for (const auto& p : pairs) batch.push_back(&p);
  LossOptions opts;
  BatchDiagnostics d = dpo_loss(f.ref, f.ref, batch, opts);
  REQUIRE(std::abs(d.loss - std::log(2.0)) < 1e-12);
}

TEST_CASE("the gap-offset paired loss at the reference point depends only on the gap") {
  Fixture f;
  auto pairs = f.make_pairs(/*force_gap=*/2.0);
  std::vector<const PairedPreferenceSample*> batch;
  for (const auto& p : pairs) batch.push_back(&p);
  LossOptions opts;  // alpha = 1
  BatchDiagnostics d = odpo_loss(f.ref, f.ref, batch, opts);
  // -log(sigmoid(-2)) = log(1 + e^2)
  REQUIRE(std::abs(d.loss - std::log1p(std::exp(2.0))) < 1e-12);
}

TEST_CASE("preference scores stay strictly inside the unit interval") {
  Fixture f(9);
  PreferencePools pools = f.halves();
  auto batch = f.batch_of(pools);
  LossOptions opts;
  BatchDiagnostics d = rio_loss(f.theta, f.ref, batch, opts);
  REQUIRE(d.v.size() == batch.size());
  double mean = 0.0;
  for (double v : d.v) {
    REQUIRE(v > 0.0);
    REQUIRE(v < 1.0);
    mean += (1.0 - v) / d.v.size();
  }
  REQUIRE(std::abs(d.loss - mean) < 1e-14);
  REQUIRE(d.n_pos + d.n_neg == static_cast<int>(batch.size()));
}

TEST_CASE("the reference point is an estimate, not a gradient path") {
  Fixture f(9);
  PreferencePools pools = f.halves();
  auto batch = f.batch_of(pools);

  LossOptions floating;
  std::vector<double> g1(f.theta.n_params(), 0.0);
  BatchDiagnostics d1 = rio_loss(f.theta, f.ref, batch, floating, &g1);

  LossOptions pinned;
  pinned.fixed_z = d1.z;
  std::vector<double> g2(f.theta.n_params(), 0.0);
  BatchDiagnostics d2 = rio_loss(f.theta, f.ref, batch, pinned, &g2);

  REQUIRE(d1.loss == d2.loss);
  REQUIRE(d1.z == d2.z);
  REQUIRE(g1 == g2);  // bitwise: substituting the constant changes nothing
}

TEST_CASE("the reference point clamps at zero from below") {
  Fixture f(9);
  PreferencePools pools = f.halves();
  auto batch = f.batch_of(pools);
  LossOptions opts;

  double raw = 0.0;
  for (const PreferenceSample* s : batch) {
    LogProbTrace lt = log_likelihood(f.theta, s->cand.context, s->cand.forward.tokens);
    LogProbTrace lr = log_likelihood(f.ref, s->cand.context, s->cand.forward.tokens);
    raw += (lt.total - lr.total) / static_cast<double>(batch.size());
  }
  double z = z_reference(f.theta, f.ref, batch, opts);
  REQUIRE(z == std::max(0.0, raw));
  REQUIRE(z_reference(f.ref, f.ref, batch, opts) == 0.0);
}

TEST_CASE("the shifted-completion estimator is a distinct ablation") {
  Fixture f(9);
  PreferencePools pools = f.halves();
  auto batch = f.batch_of(pools);

  LossOptions matched;
  LossOptions shifted;
  shifted.mismatched_reference = true;
  // The candidates were drawn from f.ref, so scoring with the roles swapped
  // keeps the mean log-ratio positive and both estimates clear of the clamp.
  double zm = z_reference(f.ref, f.theta, batch, matched);
  double zs = z_reference(f.ref, f.theta, batch, shifted);
  REQUIRE(zm > 0.0);
  REQUIRE(zs > 0.0);
  REQUIRE(zm != zs);

  std::vector<const PreferenceSample*> one{batch[0]};
  REQUIRE(z_reference(f.ref, f.theta, one, matched) ==
          z_reference(f.ref, f.theta, one, shifted));
}

TEST_CASE("implicit reward is the scaled log-probability ratio") {
  Fixture f(9);
  const Candidate& c = f.cands[0];
  RewardBreakdown rb = implicit_reward(f.theta, f.ref, c.context, c.forward.tokens, 0.25);
  LogProbTrace lt = log_likelihood(f.theta, c.context, c.forward.tokens);
  LogProbTrace lr = log_likelihood(f.ref, c.context, c.forward.tokens);
  REQUIRE(rb.logp_theta == lt.total);
  REQUIRE(rb.logp_ref == lr.total);
  REQUIRE(rb.r == 0.25 * (lt.total - lr.total));

  RewardBreakdown same = implicit_reward(f.ref, f.ref, c.context, c.forward.tokens, 0.25);
  REQUIRE(same.r == 0.0);

  REQUIRE_THROWS_AS(implicit_reward(f.theta, f.ref, c.context, c.forward.tokens, 0.0), RioError);
}

TEST_CASE("analytic gradients of all three losses match finite differences") {
  Fixture f(9, 2, 2);
  PreferencePools pools = f.halves();
  auto batch = f.batch_of(pools);
  auto pairs = f.make_pairs();
  std::vector<const PairedPreferenceSample*> pbatch;
  for (const auto& p : pairs) pbatch.push_back(&p);

  SECTION("pool loss, pinned reference point") {
    LossOptions opts;
    opts.fixed_z = 0.3;
    LossFn fn = [&](const Model& m, std::vector<double>* g) {
      return rio_loss(m, f.ref, batch, opts, g).loss;
    };
    REQUIRE(grad_check(f.theta, fn, 1e-4, 40, 7) < 1e-3);
  }
  SECTION("pool loss, per-token normalization") {
    LossOptions opts;
    opts.fixed_z = 0.1;
    opts.length_normalize = true;
    LossFn fn = [&](const Model& m, std::vector<double>* g) {
      return rio_loss(m, f.ref, batch, opts, g).loss;
    };
    REQUIRE(grad_check(f.theta, fn, 1e-4, 40, 8) < 1e-3);
  }
  SECTION("paired loss") {
    LossOptions opts;
    LossFn fn = [&](const Model& m, std::vector<double>* g) {
      return dpo_loss(m, f.ref, pbatch, opts, g).loss;
    };
    REQUIRE(grad_check(f.theta, fn, 1e-4, 40, 9) < 1e-3);
  }
  SECTION("gap-offset paired loss") {
    LossOptions opts;
    opts.alpha = 0.7;
    LossFn fn = [&](const Model& m, std::vector<double>* g) {
      return odpo_loss(m, f.ref, pbatch, opts, g).loss;
    };
    REQUIRE(grad_check(f.theta, fn, 1e-4, 40, 10) < 1e-3);
  }
}

TEST_CASE("optimization runs deterministically and logs every step") {
  Fixture f(9);
  PreferencePools pools = f.halves();
  OptimConfig oc;
  oc.method = "rio";
  oc.epochs = 2;
  oc.batch_size = 3;
  oc.lr = 1e-3;

  Model t1 = f.theta;
  auto log1 = optimize_pools(t1, f.ref, pools, oc, 42);
  size_t per_epoch = (pools.pos.size() + pools.neg.size() + oc.batch_size - 1) / oc.batch_size;
  REQUIRE(log1.size() == per_epoch * 2);
  for (size_t i = 0; i < log1.size(); ++i) {
    REQUIRE(log1[i].step == static_cast<int>(i) + 1);
    REQUIRE(std::isfinite(log1[i].loss));
    REQUIRE(log1[i].z >= 0.0);
    REQUIRE(log1[i].grad_norm > 0.0);
  }

  Model t2 = f.theta;
  auto log2 = optimize_pools(t2, f.ref, pools, oc, 42);
  REQUIRE(t1.params_hash() == t2.params_hash());
  REQUIRE(log1.size() == log2.size());
  for (size_t i = 0; i < log1.size(); ++i) REQUIRE(log1[i].loss == log2[i].loss);

  Model t3 = f.theta;
  optimize_pools(t3, f.ref, pools, oc, 43);
  REQUIRE(t1.params_hash() != t3.params_hash());
}

TEST_CASE("optimizers reject data of the wrong shape") {
  Fixture f;
  PreferencePools pools = f.halves();
  auto pairs = f.make_pairs();
  OptimConfig oc;

  oc.method = "dpo";
  Model t = f.theta;
  try {
    optimize_pools(t, f.ref, pools, oc, 1);
    FAIL("expected an error");
  } catch (const RioError& e) {
    REQUIRE(e.kind() == ErrKind::config_mismatch);
  }
  oc.method = "rio";
  try {
    optimize_pairs(t, f.ref, pairs, oc, 1);
    FAIL("expected an error");
  } catch (const RioError& e) {
    REQUIRE(e.kind() == ErrKind::config_mismatch);
  }
  oc.method = "odpo";
  auto log = optimize_pairs(t, f.ref, pairs, oc, 1);
  REQUIRE_FALSE(log.empty());
}

TEST_CASE("training separates the pools' implicit rewards") {
  Fixture f(2, 6, 2);
  PreferencePools pools = f.halves();
  OptimConfig oc;
  oc.method = "rio";
  oc.epochs = 40;
  oc.batch_size = 4;
  oc.lr = 3e-3;

  Model t = f.ref;  // start from the reference, as the pipeline does
  optimize_pools(t, f.ref, pools, oc, 11);

  double mean_pos = 0.0, mean_neg = 0.0;
  for (const auto& s : pools.pos)
    mean_pos += implicit_reward(t, f.ref, s.cand.context, s.cand.forward.tokens, oc.beta).r /
                pools.pos.size();
  for (const auto& s : pools.neg)
    mean_neg += implicit_reward(t, f.ref, s.cand.context, s.cand.forward.tokens, oc.beta).r /
                pools.neg.size();
  REQUIRE(mean_pos >= 0.0);
  REQUIRE(mean_neg <= 0.0);
  REQUIRE(mean_pos > mean_neg);
}

TEST_CASE("a missing reference cache entry is a hard error") {
  Fixture f(9, 2, 1);
  PreferencePools pools = f.halves();
  auto batch = f.batch_of(pools);
  std::unordered_map<int64_t, double> cache;  // deliberately empty
  LossOptions opts;
  opts.ref_cache = &cache;
  try {
    rio_loss(f.theta, f.ref, batch, opts);
    FAIL("expected an error");
  } catch (const RioError& e) {
    REQUIRE(e.kind() == ErrKind::missing_input);
  }
}
