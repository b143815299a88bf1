// Command-line front end for the preference-optimization laboratory.
//
// A run directory (--out) accumulates the pipeline's artifacts under fixed
// names: corpus.jsonl, model.ckpt, pools.jsonl, model_<method>.ckpt,
// train_log.csv, report.json. Every artifact embeds the configuration hash,
// the lineage hash, and the content hashes of the artifacts it consumed, and
// every stage is a pure function of (config, seed, inputs): rerunning a stage
// reproduces its outputs byte for byte.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "rio/config.hpp"
#include "rio/eval.hpp"
#include "rio/infer.hpp"
#include "rio/model.hpp"
#include "rio/optim.hpp"
#include "rio/pools.hpp"
#include "rio/serialize.hpp"
#include "rio/train.hpp"
#include "rio/world.hpp"

namespace fs = std::filesystem;
using namespace rio;

namespace {

int exit_code(ErrKind k) {
  switch (k) {
    case ErrKind::precondition: return 2;
    case ErrKind::missing_input: return 3;
    case ErrKind::config_mismatch: return 4;
    case ErrKind::divergence: return 5;
    case ErrKind::numerical: return 6;
    case ErrKind::empty_pool: return 7;
    case ErrKind::exhaustion: return 8;
    case ErrKind::degenerate_input: return 9;
    case ErrKind::incomparable: return 10;
    case ErrKind::size_limit: return 11;
    case ErrKind::undefined_ratio: return 12;
    case ErrKind::io: return 13;
  }
  return 1;
}

struct Workspace {
  ExperimentConfig cfg;
  std::string out = "run";

  std::string file(const std::string& name) const { return (fs::path(out) / name).string(); }

  std::string resolve(const std::string& path) const {
    if (path.find('/') != std::string::npos || fs::exists(path)) return path;
    return file(path);
  }

  void ensure_out() const { fs::create_directories(out); }

  uint64_t stage_seed(const char* stage, uint64_t round = 0) const {
    return derive_seed(cfg.master_seed, stage, round);
  }

  void check_lineage(const json& meta, const std::string& what) const {
    std::string want = hash_hex(lineage_hash(cfg));
    std::string got = meta.value("lineage_hash", "");
    require(got == want, ErrKind::config_mismatch,
            what + " was produced under a different lineage (" + got +
                ", current configuration gives " + want + ")");
  }
};

std::vector<CorpusPair> split_pairs(const std::vector<CorpusPair>& all, Split s,
                                    const char* what) {
  std::vector<CorpusPair> out;
  for (const CorpusPair& p : all)
    if (p.split == s) out.push_back(p);
  require(!out.empty(), ErrKind::missing_input,
          std::string("corpus contains no pairs in its ") + what + " split");
  return out;
}

// --- stage bodies (shared between individual commands and iterate) ----------

void do_gen_corpus(const Workspace& ws) {
  ws.ensure_out();
  validate(ws.cfg.world);
  auto pairs = gen_full_corpus(ws.cfg.world, ws.cfg.master_seed, ws.cfg.corpus.n_train,
                               ws.cfg.corpus.n_pool, ws.cfg.corpus.n_eval);
  save_corpus(ws.file("corpus.jsonl"), ws.cfg, pairs);
  std::printf("wrote %s: %zu pairs (train %d, pool %d, eval %d), config %s\n",
              ws.file("corpus.jsonl").c_str(), pairs.size(), ws.cfg.corpus.n_train,
              ws.cfg.corpus.n_pool, ws.cfg.corpus.n_eval,
              hash_hex(config_hash(ws.cfg)).c_str());
}

void do_pretrain(const Workspace& ws) {
  ws.ensure_out();
  std::string corpus_path = ws.file("corpus.jsonl");
  CorpusFile cf = load_corpus(corpus_path);
  ws.check_lineage(cf.header, corpus_path);
  auto train = split_pairs(cf.pairs, Split::train, "train");

  Model m(ws.cfg.world.vocab(), ws.cfg.model);
  m.init(ws.cfg.master_seed);
  std::vector<double> curve = pretrain(m, train, ws.cfg.pretrain, ws.cfg.master_seed);

  CheckpointMeta meta;
  meta.stage = "pretrain";
  meta.seed = ws.cfg.master_seed;
  meta.inputs["corpus.jsonl"] = hash_hex(file_hash(corpus_path));
  save_checkpoint(ws.file("model.ckpt"), m, ws.cfg, meta);
  save_loss_curve(ws.file("train_log.csv"), curve);
  std::printf("wrote %s: %zu params, %zu steps, loss %.4f -> %.4f\n",
              ws.file("model.ckpt").c_str(), m.n_params(), curve.size(),
              curve.empty() ? 0.0 : curve.front(), curve.empty() ? 0.0 : curve.back());
}

struct PoolStagePaths {
  std::string corpus;
  std::string model;      // sampling (and reference) checkpoint
  std::string pools_out;
};

void do_sample_pools(const Workspace& ws, const std::string& policy, const PoolStagePaths& paths,
                     uint64_t seed) {
  CorpusFile cf = load_corpus(paths.corpus);
  ws.check_lineage(cf.header, paths.corpus);
  CheckpointFile ckpt = load_checkpoint(paths.model);
  ws.check_lineage(ckpt.meta, paths.model);
  auto pool_pairs = split_pairs(cf.pairs, Split::pool, "pool");

  ModelSampler sampler(ckpt.model);
  const PoolConfig& pc = ws.cfg.pools;
  json inputs{{"corpus.jsonl", hash_hex(file_hash(paths.corpus))},
              {fs::path(paths.model).filename().string(), hash_hex(file_hash(paths.model))}};

  if (policy == "rio" || policy == "forward_only") {
    auto cands =
        sample_candidates(sampler, ws.cfg.world, pool_pairs, pc.k_per_input, ws.cfg.decode, seed);
    PreferencePools pools =
        policy == "rio"
            ? select_rio(cands, pc.n_pos, pc.n_neg, pc.wer_threshold, pc.filter_first,
                         pc.neg_require_reverse_fail)
            : select_forward_only(cands, pc.n_pos, pc.n_neg, pc.wer_threshold, pc.filter_first);
    save_pools(paths.pools_out, ws.cfg, policy, seed, inputs, &pools, nullptr);
    std::printf("wrote %s: %zu desirable, %zu undesirable of %zu candidates (policy %s)\n",
                paths.pools_out.c_str(), pools.pos.size(), pools.neg.size(), cands.size(),
                policy.c_str());
  } else if (policy == "dpo") {
    auto cands =
        sample_candidates(sampler, ws.cfg.world, pool_pairs, pc.pairs_k, ws.cfg.decode, seed);
    auto pairs = select_dpo_pairs(cands, pc.min_gap);
    save_pools(paths.pools_out, ws.cfg, "dpo", seed, inputs, nullptr, &pairs);
    std::printf("wrote %s: %zu preference pairs of %zu candidates\n", paths.pools_out.c_str(),
                pairs.size(), cands.size());
  } else {
    fail(ErrKind::precondition, "unknown pool policy '" + policy + "'");
  }
}

struct OptStagePaths {
  std::string pools;
  std::string model;  // initialization and frozen reference
  std::string model_out;
  std::string log_out;
};

void do_optimize(const Workspace& ws, const OptStagePaths& paths, uint64_t seed) {
  PoolsFile pf = load_pools(paths.pools);
  ws.check_lineage(pf.header, paths.pools);
  CheckpointFile ckpt = load_checkpoint(paths.model);
  ws.check_lineage(ckpt.meta, paths.model);

  const std::string& method = ws.cfg.optim.method;
  Model theta = ckpt.model;
  const Model& ref = ckpt.model;

  std::vector<StepRow> log;
  if (method == "rio") {
    require(!pf.pools.pos.empty() || !pf.pools.neg.empty(), ErrKind::config_mismatch,
            "'" + paths.pools + "' holds no desirable/undesirable samples; method rio needs "
            "pools sampled with policy rio or forward_only");
    log = optimize_pools(theta, ref, pf.pools, ws.cfg.optim, seed);
  } else if (method == "dpo" || method == "odpo") {
    require(!pf.pairs.empty(), ErrKind::config_mismatch,
            "'" + paths.pools + "' holds no preference pairs; method " + method +
                " needs pools sampled with policy dpo");
    log = optimize_pairs(theta, ref, pf.pairs, ws.cfg.optim, seed);
  } else {
    fail(ErrKind::precondition, "unknown method '" + method + "'");
  }

  CheckpointMeta meta;
  meta.stage = "optimize:" + method;
  meta.seed = seed;
  meta.inputs[fs::path(paths.pools).filename().string()] = hash_hex(file_hash(paths.pools));
  meta.inputs[fs::path(paths.model).filename().string()] = hash_hex(file_hash(paths.model));
  save_checkpoint(paths.model_out, theta, ws.cfg, meta);
  save_train_log(paths.log_out, log);
  std::printf("wrote %s: method %s, %zu steps, loss %.4f -> %.4f\n", paths.model_out.c_str(),
              method.c_str(), log.size(), log.empty() ? 0.0 : log.front().loss,
              log.empty() ? 0.0 : log.back().loss);
}

struct EvalStagePaths {
  std::string corpus;
  std::string model;
  std::string report_out;
};

MetricsReport do_evaluate(const Workspace& ws, const EvalStagePaths& paths,
                          const std::string& label, uint64_t seed) {
  CorpusFile cf = load_corpus(paths.corpus);
  ws.check_lineage(cf.header, paths.corpus);
  CheckpointFile ckpt = load_checkpoint(paths.model);
  ws.check_lineage(ckpt.meta, paths.model);
  auto eval_pairs = split_pairs(cf.pairs, Split::eval, "eval");

  ModelSampler sampler(ckpt.model);
  MetricsReport rep =
      evaluate(sampler, ws.cfg.world, eval_pairs, ws.cfg.decode, ws.cfg.eval, seed);
  rep.model_label = label;
  rep.model_hash = ckpt.model.params_hash();
  rep.config_hash = config_hash(ws.cfg);
  rep.lineage_hash = lineage_hash(ws.cfg);

  json inputs{{"corpus.jsonl", hash_hex(file_hash(paths.corpus))},
              {fs::path(paths.model).filename().string(), hash_hex(file_hash(paths.model))}};
  save_report(paths.report_out, rep, inputs);
  std::printf(
      "wrote %s: label %s, mean_mos %.3f, bad_case_mos %.3f, mean_wer %.2f, ppc %s\n",
      paths.report_out.c_str(), label.c_str(), rep.mean_mos, rep.bad_case_mos, rep.mean_wer,
      std::isnan(rep.ppc_ratio) ? "n/a" : detail::fmt(rep.ppc_ratio).c_str());
  return rep;
}

void do_iterate(Workspace ws, int rounds) {
  require(rounds >= 1, ErrKind::precondition, "rounds must be >= 1");
  require(ws.cfg.optim.method == "rio", ErrKind::precondition,
          "iterate drives the pool-based method; set method rio");
  ws.ensure_out();
  std::string current_model = ws.file("model.ckpt");
  for (int r = 1; r <= rounds; ++r) {
    uint64_t round_index = static_cast<uint64_t>(r - 1);
    fs::path rd = fs::path(ws.out) / ("round_" + std::to_string(r));
    fs::create_directories(rd);
    try {
      PoolStagePaths pp{ws.file("corpus.jsonl"), current_model, (rd / "pools.jsonl").string()};
      do_sample_pools(ws, "rio", pp, ws.stage_seed("pools", round_index));

      OptStagePaths op{(rd / "pools.jsonl").string(), current_model,
                       (rd / "model_rio.ckpt").string(), (rd / "train_log.csv").string()};
      do_optimize(ws, op, ws.stage_seed("optimize", round_index));

      EvalStagePaths ep{ws.file("corpus.jsonl"), (rd / "model_rio.ckpt").string(),
                        (rd / "report.json").string()};
      MetricsReport rep =
          do_evaluate(ws, ep, "round_" + std::to_string(r), ws.stage_seed("eval", round_index));
      std::printf("round %d: bad_case_mos %.3f, mean_wer %.2f\n", r, rep.bad_case_mos,
                  rep.mean_wer);
    } catch (const RioError& e) {
      if (e.kind() == ErrKind::empty_pool) {
        std::fprintf(stderr, "round %d aborted (%s); last good checkpoint: %s\n", r, e.what(),
                     current_model.c_str());
        throw;
      }
      throw;
    }
    current_model = (rd / "model_rio.ckpt").string();
  }
  std::printf("completed %d round(s); final checkpoint %s\n", rounds, current_model.c_str());
}

void do_bayes_check(int alphabet, int offsets, double eps, bool broken) {
  BayesWorld bw;
  bw.acoustic_size = alphabet;
  bw.n_offsets = offsets;
  bw.flip_eps = eps;
  bw.broken = broken;
  BayesReport rep = bayes_check(bw);
  std::printf("%s world: max violation %.3e over %llu states\n", broken ? "broken" : "clean",
              rep.max_violation, static_cast<unsigned long long>(rep.n_states));
}

void do_grad_check(uint64_t seed) {
  WorldParams w;
  w.train_len_min = 4;
  w.train_len_max = 10;
  w.eval_len_min = 6;
  w.eval_len_max = 12;
  ModelConfig mc;
  mc.d_model = 8;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_ff = 16;
  mc.max_seq = 96;
  Model theta(w.vocab(), mc);
  theta.init(seed + 1);
  Model ref(w.vocab(), mc);
  ref.init(seed);

  auto pairs = gen_corpus(w, 4, seed, Split::pool);
  std::vector<const CorpusPair*> batch;
  for (const auto& p : pairs) batch.push_back(&p);

  ModelSampler sampler(ref);
  DecodeConfig dc;
  dc.max_len = 12;  // within the field slot, so reverse prompts always fit
  auto cands = sample_candidates(sampler, w, pairs, 2, dc, seed);
  PreferencePools pools;
  for (size_t i = 0; i < cands.size(); ++i) {
    PreferenceSample s;
    s.cand = cands[i];
    s.label = i % 2 ? Label::undesirable : Label::desirable;
    s.policy = "rio";
    (i % 2 ? pools.neg : pools.pos).push_back(std::move(s));
  }
  std::vector<const PreferenceSample*> pbatch;
  for (const auto& s : pools.pos) pbatch.push_back(&s);
  for (const auto& s : pools.neg) pbatch.push_back(&s);
  std::vector<PairedPreferenceSample> dpairs;
  for (size_t i = 0; i + 1 < cands.size(); i += 2) {
    PairedPreferenceSample p;
    p.context = cands[i].context;
    p.winner = cands[i];
    p.loser = cands[i + 1];
    p.mos_gap = 1.5;
    dpairs.push_back(std::move(p));
  }
  std::vector<const PairedPreferenceSample*> dbatch;
  for (const auto& p : dpairs) dbatch.push_back(&p);

  double worst = 0.0;
  auto run = [&](const char* name, const LossFn& fn) {
    double err = grad_check(theta, fn, 1e-4, 30, seed + 7);
    worst = std::max(worst, err);
    std::printf("%-12s max rel err %.3e (tolerance 1e-3)\n", name, err);
  };
  run("supervised", [&](const Model& m, std::vector<double>* g) {
    return supervised_loss(m, batch, g);
  });
  LossOptions ro;
  ro.fixed_z = 0.2;
  run("pool", [&](const Model& m, std::vector<double>* g) {
    return rio_loss(m, ref, pbatch, ro, g).loss;
  });
  LossOptions po;
  run("paired", [&](const Model& m, std::vector<double>* g) {
    return dpo_loss(m, ref, dbatch, po, g).loss;
  });
  LossOptions oo;
  oo.alpha = 0.7;
  run("gap-offset", [&](const Model& m, std::vector<double>* g) {
    return odpo_loss(m, ref, dbatch, oo, g).loss;
  });
  require(worst < 1e-3, ErrKind::numerical, "gradient check exceeded tolerance");
  std::printf("all gradients verified\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale preference-optimization laboratory"};
  app.fallthrough();

  std::string config_path;
  std::string out = "run";
  uint64_t seed = 0;
  bool seed_set = false;
  bool init_config = false;
  app.add_option("--config", config_path, "experiment configuration JSON");
  app.add_option("--out", out, "run directory for artifacts")->capture_default_str();
  app.add_option("--seed", seed, "override the master seed")->each([&](const std::string&) {
    seed_set = true;
  });
  app.add_flag("--init-config", init_config, "print the default configuration and exit");

  auto* c_gen = app.add_subcommand("gen-corpus", "generate the three-way split corpus");
  auto* c_pre = app.add_subcommand("pretrain", "supervised pretraining on the train split");

  std::string policy = "rio";
  std::string model_in = "model.ckpt";
  std::string pools_out = "pools.jsonl";
  auto* c_pool = app.add_subcommand("sample-pools", "draw candidates and select pools");
  c_pool->add_option("--policy", policy, "rio | forward_only | dpo")->capture_default_str();
  c_pool->add_option("--model", model_in, "sampling checkpoint")->capture_default_str();
  c_pool->add_option("--pools-out", pools_out, "output file name")->capture_default_str();

  std::string method;
  std::string opt_model_in = "model.ckpt";
  std::string pools_in = "pools.jsonl";
  std::string model_out;
  std::string log_out = "train_log.csv";
  auto* c_opt = app.add_subcommand("optimize", "preference optimization from pools");
  c_opt->add_option("--method", method, "rio | dpo | odpo (default from config)");
  c_opt->add_option("--model", opt_model_in, "initialization/reference checkpoint")
      ->capture_default_str();
  c_opt->add_option("--pools", pools_in, "preference pools file")->capture_default_str();
  c_opt->add_option("--model-out", model_out, "output name (default model_<method>.ckpt)");
  c_opt->add_option("--log-out", log_out, "step log file name")->capture_default_str();

  std::string eval_model = "model.ckpt";
  std::string label;
  std::string report_name = "report.json";
  auto* c_eval = app.add_subcommand("evaluate", "score a checkpoint on the eval split");
  c_eval->add_option("--model", eval_model, "checkpoint to evaluate")->capture_default_str();
  c_eval->add_option("--label", label, "model label in the report (default: file stem)");
  c_eval->add_option("--report", report_name, "report file name")->capture_default_str();

  std::vector<std::string> report_paths;
  auto* c_cmp = app.add_subcommand("compare", "side-by-side metric deltas across reports");
  c_cmp->add_option("reports", report_paths, "report files")->expected(-2);

  int rounds = 1;
  auto* c_iter = app.add_subcommand("iterate", "repeated sample-pools/optimize/evaluate rounds");
  c_iter->add_option("--rounds", rounds, "number of rounds")->capture_default_str();

  int alphabet = 4, offsets = 4;
  double eps = 0.1;
  bool broken = false;
  auto* c_bayes = app.add_subcommand("bayes-check", "verify the reverse-inference identity");
  c_bayes->add_option("--alphabet", alphabet, "alphabet size (2..4)")->capture_default_str();
  c_bayes->add_option("--offsets", offsets, "number of styles")->capture_default_str();
  c_bayes->add_option("--eps", eps, "emission noise")->capture_default_str();
  c_bayes->add_flag("--broken", broken, "plant a prompt-text dependence");

  auto* c_grad = app.add_subcommand("grad-check", "finite-difference check of all losses");

  CLI11_PARSE(app, argc, argv);

  try {
    if (init_config) {
      std::printf("%s\n", json(ExperimentConfig{}).dump(2).c_str());
      return 0;
    }

    Workspace ws;
    ws.out = out;
    if (!config_path.empty()) {
      json j = parse_json(read_text_file(config_path), config_path);
      ws.cfg = j.get<ExperimentConfig>();
    }
    check_geometry(ws.cfg);
    if (seed_set) ws.cfg.master_seed = seed;
    if (!method.empty()) ws.cfg.optim.method = method;

    if (*c_gen) {
      do_gen_corpus(ws);
    } else if (*c_pre) {
      do_pretrain(ws);
    } else if (*c_pool) {
      ws.ensure_out();
      PoolStagePaths pp{ws.file("corpus.jsonl"), ws.resolve(model_in), ws.file(pools_out)};
      do_sample_pools(ws, policy, pp, ws.stage_seed("pools"));
    } else if (*c_opt) {
      ws.ensure_out();
      std::string out_name =
          model_out.empty() ? "model_" + ws.cfg.optim.method + ".ckpt" : model_out;
      OptStagePaths op{ws.resolve(pools_in), ws.resolve(opt_model_in), ws.file(out_name),
                       ws.file(log_out)};
      do_optimize(ws, op, ws.stage_seed("optimize"));
    } else if (*c_eval) {
      ws.ensure_out();
      std::string path = ws.resolve(eval_model);
      std::string use_label = label.empty() ? fs::path(path).stem().string() : label;
      EvalStagePaths ep{ws.file("corpus.jsonl"), path, ws.file(report_name)};
      do_evaluate(ws, ep, use_label, ws.stage_seed("eval"));
    } else if (*c_cmp) {
      std::vector<MetricsReport> reps;
      for (const std::string& p : report_paths) reps.push_back(load_report(ws.resolve(p)));
      std::printf("%s", compare_reports(reps).c_str());
    } else if (*c_iter) {
      do_iterate(ws, rounds);
    } else if (*c_bayes) {
      do_bayes_check(alphabet, offsets, eps, broken);
    } else if (*c_grad) {
      do_grad_check(ws.cfg.master_seed);
    } else {
      std::fprintf(stderr, "%s", app.help().c_str());
      return 2;
    }
  } catch (const RioError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
