#include <catch2/catch_amalgamated.hpp>
#include <unistd.h>

#include <filesystem>

#include "rio/serialize.hpp"

using namespace rio;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("rio_artifacts_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.corpus.n_train = 12;
  cfg.corpus.n_pool = 6;
  cfg.corpus.n_eval = 4;
  cfg.model.d_model = 8;
  cfg.model.n_layers = 1;
  cfg.model.n_heads = 2;
  cfg.model.d_ff = 16;
  cfg.model.max_seq = 256;
  cfg.master_seed = 99;
  return cfg;
}

}  // namespace

TEST_CASE("config hashing separates full configuration from lineage") {
  ExperimentConfig a = small_config();
  ExperimentConfig b = a;
  REQUIRE(config_hash(a) == config_hash(b));
  REQUIRE(lineage_hash(a) == lineage_hash(b));

  // optimizer settings change the full hash but not the lineage
  b.optim.lr *= 2;
  b.pools.n_pos += 1;
  REQUIRE(config_hash(a) != config_hash(b));
  REQUIRE(lineage_hash(a) == lineage_hash(b));

  // the data-generating side changes both
  ExperimentConfig c = a;
  c.corpus.n_train += 1;
  REQUIRE(config_hash(a) != config_hash(c));
  REQUIRE(lineage_hash(a) != lineage_hash(c));

  ExperimentConfig d = a;
  d.master_seed += 1;
  REQUIRE(lineage_hash(a) != lineage_hash(d));
}

TEST_CASE("geometry check accepts coherent configs and names the mismatch") {
  REQUIRE_NOTHROW(check_geometry(ExperimentConfig{}));
  REQUIRE_NOTHROW(check_geometry(small_config()));

  ExperimentConfig c = small_config();
  c.decode.max_len = c.world.vocab().field_slot + 1;
  REQUIRE_THROWS_WITH(check_geometry(c), Catch::Matchers::ContainsSubstring("reverse prompts"));

  c = small_config();
  c.model.max_seq = c.world.vocab().prompt_len() + c.world.train_len_max;  // one short
  REQUIRE_THROWS_WITH(check_geometry(c), Catch::Matchers::ContainsSubstring("model context"));

  c = small_config();
  c.model.max_seq = c.world.vocab().prompt_len();
  REQUIRE_THROWS(check_geometry(c));
}

TEST_CASE("experiment config survives a json round trip") {
  ExperimentConfig a = small_config();
  a.decode.temperature = 0.85;
  a.optim.method = "odpo";
  a.pools.filter_first = true;
  json j = a;
  ExperimentConfig b = j.get<ExperimentConfig>();
  REQUIRE(config_hash(a) == config_hash(b));
  REQUIRE(json(b).dump() == j.dump());
}

TEST_CASE("corpus files round trip exactly and are byte-stable") {
  TempDir td;
  ExperimentConfig cfg = small_config();
  WorldParams w;
  auto pairs = gen_full_corpus(w, cfg.master_seed, cfg.corpus.n_train, cfg.corpus.n_pool,
                               cfg.corpus.n_eval);
  std::string path = td.file("corpus.jsonl");
  save_corpus(path, cfg, pairs);
  std::string once = read_text_file(path);
  save_corpus(path, cfg, pairs);
  REQUIRE(read_text_file(path) == once);

  CorpusFile cf = load_corpus(path);
  REQUIRE(cf.pairs.size() == pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    REQUIRE(cf.pairs[i].id == pairs[i].id);
    REQUIRE(cf.pairs[i].split == pairs[i].split);
    REQUIRE(cf.pairs[i].seed == pairs[i].seed);
    REQUIRE(cf.pairs[i].style.offset == pairs[i].style.offset);
    REQUIRE(cf.pairs[i].style.duration == pairs[i].style.duration);
    REQUIRE(cf.pairs[i].context.prompt_text == pairs[i].context.prompt_text);
    REQUIRE(cf.pairs[i].context.prompt_speech == pairs[i].context.prompt_speech);
    REQUIRE(cf.pairs[i].context.target_text == pairs[i].context.target_text);
    REQUIRE(cf.pairs[i].target_speech == pairs[i].target_speech);
  }
  REQUIRE(cf.header.at("config_hash").get<std::string>() == hash_hex(config_hash(cfg)));

  // content hash agrees between the original and the reloaded pairs
  REQUIRE(corpus_content_hash(cf.pairs) == corpus_content_hash(pairs));
}

TEST_CASE("corpus loader rejects wrong or mangled files") {
  TempDir td;
  std::string path = td.file("bad.jsonl");
  write_text_file(path, "{\"kind\":\"checkpoint\"}\n");
  try {
    load_corpus(path);
    FAIL("expected an error");
  } catch (const RioError& e) {
    REQUIRE(e.kind() == ErrKind::io);
  }
  write_text_file(path, "");
  REQUIRE_THROWS_AS(load_corpus(path), RioError);
  REQUIRE_THROWS_AS(load_corpus(td.file("missing.jsonl")), RioError);
}

TEST_CASE("checkpoints restore parameters bit for bit") {
  TempDir td;
  ExperimentConfig cfg = small_config();
  Vocab v;
  Model m(v, cfg.model);
  m.init(7);
  CheckpointMeta meta;
  meta.stage = "pretrain";
  meta.seed = 7;
  meta.inputs["corpus.jsonl"] = hash_hex(0x1234);

  std::string path = td.file("model.ckpt");
  save_checkpoint(path, m, cfg, meta);
  std::string once = read_text_file(path);
  save_checkpoint(path, m, cfg, meta);
  REQUIRE(read_text_file(path) == once);

  CheckpointFile cf = load_checkpoint(path);
  REQUIRE(cf.model.params_hash() == m.params_hash());
  REQUIRE(cf.model.params() == m.params());
  REQUIRE(cf.meta.at("stage").get<std::string>() == "pretrain");
  REQUIRE(cf.meta.at("inputs").at("corpus.jsonl").get<std::string>() == hash_hex(0x1234));
  REQUIRE(cf.meta.at("config_hash").get<std::string>() == hash_hex(config_hash(cfg)));
}

TEST_CASE("a tampered checkpoint is rejected by its parameter hash") {
  TempDir td;
  ExperimentConfig cfg = small_config();
  Vocab v;
  Model m(v, cfg.model);
  m.init(7);
  std::string path = td.file("model.ckpt");
  save_checkpoint(path, m, cfg, {});

  std::string text = read_text_file(path);
  size_t at = text.find("\"params\":[");
  REQUIRE(at != std::string::npos);
  at = text.find("0.0", at);
  if (at != std::string::npos) {
    text.replace(at, 3, "0.5");
  } else {
    at = text.find_last_of(']');
    text.insert(text.find_last_of(','), ",9.9");
  }
  // keep it parseable; only the numbers changed
  write_text_file(path, text);
  try {
    load_checkpoint(path);
    FAIL("expected an error");
  } catch (const RioError& e) {
    REQUIRE((e.kind() == ErrKind::io || e.kind() == ErrKind::config_mismatch));
  }
}

TEST_CASE("preference pools round trip with their provenance") {
  TempDir td;
  ExperimentConfig cfg = small_config();
  WorldParams w;
  auto pairs = gen_corpus(w, 4, 3, Split::pool);
  GroundTruthSampler gt(w);
  DecodeConfig dc;
  auto cands = sample_candidates(gt, w, pairs, 2, dc, 8);

  PreferencePools pools;
  for (size_t i = 0; i < cands.size(); ++i) {
    PreferenceSample s;
    s.cand = cands[i];
    s.label = i % 2 ? Label::undesirable : Label::desirable;
    s.policy = "rio";
    (i % 2 ? pools.neg : pools.pos).push_back(s);
  }

  json inputs{{"corpus.jsonl", hash_hex(1)}, {"model.ckpt", hash_hex(2)}};
  std::string path = td.file("pools.jsonl");
  save_pools(path, cfg, "rio", 5, inputs, &pools, nullptr);
  std::string once = read_text_file(path);
  save_pools(path, cfg, "rio", 5, inputs, &pools, nullptr);
  REQUIRE(read_text_file(path) == once);

  PoolsFile pf = load_pools(path);
  REQUIRE(pf.method == "rio");
  REQUIRE(pf.pools.pos.size() == pools.pos.size());
  REQUIRE(pf.pools.neg.size() == pools.neg.size());
  REQUIRE(pf.pairs.empty());
  for (size_t i = 0; i < pools.pos.size(); ++i) {
    REQUIRE(pf.pools.pos[i].cand.id == pools.pos[i].cand.id);
    REQUIRE(pf.pools.pos[i].cand.forward.tokens == pools.pos[i].cand.forward.tokens);
    REQUIRE(pf.pools.pos[i].cand.avg_mos == pools.pos[i].cand.avg_mos);
    REQUIRE(pf.pools.pos[i].label == Label::desirable);
  }
  REQUIRE(pf.header.at("inputs").at("model.ckpt").get<std::string>() == hash_hex(2));

  // paired shape
  std::vector<PairedPreferenceSample> dpo;
  PairedPreferenceSample p;
  p.context = cands[0].context;
  p.winner = cands[0];
  p.loser = cands[1];
  p.mos_gap = 2.5;
  dpo.push_back(p);
  std::string path2 = td.file("pools_pairs.jsonl");
  save_pools(path2, cfg, "dpo", 5, inputs, nullptr, &dpo);
  PoolsFile pf2 = load_pools(path2);
  REQUIRE(pf2.pairs.size() == 1);
  REQUIRE(pf2.pairs[0].winner.id == cands[0].id);
  REQUIRE(pf2.pairs[0].mos_gap == 2.5);
  REQUIRE(pf2.pools.pos.empty());
}

TEST_CASE("metrics reports round trip including the undefined ratio") {
  TempDir td;
  WorldParams w;
  auto pairs = gen_corpus(w, 6, 5, Split::eval);
  EmptySampler es;
  DecodeConfig dc;
  EvalConfig ec;
  MetricsReport rep = evaluate(es, w, pairs, dc, ec, 9);
  rep.model_label = "silent";
  rep.model_hash = 0xabcd;
  rep.config_hash = 1;
  rep.lineage_hash = 2;

  std::string path = td.file("report.json");
  save_report(path, rep);
  std::string once = read_text_file(path);
  save_report(path, rep);
  REQUIRE(read_text_file(path) == once);
  REQUIRE(once.find("\"ppc_ratio\": null") != std::string::npos);

  MetricsReport back = load_report(path);
  REQUIRE(std::isnan(back.ppc_ratio));
  REQUIRE(back.model_label == "silent");
  REQUIRE(back.n_eval == rep.n_eval);
  REQUIRE(back.mos_hist == rep.mos_hist);
  REQUIRE(back.corpus_hash == rep.corpus_hash);

  // a defined ratio round-trips as a number
  GroundTruthSampler gt(w);
  MetricsReport good = evaluate(gt, w, pairs, dc, ec, 9);
  good.model_label = "gt";
  save_report(td.file("good.json"), good);
  MetricsReport gback = load_report(td.file("good.json"));
  REQUIRE(gback.ppc_ratio == 1.0);
}

TEST_CASE("training logs are plain CSV with a fixed column set") {
  TempDir td;
  std::vector<StepRow> rows(3);
  for (int i = 0; i < 3; ++i) {
    rows[i].step = i + 1;
    rows[i].loss = 0.5 - 0.1 * i;
    rows[i].z = 0.01 * i;
    rows[i].mean_r_pos = i;
    rows[i].mean_r_neg = -i;
    rows[i].grad_norm = 1.0 + i;
  }
  std::string path = td.file("train_log.csv");
  save_train_log(path, rows);
  std::string text = read_text_file(path);
  REQUIRE(text.rfind("step,loss,z_kl,mean_r_pos,mean_r_neg,grad_norm\n", 0) == 0);
  REQUIRE(std::count(text.begin(), text.end(), '\n') == 4);

  save_loss_curve(td.file("pretrain_log.csv"), {1.0, 0.5});
  std::string curve = read_text_file(td.file("pretrain_log.csv"));
  REQUIRE(std::count(curve.begin(), curve.end(), '\n') == 3);
  REQUIRE(curve.find("\n1,1,") != std::string::npos);
}

TEST_CASE("file hashing reflects content") {
  TempDir td;
  write_text_file(td.file("a"), "hello");
  write_text_file(td.file("b"), "hello");
  write_text_file(td.file("c"), "hellp");
  REQUIRE(file_hash(td.file("a")) == file_hash(td.file("b")));
  REQUIRE(file_hash(td.file("a")) != file_hash(td.file("c")));
  REQUIRE_THROWS_AS(file_hash(td.file("missing")), RioError);
}
