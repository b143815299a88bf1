#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rio/common.hpp"
#include "rio/config.hpp"
#include "rio/eval.hpp"
#include "rio/model.hpp"
#include "rio/optim.hpp"
#include "rio/pools.hpp"
#include "rio/world.hpp"

namespace rio {

constexpr int kFormatVersion = 1;

/// Hash of a file's raw bytes, for embedding input-artifact provenance.
inline uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrKind::io, "cannot open '" + path + "' for hashing");
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a64(ss.str());
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrKind::io, "cannot open '" + path + "' for writing");
  out << content;
  out.flush();
  require(out.good(), ErrKind::io, "failed writing '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrKind::io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json parse_json(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, false);
  require(!j.is_discarded(), ErrKind::io, "malformed JSON in " + what);
  return j;
}

// --- value <-> json helpers -------------------------------------------------

inline void to_json(json& j, const Style& s) {
  j = json{{"offset", s.offset}, {"duration", s.duration}};
}
inline void from_json(const json& j, Style& s) {
  j.at("offset").get_to(s.offset);
  j.at("duration").get_to(s.duration);
}

inline void to_json(json& j, const Context& c) {
  j = json{{"prompt_text", c.prompt_text},
           {"prompt_speech", c.prompt_speech},
           {"target_text", c.target_text}};
}
inline void from_json(const json& j, Context& c) {
  j.at("prompt_text").get_to(c.prompt_text);
  j.at("prompt_speech").get_to(c.prompt_speech);
  j.at("target_text").get_to(c.target_text);
}

inline void to_json(json& j, const Generation& g) {
  j = json{{"tokens", g.tokens},   {"logp", g.trace.total},
           {"eos", g.ended_with_eos}, {"degenerate", g.degenerate},
           {"mos", g.scores.mos},  {"wer", g.scores.wer},
           {"sim", g.scores.sim},  {"seed", g.seed}};
}
inline void from_json(const json& j, Generation& g) {
  j.at("tokens").get_to(g.tokens);
  j.at("logp").get_to(g.trace.total);
  g.trace.per_token.clear();  // per-token traces are not persisted
  j.at("eos").get_to(g.ended_with_eos);
  j.at("degenerate").get_to(g.degenerate);
  j.at("mos").get_to(g.scores.mos);
  j.at("wer").get_to(g.scores.wer);
  j.at("sim").get_to(g.scores.sim);
  j.at("seed").get_to(g.seed);
}

inline void to_json(json& j, const Candidate& c) {
  j = json{{"id", c.id},           {"input_id", c.input_id}, {"context", c.context},
           {"forward", c.forward}, {"reverse", c.reverse},   {"avg_mos", c.avg_mos}};
}
inline void from_json(const json& j, Candidate& c) {
  j.at("id").get_to(c.id);
  j.at("input_id").get_to(c.input_id);
  j.at("context").get_to(c.context);
  j.at("forward").get_to(c.forward);
  j.at("reverse").get_to(c.reverse);
  j.at("avg_mos").get_to(c.avg_mos);
}

// --- corpus -----------------------------------------------------------------

struct CorpusFile {
  json header;
  std::vector<CorpusPair> pairs;
};

inline void save_corpus(const std::string& path, const ExperimentConfig& cfg,
                        const std::vector<CorpusPair>& pairs) {
  std::string out;
  json header{{"kind", "corpus"},
              {"format_version", kFormatVersion},
              {"config_hash", hash_hex(config_hash(cfg))},
              {"lineage_hash", hash_hex(lineage_hash(cfg))},
              {"master_seed", cfg.master_seed},
              {"n_pairs", pairs.size()},
              {"config", cfg}};
  out += header.dump();
  out += '\n';
  for (const CorpusPair& p : pairs) {
    json j{{"id", p.id},
           {"split", to_string(p.split)},
           {"seed", p.seed},
           {"style", p.style},
           {"prompt_text", p.context.prompt_text},
           {"prompt_speech", p.context.prompt_speech},
           {"target_text", p.context.target_text},
           {"target_speech", p.target_speech}};
    out += j.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "pool") return Split::pool;
  if (s == "eval") return Split::eval;
  fail(ErrKind::io, "unknown split '" + s + "'");
}

inline CorpusFile load_corpus(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrKind::io,
          "'" + path + "' is empty");
  CorpusFile cf;
  cf.header = parse_json(line, path + " header");
  require(cf.header.value("kind", "") == "corpus", ErrKind::io,
          "'" + path + "' is not a corpus file");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = parse_json(line, path + " record");
    CorpusPair p;
    j.at("id").get_to(p.id);
    p.split = split_from_string(j.at("split").get<std::string>());
    j.at("seed").get_to(p.seed);
    j.at("style").get_to(p.style);
    j.at("prompt_text").get_to(p.context.prompt_text);
    j.at("prompt_speech").get_to(p.context.prompt_speech);
    j.at("target_text").get_to(p.context.target_text);
    j.at("target_speech").get_to(p.target_speech);
    cf.pairs.push_back(std::move(p));
  }
  require(cf.pairs.size() == cf.header.value("n_pairs", size_t{0}), ErrKind::io,
          "'" + path + "' record count does not match its header");
  return cf;
}

// --- checkpoints ------------------------------------------------------------

struct CheckpointMeta {
  std::string stage;  // "init" | "pretrain" | "optimize:<method>"
  uint64_t seed = 0;
  json inputs = json::object();  // name -> hex hash of consumed artifacts
};

inline void save_checkpoint(const std::string& path, const Model& m,
                            const ExperimentConfig& cfg, const CheckpointMeta& meta) {
  json j{{"kind", "checkpoint"},
         {"format_version", kFormatVersion},
         {"stage", meta.stage},
         {"seed", meta.seed},
         {"config_hash", hash_hex(config_hash(cfg))},
         {"lineage_hash", hash_hex(lineage_hash(cfg))},
         {"inputs", meta.inputs},
         {"vocab",
          {{"acoustic", m.vocab().acoustic_size},
           {"text", m.vocab().text_size},
           {"slot", m.vocab().field_slot}}},
         {"model", m.config()},
         {"params_hash", hash_hex(m.params_hash())},
         {"params", m.params()}};
  write_text_file(path, j.dump() + "\n");
}

struct CheckpointFile {
  json meta;  // everything except the raw parameters
  Model model;
};

inline CheckpointFile load_checkpoint(const std::string& path) {
  json j = parse_json(read_text_file(path), path);
  require(j.value("kind", "") == "checkpoint", ErrKind::io,
          "'" + path + "' is not a checkpoint");
  require(j.value("format_version", -1) == kFormatVersion, ErrKind::config_mismatch,
          "'" + path + "' has an unsupported format version");
  Vocab v;
  v.acoustic_size = j.at("vocab").at("acoustic").get<int>();
  v.text_size = j.at("vocab").at("text").get<int>();
  v.field_slot = j.at("vocab").at("slot").get<int>();
  require(v.acoustic_size >= 2 && v.text_size >= 2 && v.field_slot >= 1,
          ErrKind::config_mismatch, "'" + path + "' carries a malformed vocabulary");
  ModelConfig mc = j.at("model").get<ModelConfig>();
  CheckpointFile cf{json::object(), Model(v, mc)};
  std::vector<double> params = j.at("params").get<std::vector<double>>();
  require(params.size() == cf.model.n_params(), ErrKind::config_mismatch,
          "'" + path + "' parameter count does not match its model shape");
  cf.model.params() = std::move(params);
  require(hash_hex(cf.model.params_hash()) == j.at("params_hash").get<std::string>(),
          ErrKind::io, "'" + path + "' parameter hash mismatch: file is corrupted");
  j.erase("params");
  cf.meta = std::move(j);
  return cf;
}

// --- preference pools -------------------------------------------------------

struct PoolsFile {
  json header;
  std::string method;  // rio | forward_only | dpo | odpo
  PreferencePools pools;                    // filled for pool methods
  std::vector<PairedPreferenceSample> pairs;  // filled for paired methods
};

inline void save_pools(const std::string& path, const ExperimentConfig& cfg,
                       const std::string& method, uint64_t seed, const json& inputs,
                       const PreferencePools* pools,
                       const std::vector<PairedPreferenceSample>* pairs) {
  std::string out;
  json header{{"kind", "pools"},
              {"format_version", kFormatVersion},
              {"method", method},
              {"seed", seed},
              {"config_hash", hash_hex(config_hash(cfg))},
              {"lineage_hash", hash_hex(lineage_hash(cfg))},
              {"inputs", inputs},
              {"n_pos", pools ? pools->pos.size() : 0},
              {"n_neg", pools ? pools->neg.size() : 0},
              {"n_pairs", pairs ? pairs->size() : 0}};
  out += header.dump();
  out += '\n';
  if (pools) {
    for (const PreferenceSample& s : pools->pos) {
      json j{{"type", "sample"}, {"label", to_string(s.label)}, {"policy", s.policy},
             {"candidate", s.cand}};
      out += j.dump();
      out += '\n';
    }
    for (const PreferenceSample& s : pools->neg) {
      json j{{"type", "sample"}, {"label", to_string(s.label)}, {"policy", s.policy},
             {"candidate", s.cand}};
      out += j.dump();
      out += '\n';
    }
  }
  if (pairs) {
    for (const PairedPreferenceSample& p : *pairs) {
      json j{{"type", "pair"},
             {"context", p.context},
             {"winner", p.winner},
             {"loser", p.loser},
             {"mos_gap", p.mos_gap}};
      out += j.dump();
      out += '\n';
    }
  }
  write_text_file(path, out);
}

inline PoolsFile load_pools(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrKind::io, "'" + path + "' is empty");
  PoolsFile pf;
  pf.header = parse_json(line, path + " header");
  require(pf.header.value("kind", "") == "pools", ErrKind::io,
          "'" + path + "' is not a pools file");
  pf.method = pf.header.value("method", "");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = parse_json(line, path + " record");
    std::string type = j.at("type").get<std::string>();
    if (type == "sample") {
      PreferenceSample s;
      s.cand = j.at("candidate").get<Candidate>();
      s.policy = j.at("policy").get<std::string>();
      std::string label = j.at("label").get<std::string>();
      s.label = label == "desirable" ? Label::desirable : Label::undesirable;
      (s.label == Label::desirable ? pf.pools.pos : pf.pools.neg).push_back(std::move(s));
    } else if (type == "pair") {
      PairedPreferenceSample p;
      j.at("context").get_to(p.context);
      p.winner = j.at("winner").get<Candidate>();
      p.loser = j.at("loser").get<Candidate>();
      j.at("mos_gap").get_to(p.mos_gap);
      pf.pairs.push_back(std::move(p));
    } else {
      fail(ErrKind::io, "unknown record type '" + type + "' in '" + path + "'");
    }
  }
  require(pf.pools.pos.size() == pf.header.value("n_pos", size_t{0}) &&
              pf.pools.neg.size() == pf.header.value("n_neg", size_t{0}) &&
              pf.pairs.size() == pf.header.value("n_pairs", size_t{0}),
          ErrKind::io, "'" + path + "' record counts do not match its header");
  return pf;
}

// --- metrics reports ----------------------------------------------------------

inline void to_json(json& j, const MetricsReport& r) {
  j = json{{"kind", "report"},
           {"format_version", kFormatVersion},
           {"model_label", r.model_label},
           {"model_hash", hash_hex(r.model_hash)},
           {"n_eval", r.n_eval},
           {"mean_wer", r.mean_wer},
           {"median_wer", r.median_wer},
           {"mean_sim", r.mean_sim},
           {"mean_mos", r.mean_mos},
           {"bad_case_mos", r.bad_case_mos},
           {"bad_case_wer", r.bad_case_wer},
           {"ppc_ratio", r.ppc_ratio},  // NaN serializes as null
           {"n_good", r.n_good},
           {"n_ppc_pass", r.n_ppc_pass},
           {"mos_hist", r.mos_hist},
           {"good_threshold", r.good_threshold},
           {"bad_mos_threshold", r.bad_mos_threshold},
           {"bad_wer_threshold", r.bad_wer_threshold},
           {"seed", r.seed},
           {"config_hash", hash_hex(r.config_hash)},
           {"lineage_hash", hash_hex(r.lineage_hash)},
           {"corpus_hash", hash_hex(r.corpus_hash)}};
}

inline uint64_t hex_to_u64(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

inline void from_json(const json& j, MetricsReport& r) {
  j.at("model_label").get_to(r.model_label);
  r.model_hash = hex_to_u64(j.at("model_hash").get<std::string>());
  j.at("n_eval").get_to(r.n_eval);
  j.at("mean_wer").get_to(r.mean_wer);
  j.at("median_wer").get_to(r.median_wer);
  j.at("mean_sim").get_to(r.mean_sim);
  j.at("mean_mos").get_to(r.mean_mos);
  j.at("bad_case_mos").get_to(r.bad_case_mos);
  j.at("bad_case_wer").get_to(r.bad_case_wer);
  r.ppc_ratio = j.at("ppc_ratio").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                            : j.at("ppc_ratio").get<double>();
  j.at("n_good").get_to(r.n_good);
  j.at("n_ppc_pass").get_to(r.n_ppc_pass);
  j.at("mos_hist").get_to(r.mos_hist);
  j.at("good_threshold").get_to(r.good_threshold);
  j.at("bad_mos_threshold").get_to(r.bad_mos_threshold);
  j.at("bad_wer_threshold").get_to(r.bad_wer_threshold);
  j.at("seed").get_to(r.seed);
  r.config_hash = hex_to_u64(j.at("config_hash").get<std::string>());
  r.lineage_hash = hex_to_u64(j.at("lineage_hash").get<std::string>());
  r.corpus_hash = hex_to_u64(j.at("corpus_hash").get<std::string>());
}

inline void save_report(const std::string& path, const MetricsReport& r,
                        const json& inputs = json::object()) {
  json j = r;
  j["inputs"] = inputs;
  write_text_file(path, j.dump(2) + "\n");
}

inline MetricsReport load_report(const std::string& path) {
  json j = parse_json(read_text_file(path), path);
  require(j.value("kind", "") == "report", ErrKind::io, "'" + path + "' is not a report");
  return j.get<MetricsReport>();
}

// --- training logs ------------------------------------------------------------

inline void save_train_log(const std::string& path, const std::vector<StepRow>& rows) {
  std::string out = "step,loss,z_kl,mean_r_pos,mean_r_neg,grad_norm\n";
  char buf[256];
  for (const StepRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.loss, r.z,
                  r.mean_r_pos, r.mean_r_neg, r.grad_norm);
    out += buf;
  }
  write_text_file(path, out);
}

/// Pretraining curves reuse the same column layout; only loss is populated.
inline void save_loss_curve(const std::string& path, const std::vector<double>& losses) {
  std::vector<StepRow> rows(losses.size());
  for (size_t i = 0; i < losses.size(); ++i) {
    rows[i].step = static_cast<int>(i) + 1;
    rows[i].loss = losses[i];
  }
  save_train_log(path, rows);
}

}  // namespace rio
