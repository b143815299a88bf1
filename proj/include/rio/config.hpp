#pragma once

#include <nlohmann/json.hpp>
#include <string>

#include "rio/common.hpp"
#include "rio/model.hpp"
#include "rio/train.hpp"
#include "rio/world.hpp"

namespace rio {

using json = nlohmann::ordered_json;

struct CorpusSizes {
  int n_train = 2000;
  int n_pool = 400;
  int n_eval = 200;
};

struct PoolConfig {
  int k_per_input = 1;
  int n_pos = 200;
  int n_neg = 200;
  double wer_threshold = 10.0;
  bool filter_first = false;        // filter by WER before ranking instead of after
  bool neg_require_reverse_fail = false;  // extra constraint on P_neg membership
  double min_gap = 2.0;             // paired selection: required avg-MOS gap
  int pairs_k = 5;                  // candidates per input when pairing
};

struct OptimConfig {
  std::string method = "rio";  // rio | dpo | odpo
  int epochs = 1;
  double lr = 1e-4;
  int batch_size = 2;
  double beta = 0.1;
  double alpha = 1.0;          // offset scale for the gap-offset paired loss
  double weight_decay = 0.0;
  bool length_normalize = false;   // per-token instead of summed log-probs
  bool mismatched_reference = false;  // reference point from shuffled completions
};

struct EvalConfig {
  double good_threshold = 3.0;
  double bad_mos_threshold = 3.0;
  double bad_wer_threshold = 20.0;
};

struct ExperimentConfig {
  WorldParams world;
  CorpusSizes corpus;
  ModelConfig model;
  PretrainConfig pretrain;
  DecodeConfig decode;
  PoolConfig pools;
  OptimConfig optim;
  EvalConfig eval;
  uint64_t master_seed = 1;
};

inline void to_json(json& j, const WorldParams& w) {
  j = json{{"acoustic_size", w.acoustic_size}, {"text_size", w.text_size},
           {"slope", w.slope},                 {"durations", w.durations},
           {"prompt_speech_len", w.prompt_speech_len}, {"train_len_min", w.train_len_min},
           {"train_len_max", w.train_len_max}, {"eval_len_min", w.eval_len_min},
           {"eval_len_max", w.eval_len_max},   {"max_pairs_per_style", w.max_pairs_per_style}};
}
inline void from_json(const json& j, WorldParams& w) {
  j.at("acoustic_size").get_to(w.acoustic_size);
  j.at("text_size").get_to(w.text_size);
  j.at("slope").get_to(w.slope);
  j.at("durations").get_to(w.durations);
  j.at("prompt_speech_len").get_to(w.prompt_speech_len);
  j.at("train_len_min").get_to(w.train_len_min);
  j.at("train_len_max").get_to(w.train_len_max);
  j.at("eval_len_min").get_to(w.eval_len_min);
  j.at("eval_len_max").get_to(w.eval_len_max);
  j.at("max_pairs_per_style").get_to(w.max_pairs_per_style);
}

inline void to_json(json& j, const CorpusSizes& c) {
  j = json{{"n_train", c.n_train}, {"n_pool", c.n_pool}, {"n_eval", c.n_eval}};
}
inline void from_json(const json& j, CorpusSizes& c) {
  j.at("n_train").get_to(c.n_train);
  j.at("n_pool").get_to(c.n_pool);
  j.at("n_eval").get_to(c.n_eval);
}

inline void to_json(json& j, const ModelConfig& m) {
  j = json{{"d_model", m.d_model}, {"n_layers", m.n_layers}, {"n_heads", m.n_heads},
           {"d_ff", m.d_ff},       {"max_seq", m.max_seq},   {"ln_eps", m.ln_eps},
           {"init_std", m.init_std}};
}
inline void from_json(const json& j, ModelConfig& m) {
  j.at("d_model").get_to(m.d_model);
  j.at("n_layers").get_to(m.n_layers);
  j.at("n_heads").get_to(m.n_heads);
  j.at("d_ff").get_to(m.d_ff);
  j.at("max_seq").get_to(m.max_seq);
  j.at("ln_eps").get_to(m.ln_eps);
  j.at("init_std").get_to(m.init_std);
}

inline void to_json(json& j, const PretrainConfig& p) {
  j = json{{"steps", p.steps},
           {"lr", p.lr},
           {"batch_size", p.batch_size},
           {"weight_decay", p.weight_decay}};
}
inline void from_json(const json& j, PretrainConfig& p) {
  j.at("steps").get_to(p.steps);
  j.at("lr").get_to(p.lr);
  j.at("batch_size").get_to(p.batch_size);
  j.at("weight_decay").get_to(p.weight_decay);
}

inline void to_json(json& j, const DecodeConfig& d) {
  j = json{{"temperature", d.temperature}, {"top_k", d.top_k}, {"max_len", d.max_len}};
}
inline void from_json(const json& j, DecodeConfig& d) {
  j.at("temperature").get_to(d.temperature);
  j.at("top_k").get_to(d.top_k);
  j.at("max_len").get_to(d.max_len);
}

inline void to_json(json& j, const PoolConfig& p) {
  j = json{{"k_per_input", p.k_per_input},
           {"n_pos", p.n_pos},
           {"n_neg", p.n_neg},
           {"wer_threshold", p.wer_threshold},
           {"filter_first", p.filter_first},
           {"neg_require_reverse_fail", p.neg_require_reverse_fail},
           {"min_gap", p.min_gap},
           {"pairs_k", p.pairs_k}};
}
inline void from_json(const json& j, PoolConfig& p) {
  j.at("k_per_input").get_to(p.k_per_input);
  j.at("n_pos").get_to(p.n_pos);
  j.at("n_neg").get_to(p.n_neg);
  j.at("wer_threshold").get_to(p.wer_threshold);
  j.at("filter_first").get_to(p.filter_first);
  j.at("neg_require_reverse_fail").get_to(p.neg_require_reverse_fail);
  j.at("min_gap").get_to(p.min_gap);
  j.at("pairs_k").get_to(p.pairs_k);
}

inline void to_json(json& j, const OptimConfig& o) {
  j = json{{"method", o.method},
           {"epochs", o.epochs},
           {"lr", o.lr},
           {"batch_size", o.batch_size},
           {"beta", o.beta},
           {"alpha", o.alpha},
           {"weight_decay", o.weight_decay},
           {"length_normalize", o.length_normalize},
           {"mismatched_reference", o.mismatched_reference}};
}
inline void from_json(const json& j, OptimConfig& o) {
  j.at("method").get_to(o.method);
  j.at("epochs").get_to(o.epochs);
  j.at("lr").get_to(o.lr);
  j.at("batch_size").get_to(o.batch_size);
  j.at("beta").get_to(o.beta);
  j.at("alpha").get_to(o.alpha);
  j.at("weight_decay").get_to(o.weight_decay);
  j.at("length_normalize").get_to(o.length_normalize);
  j.at("mismatched_reference").get_to(o.mismatched_reference);
}

inline void to_json(json& j, const EvalConfig& e) {
  j = json{{"good_threshold", e.good_threshold},
           {"bad_mos_threshold", e.bad_mos_threshold},
           {"bad_wer_threshold", e.bad_wer_threshold}};
}
inline void from_json(const json& j, EvalConfig& e) {
  j.at("good_threshold").get_to(e.good_threshold);
  j.at("bad_mos_threshold").get_to(e.bad_mos_threshold);
  j.at("bad_wer_threshold").get_to(e.bad_wer_threshold);
}

inline void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"world", c.world},     {"corpus", c.corpus}, {"model", c.model},
           {"pretrain", c.pretrain}, {"decode", c.decode}, {"pools", c.pools},
           {"optim", c.optim},     {"eval", c.eval},     {"master_seed", c.master_seed}};
}
inline void from_json(const json& j, ExperimentConfig& c) {
  j.at("world").get_to(c.world);
  j.at("corpus").get_to(c.corpus);
  j.at("model").get_to(c.model);
  j.at("pretrain").get_to(c.pretrain);
  j.at("decode").get_to(c.decode);
  j.at("pools").get_to(c.pools);
  j.at("optim").get_to(c.optim);
  j.at("eval").get_to(c.eval);
  j.at("master_seed").get_to(c.master_seed);
}

/// Cross-component geometry checks that no single struct can make on its own.
/// Catching these at load time beats a size-limit failure minutes into a run.
inline void check_geometry(const ExperimentConfig& c) {
  const Vocab v = c.world.vocab();
  require(c.decode.max_len >= 1, ErrKind::precondition, "decode max_len must be positive");
  // A sampled rendering becomes the prompt speech of its reverse pass, so it
  // has to fit the prompt's fixed speech field.
  require(c.decode.max_len <= v.field_slot, ErrKind::config_mismatch,
          "decode max_len " + std::to_string(c.decode.max_len) +
              " exceeds the prompt field width " + std::to_string(v.field_slot) +
              "; reverse prompts would not fit");
  // Training sequences are prompt frame + target + end marker.
  const int train_need = v.prompt_len() + c.world.train_len_max + 1;
  require(train_need <= c.model.max_seq, ErrKind::config_mismatch,
          "training sequences need " + std::to_string(train_need) +
              " positions but the model context is " + std::to_string(c.model.max_seq));
  // Generation must have room for at least one token after the prompt frame.
  require(v.prompt_len() < c.model.max_seq, ErrKind::config_mismatch,
          "prompt frame fills the whole model context");
}

/// Canonical hash over every configuration field.
inline uint64_t config_hash(const ExperimentConfig& c) {
  nlohmann::json sorted = json(c);  // plain json sorts object keys
  return fnv1a64(sorted.dump());
}

/// Hash over the fields that determine what is being measured: world, data,
/// model, pretraining, decoding, eval settings, and the master seed. Pool
/// policy and optimizer hyperparameters are deliberately excluded so reports
/// for different optimization methods on the same substrate stay comparable.
inline uint64_t lineage_hash(const ExperimentConfig& c) {
  json j{{"world", c.world},   {"corpus", c.corpus}, {"model", c.model},
         {"pretrain", c.pretrain}, {"decode", c.decode}, {"eval", c.eval},
         {"master_seed", c.master_seed}};
  nlohmann::json sorted = j;
  return fnv1a64(sorted.dump());
}

}  // namespace rio
