#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rio/common.hpp"
#include "rio/vocab.hpp"

namespace rio {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 64;
  int max_seq = 96;
  double ln_eps = 1e-5;
  double init_std = 0.02;
};

struct LogProbTrace {
  std::vector<double> per_token;  // one entry per scored token, EOS included
  double total = 0.0;
};

/// One position of a sequence whose next-token distribution is being scored:
/// the head output expected there, and (for backward) the multiplier applied
/// to d(-log p)/dlogits at that row.
struct ScoredPosition {
  int pos = 0;     // position whose logits score the prediction
  int target = 0;  // expected output-head index
};

// ---------------------------------------------------------------------------
// Decoder-only transformer (pre-LN, learned positions, GELU MLP) over a flat
// parameter vector, with exact hand-written backprop. Small enough to train
// on one CPU core; the flat layout keeps checkpoints and optimizer state
// trivially serializable.
//
// Parameter order (documented contract, doubles, row-major matrices):
//   tok_embed[vocab][d_model]
//   pos_embed[max_seq][d_model]
//   per layer: ln1_gain[d], ln1_bias[d],
//              w_qkv[d][3d], b_qkv[3d], w_out[d][d], b_out[d],
//              ln2_gain[d], ln2_bias[d],
//              w_ff1[d][d_ff], b_ff1[d_ff], w_ff2[d_ff][d], b_ff2[d]
//   lnf_gain[d], lnf_bias[d], w_head[d][head], b_head[head]
// ---------------------------------------------------------------------------

class Model {
 public:
  Model(const Vocab& vocab, const ModelConfig& cfg) : vocab_(vocab), cfg_(cfg) {
    require(cfg.d_model % cfg.n_heads == 0, ErrKind::precondition,
            "d_model must be divisible by n_heads");
    require(cfg.d_model >= 2 && cfg.n_layers >= 1 && cfg.d_ff >= 1 && cfg.max_seq >= 4,
            ErrKind::precondition, "degenerate model shape");
    build_layout();
    w_.assign(n_params_, 0.0);
  }

  const Vocab& vocab() const { return vocab_; }
  const ModelConfig& config() const { return cfg_; }
  size_t n_params() const { return n_params_; }
  std::vector<double>& params() { return w_; }
  const std::vector<double>& params() const { return w_; }
  uint64_t init_seed() const { return init_seed_; }

  /// Gaussian init for embeddings and weight matrices, zero biases, unit
  /// layer-norm gains. Same seed => bitwise-identical parameters.
  void init(uint64_t seed) {
    init_seed_ = seed;
    Rng rng(derive_seed(seed, "model.init"));
    auto fill_normal = [&](size_t off, size_t count) {
      for (size_t i = 0; i < count; ++i) w_[off + i] = cfg_.init_std * rng.normal();
    };
    auto fill_const = [&](size_t off, size_t count, double v) {
      for (size_t i = 0; i < count; ++i) w_[off + i] = v;
    };
    const int D = cfg_.d_model, F = cfg_.d_ff, H = vocab_.head_size();
    fill_normal(off_tok_, static_cast<size_t>(vocab_.size()) * D);
    fill_normal(off_pos_, static_cast<size_t>(cfg_.max_seq) * D);
    for (const auto& L : layers_) {
      fill_const(L.ln1_g, D, 1.0);
      fill_const(L.ln1_b, D, 0.0);
      fill_normal(L.w_qkv, static_cast<size_t>(D) * 3 * D);
      fill_const(L.b_qkv, 3 * D, 0.0);
      fill_normal(L.w_out, static_cast<size_t>(D) * D);
      fill_const(L.b_out, D, 0.0);
      fill_const(L.ln2_g, D, 1.0);
      fill_const(L.ln2_b, D, 0.0);
      fill_normal(L.w_ff1, static_cast<size_t>(D) * F);
      fill_const(L.b_ff1, F, 0.0);
      fill_normal(L.w_ff2, static_cast<size_t>(F) * D);
      fill_const(L.b_ff2, D, 0.0);
    }
    fill_const(off_lnf_g_, D, 1.0);
    fill_const(off_lnf_b_, D, 0.0);
    fill_normal(off_head_w_, static_cast<size_t>(D) * H);
    fill_const(off_head_b_, H, 0.0);
  }

  uint64_t params_hash() const {
    std::string_view bytes(reinterpret_cast<const char*>(w_.data()), w_.size() * sizeof(double));
    return fnv1a64(bytes);
  }

  // ---- full-sequence forward/backward --------------------------------------

  struct LayerCache {
    RowMat x_in, ln1_out, qkv, ctx, x_mid, ln2_out, ff_pre, ff_act;
    Eigen::VectorXd ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
    std::vector<RowMat> att;  // per head, S x S row-softmax probabilities
  };
  struct Cache {
    std::vector<int> tokens;
    std::vector<LayerCache> layers;
    RowMat x_final, lnf_out, logits;
    Eigen::VectorXd lnf_mean, lnf_rstd;
  };

  /// Teacher-forced forward over a full token sequence; fills `cache` for a
  /// later backward pass and returns log-probabilities of the requested
  /// scored positions. Non-finite logits at a scored row raise a numerical
  /// error naming the token index.
  std::vector<double> forward(const std::vector<int>& tokens,
                              const std::vector<ScoredPosition>& scored, Cache& cache) const {
    const int S = static_cast<int>(tokens.size());
    require(S >= 1, ErrKind::precondition, "empty token sequence");
    require(S <= cfg_.max_seq, ErrKind::size_limit,
            "sequence length " + std::to_string(S) + " exceeds max_seq " +
                std::to_string(cfg_.max_seq));
    const int D = cfg_.d_model, NH = cfg_.n_heads, HD = D / NH, F = cfg_.d_ff;
    const int H = vocab_.head_size();
    const double scale = 1.0 / std::sqrt(static_cast<double>(HD));

    cache.tokens = tokens;
    cache.layers.assign(static_cast<size_t>(cfg_.n_layers), LayerCache{});

    RowMat x(S, D);
    for (int s = 0; s < S; ++s) {
      int id = tokens[s];
      require(id >= 0 && id < vocab_.size(), ErrKind::precondition,
              "token id out of range: " + std::to_string(id));
      x.row(s) = cmap(off_tok_, vocab_.size(), D).row(id) + cmap(off_pos_, cfg_.max_seq, D).row(s);
    }

    for (int l = 0; l < cfg_.n_layers; ++l) {
      const auto& L = layers_[l];
      LayerCache& lc = cache.layers[l];
      lc.x_in = x;
      layernorm(lc.x_in, L.ln1_g, L.ln1_b, lc.ln1_out, lc.ln1_mean, lc.ln1_rstd);
      lc.qkv.noalias() = lc.ln1_out * cmap(L.w_qkv, D, 3 * D);
      lc.qkv.rowwise() += cvec(L.b_qkv, 3 * D);
      lc.ctx.resize(S, D);
      lc.att.assign(static_cast<size_t>(NH), RowMat());
      for (int h = 0; h < NH; ++h) {
        auto q = lc.qkv.block(0, h * HD, S, HD);
        auto k = lc.qkv.block(0, D + h * HD, S, HD);
        auto v = lc.qkv.block(0, 2 * D + h * HD, S, HD);
        RowMat& probs = lc.att[h];
        probs = RowMat::Zero(S, S);
        for (int p = 0; p < S; ++p) {
          Eigen::VectorXd row = (k.topRows(p + 1) * q.row(p).transpose()) * scale;
          double m = row.maxCoeff();
          row = (row.array() - m).exp().matrix();
          probs.row(p).head(p + 1) = row.transpose() / row.sum();
        }
        lc.ctx.block(0, h * HD, S, HD).noalias() = probs * v;
      }
      RowMat attn = lc.ctx * cmap(L.w_out, D, D);
      attn.rowwise() += cvec(L.b_out, D);
      lc.x_mid = lc.x_in + attn;
      layernorm(lc.x_mid, L.ln2_g, L.ln2_b, lc.ln2_out, lc.ln2_mean, lc.ln2_rstd);
      lc.ff_pre.noalias() = lc.ln2_out * cmap(L.w_ff1, D, F);
      lc.ff_pre.rowwise() += cvec(L.b_ff1, F);
      lc.ff_act = gelu(lc.ff_pre);
      RowMat ff = lc.ff_act * cmap(L.w_ff2, F, D);
      ff.rowwise() += cvec(L.b_ff2, D);
      x = lc.x_mid + ff;
    }

    cache.x_final = x;
    layernorm(cache.x_final, off_lnf_g_, off_lnf_b_, cache.lnf_out, cache.lnf_mean,
              cache.lnf_rstd);
    cache.logits.noalias() = cache.lnf_out * cmap(off_head_w_, D, H);
    cache.logits.rowwise() += cvec(off_head_b_, H);

    std::vector<double> logp;
    logp.reserve(scored.size());
    for (const auto& sp : scored) {
      require(sp.pos >= 0 && sp.pos < S, ErrKind::precondition, "scored position out of range");
      require(sp.target >= 0 && sp.target < H, ErrKind::precondition,
              "scored target out of head range");
      if (!cache.logits.row(sp.pos).allFinite())
        fail(ErrKind::numerical,
             "non-finite logits at token index " + std::to_string(sp.pos));
      logp.push_back(log_softmax_at(cache.logits.row(sp.pos), sp.target));
    }
    return logp;
  }

  /// Backward for scored positions. Row `i` of the loss gradient w.r.t.
  /// logits is coeff[i] * (softmax(logits) - onehot(target)); coeff = 1/N
  /// recovers mean NLL, coeff = -g recovers d(loss)/d(logp) = g. Accumulates
  /// into `grad` (size n_params).
  void backward(const Cache& cache, const std::vector<ScoredPosition>& scored,
                const std::vector<double>& coeff, std::vector<double>& grad) const {
    require(coeff.size() == scored.size(), ErrKind::precondition,
            "coefficient count mismatch");
    require(grad.size() == n_params_, ErrKind::precondition, "gradient buffer size mismatch");
    const int S = static_cast<int>(cache.tokens.size());
    const int D = cfg_.d_model, NH = cfg_.n_heads, HD = D / NH, F = cfg_.d_ff;
    const int H = vocab_.head_size();
    const double scale = 1.0 / std::sqrt(static_cast<double>(HD));

    RowMat dlogits = RowMat::Zero(S, H);
    for (size_t i = 0; i < scored.size(); ++i) {
      if (coeff[i] == 0.0) continue;
      const auto& sp = scored[i];
      Eigen::RowVectorXd p = softmax_row(cache.logits.row(sp.pos));
      dlogits.row(sp.pos) += coeff[i] * p;
      dlogits(sp.pos, sp.target) -= coeff[i];
    }

    map(grad, off_head_w_, D, H).noalias() += cache.lnf_out.transpose() * dlogits;
    vec(grad, off_head_b_, H) += dlogits.colwise().sum();
    RowMat dlnf_out = dlogits * cmap(off_head_w_, D, H).transpose();
    RowMat dx = layernorm_backward(cache.x_final, cache.lnf_mean, cache.lnf_rstd, off_lnf_g_,
                                   dlnf_out, grad, off_lnf_g_, off_lnf_b_);

    for (int l = cfg_.n_layers - 1; l >= 0; --l) {
      const auto& L = layers_[l];
      const LayerCache& lc = cache.layers[l];
      // feed-forward block
      map(grad, L.w_ff2, F, D).noalias() += lc.ff_act.transpose() * dx;
      vec(grad, L.b_ff2, D) += dx.colwise().sum();
      RowMat dff_act = dx * cmap(L.w_ff2, F, D).transpose();
      RowMat dff_pre = dff_act.cwiseProduct(gelu_grad(lc.ff_pre));
      map(grad, L.w_ff1, D, F).noalias() += lc.ln2_out.transpose() * dff_pre;
      vec(grad, L.b_ff1, F) += dff_pre.colwise().sum();
      RowMat dln2_out = dff_pre * cmap(L.w_ff1, D, F).transpose();
      dx += layernorm_backward(lc.x_mid, lc.ln2_mean, lc.ln2_rstd, L.ln2_g, dln2_out, grad,
                               L.ln2_g, L.ln2_b);
      // attention block
      map(grad, L.w_out, D, D).noalias() += lc.ctx.transpose() * dx;
      vec(grad, L.b_out, D) += dx.colwise().sum();
      RowMat dctx = dx * cmap(L.w_out, D, D).transpose();
      RowMat dqkv = RowMat::Zero(S, 3 * D);
      for (int h = 0; h < NH; ++h) {
        auto q = lc.qkv.block(0, h * HD, S, HD);
        auto k = lc.qkv.block(0, D + h * HD, S, HD);
        auto v = lc.qkv.block(0, 2 * D + h * HD, S, HD);
        auto dctx_h = dctx.block(0, h * HD, S, HD);
        const RowMat& probs = lc.att[h];
        RowMat dprobs = dctx_h * v.transpose();
        dqkv.block(0, 2 * D + h * HD, S, HD).noalias() += probs.transpose() * dctx_h;
        RowMat dscores(S, S);
        for (int p = 0; p < S; ++p) {
          auto pr = probs.row(p).head(p + 1);
          auto dp = dprobs.row(p).head(p + 1);
          double dot = pr.cwiseProduct(dp).sum();
          dscores.row(p).setZero();
          dscores.row(p).head(p + 1) = pr.cwiseProduct((dp.array() - dot).matrix());
        }
        dqkv.block(0, h * HD, S, HD).noalias() += (dscores * k) * scale;
        dqkv.block(0, D + h * HD, S, HD).noalias() += (dscores.transpose() * q) * scale;
      }
      map(grad, L.w_qkv, D, 3 * D).noalias() += lc.ln1_out.transpose() * dqkv;
      vec(grad, L.b_qkv, 3 * D) += dqkv.colwise().sum();
      RowMat dln1_out = dqkv * cmap(L.w_qkv, D, 3 * D).transpose();
      dx += layernorm_backward(lc.x_in, lc.ln1_mean, lc.ln1_rstd, L.ln1_g, dln1_out, grad,
                               L.ln1_g, L.ln1_b);
    }

    auto dtok = map(grad, off_tok_, vocab_.size(), D);
    auto dpos = map(grad, off_pos_, cfg_.max_seq, D);
    for (int s = 0; s < S; ++s) {
      dtok.row(cache.tokens[s]) += dx.row(s);
      dpos.row(s) += dx.row(s);
    }
  }

  // ---- incremental decoding session ----------------------------------------

  /// KV-cached single-position forward for sampling. Mathematically identical
  /// to `forward`, evaluated row by row.
  class Session {
   public:
    explicit Session(const Model& m) : m_(m) {
      const int D = m.cfg_.d_model;
      k_.assign(m.cfg_.n_layers, RowMat(m.cfg_.max_seq, D));
      v_.assign(m.cfg_.n_layers, RowMat(m.cfg_.max_seq, D));
      logits_.resize(m.vocab_.head_size());
    }

    int pos() const { return t_; }

    /// Feed the next token; afterwards logits() gives the next-token scores.
    void feed(int token) {
      const Model& m = m_;
      const int D = m.cfg_.d_model, NH = m.cfg_.n_heads, HD = D / NH, F = m.cfg_.d_ff;
      const double scale = 1.0 / std::sqrt(static_cast<double>(HD));
      require(t_ < m.cfg_.max_seq, ErrKind::size_limit, "session exceeded max_seq");
      require(token >= 0 && token < m.vocab_.size(), ErrKind::precondition,
              "token id out of range: " + std::to_string(token));
      Eigen::RowVectorXd x = m.cmap(m.off_tok_, m.vocab_.size(), D).row(token) +
                             m.cmap(m.off_pos_, m.cfg_.max_seq, D).row(t_);
      Eigen::RowVectorXd normed(D);
      for (int l = 0; l < m.cfg_.n_layers; ++l) {
        const auto& L = m.layers_[l];
        m.layernorm_row(x, L.ln1_g, L.ln1_b, normed);
        Eigen::RowVectorXd qkv = normed * m.cmap(L.w_qkv, D, 3 * D) + m.cvec(L.b_qkv, 3 * D);
        k_[l].row(t_) = qkv.segment(D, D);
        v_[l].row(t_) = qkv.segment(2 * D, D);
        Eigen::RowVectorXd ctx(D);
        for (int h = 0; h < NH; ++h) {
          auto kh = k_[l].block(0, h * HD, t_ + 1, HD);
          auto vh = v_[l].block(0, h * HD, t_ + 1, HD);
          Eigen::VectorXd row = (kh * qkv.segment(h * HD, HD).transpose()) * scale;
          double mx = row.maxCoeff();
          row = (row.array() - mx).exp().matrix();
          row /= row.sum();
          ctx.segment(h * HD, HD) = (row.transpose() * vh);
        }
        x += ctx * m.cmap(L.w_out, D, D) + m.cvec(L.b_out, D);
        m.layernorm_row(x, L.ln2_g, L.ln2_b, normed);
        Eigen::RowVectorXd pre = normed * m.cmap(L.w_ff1, D, F) + m.cvec(L.b_ff1, F);
        Eigen::RowVectorXd act = gelu(pre);
        x += act * m.cmap(L.w_ff2, F, D) + m.cvec(L.b_ff2, D);
      }
      m.layernorm_row(x, m.off_lnf_g_, m.off_lnf_b_, normed);
      logits_ = normed * m.cmap(m.off_head_w_, D, m.vocab_.head_size()) +
                m.cvec(m.off_head_b_, m.vocab_.head_size());
      ++t_;
    }

    void prime(const std::vector<int>& tokens) {
      for (int tok : tokens) feed(tok);
    }

    const Eigen::RowVectorXd& logits() const {
      require(t_ > 0, ErrKind::precondition, "no token fed yet");
      return logits_;
    }

   private:
    const Model& m_;
    std::vector<RowMat> k_, v_;
    Eigen::RowVectorXd logits_;
    int t_ = 0;
  };

 private:
  struct LayerOffsets {
    size_t ln1_g, ln1_b, w_qkv, b_qkv, w_out, b_out, ln2_g, ln2_b, w_ff1, b_ff1, w_ff2, b_ff2;
  };

  void build_layout() {
    size_t off = 0;
    auto claim = [&off](size_t n) {
      size_t at = off;
      off += n;
      return at;
    };
    const size_t D = cfg_.d_model, F = cfg_.d_ff;
    off_tok_ = claim(static_cast<size_t>(vocab_.size()) * D);
    off_pos_ = claim(static_cast<size_t>(cfg_.max_seq) * D);
    layers_.clear();
    for (int l = 0; l < cfg_.n_layers; ++l) {
      LayerOffsets L;
      L.ln1_g = claim(D);
      L.ln1_b = claim(D);
      L.w_qkv = claim(D * 3 * D);
      L.b_qkv = claim(3 * D);
      L.w_out = claim(D * D);
      L.b_out = claim(D);
      L.ln2_g = claim(D);
      L.ln2_b = claim(D);
      L.w_ff1 = claim(D * F);
      L.b_ff1 = claim(F);
      L.w_ff2 = claim(F * D);
      L.b_ff2 = claim(D);
      layers_.push_back(L);
    }
    off_lnf_g_ = claim(D);
    off_lnf_b_ = claim(D);
    off_head_w_ = claim(D * static_cast<size_t>(vocab_.head_size()));
    off_head_b_ = claim(static_cast<size_t>(vocab_.head_size()));
    n_params_ = off;
  }

  // --- views over the flat parameter vector ---
  Eigen::Map<const RowMat> cmap(size_t off, int rows, int cols) const {
    return Eigen::Map<const RowMat>(w_.data() + off, rows, cols);
  }
  Eigen::Map<const Eigen::RowVectorXd> cvec(size_t off, int n) const {
    return Eigen::Map<const Eigen::RowVectorXd>(w_.data() + off, n);
  }
  static Eigen::Map<RowMat> map(std::vector<double>& g, size_t off, int rows, int cols) {
    return Eigen::Map<RowMat>(g.data() + off, rows, cols);
  }
  static Eigen::Map<Eigen::RowVectorXd> vec(std::vector<double>& g, size_t off, int n) {
    return Eigen::Map<Eigen::RowVectorXd>(g.data() + off, n);
  }

  // --- math helpers ---
  static double gelu1(double v) {
    constexpr double inv_sqrt2 = 0.70710678118654752440084436210485;
    return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  static double gelu_grad1(double v) {
    constexpr double inv_sqrt2 = 0.70710678118654752440084436210485;
    constexpr double inv_sqrt2pi = 0.3989422804014326779399460599344;
    return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
  }
  static RowMat gelu(const RowMat& x) {
    return x.unaryExpr([](double v) { return gelu1(v); });
  }
  static Eigen::RowVectorXd gelu(const Eigen::RowVectorXd& x) {
    return x.unaryExpr([](double v) { return gelu1(v); });
  }
  static RowMat gelu_grad(const RowMat& x) {
    return x.unaryExpr([](double v) { return gelu_grad1(v); });
  }

  void layernorm(const RowMat& x, size_t g_off, size_t b_off, RowMat& out,
                 Eigen::VectorXd& mean, Eigen::VectorXd& rstd) const {
    const int S = static_cast<int>(x.rows()), D = static_cast<int>(x.cols());
    out.resize(S, D);
    mean.resize(S);
    rstd.resize(S);
    auto g = cvec(g_off, D);
    auto b = cvec(b_off, D);
    for (int s = 0; s < S; ++s) {
      double m = x.row(s).mean();
      double var = (x.row(s).array() - m).square().mean();
      double r = 1.0 / std::sqrt(var + cfg_.ln_eps);
      mean(s) = m;
      rstd(s) = r;
      out.row(s) = (((x.row(s).array() - m) * r) * g.array() + b.array()).matrix();
    }
  }

  void layernorm_row(const Eigen::RowVectorXd& x, size_t g_off, size_t b_off,
                     Eigen::RowVectorXd& out) const {
    const int D = static_cast<int>(x.size());
    double m = x.mean();
    double var = (x.array() - m).square().mean();
    double r = 1.0 / std::sqrt(var + cfg_.ln_eps);
    out = (((x.array() - m) * r) * cvec(g_off, D).array() + cvec(b_off, D).array()).matrix();
  }

  /// dx for y = xhat*g + b; also accumulates dg, db.
  RowMat layernorm_backward(const RowMat& x, const Eigen::VectorXd& mean,
                            const Eigen::VectorXd& rstd, size_t g_off, const RowMat& dy,
                            std::vector<double>& grad, size_t dg_off, size_t db_off) const {
    const int S = static_cast<int>(x.rows()), D = static_cast<int>(x.cols());
    auto g = cvec(g_off, D);
    auto dg = vec(grad, dg_off, D);
    auto db = vec(grad, db_off, D);
    RowMat dx(S, D);
    for (int s = 0; s < S; ++s) {
      Eigen::ArrayXd xhat = (x.row(s).array() - mean(s)) * rstd(s);
      Eigen::ArrayXd dyr = dy.row(s).array();
      dg += (dyr * xhat).matrix().transpose();
      db += dy.row(s);
      Eigen::ArrayXd dxhat = dyr * g.array().transpose();
      double m1 = dxhat.mean();
      double m2 = (dxhat * xhat).mean();
      dx.row(s) = (rstd(s) * (dxhat - m1 - xhat * m2)).matrix().transpose();
    }
    return dx;
  }

  static Eigen::RowVectorXd softmax_row(const Eigen::RowVectorXd& logits) {
    Eigen::ArrayXd a = logits.transpose().array();
    double m = a.maxCoeff();
    Eigen::ArrayXd e = (a - m).exp();
    return (e / e.sum()).matrix().transpose();
  }

  static double log_softmax_at(const Eigen::RowVectorXd& logits, int idx) {
    Eigen::ArrayXd a = logits.transpose().array();
    double m = a.maxCoeff();
    double lse = std::log((a - m).exp().sum()) + m;
    return logits(idx) - lse;
  }

  Vocab vocab_;
  ModelConfig cfg_;
  std::vector<double> w_;
  uint64_t init_seed_ = 0;
  size_t n_params_ = 0;
  size_t off_tok_ = 0, off_pos_ = 0, off_lnf_g_ = 0, off_lnf_b_ = 0, off_head_w_ = 0,
         off_head_b_ = 0;
  std::vector<LayerOffsets> layers_;
};

// ---------------------------------------------------------------------------
// Scoring and sampling over serialized conditioning contexts.
// ---------------------------------------------------------------------------

/// Positions scoring `target_speech ++ EOS` after the serialized prompt:
/// position prompt_len-1+i predicts target token i.
inline std::vector<ScoredPosition> target_scored_positions(const Vocab& v, size_t prompt_len,
                                                           const std::vector<int>& target) {
  std::vector<ScoredPosition> scored;
  scored.reserve(target.size() + 1);
  for (size_t i = 0; i < target.size(); ++i)
    scored.push_back({static_cast<int>(prompt_len - 1 + i), v.output_index(target[i])});
  scored.push_back(
      {static_cast<int>(prompt_len - 1 + target.size()), v.eos_output()});
  return scored;
}

/// Exact per-token conditional log-probabilities of `target` (plus EOS) given
/// the serialized context.
inline LogProbTrace log_likelihood(const Model& m, const Context& ctx,
                                   const std::vector<int>& target) {
  const Vocab& v = m.vocab();
  for (int t : target)
    require(v.is_acoustic(t), ErrKind::precondition, "target must be acoustic tokens");
  std::vector<int> seq = build_prompt(v, ctx);
  const size_t prompt_len = seq.size();
  for (int t : target) seq.push_back(t);
  // The end marker is scored from the last target row; the EOS token itself
  // is never attended by a scored row, so it stays out of the sequence and a
  // full-window completion still fits max_seq exactly.
  auto scored = target_scored_positions(v, prompt_len, target);
  Model::Cache cache;
  LogProbTrace trace;
  trace.per_token = m.forward(seq, scored, cache);
  for (double lp : trace.per_token) trace.total += lp;
  return trace;
}

struct DecodeConfig {
  double temperature = 1.0;
  int top_k = 0;  // 0 = full support
  // Default matches the default world's prompt field width, so any sampled
  // rendering can re-enter a prompt when inference is run in reverse.
  int max_len = 18;
};

struct SampleResult {
  std::vector<int> tokens;  // generated acoustic tokens, EOS not included
  LogProbTrace trace;       // log-probs under the sampling-time distribution
  bool ended_with_eos = false;
};

/// Autoregressive sampling: temperature scaling, then top-k truncation and
/// renormalization. temperature <= 1e-6 decodes greedily (seed-independent).
inline SampleResult sample(const Model& m, const Context& ctx, const DecodeConfig& dc,
                           uint64_t seed) {
  const Vocab& v = m.vocab();
  require(dc.temperature > 0.0, ErrKind::precondition, "temperature must be positive");
  require(dc.max_len >= 1, ErrKind::precondition, "max_len must be at least 1");
  require(dc.top_k >= 0 && dc.top_k <= v.head_size(), ErrKind::precondition,
          "top_k beyond output support");
  const bool greedy = dc.temperature <= 1e-6;
  const int k = dc.top_k == 0 ? v.head_size() : dc.top_k;

  std::vector<int> prompt = build_prompt(v, ctx);
  require(static_cast<int>(prompt.size()) < m.config().max_seq, ErrKind::size_limit,
          "prompt does not fit in the model context");
  Model::Session session(m);
  session.prime(prompt);
  Rng rng(seed);
  SampleResult out;

  for (int step = 0; step < dc.max_len; ++step) {
    // stop while every emitted token still fits the context, so any
    // generation can be re-scored as prompt + tokens without overflow
    if (session.pos() >= m.config().max_seq) break;
    const Eigen::RowVectorXd& logits = session.logits();
    if (!logits.allFinite())
      fail(ErrKind::numerical, "non-finite logits at token index " +
                                   std::to_string(session.pos() - 1));
    int chosen;
    double logp;
    if (greedy) {
      int best = 0;
      for (int i = 1; i < logits.size(); ++i)
        if (logits(i) > logits(best)) best = i;
      chosen = best;
      logp = 0.0;
    } else {
      // rank outputs by (logit desc, index asc); keep k
      std::vector<int> order(static_cast<size_t>(logits.size()));
      for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (logits(a) != logits(b)) return logits(a) > logits(b);
        return a < b;
      });
      order.resize(static_cast<size_t>(k));
      double mx = logits(order[0]);
      std::vector<double> weights(order.size());
      double total = 0.0;
      for (size_t i = 0; i < order.size(); ++i) {
        weights[i] = std::exp((logits(order[i]) - mx) / dc.temperature);
        total += weights[i];
      }
      size_t pick = rng.categorical(weights);
      chosen = order[pick];
      logp = std::log(weights[pick] / total);
    }
    out.trace.per_token.push_back(logp);
    out.trace.total += logp;
    int token = v.output_token(chosen);
    if (token == v.eos()) {
      out.ended_with_eos = true;
      break;
    }
    out.tokens.push_back(token);
    session.feed(token);
  }
  return out;
}

}  // namespace rio
