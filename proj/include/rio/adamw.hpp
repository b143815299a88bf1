#pragma once

#include <cmath>
#include <vector>

#include "rio/common.hpp"

namespace rio {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied to every parameter
};

class AdamW {
 public:
  AdamW(size_t n, const AdamWConfig& cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& w, const std::vector<double>& g) {
    require(w.size() == m_.size() && g.size() == m_.size(), ErrKind::precondition,
            "optimizer/parameter size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (size_t i = 0; i < w.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = m_[i] / bc1;
      double vhat = v_[i] / bc2;
      w[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<double> m_, v_;
  int64_t t_ = 0;
};

}  // namespace rio
