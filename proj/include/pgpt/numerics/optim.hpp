// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "pgpt/numerics/tensor.hpp"

namespace pgpt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW) when > 0
  double clip_norm = 2.0;     // global L2 norm; <= 0 disables
};

template <typename Real>
double global_grad_norm(const ParamList<Real>& params) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (Real g : p.grad_span()) sq += double(g) * double(g);
  }
  return std::sqrt(sq);
}

/// Adam with global-norm gradient clipping. Parameters without a gradient
/// in a step are left untouched (their moments do not decay either).
template <typename Real>
class Adam {
 public:
  Adam(ParamList<Real> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& [name, p] : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  /// Applies one update at learning rate `lr`; returns the pre-clip norm.
  double step(double lr) {
    ++t_;
    const double norm = global_grad_norm(params_);
    const double clip = (config_.clip_norm > 0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;
    const double bc1 = 1.0 - std::pow(config_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k].second;
      if (!p.has_grad()) continue;
      auto& g = p.grad_storage();
      auto w = p.mutable_data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = double(g[i]) * clip;
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
        const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
        double wi = double(w[i]);
        if (config_.weight_decay > 0) wi -= lr * config_.weight_decay * wi;
        w[i] = static_cast<Real>(wi - lr * update);
      }
    }
    return norm;
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  std::size_t steps() const { return t_; }

 private:
  ParamList<Real> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace pgpt
