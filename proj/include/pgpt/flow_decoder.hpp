// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "pgpt/numerics/matrix.hpp"
#include "pgpt/numerics/nn.hpp"

namespace pgpt {

struct FlowConfig {
  std::size_t mel_dim = 32;
  std::size_t feature_dim = 128;   // decoded semantic + acoustic channels
  std::size_t condition_dim = 64;  // speaker condition width
  std::size_t hidden_dim = 256;
  std::size_t hidden_layers = 2;
  std::size_t time_features = 16;
  /// When true the network predicts the clean frame D and the velocity is
  /// (D - x_t) / (1 - t + terminal_epsilon); otherwise it outputs velocity directly.
  bool predict_data = true;
  double terminal_epsilon = 1e-3;

  void validate() const {
    if (mel_dim < 1 || feature_dim < 1 || condition_dim < 1 || hidden_dim < 1 || hidden_layers < 1) {
      throw std::invalid_argument("FlowConfig: all sizes must be >= 1");
    }
    if (time_features < 2 || time_features % 2 != 0) {
      throw std::invalid_argument("FlowConfig.time_features must be even and >= 2");
    }
    if (!(terminal_epsilon > 0.0)) throw std::invalid_argument("FlowConfig.terminal_epsilon must be > 0");
  }
};

struct SolverConfig {
  std::size_t n_steps = 32;
  std::uint64_t seed = 0;
};

/// Conditional flow-matching decoder: a per-frame MLP vector field
/// v(x_t, t, features_t, speaker) trained on the linear path
/// x_t = (1 - t) x0 + t x1 with target velocity x1 - x0.
/// Data prediction keeps the field accurate near t = 1, where the
/// exact velocity scales like 1 / (1 - t).
template <typename Real>
class FlowDecoder {
 public:
  FlowDecoder() = default;
  FlowDecoder(FlowConfig config, Rng& rng) : config_(config) {
    config_.validate();
    const std::size_t in = config_.mel_dim + config_.time_features + config_.feature_dim + config_.condition_dim;
    layers_.emplace_back(in, config_.hidden_dim, rng);
    for (std::size_t i = 1; i < config_.hidden_layers; ++i) layers_.emplace_back(config_.hidden_dim, config_.hidden_dim, rng);
    out_ = nn::Linear<Real>(config_.hidden_dim, config_.mel_dim, rng, 0.01);
  }

  const FlowConfig& config() const { return config_; }

  /// Sinusoidal features of per-row times: [T, time_features].
  Tensor<Real> time_embedding(std::span<const std::type_identity_t<Real>> times) const {
    const std::size_t half = config_.time_features / 2;
    std::vector<Real> data(times.size() * config_.time_features);
    for (std::size_t r = 0; r < times.size(); ++r) {
      for (std::size_t i = 0; i < half; ++i) {
        const double omega = std::numbers::pi * std::pow(64.0, half > 1 ? double(i) / double(half - 1) : 0.0);
        data[r * config_.time_features + 2 * i] = static_cast<Real>(std::sin(omega * double(times[r])));
        data[r * config_.time_features + 2 * i + 1] = static_cast<Real>(std::cos(omega * double(times[r])));
      }
    }
    return Tensor<Real>({times.size(), config_.time_features}, std::move(data));
  }

  /// Velocity at per-row times `times` for x [T, M], features [T, F], speaker [1, C].
  Tensor<Real> velocity(const Tensor<Real>& x, std::span<const std::type_identity_t<Real>> times, const Tensor<Real>& features,
                        const Tensor<Real>& speaker) const {
    const std::size_t t_len = x.rows();
    if (x.cols() != config_.mel_dim) throw ShapeError("flow: x width " + std::to_string(x.cols()) + " != mel_dim");
    if (features.rows() != t_len || features.cols() != config_.feature_dim) {
      throw shape_error("flow velocity (x vs features)", x.shape(), features.shape());
    }
    if (speaker.size() != config_.condition_dim) throw shape_error("flow velocity (speaker)", speaker.shape(), {1, config_.condition_dim});
    if (times.size() != t_len) throw ShapeError("flow: one time per frame required");
    auto h = concat_cols<Real>({x, time_embedding(times), features, broadcast_rows(reshape(speaker, {1, speaker.size()}), t_len)});
    for (const auto& layer : layers_) h = gelu(layer(h));
    auto out = out_(h);
    if (!config_.predict_data) return out;
    std::vector<Real> inv(t_len * config_.mel_dim);
    for (std::size_t r = 0; r < t_len; ++r) {
      const Real w = static_cast<Real>(1.0 / (1.0 - double(times[r]) + config_.terminal_epsilon));
      std::fill_n(inv.begin() + r * config_.mel_dim, config_.mel_dim, w);
    }
    return mul(sub(out, x), Tensor<Real>({t_len, config_.mel_dim}, std::move(inv)));
  }

  void collect(const std::string& prefix, ParamList<Real>& out) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + ".hidden." + std::to_string(i), out);
    out_.collect(prefix + ".out", out);
  }

  nn::Linear<Real>& output_layer() { return out_; }

 private:
  FlowConfig config_;
  std::vector<nn::Linear<Real>> layers_;
  nn::Linear<Real> out_;
};

/// CFM regression loss for given noise x0 [T, M] and per-frame times.
template <typename Real>
Tensor<Real> cfm_loss_at(const FlowDecoder<Real>& model, const Tensor<Real>& mel, const Tensor<Real>& x0,
                         std::span<const std::type_identity_t<Real>> times, const Tensor<Real>& features, const Tensor<Real>& speaker) {
  if (mel.shape() != x0.shape()) throw shape_error("cfm_loss (mel vs noise)", mel.shape(), x0.shape());
  const std::size_t t_len = mel.rows(), m = mel.cols();
  std::vector<Real> xt(t_len * m), target(t_len * m);
  for (std::size_t r = 0; r < t_len; ++r) {
    for (std::size_t c = 0; c < m; ++c) {
      const Real x1 = mel[r * m + c], n0 = x0[r * m + c];
      xt[r * m + c] = (Real(1) - times[r]) * n0 + times[r] * x1;
      target[r * m + c] = x1 - n0;
    }
  }
  // The target does not depend on parameters; mel carries no gradient here.
  const Tensor<Real> x_t({t_len, m}, std::move(xt));
  const Tensor<Real> u({t_len, m}, std::move(target));
  return mse(model.velocity(x_t, times, features, speaker), u);
}

/// Samples t ~ U(0,1) per frame and x0 ~ N(0, I), then regresses the velocity
/// onto mel - x0.
template <typename Real>
Tensor<Real> cfm_train_loss(const FlowDecoder<Real>& model, const Tensor<Real>& mel, const Tensor<Real>& features,
                            const Tensor<Real>& speaker, Rng& rng) {
  const std::size_t t_len = mel.rows(), m = mel.cols();
  std::vector<Real> times(t_len), noise(t_len * m);
  for (auto& t : times) t = static_cast<Real>(rng.uniform());
  for (auto& v : noise) v = static_cast<Real>(rng.normal());
  return cfm_loss_at(model, mel, Tensor<Real>({t_len, m}, std::move(noise)), times, features, speaker);
}

/// Initial noise used by sample_mel for a given seed.
inline Matrix flow_initial_noise(std::size_t frames, std::size_t mel_dim, std::uint64_t seed) {
  Rng rng(seed, 0x666c6f77ull);
  Matrix x(frames, mel_dim);
  for (auto& v : x.data) v = static_cast<float>(rng.normal());
  return x;
}

/// Euler integration of the learned field from t = 0 to 1.
template <typename Real>
Matrix sample_mel(const FlowDecoder<Real>& model, const Tensor<Real>& features, const Tensor<Real>& speaker,
                  std::size_t frames, const SolverConfig& solver) {
  if (solver.n_steps < 1) throw std::invalid_argument("SolverConfig.n_steps must be >= 1");
  NoGradGuard guard;
  auto x = to_tensor<Real>(flow_initial_noise(frames, model.config().mel_dim, solver.seed));
  if (frames == 0) return to_matrix(x);
  const Real dt = Real(1) / static_cast<Real>(solver.n_steps);
  std::vector<Real> times(frames);
  for (std::size_t step = 0; step < solver.n_steps; ++step) {
    std::fill(times.begin(), times.end(), static_cast<Real>(step) * dt);
    x = add(x, scale(model.velocity(x, times, features, speaker), dt));
  }
  return to_matrix(x);
}

}  // namespace pgpt
