// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "pgpt/numerics/matrix.hpp"
#include "pgpt/numerics/ops.hpp"
#include "pgpt/numerics/optim.hpp"
#include "pgpt/numerics/rng.hpp"

namespace pgpt {

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  /// Majority-class frequency on the held-out rows.
  double chance = 0.0;
};

struct ProbeOptions {
  double train_fraction = 0.7;
  std::size_t steps = 300;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
};

/// Multinomial logistic regression on standardized features with a random
/// train/test split of the rows.
inline ProbeResult linear_probe(const Matrix& features, const std::vector<int>& labels, std::size_t classes,
                                const ProbeOptions& options = {}) {
  if (features.rows != labels.size()) throw ShapeError("linear_probe: one label per feature row required");
  const std::size_t n = features.rows, d = features.cols;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(options.seed, 0x70726f6265ull);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  const auto n_train = static_cast<std::size_t>(std::round(options.train_fraction * double(n)));

  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t c = 0; c < d; ++c) mu[c] += features(order[i], c);
  for (auto& m : mu) m /= double(std::max<std::size_t>(n_train, 1));
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t c = 0; c < d; ++c) sd[c] += std::pow(features(order[i], c) - mu[c], 2);
  for (auto& s : sd) s = std::sqrt(s / double(std::max<std::size_t>(n_train, 1))) + 1e-6;

  auto gather = [&](std::size_t begin, std::size_t end, std::vector<int>& y) {
    std::vector<float> x;
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t c = 0; c < d; ++c) x.push_back(float((features(order[i], c) - mu[c]) / sd[c]));
      y.push_back(labels[order[i]]);
    }
    return Tensor<float>({end - begin, d}, std::move(x));
  };
  std::vector<int> y_train, y_test;
  const auto x_train = gather(0, n_train, y_train);
  const auto x_test = gather(n_train, n, y_test);

  auto w = Tensor<float>::zeros({d, classes}, true);
  auto b = Tensor<float>::zeros({classes}, true);
  Adam<float> opt({{"w", w}, {"b", b}}, AdamConfig{0.9, 0.999, 1e-8, 0.0, 0.0});
  for (std::size_t step = 0; step < options.steps; ++step) {
    opt.zero_grad();
    cross_entropy(add(matmul(x_train, w), b), y_train).backward();
    opt.step(options.learning_rate);
  }

  auto accuracy = [&](const Tensor<float>& x, const std::vector<int>& y) {
    if (y.empty()) return 0.0;
    NoGradGuard guard;
    const auto logits = add(matmul(x, w), b);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (logits.at(i, c) > logits.at(i, best)) best = c;
      hit += static_cast<int>(best) == y[i];
    }
    return double(hit) / double(y.size());
  };

  ProbeResult result;
  result.train_accuracy = accuracy(x_train, y_train);
  result.test_accuracy = accuracy(x_test, y_test);
  std::map<int, std::size_t> freq;
  for (int y : y_test) ++freq[y];
  std::size_t best = 0;
  for (const auto& [label, count] : freq) best = std::max(best, count);
  result.chance = y_test.empty() ? 0.0 : double(best) / double(y_test.size());
  return result;
}

}  // namespace pgpt
