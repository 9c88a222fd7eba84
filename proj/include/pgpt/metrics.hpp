// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

namespace pgpt {

/// Mean silhouette coefficient under Euclidean distance. Points in singleton
/// clusters score 0. Requires at least two clusters.
inline double silhouette_score(const std::vector<std::vector<float>>& points, std::span<const int> labels) {
  if (points.size() != labels.size()) throw std::invalid_argument("silhouette_score: points/labels size mismatch");
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) throw std::invalid_argument("silhouette_score: need at least two clusters");
  const std::size_t n = points.size();
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < points[i].size(); ++c) {
      const double d = double(points[i][c]) - double(points[j][c]);
      s += d * d;
    }
    return std::sqrt(s);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[labels[i]] == 1) continue;
    std::map<int, double> sums;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sums[labels[j]] += dist(i, j);
    const double a = sums[labels[i]] / double(counts[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, s] : sums)
      if (label != labels[i]) b = std::min(b, s / double(counts[label]));
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / double(n);
}

/// Fraction of equal positions; 1 for two empty sequences.
inline double agreement(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("agreement: length mismatch");
  if (a.empty()) return 1.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return double(same) / double(a.size());
}

}  // namespace pgpt
