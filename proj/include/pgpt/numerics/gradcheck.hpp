// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pgpt/numerics/rng.hpp"
#include "pgpt/numerics/tensor.hpp"

namespace pgpt {

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Elements sampled per parameter; 0 checks every element.
  std::size_t max_elements = 0;
  /// Denominator floor of the relative error, so gradients that are zero
  /// analytically are judged by absolute error instead.
  double denominator_floor = 1e-6;
  std::uint64_t seed = 0;
};

/// Compares backward() gradients against central finite differences.
/// `loss_fn` must rebuild the graph from the current parameter values on
/// every call. Failures are reported, never thrown.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn, const ParamList<double>& params,
                                  const GradCheckOptions& options = {}) {
  GradCheckReport report;
  report.tolerance = options.tolerance;

  for (const auto& [name, p] : params) p.zero_grad();
  loss_fn().backward();

  Rng rng(options.seed, 0x67726164ull);
  for (const auto& [name, param] : params) {
    auto p = param;
    const std::vector<double> analytic = p.grad();
    auto data = p.mutable_data();
    std::vector<std::size_t> indices(data.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    if (options.max_elements > 0 && indices.size() > options.max_elements) {
      for (std::size_t i = 0; i < options.max_elements; ++i) {
        std::swap(indices[i], indices[i + rng.uniform_int(indices.size() - i)]);
      }
      indices.resize(options.max_elements);
    }

    GradCheckEntry entry{name, indices.size(), 0.0, 0.0};
    NoGradGuard no_grad;
    for (std::size_t i : indices) {
      const double saved = data[i];
      data[i] = saved + options.step;
      const double plus = loss_fn().item();
      data[i] = saved - options.step;
      const double minus = loss_fn().item();
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double abs_err = std::abs(numeric - analytic[i]);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), options.denominator_floor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, abs_err / denom);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < options.tolerance;
  for (const auto& [name, p] : params) p.zero_grad();
  return report;
}

}  // namespace pgpt
