// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgpt/numerics/tensor.hpp"

namespace pgpt {

/// Plain row-major float matrix for data that never enters a tape.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<float> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw ShapeError("Matrix: " + std::to_string(data.size()) + " values for " +
                                               std::to_string(r) + "x" + std::to_string(c));
  }

  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  bool all_finite() const {
    for (float v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

template <typename Real>
Tensor<Real> to_tensor(const Matrix& m, bool requires_grad = false) {
  return Tensor<Real>({m.rows, m.cols}, std::vector<Real>(m.data.begin(), m.data.end()), requires_grad);
}

template <typename Real>
Tensor<Real> to_row_tensor(std::span<const float> v) {
  return Tensor<Real>({1, v.size()}, std::vector<Real>(v.begin(), v.end()));
}

template <typename Real>
Matrix to_matrix(const Tensor<Real>& t) {
  Matrix m(t.rows(), t.cols());
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<float>(t[i]);
  return m;
}

inline Matrix concat_columns(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw ShapeError("concat_columns: row counts " + std::to_string(a.rows) + " and " +
                                         std::to_string(b.rows));
  Matrix out(a.rows, a.cols + b.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    std::copy(a.row(r).begin(), a.row(r).end(), out.row(r).begin());
    std::copy(b.row(r).begin(), b.row(r).end(), out.row(r).begin() + a.cols);
  }
  return out;
}

inline double mean_squared_error(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw ShapeError("mean_squared_error: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    s += d * d;
  }
  return a.data.empty() ? 0.0 : s / double(a.data.size());
}

/// Mean over columns of the per-column variance.
inline double total_variance(const Matrix& m) {
  if (m.rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t c = 0; c < m.cols; ++c) {
    double mu = 0.0;
    for (std::size_t r = 0; r < m.rows; ++r) mu += m(r, c);
    mu /= double(m.rows);
    double var = 0.0;
    for (std::size_t r = 0; r < m.rows; ++r) var += (m(r, c) - mu) * (m(r, c) - mu);
    total += var / double(m.rows);
  }
  return total / double(m.cols);
}

inline Matrix stack_rows(const std::vector<const Matrix*>& parts) {
  if (parts.empty()) return {};
  Matrix out(0, parts.front()->cols);
  for (const Matrix* m : parts) {
    if (m->cols != out.cols) throw ShapeError("stack_rows: column mismatch");
    out.data.insert(out.data.end(), m->data.begin(), m->data.end());
    out.rows += m->rows;
  }
  return out;
}

}  // namespace pgpt
