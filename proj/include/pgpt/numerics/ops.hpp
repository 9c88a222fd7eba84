// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <type_traits>
#include <vector>

#include "pgpt/numerics/kernels.hpp"
#include "pgpt/numerics/tensor.hpp"

// Differentiable operations. Matrices are rank-2 row-major; rank-1 tensors
// of length n act as [1, n] rows where an operation broadcasts.
//
// Broadcasting for add/sub/mul: the right operand is either the same shape
// as the left, a row of the left's column count (broadcast down the rows),
// or a single-element tensor.
namespace pgpt {

namespace detail {

template <typename Real>
void require_matrix(const char* op, const Tensor<Real>& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
  }
}

enum class Broadcast { kSame, kRow, kScalar };

template <typename Real>
Broadcast broadcast_kind(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.size() == 1 && b.rank() <= 1) return Broadcast::kScalar;
  const bool b_row = (b.rank() == 1) || (b.rank() == 2 && b.dim(0) == 1);
  if (a.rank() == 2 && b_row && b.size() == a.dim(1)) return Broadcast::kRow;
  throw shape_error(op, a.shape(), b.shape());
}

template <typename Real>
void accumulate(TensorNode<Real>& parent, std::size_t i, Real g) {
  parent.grad[i] += g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_matrix("matmul", a);
  detail::require_matrix("matmul", b);
  if (a.dim(1) != b.dim(0)) throw shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Real> out(m * n, Real(0));
  kernels::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  auto an = a.node(), bn = b.node();
  return Tensor<Real>::make_result({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode<Real>& self) {
    if (an->requires_grad) kernels::gemm_nt(m, n, k, self.grad.data(), bn->data.data(), an->ensure_grad().data());
    if (bn->requires_grad) kernels::gemm_tn(m, k, n, an->data.data(), self.grad.data(), bn->ensure_grad().data());
  });
}

/// a * b^T for a [m,k] and b [n,k].
template <typename Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_matrix("matmul_nt", a);
  detail::require_matrix("matmul_nt", b);
  if (a.dim(1) != b.dim(1)) throw shape_error("matmul_nt", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<Real> out(m * n, Real(0));
  kernels::gemm_nt(m, k, n, a.data().data(), b.data().data(), out.data());
  auto an = a.node(), bn = b.node();
  return Tensor<Real>::make_result({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode<Real>& self) {
    if (an->requires_grad) kernels::gemm_nn(m, n, k, self.grad.data(), bn->data.data(), an->ensure_grad().data());
    if (bn->requires_grad) kernels::gemm_tn(m, n, k, self.grad.data(), an->data.data(), bn->ensure_grad().data());
  });
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
  detail::require_matrix("transpose", a);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<Real> out(r * c);
  kernels::transpose(r, c, a.data().data(), out.data());
  auto an = a.node();
  return Tensor<Real>::make_result({c, r}, std::move(out), {a}, [an, r, c](TensorNode<Real>& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  const auto kind = detail::broadcast_kind("add", a, b);
  const std::size_t n = a.size(), cols = a.cols();
  std::vector<Real> out(a.values());
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] += kind == detail::Broadcast::kSame ? bd[i] : kind == detail::Broadcast::kRow ? bd[i % cols] : bd[0];
  }
  auto an = a.node(), bn = b.node();
  return Tensor<Real>::make_result(a.shape(), std::move(out), {a, b}, [an, bn, kind, n, cols](TensorNode<Real>& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        g[kind == detail::Broadcast::kSame ? i : kind == detail::Broadcast::kRow ? i % cols : 0] += self.grad[i];
      }
    }
  });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  const auto kind = detail::broadcast_kind("sub", a, b);
  const std::size_t n = a.size(), cols = a.cols();
  std::vector<Real> out(a.values());
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] -= kind == detail::Broadcast::kSame ? bd[i] : kind == detail::Broadcast::kRow ? bd[i % cols] : bd[0];
  }
  auto an = a.node(), bn = b.node();
  return Tensor<Real>::make_result(a.shape(), std::move(out), {a, b}, [an, bn, kind, n, cols](TensorNode<Real>& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        g[kind == detail::Broadcast::kSame ? i : kind == detail::Broadcast::kRow ? i % cols : 0] -= self.grad[i];
      }
    }
  });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  const auto kind = detail::broadcast_kind("mul", a, b);
  const std::size_t n = a.size(), cols = a.cols();
  auto index = [kind, cols](std::size_t i) {
    return kind == detail::Broadcast::kSame ? i : kind == detail::Broadcast::kRow ? i % cols : std::size_t{0};
  };
  std::vector<Real> out(n);
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] * bd[index(i)];
  auto an = a.node(), bn = b.node();
  return Tensor<Real>::make_result(a.shape(), std::move(out), {a, b}, [an, bn, n, index](TensorNode<Real>& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * bn->data[index(i)];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[index(i)] += self.grad[i] * an->data[i];
    }
  });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
  std::vector<Real> out(a.values());
  for (auto& v : out) v *= s;
  auto an = a.node();
  return Tensor<Real>::make_result(a.shape(), std::move(out), {a}, [an, s](TensorNode<Real>& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real s) {
  std::vector<Real> out(a.values());
  for (auto& v : out) v += s;
  auto an = a.node();
  return Tensor<Real>::make_result(a.shape(), std::move(out), {a}, [an](TensorNode<Real>& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename Real> Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) { return add(a, b); }
template <typename Real> Tensor<Real> operator-(const Tensor<Real>& a, const Tensor<Real>& b) { return sub(a, b); }
template <typename Real> Tensor<Real> operator*(const Tensor<Real>& a, const Tensor<Real>& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

namespace detail {
template <typename Real, typename F, typename DF>
Tensor<Real> unary(const Tensor<Real>& a, F f, DF df) {
  std::vector<Real> out(a.size());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i]);
  auto an = a.node();
  return Tensor<Real>::make_result(a.shape(), std::move(out), {a}, [an, df](TensorNode<Real>& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(an->data[i], self.data[i]);
  });
}
}  // namespace detail

template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& a) {
  return detail::unary(a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return Real(1) - y * y; });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
  return detail::unary(
      a, [](Real x) { return Real(1) / (Real(1) + std::exp(-x)); }, [](Real, Real y) { return y * (Real(1) - y); });
}

/// GELU, tanh approximation (GPT-2 form).
template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& a) {
  constexpr Real c = Real(0.7978845608028654);  // sqrt(2/pi)
  constexpr Real k = Real(0.044715);
  return detail::unary(
      a,
      [](Real x) { return Real(0.5) * x * (Real(1) + std::tanh(c * (x + k * x * x * x))); },
      [](Real x, Real) {
        const Real u = c * (x + k * x * x * x);
        const Real th = std::tanh(u);
        const Real du = c * (Real(1) + Real(3) * k * x * x);
        return Real(0.5) * (Real(1) + th) + Real(0.5) * x * (Real(1) - th * th) * du;
      });
}

template <typename Real>
Tensor<Real> square(const Tensor<Real>& a) {
  return detail::unary(a, [](Real x) { return x * x; }, [](Real x, Real) { return Real(2) * x; });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Real s = 0;
  for (Real v : a.data()) s += v;
  auto an = a.node();
  return Tensor<Real>::make_result({}, {s}, {a}, [an](TensorNode<Real>& self) {
    auto& g = an->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), Real(1) / static_cast<Real>(a.size()));
}

/// Column means over rows: [T, C] -> [1, C].
template <typename Real>
Tensor<Real> mean_rows(const Tensor<Real>& a) {
  detail::require_matrix("mean_rows", a);
  const std::size_t r = a.dim(0), c = a.dim(1);
  if (r == 0) throw ShapeError("mean_rows: no rows");
  std::vector<Real> out(c, Real(0));
  const auto ad = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += ad[i * c + j];
  for (auto& v : out) v /= static_cast<Real>(r);
  auto an = a.node();
  return Tensor<Real>::make_result({1, c}, std::move(out), {a}, [an, r, c](TensorNode<Real>& self) {
    auto& g = an->ensure_grad();
    const Real inv = Real(1) / static_cast<Real>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] * inv;
  });
}

/// Mean squared error over all elements.
template <typename Real>
Tensor<Real> mse(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) throw shape_error("mse", a.shape(), b.shape());
  const std::size_t n = a.size();
  Real s = 0;
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const Real d = ad[i] - bd[i];
    s += d * d;
  }
  auto an = a.node(), bn = b.node();
  return Tensor<Real>::make_result({}, {s / static_cast<Real>(n)}, {a, b}, [an, bn, n](TensorNode<Real>& self) {
    const Real k = Real(2) * self.grad[0] / static_cast<Real>(n);
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += k * (an->data[i] - bn->data[i]);
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] -= k * (an->data[i] - bn->data[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  if (shape_size(shape) != a.size()) throw shape_error("reshape", a.shape(), shape);
  auto an = a.node();
  return Tensor<Real>::make_result(std::move(shape), a.values(), {a}, [an](TensorNode<Real>& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& a, std::size_t begin, std::size_t end) {
  detail::require_matrix("slice_rows", a);
  if (begin > end || end > a.dim(0)) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside shape " + shape_str(a.shape()));
  }
  const std::size_t c = a.dim(1);
  std::vector<Real> out(a.data().begin() + begin * c, a.data().begin() + end * c);
  auto an = a.node();
  return Tensor<Real>::make_result({end - begin, c}, std::move(out), {a}, [an, begin, c](TensorNode<Real>& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
  });
}

template <typename Real>
Tensor<Real> slice_cols(const Tensor<Real>& a, std::size_t begin, std::size_t end) {
  detail::require_matrix("slice_cols", a);
  if (begin > end || end > a.dim(1)) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside shape " + shape_str(a.shape()));
  }
  const std::size_t r = a.dim(0), c = a.dim(1), w = end - begin;
  std::vector<Real> out(r * w);
  const auto ad = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = ad[i * c + begin + j];
  auto an = a.node();
  return Tensor<Real>::make_result({r, w}, std::move(out), {a}, [an, r, c, w, begin](TensorNode<Real>& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
  });
}

template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    detail::require_matrix("concat_rows", p);
    if (p.dim(1) != c) throw shape_error("concat_rows", parts.front().shape(), p.shape());
    r += p.dim(0);
  }
  std::vector<Real> out;
  out.reserve(r * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<std::shared_ptr<TensorNode<Real>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return Tensor<Real>::make_result({r, c}, std::move(out), parts, [nodes](TensorNode<Real>& self) {
    std::size_t offset = 0;
    for (const auto& n : nodes) {
      if (n->requires_grad) {
        auto& g = n->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      }
      offset += n->data.size();
    }
  });
}

template <typename Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    detail::require_matrix("concat_cols", p);
    if (p.dim(0) != r) throw shape_error("concat_cols", parts.front().shape(), p.shape());
    c += p.dim(1);
  }
  std::vector<Real> out(r * c);
  std::size_t offset = 0;
  std::vector<std::shared_ptr<TensorNode<Real>>> nodes;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    const auto pd = p.data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * c + offset + j] = pd[i * w + j];
    nodes.push_back(p.node());
    offsets.push_back(offset);
    offset += w;
  }
  return Tensor<Real>::make_result({r, c}, std::move(out), parts, [nodes, offsets, r, c](TensorNode<Real>& self) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const auto& n = nodes[k];
      if (!n->requires_grad) continue;
      auto& g = n->ensure_grad();
      const std::size_t w = n->shape[1];
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * c + offsets[k] + j];
    }
  });
}

/// [1, C] (or [C]) repeated to [T, C].
template <typename Real>
Tensor<Real> broadcast_rows(const Tensor<Real>& row, std::size_t t) {
  const std::size_t c = row.size();
  if (!(row.rank() == 1 || (row.rank() == 2 && row.dim(0) == 1))) {
    throw ShapeError("broadcast_rows: expected a row, got " + shape_str(row.shape()));
  }
  std::vector<Real> out(t * c);
  for (std::size_t i = 0; i < t; ++i) std::copy(row.data().begin(), row.data().end(), out.begin() + i * c);
  auto rn = row.node();
  return Tensor<Real>::make_result({t, c}, std::move(out), {row}, [rn, t, c](TensorNode<Real>& self) {
    auto& g = rn->ensure_grad();
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
  });
}

/// Row gather: out[i] = table[ids[i]].
template <typename Real>
Tensor<Real> embedding(const Tensor<Real>& table, std::span<const int> ids) {
  detail::require_matrix("embedding", table);
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<Real> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(v) + " rows");
    }
    std::copy_n(table.data().begin() + ids[i] * d, d, out.begin() + i * d);
  }
  auto tn = table.node();
  std::vector<int> idx(ids.begin(), ids.end());
  return Tensor<Real>::make_result({ids.size(), d}, std::move(out), {table}, [tn, idx, d](TensorNode<Real>& self) {
    auto& g = tn->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
  });
}

/// Centered zero-padded time unfold for 1-D convolution: [T, C] -> [T, kernel*C].
/// Output row t holds input rows t - kernel/2 .. t + kernel/2.
template <typename Real>
Tensor<Real> unfold_time(const Tensor<Real>& a, std::size_t kernel) {
  detail::require_matrix("unfold_time", a);
  if (kernel % 2 == 0) throw ShapeError("unfold_time: kernel must be odd");
  const std::size_t t = a.dim(0), c = a.dim(1), w = kernel * c;
  const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
  std::vector<Real> out(t * w, Real(0));
  const auto ad = a.data();
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t k = 0; k < kernel; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(k) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
      std::copy_n(ad.begin() + src * c, c, out.begin() + i * w + k * c);
    }
  }
  auto an = a.node();
  return Tensor<Real>::make_result({t, w}, std::move(out), {a}, [an, t, c, w, kernel, half](TensorNode<Real>& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(k) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
        for (std::size_t j = 0; j < c; ++j) g[src * c + j] += self.grad[i * w + k * c + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization & attention

template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& a) {
  detail::require_matrix("softmax_rows", a);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<Real> out(r * c);
  const auto ad = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, ad[i * c + j]);
    Real s = 0;
    for (std::size_t j = 0; j < c; ++j) s += (out[i * c + j] = std::exp(ad[i * c + j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= s;
  }
  auto an = a.node();
  return Tensor<Real>::make_result({r, c}, std::move(out), {a}, [an, r, c](TensorNode<Real>& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      Real dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.data[i * c + j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.data[i * c + j] * (self.grad[i * c + j] - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Row-wise layer norm with affine gamma/beta of width C. A constant row
/// normalizes to zeros before the affine step.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& a, const Tensor<Real>& gamma, const Tensor<Real>& beta) {
  detail::require_matrix("layer_norm", a);
  const std::size_t r = a.dim(0), c = a.dim(1);
  if (gamma.size() != c) throw shape_error("layer_norm", a.shape(), gamma.shape());
  if (beta.size() != c) throw shape_error("layer_norm", a.shape(), beta.shape());
  std::vector<Real> xhat(r * c), out(r * c), inv_std(r);
  const auto ad = a.data(), gd = gamma.data(), bd = beta.data();
  for (std::size_t i = 0; i < r; ++i) {
    Real mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += ad[i * c + j];
    mu /= static_cast<Real>(c);
    Real var = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const Real d = ad[i * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<Real>(c);
    inv_std[i] = Real(1) / std::sqrt(var + Real(kLayerNormEps));
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (ad[i * c + j] - mu) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gd[j] + bd[j];
    }
  }
  auto an = a.node(), gn = gamma.node(), bn = beta.node();
  return Tensor<Real>::make_result(
      {r, c}, std::move(out), {a, gamma, beta},
      [an, gn, bn, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode<Real>& self) {
        const auto& dy = self.grad;
        if (gn->requires_grad) {
          auto& g = gn->ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += dy[i * c + j] * xhat[i * c + j];
        }
        if (bn->requires_grad) {
          auto& g = bn->ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += dy[i * c + j];
        }
        if (an->requires_grad) {
          auto& g = an->ensure_grad();
          const Real inv_c = Real(1) / static_cast<Real>(c);
          for (std::size_t i = 0; i < r; ++i) {
            Real s1 = 0, s2 = 0;
            for (std::size_t j = 0; j < c; ++j) {
              const Real dxh = dy[i * c + j] * gn->data[j];
              s1 += dxh;
              s2 += dxh * xhat[i * c + j];
            }
            for (std::size_t j = 0; j < c; ++j) {
              const Real dxh = dy[i * c + j] * gn->data[j];
              g[i * c + j] += inv_std[i] * (dxh - inv_c * s1 - xhat[i * c + j] * inv_c * s2);
            }
          }
        }
      });
}

/// Fused multi-head scaled dot-product attention.
/// q [n, d], k and v [m, d]; d splits into `heads` contiguous column groups.
/// With `causal`, query i sees keys j <= i + (m - n).
template <typename Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v, std::size_t heads,
                       bool causal) {
  detail::require_matrix("attention", q);
  detail::require_matrix("attention", k);
  detail::require_matrix("attention", v);
  if (q.dim(1) != k.dim(1)) throw shape_error("attention", q.shape(), k.shape());
  if (k.shape() != v.shape()) throw shape_error("attention", k.shape(), v.shape());
  const std::size_t n = q.dim(0), m = k.dim(0), d = q.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const Real sc = Real(1) / std::sqrt(static_cast<Real>(dh));
  const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(m) - static_cast<std::ptrdiff_t>(n);

  auto gather = [](const Tensor<Real>& t, std::size_t h, std::size_t dh_) {
    const std::size_t rows = t.dim(0), cols = t.dim(1);
    std::vector<Real> out(rows * dh_);
    const auto td = t.data();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < dh_; ++j) out[i * dh_ + j] = td[i * cols + h * dh_ + j];
    return out;
  };

  std::vector<Real> out(n * d, Real(0));
  std::vector<Real> probs(heads * n * m, Real(0));
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = gather(q, h, dh), kh = gather(k, h, dh), vh = gather(v, h, dh);
    Real* p = probs.data() + h * n * m;
    kernels::gemm_nt(n, dh, m, qh.data(), kh.data(), p);
    for (std::size_t i = 0; i < n; ++i) {
      Real* row = p + i * m;
      const std::size_t visible =
          causal ? static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(i) + shift + 1, 0,
                                                                       static_cast<std::ptrdiff_t>(m)))
                 : m;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, row[j] * sc);
      Real s = 0;
      for (std::size_t j = 0; j < m; ++j) {
        row[j] = j < visible ? std::exp(row[j] * sc - mx) : Real(0);
        s += row[j];
      }
      if (s > 0) {
        for (std::size_t j = 0; j < m; ++j) row[j] /= s;
      }
    }
    std::vector<Real> oh(n * dh, Real(0));
    kernels::gemm_nn(n, m, dh, p, vh.data(), oh.data());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dh; ++j) out[i * d + h * dh + j] = oh[i * dh + j];
  }

  auto qn = q.node(), kn = k.node(), vn = v.node();
  return Tensor<Real>::make_result(
      {n, d}, std::move(out), {q, k, v},
      [qn, kn, vn, n, m, d, dh, heads, sc, probs = std::move(probs)](TensorNode<Real>& self) {
        auto gather = [](const std::vector<Real>& src, std::size_t rows, std::size_t cols, std::size_t h,
                         std::size_t w) {
          std::vector<Real> out(rows * w);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * w + j] = src[i * cols + h * w + j];
          return out;
        };
        auto scatter = [](std::vector<Real>& dst, const std::vector<Real>& src, std::size_t rows, std::size_t cols,
                          std::size_t h, std::size_t w) {
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < w; ++j) dst[i * cols + h * w + j] += src[i * w + j];
        };
        for (std::size_t h = 0; h < heads; ++h) {
          const Real* p = probs.data() + h * n * m;
          const auto doh = gather(self.grad, n, d, h, dh);
          const auto qh = gather(qn->data, n, d, h, dh);
          const auto kh = gather(kn->data, m, d, h, dh);
          const auto vh = gather(vn->data, m, d, h, dh);
          if (vn->requires_grad) {
            std::vector<Real> dv(m * dh, Real(0));
            kernels::gemm_tn(n, m, dh, p, doh.data(), dv.data());
            scatter(vn->ensure_grad(), dv, m, d, h, dh);
          }
          if (!qn->requires_grad && !kn->requires_grad) continue;
          std::vector<Real> ds(n * m, Real(0));
          kernels::gemm_nt(n, dh, m, doh.data(), vh.data(), ds.data());
          for (std::size_t i = 0; i < n; ++i) {
            Real dot = 0;
            for (std::size_t j = 0; j < m; ++j) dot += ds[i * m + j] * p[i * m + j];
            for (std::size_t j = 0; j < m; ++j) ds[i * m + j] = p[i * m + j] * (ds[i * m + j] - dot) * sc;
          }
          if (qn->requires_grad) {
            std::vector<Real> dq(n * dh, Real(0));
            kernels::gemm_nn(n, m, dh, ds.data(), kh.data(), dq.data());
            scatter(qn->ensure_grad(), dq, n, d, h, dh);
          }
          if (kn->requires_grad) {
            std::vector<Real> dk(m * dh, Real(0));
            kernels::gemm_tn(n, m, dh, ds.data(), qh.data(), dk.data());
            scatter(kn->ensure_grad(), dk, m, d, h, dh);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean token cross-entropy over rows whose target is >= 0.
/// logits [n, K]; targets of length n. Rows with a negative target are masked.
template <typename Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const int> targets) {
  detail::require_matrix("cross_entropy", logits);
  const std::size_t r = logits.dim(0), c = logits.dim(1);
  if (targets.size() != r) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  std::vector<Real> probs(r * c);
  Real total = 0;
  std::size_t count = 0;
  const auto ld = logits.data();
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] >= static_cast<int>(c)) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) + " >= " + std::to_string(c));
    }
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, ld[i * c + j]);
    Real s = 0;
    for (std::size_t j = 0; j < c; ++j) s += (probs[i * c + j] = std::exp(ld[i * c + j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= s;
    if (targets[i] < 0) continue;
    total += std::log(s) + mx - ld[i * c + targets[i]];
    ++count;
  }
  const Real denom = count ? static_cast<Real>(count) : Real(1);
  std::vector<int> tg(targets.begin(), targets.end());
  auto ln = logits.node();
  return Tensor<Real>::make_result(
      {}, {total / denom}, {logits}, [ln, tg, r, c, denom, probs = std::move(probs)](TensorNode<Real>& self) {
        auto& g = ln->ensure_grad();
        const Real k = self.grad[0] / denom;
        for (std::size_t i = 0; i < r; ++i) {
          if (tg[i] < 0) continue;
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += k * probs[i * c + j];
          g[i * c + tg[i]] -= k;
        }
      });
}

/// Mean binary cross-entropy on logits; labels in {0, 1}.
template <typename Real>
Tensor<Real> bce_with_logits(const Tensor<Real>& logits, std::span<const std::type_identity_t<Real>> labels) {
  const std::size_t n = logits.size();
  if (labels.size() != n) {
    throw ShapeError("bce_with_logits: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logits.shape()));
  }
  Real total = 0;
  const auto ld = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    const Real x = ld[i];
    // log(1 + exp(-|x|)) + max(x, 0) - x * y
    total += std::log1p(std::exp(-std::abs(x))) + std::max(x, Real(0)) - x * labels[i];
  }
  std::vector<Real> y(labels.begin(), labels.end());
  auto ln = logits.node();
  return Tensor<Real>::make_result({}, {total / static_cast<Real>(n)}, {logits}, [ln, y, n](TensorNode<Real>& self) {
    auto& g = ln->ensure_grad();
    const Real k = self.grad[0] / static_cast<Real>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Real s = Real(1) / (Real(1) + std::exp(-ln->data[i]));
      g[i] += k * (s - y[i]);
    }
  });
}

/// Cosine similarity of two equal-size tensors viewed as flat vectors.
/// Returns 0 (and no gradient) when either has zero norm.
template <typename Real>
Tensor<Real> cosine_similarity(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.size() != b.size()) throw shape_error("cosine_similarity", a.shape(), b.shape());
  const std::size_t n = a.size();
  const auto ad = a.data(), bd = b.data();
  Real dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += ad[i] * bd[i];
    na += ad[i] * ad[i];
    nb += bd[i] * bd[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  const bool degenerate = na == Real(0) || nb == Real(0);
  const Real cs = degenerate ? Real(0) : dot / (na * nb);
  auto an = a.node(), bn = b.node();
  return Tensor<Real>::make_result({}, {cs}, {a, b}, [an, bn, n, na, nb, cs, degenerate](TensorNode<Real>& self) {
    if (degenerate) return;
    const Real g = self.grad[0];
    if (an->requires_grad) {
      auto& ga = an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g * (bn->data[i] / (na * nb) - cs * an->data[i] / (na * na));
    }
    if (bn->requires_grad) {
      auto& gb = bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) gb[i] += g * (an->data[i] / (na * nb) - cs * bn->data[i] / (nb * nb));
    }
  });
}

/// Forward value a, gradient identity onto a; the value of `target` is used
/// in place of a. Implements the straight-through estimator:
/// out = a + stop_gradient(target - a).
template <typename Real>
Tensor<Real> straight_through(const Tensor<Real>& a, const Tensor<Real>& target) {
  if (a.shape() != target.shape()) throw shape_error("straight_through", a.shape(), target.shape());
  auto an = a.node();
  return Tensor<Real>::make_result(a.shape(), target.values(), {a}, [an](TensorNode<Real>& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace pgpt
