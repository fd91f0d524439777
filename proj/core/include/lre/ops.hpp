#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lre/tensor.hpp"

// Numeric kernels with reverse-mode support. Forward math fills the output,
// the attached closure accumulates into parent gradient buffers. Shapes are
// rank 1/2 only; no broadcasting beyond the row-bias case the model needs.

namespace lre {

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;

namespace detail {

template <typename S>
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <typename S>
inline void require_finite(const TensorT<S>& t, const char* op) {
  const S* p = t.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(static_cast<double>(p[i]))) {
      throw std::domain_error(std::string(op) + ": non-finite input at flat index " +
                              std::to_string(i));
    }
  }
}

template <typename S>
inline bool same_shape(const TensorT<S>& a, const TensorT<S>& b) {
  return a.shape() == b.shape();
}

template <typename S>
inline void accumulate(const std::shared_ptr<std::vector<S>>& grad,
                       const std::vector<S>& delta) {
  if (!grad) return;
  S* g = grad->data();
  for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require<S>(detail::same_shape(a, b), "add: shape mismatch");
  auto out = TensorT<S>::make_op_output(a.shape(), {a, b});
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (out.node()) {
    auto og = out.grad_ptr(), ag = a.requires_grad() ? a.grad_ptr() : nullptr,
         bg = b.requires_grad() ? b.grad_ptr() : nullptr;
    out.node()->backward = [og, ag, bg]() {
      detail::accumulate(ag, *og);
      detail::accumulate(bg, *og);
    };
  }
  return out;
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require<S>(detail::same_shape(a, b), "sub: shape mismatch");
  auto out = TensorT<S>::make_op_output(a.shape(), {a, b});
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (out.node()) {
    auto og = out.grad_ptr(), ag = a.requires_grad() ? a.grad_ptr() : nullptr,
         bg = b.requires_grad() ? b.grad_ptr() : nullptr;
    out.node()->backward = [og, ag, bg]() {
      detail::accumulate(ag, *og);
      if (bg) {
        for (std::size_t i = 0; i < og->size(); ++i) (*bg)[i] -= (*og)[i];
      }
    };
  }
  return out;
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require<S>(detail::same_shape(a, b), "mul: shape mismatch");
  auto out = TensorT<S>::make_op_output(a.shape(), {a, b});
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (out.node()) {
    auto og = out.grad_ptr(), ag = a.requires_grad() ? a.grad_ptr() : nullptr,
         bg = b.requires_grad() ? b.grad_ptr() : nullptr;
    auto av = a.values_ptr(), bv = b.values_ptr();
    out.node()->backward = [og, ag, bg, av, bv]() {
      if (ag) {
        for (std::size_t i = 0; i < og->size(); ++i) (*ag)[i] += (*og)[i] * (*bv)[i];
      }
      if (bg) {
        for (std::size_t i = 0; i < og->size(); ++i) (*bg)[i] += (*og)[i] * (*av)[i];
      }
    };
  }
  return out;
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S c) {
  auto out = TensorT<S>::make_op_output(a.shape(), {a});
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * c;
  if (out.node()) {
    auto og = out.grad_ptr(), ag = a.grad_ptr();
    out.node()->backward = [og, ag, c]() {
      if (ag) {
        for (std::size_t i = 0; i < og->size(); ++i) (*ag)[i] += (*og)[i] * c;
      }
    };
  }
  return out;
}

template <typename S>
TensorT<S> add_const(const TensorT<S>& a, S c) {
  auto out = TensorT<S>::make_op_output(a.shape(), {a});
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + c;
  if (out.node()) {
    auto og = out.grad_ptr(), ag = a.grad_ptr();
    out.node()->backward = [og, ag]() { detail::accumulate(ag, *og); };
  }
  return out;
}

// sum of several same-shape tensors
template <typename S>
TensorT<S> add_n(std::span<const TensorT<S>> xs) {
  detail::require<S>(!xs.empty(), "add_n: empty input");
  for (const auto& x : xs) {
    detail::require<S>(detail::same_shape(x, xs[0]), "add_n: shape mismatch");
  }
  std::vector<TensorT<S>> parents(xs.begin(), xs.end());
  auto out = TensorT<S>::make_op_output(xs[0].shape(), parents);
  for (const auto& x : xs) {
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += x.data()[i];
  }
  if (out.node()) {
    auto og = out.grad_ptr();
    std::vector<std::shared_ptr<std::vector<S>>> grads;
    for (const auto& x : xs) grads.push_back(x.requires_grad() ? x.grad_ptr() : nullptr);
    out.node()->backward = [og, grads]() {
      for (const auto& g : grads) detail::accumulate(g, *og);
    };
  }
  return out;
}

template <typename S>
TensorT<S> div(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require<S>(detail::same_shape(a, b), "div: shape mismatch");
  auto out = TensorT<S>::make_op_output(a.shape(), {a, b});
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] / b.data()[i];
  if (out.node()) {
    auto og = out.grad_ptr(), ag = a.requires_grad() ? a.grad_ptr() : nullptr,
         bg = b.requires_grad() ? b.grad_ptr() : nullptr;
    auto av = a.values_ptr(), bv = b.values_ptr();
    out.node()->backward = [og, ag, bg, av, bv]() {
      for (std::size_t i = 0; i < og->size(); ++i) {
        const S inv = S(1) / (*bv)[i];
        if (ag) (*ag)[i] += (*og)[i] * inv;
        if (bg) (*bg)[i] -= (*og)[i] * (*av)[i] * inv * inv;
      }
    };
  }
  return out;
}

// one element of a rank-1 tensor, as a [1] scalar tensor
template <typename S>
TensorT<S> element(const TensorT<S>& x, int i) {
  detail::require<S>(x.rank() == 1 && i >= 0 && i < x.dim(0), "element: index out of range");
  auto out = TensorT<S>::make_op_output({1}, {x});
  out.data()[0] = x.data()[i];
  if (out.node()) {
    auto og = out.grad_ptr(), xg = x.grad_ptr();
    out.node()->backward = [og, xg, i]() {
      if (xg) (*xg)[static_cast<std::size_t>(i)] += (*og)[0];
    };
  }
  return out;
}

// x * s where s is a [1] tensor on the tape (gradient flows to both)
template <typename S>
TensorT<S> scale_by(const TensorT<S>& x, const TensorT<S>& s) {
  detail::require<S>(s.size() == 1, "scale_by: scale must be a scalar tensor");
  auto out = TensorT<S>::make_op_output(x.shape(), {x, s});
  const S c = s.data()[0];
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = x.data()[i] * c;
  if (out.node()) {
    auto og = out.grad_ptr(), xg = x.requires_grad() ? x.grad_ptr() : nullptr,
         sg = s.requires_grad() ? s.grad_ptr() : nullptr;
    auto xv = x.values_ptr();
    out.node()->backward = [og, xg, sg, xv, c]() {
      if (xg) {
        for (std::size_t i = 0; i < og->size(); ++i) (*xg)[i] += (*og)[i] * c;
      }
      if (sg) {
        S acc = S(0);
        for (std::size_t i = 0; i < og->size(); ++i) acc += (*og)[i] * (*xv)[i];
        (*sg)[0] += acc;
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// matrix products (Eigen-backed)
// ---------------------------------------------------------------------------

// A[m,k] * B[k,n] -> [m,n]; 1-D A is treated as [1,k], result stays 1-D.
template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  const int m = a.rank() == 1 ? 1 : a.dim(0);
  const int k = a.rank() == 1 ? a.dim(0) : a.dim(1);
  detail::require<S>(b.rank() == 2 && b.dim(0) == k, "matmul: inner dimension mismatch");
  const int n = b.dim(1);
  std::vector<int> out_shape = a.rank() == 1 ? std::vector<int>{n} : std::vector<int>{m, n};
  auto out = TensorT<S>::make_op_output(out_shape, {a, b});
  EMap<S>(out.data(), m, n).noalias() =
      ECMap<S>(a.data(), m, k) * ECMap<S>(b.data(), k, n);
  if (out.node()) {
    auto og = out.grad_ptr(), ag = a.requires_grad() ? a.grad_ptr() : nullptr,
         bg = b.requires_grad() ? b.grad_ptr() : nullptr;
    auto av = a.values_ptr(), bv = b.values_ptr();
    out.node()->backward = [og, ag, bg, av, bv, m, k, n]() {
      ECMap<S> gmap(og->data(), m, n);
      if (ag) {
        EMap<S>(ag->data(), m, k).noalias() += gmap * ECMap<S>(bv->data(), k, n).transpose();
      }
      if (bg) {
        EMap<S>(bg->data(), k, n).noalias() += ECMap<S>(av->data(), m, k).transpose() * gmap;
      }
    };
  }
  return out;
}

// A[m,k] * B[n,k]^T -> [m,n]
template <typename S>
TensorT<S> matmul_nt(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require<S>(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
                     "matmul_nt: inner dimension mismatch");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  auto out = TensorT<S>::make_op_output({m, n}, {a, b});
  EMap<S>(out.data(), m, n).noalias() =
      ECMap<S>(a.data(), m, k) * ECMap<S>(b.data(), n, k).transpose();
  if (out.node()) {
    auto og = out.grad_ptr(), ag = a.requires_grad() ? a.grad_ptr() : nullptr,
         bg = b.requires_grad() ? b.grad_ptr() : nullptr;
    auto av = a.values_ptr(), bv = b.values_ptr();
    out.node()->backward = [og, ag, bg, av, bv, m, k, n]() {
      ECMap<S> gmap(og->data(), m, n);
      if (ag) {
        EMap<S>(ag->data(), m, k).noalias() += gmap * ECMap<S>(bv->data(), n, k);
      }
      if (bg) {
        EMap<S>(bg->data(), n, k).noalias() += gmap.transpose() * ECMap<S>(av->data(), m, k);
      }
    };
  }
  return out;
}

template <typename S>
TensorT<S> transpose(const TensorT<S>& a) {
  detail::require<S>(a.rank() == 2, "transpose: rank-2 required");
  const int m = a.dim(0), n = a.dim(1);
  auto out = TensorT<S>::make_op_output({n, m}, {a});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  }
  if (out.node()) {
    auto og = out.grad_ptr(), ag = a.grad_ptr();
    out.node()->backward = [og, ag, m, n]() {
      if (!ag) return;
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          (*ag)[static_cast<std::size_t>(i) * n + j] +=
              (*og)[static_cast<std::size_t>(j) * m + i];
        }
      }
    };
  }
  return out;
}

// X[m,n] + b[n] broadcast over rows
template <typename S>
TensorT<S> add_bias(const TensorT<S>& x, const TensorT<S>& b) {
  const int n = x.cols();
  detail::require<S>(b.rank() == 1 && b.dim(0) == n, "add_bias: bias length mismatch");
  const int m = x.rows();
  auto out = TensorT<S>::make_op_output(x.shape(), {x, b});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out.data()[static_cast<std::size_t>(i) * n + j] =
          x.data()[static_cast<std::size_t>(i) * n + j] + b.data()[j];
    }
  }
  if (out.node()) {
    auto og = out.grad_ptr(), xg = x.requires_grad() ? x.grad_ptr() : nullptr,
         bg = b.requires_grad() ? b.grad_ptr() : nullptr;
    out.node()->backward = [og, xg, bg, m, n]() {
      detail::accumulate(xg, *og);
      if (bg) {
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) (*bg)[j] += (*og)[static_cast<std::size_t>(i) * n + j];
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// assembly: rows, slices, concatenation
// ---------------------------------------------------------------------------

// Stacks 1-D [n] and 2-D [t,n] pieces into one [T,n] matrix.
template <typename S>
TensorT<S> concat_rows(std::span<const TensorT<S>> xs) {
  detail::require<S>(!xs.empty(), "concat_rows: empty input");
  const int n = xs[0].cols();
  int total = 0;
  for (const auto& x : xs) {
    detail::require<S>(x.cols() == n, "concat_rows: column mismatch");
    total += x.rows();
  }
  std::vector<TensorT<S>> parents(xs.begin(), xs.end());
  auto out = TensorT<S>::make_op_output({total, n}, parents);
  std::size_t off = 0;
  for (const auto& x : xs) {
    std::copy(x.data(), x.data() + x.size(), out.data() + off);
    off += x.size();
  }
  if (out.node()) {
    auto og = out.grad_ptr();
    std::vector<std::shared_ptr<std::vector<S>>> grads;
    std::vector<std::size_t> sizes;
    for (const auto& x : xs) {
      grads.push_back(x.requires_grad() ? x.grad_ptr() : nullptr);
      sizes.push_back(x.size());
    }
    out.node()->backward = [og, grads, sizes]() {
      std::size_t off2 = 0;
      for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i]) {
          for (std::size_t j = 0; j < sizes[i]; ++j) (*grads[i])[j] += (*og)[off2 + j];
        }
        off2 += sizes[i];
      }
    };
  }
  return out;
}

template <typename S>
TensorT<S> concat_rows(std::initializer_list<TensorT<S>> xs) {
  std::vector<TensorT<S>> v(xs);
  return concat_rows(std::span<const TensorT<S>>(v));
}

// rows [r0, r1) of a matrix
template <typename S>
TensorT<S> slice_rows(const TensorT<S>& x, int r0, int r1) {
  detail::require<S>(x.rank() == 2 && r0 >= 0 && r1 <= x.dim(0) && r0 < r1,
                     "slice_rows: bad range");
  const int n = x.cols();
  auto out = TensorT<S>::make_op_output({r1 - r0, n}, {x});
  std::copy(x.data() + static_cast<std::size_t>(r0) * n,
            x.data() + static_cast<std::size_t>(r1) * n, out.data());
  if (out.node()) {
    auto og = out.grad_ptr(), xg = x.grad_ptr();
    out.node()->backward = [og, xg, r0, n]() {
      if (!xg) return;
      for (std::size_t j = 0; j < og->size(); ++j) {
        (*xg)[static_cast<std::size_t>(r0) * n + j] += (*og)[j];
      }
    };
  }
  return out;
}

// single row as a 1-D vector
template <typename S>
TensorT<S> row(const TensorT<S>& x, int r) {
  detail::require<S>(x.rank() == 2 && r >= 0 && r < x.dim(0), "row: index out of range");
  const int n = x.cols();
  auto out = TensorT<S>::make_op_output({n}, {x});
  std::copy(x.data() + static_cast<std::size_t>(r) * n,
            x.data() + static_cast<std::size_t>(r + 1) * n, out.data());
  if (out.node()) {
    auto og = out.grad_ptr(), xg = x.grad_ptr();
    out.node()->backward = [og, xg, r, n]() {
      if (!xg) return;
      for (int j = 0; j < n; ++j) (*xg)[static_cast<std::size_t>(r) * n + j] += (*og)[j];
    };
  }
  return out;
}

template <typename S>
TensorT<S> concat_vec(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require<S>(a.rank() == 1 && b.rank() == 1, "concat_vec: rank-1 required");
  auto out = TensorT<S>::make_op_output({a.dim(0) + b.dim(0)}, {a, b});
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
  if (out.node()) {
    auto og = out.grad_ptr(), ag = a.requires_grad() ? a.grad_ptr() : nullptr,
         bg = b.requires_grad() ? b.grad_ptr() : nullptr;
    const std::size_t na = a.size();
    out.node()->backward = [og, ag, bg, na]() {
      if (ag) {
        for (std::size_t i = 0; i < na; ++i) (*ag)[i] += (*og)[i];
      }
      if (bg) {
        for (std::size_t i = na; i < og->size(); ++i) (*bg)[i - na] += (*og)[i];
      }
    };
  }
  return out;
}

// rows of an embedding table; backward scatter-adds
template <typename S>
TensorT<S> embedding_rows(const TensorT<S>& table, const std::vector<int>& ids) {
  detail::require<S>(table.rank() == 2, "embedding_rows: table must be rank-2");
  const int v = table.dim(0), n = table.dim(1);
  for (int id : ids) {
    detail::require<S>(id >= 0 && id < v, "embedding_rows: id out of range");
  }
  auto out = TensorT<S>::make_op_output({static_cast<int>(ids.size()), n}, {table});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy(table.data() + static_cast<std::size_t>(ids[i]) * n,
              table.data() + static_cast<std::size_t>(ids[i] + 1) * n,
              out.data() + i * n);
  }
  if (out.node()) {
    auto og = out.grad_ptr(), tg = table.grad_ptr();
    out.node()->backward = [og, tg, ids, n]() {
      if (!tg) return;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (int j = 0; j < n; ++j) {
          (*tg)[static_cast<std::size_t>(ids[i]) * n + j] += (*og)[i * n + j];
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// nonlinearities and normalizations
// ---------------------------------------------------------------------------

// softmax over the last axis, max-subtraction stabilized
template <typename S>
TensorT<S> softmax(const TensorT<S>& x) {
  detail::require_finite(x, "softmax");
  const int rows = x.rows(), n = x.cols();
  auto out = TensorT<S>::make_op_output(x.shape(), {x});
  for (int r = 0; r < rows; ++r) {
    const S* xi = x.data() + static_cast<std::size_t>(r) * n;
    S* yi = out.data() + static_cast<std::size_t>(r) * n;
    S mx = xi[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    S sum = S(0);
    for (int j = 0; j < n; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      sum += yi[j];
    }
    for (int j = 0; j < n; ++j) yi[j] /= sum;
  }
  if (out.node()) {
    auto og = out.grad_ptr(), xg = x.grad_ptr();
    auto yv = out.values_ptr();
    out.node()->backward = [og, xg, yv, rows, n]() {
      if (!xg) return;
      for (int r = 0; r < rows; ++r) {
        const S* y = yv->data() + static_cast<std::size_t>(r) * n;
        const S* g = og->data() + static_cast<std::size_t>(r) * n;
        S dotp = S(0);
        for (int j = 0; j < n; ++j) dotp += g[j] * y[j];
        S* gx = xg->data() + static_cast<std::size_t>(r) * n;
        for (int j = 0; j < n; ++j) gx[j] += y[j] * (g[j] - dotp);
      }
    };
  }
  return out;
}

template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain,
                      const TensorT<S>& bias, S eps = S(1e-5)) {
  const int n = x.cols();
  detail::require<S>(gain.rank() == 1 && gain.dim(0) == n && bias.rank() == 1 &&
                         bias.dim(0) == n,
                     "layer_norm: gain/bias must match last axis");
  const int rows = x.rows();
  auto out = TensorT<S>::make_op_output(x.shape(), {x, gain, bias});
  auto xhat = std::make_shared<std::vector<S>>(x.size());
  auto inv_std = std::make_shared<std::vector<S>>(rows);
  for (int r = 0; r < rows; ++r) {
    const S* xi = x.data() + static_cast<std::size_t>(r) * n;
    S mean = S(0);
    for (int j = 0; j < n; ++j) mean += xi[j];
    mean /= S(n);
    S var = S(0);
    for (int j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= S(n);
    const S istd = S(1) / std::sqrt(var + eps);
    (*inv_std)[r] = istd;
    S* h = xhat->data() + static_cast<std::size_t>(r) * n;
    S* yi = out.data() + static_cast<std::size_t>(r) * n;
    for (int j = 0; j < n; ++j) {
      h[j] = (xi[j] - mean) * istd;
      yi[j] = h[j] * gain.data()[j] + bias.data()[j];
    }
  }
  if (out.node()) {
    auto og = out.grad_ptr(), xg = x.requires_grad() ? x.grad_ptr() : nullptr,
         gg = gain.requires_grad() ? gain.grad_ptr() : nullptr,
         bg = bias.requires_grad() ? bias.grad_ptr() : nullptr;
    auto gv = gain.values_ptr();
    out.node()->backward = [og, xg, gg, bg, gv, xhat, inv_std, rows, n]() {
      for (int r = 0; r < rows; ++r) {
        const S* g = og->data() + static_cast<std::size_t>(r) * n;
        const S* h = xhat->data() + static_cast<std::size_t>(r) * n;
        if (gg) {
          for (int j = 0; j < n; ++j) (*gg)[j] += g[j] * h[j];
        }
        if (bg) {
          for (int j = 0; j < n; ++j) (*bg)[j] += g[j];
        }
        if (xg) {
          // dl/dxhat = g * gain; dx = istd/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
          S sum_d = S(0), sum_dh = S(0);
          for (int j = 0; j < n; ++j) {
            const S d = g[j] * (*gv)[j];
            sum_d += d;
            sum_dh += d * h[j];
          }
          S* gx = xg->data() + static_cast<std::size_t>(r) * n;
          const S istd = (*inv_std)[r];
          for (int j = 0; j < n; ++j) {
            const S d = g[j] * (*gv)[j];
            gx[j] += istd * (d - sum_d / S(n) - h[j] * sum_dh / S(n));
          }
        }
      }
    };
  }
  return out;
}

// exact-Phi GELU: x * 0.5 * (1 + erf(x / sqrt(2)))
template <typename S>
TensorT<S> gelu(const TensorT<S>& x) {
  auto out = TensorT<S>::make_op_output(x.shape(), {x});
  constexpr S kInvSqrt2 = S(0.70710678118654752440);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const S v = x.data()[i];
    out.data()[i] = v * S(0.5) * (S(1) + std::erf(v * kInvSqrt2));
  }
  if (out.node()) {
    auto og = out.grad_ptr(), xg = x.grad_ptr();
    auto xv = x.values_ptr();
    out.node()->backward = [og, xg, xv]() {
      if (!xg) return;
      constexpr S kInvSqrt2b = S(0.70710678118654752440);
      constexpr S kInvSqrt2Pi = S(0.39894228040143267794);
      for (std::size_t i = 0; i < xv->size(); ++i) {
        const S v = (*xv)[i];
        const S phi = S(0.5) * (S(1) + std::erf(v * kInvSqrt2b));
        const S pdf = kInvSqrt2Pi * std::exp(S(-0.5) * v * v);
        (*xg)[i] += (*og)[i] * (phi + v * pdf);
      }
    };
  }
  return out;
}

// inverted dropout; caller passes the stream, identity when rate <= 0
template <typename S>
TensorT<S> dropout(const TensorT<S>& x, double rate, Rng& rng) {
  detail::require<S>(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  auto out = TensorT<S>::make_op_output(x.shape(), {x});
  auto mask = std::make_shared<std::vector<S>>(x.size());
  const S keep_scale = S(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const S m = rng.bernoulli(rate) ? S(0) : keep_scale;
    (*mask)[i] = m;
    out.data()[i] = x.data()[i] * m;
  }
  if (out.node()) {
    auto og = out.grad_ptr(), xg = x.grad_ptr();
    out.node()->backward = [og, xg, mask]() {
      if (!xg) return;
      for (std::size_t i = 0; i < mask->size(); ++i) (*xg)[i] += (*og)[i] * (*mask)[i];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions, similarity
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> sum(const TensorT<S>& x) {
  auto out = TensorT<S>::make_op_output({1}, {x});
  S s = S(0);
  for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i];
  out.data()[0] = s;
  if (out.node()) {
    auto og = out.grad_ptr(), xg = x.grad_ptr();
    out.node()->backward = [og, xg]() {
      if (!xg) return;
      for (std::size_t i = 0; i < xg->size(); ++i) (*xg)[i] += (*og)[0];
    };
  }
  return out;
}

template <typename S>
TensorT<S> mean(const TensorT<S>& x) {
  detail::require<S>(x.size() > 0, "mean: empty tensor");
  return scale(sum(x), S(1) / static_cast<S>(x.size()));
}

template <typename S>
TensorT<S> dot(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require<S>(a.size() == b.size(), "dot: size mismatch");
  auto out = TensorT<S>::make_op_output({1}, {a, b});
  S s = S(0);
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  out.data()[0] = s;
  if (out.node()) {
    auto og = out.grad_ptr(), ag = a.requires_grad() ? a.grad_ptr() : nullptr,
         bg = b.requires_grad() ? b.grad_ptr() : nullptr;
    auto av = a.values_ptr(), bv = b.values_ptr();
    out.node()->backward = [og, ag, bg, av, bv]() {
      const S g = (*og)[0];
      if (ag) {
        for (std::size_t i = 0; i < av->size(); ++i) (*ag)[i] += g * (*bv)[i];
      }
      if (bg) {
        for (std::size_t i = 0; i < bv->size(); ++i) (*bg)[i] += g * (*av)[i];
      }
    };
  }
  return out;
}

template <typename S>
S l2_norm_value(const TensorT<S>& v) {
  S s = S(0);
  for (std::size_t i = 0; i < v.size(); ++i) s += v.data()[i] * v.data()[i];
  return std::sqrt(s);
}

// v / ||v||; zero vectors are rejected
template <typename S>
TensorT<S> l2_normalize(const TensorT<S>& v) {
  detail::require<S>(v.rank() == 1, "l2_normalize: rank-1 required");
  const S norm = l2_norm_value(v);
  if (!(norm > S(0))) throw std::domain_error("l2_normalize: zero vector");
  auto out = TensorT<S>::make_op_output(v.shape(), {v});
  const S inv = S(1) / norm;
  for (std::size_t i = 0; i < v.size(); ++i) out.data()[i] = v.data()[i] * inv;
  if (out.node()) {
    auto og = out.grad_ptr(), vg = v.grad_ptr();
    auto yv = out.values_ptr();
    out.node()->backward = [og, vg, yv, inv]() {
      if (!vg) return;
      S proj = S(0);
      for (std::size_t i = 0; i < yv->size(); ++i) proj += (*og)[i] * (*yv)[i];
      for (std::size_t i = 0; i < yv->size(); ++i) {
        (*vg)[i] += inv * ((*og)[i] - proj * (*yv)[i]);
      }
    };
  }
  return out;
}

template <typename S>
TensorT<S> cosine_similarity(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require<S>(a.size() == b.size(), "cosine_similarity: size mismatch");
  return dot(l2_normalize(a), l2_normalize(b));
}

// ---------------------------------------------------------------------------
// cross entropy (fused, masked)
// ---------------------------------------------------------------------------

// Sum over masked rows of [logsumexp(row) - row[target]]. Pairs with a mask
// count so callers can take a mean over several sequences at once.
template <typename S>
TensorT<S> cross_entropy_masked_sum(const TensorT<S>& logits,
                                    const std::vector<int>& targets,
                                    const std::vector<std::uint8_t>& mask) {
  detail::require<S>(logits.rank() == 2, "cross_entropy: logits must be rank-2");
  const int rows = logits.dim(0), v = logits.dim(1);
  detail::require<S>(static_cast<int>(targets.size()) == rows &&
                         static_cast<int>(mask.size()) == rows,
                     "cross_entropy: target/mask length mismatch");
  auto out = TensorT<S>::make_op_output({1}, {logits});
  auto probs = std::make_shared<std::vector<S>>();  // masked rows only
  auto masked_rows = std::make_shared<std::vector<int>>();
  S total = S(0);
  for (int r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    detail::require<S>(targets[r] >= 0 && targets[r] < v, "cross_entropy: target out of range");
    const S* xi = logits.data() + static_cast<std::size_t>(r) * v;
    S mx = xi[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, xi[j]);
    S sum_exp = S(0);
    const std::size_t base = probs->size();
    probs->resize(base + static_cast<std::size_t>(v));
    for (int j = 0; j < v; ++j) {
      const S e = std::exp(xi[j] - mx);
      (*probs)[base + j] = e;
      sum_exp += e;
    }
    for (int j = 0; j < v; ++j) (*probs)[base + j] /= sum_exp;
    total += mx + std::log(sum_exp) - xi[targets[r]];
    masked_rows->push_back(r);
  }
  out.data()[0] = total;
  if (out.node()) {
    auto og = out.grad_ptr(), lg = logits.grad_ptr();
    out.node()->backward = [og, lg, probs, masked_rows, targets, v]() {
      if (!lg) return;
      const S g = (*og)[0];
      for (std::size_t i = 0; i < masked_rows->size(); ++i) {
        const int r = (*masked_rows)[i];
        S* gx = lg->data() + static_cast<std::size_t>(r) * v;
        const S* p = probs->data() + i * static_cast<std::size_t>(v);
        for (int j = 0; j < v; ++j) gx[j] += g * p[j];
        gx[targets[r]] -= g;
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// rotary position encoding
// ---------------------------------------------------------------------------

// Precomputed angles, shared by all heads (half-split pairing: lane i pairs
// with lane i + head_dim/2).
struct RopeTable {
  int max_position = 0;
  int half_dim = 0;
  std::vector<double> cs;  // [max_position, half_dim] cosines
  std::vector<double> sn;  // [max_position, half_dim] sines

  static RopeTable build(int max_position, int head_dim, double base) {
    RopeTable t;
    t.max_position = max_position;
    t.half_dim = head_dim / 2;
    t.cs.resize(static_cast<std::size_t>(max_position) * t.half_dim);
    t.sn.resize(static_cast<std::size_t>(max_position) * t.half_dim);
    for (int p = 0; p < max_position; ++p) {
      for (int i = 0; i < t.half_dim; ++i) {
        const double theta =
            static_cast<double>(p) *
            std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        t.cs[static_cast<std::size_t>(p) * t.half_dim + i] = std::cos(theta);
        t.sn[static_cast<std::size_t>(p) * t.half_dim + i] = std::sin(theta);
      }
    }
    return t;
  }
};

// x: [T, heads*head_dim]; row t sits at absolute position start_pos + t
template <typename S>
TensorT<S> rope(const TensorT<S>& x, const RopeTable& table, int start_pos, int heads) {
  const int n = x.cols();
  const int head_dim = n / heads;
  const int half = head_dim / 2;
  detail::require<S>(half == table.half_dim, "rope: table head_dim mismatch");
  const int rows = x.rows();
  detail::require<S>(start_pos + rows <= table.max_position, "rope: position exceeds table");
  auto out = TensorT<S>::make_op_output(x.shape(), {x});
  auto rotate = [&](const S* in, S* o, int pos) {
    const double* c = table.cs.data() + static_cast<std::size_t>(pos) * half;
    const double* s = table.sn.data() + static_cast<std::size_t>(pos) * half;
    for (int h = 0; h < heads; ++h) {
      const S* a = in + h * head_dim;
      S* b = o + h * head_dim;
      for (int i = 0; i < half; ++i) {
        const S x0 = a[i], x1 = a[i + half];
        b[i] = static_cast<S>(x0 * c[i] - x1 * s[i]);
        b[i + half] = static_cast<S>(x1 * c[i] + x0 * s[i]);
      }
    }
  };
  for (int t = 0; t < rows; ++t) {
    rotate(x.data() + static_cast<std::size_t>(t) * n,
           out.data() + static_cast<std::size_t>(t) * n, start_pos + t);
  }
  if (out.node()) {
    auto og = out.grad_ptr(), xg = x.grad_ptr();
    const RopeTable* tbl = &table;  // tables outlive the tape (owned by the model)
    out.node()->backward = [og, xg, tbl, start_pos, heads, head_dim, half, rows, n]() {
      if (!xg) return;
      for (int t = 0; t < rows; ++t) {
        const int pos = start_pos + t;
        const double* c = tbl->cs.data() + static_cast<std::size_t>(pos) * half;
        const double* s = tbl->sn.data() + static_cast<std::size_t>(pos) * half;
        const S* g = og->data() + static_cast<std::size_t>(t) * n;
        S* gx = xg->data() + static_cast<std::size_t>(t) * n;
        for (int h = 0; h < heads; ++h) {
          const S* gb = g + h * head_dim;
          S* ga = gx + h * head_dim;
          for (int i = 0; i < half; ++i) {
            const S g0 = gb[i], g1 = gb[i + half];
            ga[i] += static_cast<S>(g0 * c[i] + g1 * s[i]);
            ga[i + half] += static_cast<S>(g1 * c[i] - g0 * s[i]);
          }
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// causal attention over an append-only cache
// ---------------------------------------------------------------------------

// q: [T, heads*head_dim] (rope already applied). k_blocks/v_blocks cover
// cache positions [0, start_pos + T) in order, with the current block
// appended last. Query row t attends to absolute positions <= start_pos + t.
template <typename S>
TensorT<S> cached_attention(const TensorT<S>& q,
                            const std::vector<TensorT<S>>& k_blocks,
                            const std::vector<TensorT<S>>& v_blocks,
                            int start_pos, int heads) {
  const int n = q.cols();
  const int head_dim = n / heads;
  const int t_new = q.rows();
  detail::require<S>(k_blocks.size() == v_blocks.size(), "attention: k/v block count mismatch");
  int total = 0;
  for (std::size_t i = 0; i < k_blocks.size(); ++i) {
    detail::require<S>(k_blocks[i].cols() == n && v_blocks[i].cols() == n,
                       "attention: block width mismatch");
    detail::require<S>(k_blocks[i].rows() == v_blocks[i].rows(),
                       "attention: k/v block row mismatch");
    total += k_blocks[i].rows();
  }
  detail::require<S>(total == start_pos + t_new, "attention: cache length mismatch");

  // flat row pointers over the block list
  std::vector<const S*> krow(total), vrow(total);
  {
    int p = 0;
    for (std::size_t i = 0; i < k_blocks.size(); ++i) {
      for (int r = 0; r < k_blocks[i].rows(); ++r, ++p) {
        krow[p] = k_blocks[i].data() + static_cast<std::size_t>(r) * n;
        vrow[p] = v_blocks[i].data() + static_cast<std::size_t>(r) * n;
      }
    }
  }

  std::vector<TensorT<S>> parents;
  parents.push_back(q);
  for (const auto& b : k_blocks) parents.push_back(b);
  for (const auto& b : v_blocks) parents.push_back(b);
  auto out = TensorT<S>::make_op_output(q.shape(), parents);

  const S scale = S(1) / std::sqrt(static_cast<S>(head_dim));
  // probs laid out as [t][h][p], p in [0, start_pos + t]
  auto probs = std::make_shared<std::vector<S>>();
  probs->reserve(static_cast<std::size_t>(t_new) * heads * (start_pos + t_new));
  std::vector<S> logits(static_cast<std::size_t>(total));
  for (int t = 0; t < t_new; ++t) {
    const int ctx = start_pos + t + 1;
    const S* qr = q.data() + static_cast<std::size_t>(t) * n;
    S* orow = out.data() + static_cast<std::size_t>(t) * n;
    for (int h = 0; h < heads; ++h) {
      const S* qh = qr + h * head_dim;
      S mx = -std::numeric_limits<S>::infinity();
      for (int p = 0; p < ctx; ++p) {
        const S* kh = krow[p] + h * head_dim;
        S l = S(0);
        for (int i = 0; i < head_dim; ++i) l += qh[i] * kh[i];
        l *= scale;
        logits[p] = l;
        mx = std::max(mx, l);
      }
      S sum_exp = S(0);
      const std::size_t base = probs->size();
      probs->resize(base + static_cast<std::size_t>(ctx));
      for (int p = 0; p < ctx; ++p) {
        const S e = std::exp(logits[p] - mx);
        (*probs)[base + p] = e;
        sum_exp += e;
      }
      S* oh = orow + h * head_dim;
      for (int p = 0; p < ctx; ++p) {
        const S w = (*probs)[base + p] / sum_exp;
        (*probs)[base + p] = w;
        const S* vh = vrow[p] + h * head_dim;
        for (int i = 0; i < head_dim; ++i) oh[i] += w * vh[i];
      }
    }
  }

  if (out.node()) {
    auto og = out.grad_ptr();
    auto qg = q.requires_grad() ? q.grad_ptr() : nullptr;
    auto qv = q.values_ptr();
    std::vector<std::shared_ptr<std::vector<S>>> kg, vg, kv, vv;
    std::vector<int> block_rows;
    for (std::size_t i = 0; i < k_blocks.size(); ++i) {
      kg.push_back(k_blocks[i].requires_grad() ? k_blocks[i].grad_ptr() : nullptr);
      vg.push_back(v_blocks[i].requires_grad() ? v_blocks[i].grad_ptr() : nullptr);
      kv.push_back(k_blocks[i].values_ptr());
      vv.push_back(v_blocks[i].values_ptr());
      block_rows.push_back(k_blocks[i].rows());
    }
    out.node()->backward = [og, qg, qv, kg, vg, kv, vv, block_rows, probs, start_pos,
                            heads, head_dim, t_new, n, scale]() {
      // rebuild flat row maps for values and grads
      const int total2 = start_pos + t_new;
      std::vector<const S*> kr(total2), vr(total2);
      std::vector<S*> kgr(total2, nullptr), vgr(total2, nullptr);
      {
        int p = 0;
        for (std::size_t b = 0; b < kv.size(); ++b) {
          for (int r = 0; r < block_rows[b]; ++r, ++p) {
            kr[p] = kv[b]->data() + static_cast<std::size_t>(r) * n;
            vr[p] = vv[b]->data() + static_cast<std::size_t>(r) * n;
            if (kg[b]) kgr[p] = kg[b]->data() + static_cast<std::size_t>(r) * n;
            if (vg[b]) vgr[p] = vg[b]->data() + static_cast<std::size_t>(r) * n;
          }
        }
      }
      std::size_t base = 0;
      std::vector<S> dlogit;
      for (int t = 0; t < t_new; ++t) {
        const int ctx = start_pos + t + 1;
        const S* grow = og->data() + static_cast<std::size_t>(t) * n;
        const S* qr = qv->data() + static_cast<std::size_t>(t) * n;
        for (int h = 0; h < heads; ++h) {
          const S* gh = grow + h * head_dim;
          const S* qh = qr + h * head_dim;
          const S* w = probs->data() + base;
          dlogit.assign(static_cast<std::size_t>(ctx), S(0));
          S dot_wg = S(0);
          for (int p = 0; p < ctx; ++p) {
            const S* vh = vr[p] + h * head_dim;
            S dprob = S(0);
            for (int i = 0; i < head_dim; ++i) dprob += gh[i] * vh[i];
            if (vgr[p]) {
              S* vgh = vgr[p] + h * head_dim;
              for (int i = 0; i < head_dim; ++i) vgh[i] += w[p] * gh[i];
            }
            dlogit[p] = dprob;
            dot_wg += w[p] * dprob;
          }
          for (int p = 0; p < ctx; ++p) {
            const S dl = w[p] * (dlogit[p] - dot_wg) * scale;
            if (dl == S(0)) continue;
            const S* kh = kr[p] + h * head_dim;
            if (qg) {
              S* qgh = qg->data() + static_cast<std::size_t>(t) * n + h * head_dim;
              for (int i = 0; i < head_dim; ++i) qgh[i] += dl * kh[i];
            }
            if (kgr[p]) {
              S* kgh = kgr[p] + h * head_dim;
              for (int i = 0; i < head_dim; ++i) kgh[i] += dl * qh[i];
            }
          }
          base += static_cast<std::size_t>(ctx);
        }
      }
    };
  }
  return out;
}

// argmax with ties broken toward the lower index
template <typename S>
int argmax_row(const TensorT<S>& x, int r = 0) {
  const int n = x.cols();
  const S* p = x.data() + static_cast<std::size_t>(r) * n;
  int best = 0;
  for (int j = 1; j < n; ++j) {
    if (p[j] > p[best]) best = j;
  }
  return best;
}

}  // namespace lre
