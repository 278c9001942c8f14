#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dxformer/num/graph.hpp"
#include "dxformer/num/tensor.hpp"

namespace dxformer::num::ops {

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

inline Var matmul(Graph& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  detail::require(av.cols() == bv.rows(),
                  "matmul: " + av.shape_string() + " x " + bv.shape_string());
  Tensor out(av.rows(), bv.cols());
  gemm_acc(av, bv, out);
  return g.record(std::move(out), {a.id, b.id}, [a, b](Graph& g, std::size_t self) {
    const Tensor dy = g.grad(self);
    gemm_nt_acc(dy, g.value(b), g.grad(a.id));
    gemm_tn_acc(g.value(a), dy, g.grad(b.id));
  });
}

/// a * b^T
inline Var matmul_nt(Graph& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  detail::require(av.cols() == bv.cols(),
                  "matmul_nt: " + av.shape_string() + " x " + bv.shape_string() + "^T");
  Tensor out(av.rows(), bv.rows());
  gemm_nt_acc(av, bv, out);
  return g.record(std::move(out), {a.id, b.id}, [a, b](Graph& g, std::size_t self) {
    const Tensor dy = g.grad(self);
    gemm_acc(dy, g.value(b), g.grad(a.id));
    gemm_tn_acc(dy, g.value(a), g.grad(b.id));
  });
}

inline Var add(Graph& g, Var a, Var b) {
  Tensor out = g.value(a);
  out.require_same_shape(g.value(b), "add");
  out += g.value(b);
  return g.record(std::move(out), {a.id, b.id}, [a, b](Graph& g, std::size_t self) {
    const Tensor dy = g.grad(self);
    g.grad(a.id) += dy;
    g.grad(b.id) += dy;
  });
}

/// x [n,c] + bias [1,c] broadcast over rows.
inline Var add_row(Graph& g, Var x, Var bias) {
  const auto& xv = g.value(x);
  const auto& bv = g.value(bias);
  detail::require(bv.rows() == 1 && bv.cols() == xv.cols(),
                  "add_row: " + xv.shape_string() + " + " + bv.shape_string());
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  return g.record(std::move(out), {x.id, bias.id}, [x, bias](Graph& g, std::size_t self) {
    const Tensor dy = g.grad(self);
    g.grad(x.id) += dy;
    auto& db = g.grad(bias.id);
    for (std::size_t r = 0; r < dy.rows(); ++r)
      for (std::size_t c = 0; c < dy.cols(); ++c) db[c] += dy(r, c);
  });
}

inline Var scale(Graph& g, Var x, double s) {
  Tensor out = g.value(x);
  out *= s;
  return g.record(std::move(out), {x.id}, [x, s](Graph& g, std::size_t self) {
    Tensor dy = g.grad(self);
    dy *= s;
    g.grad(x.id) += dy;
  });
}

/// Affine map x W + b.
inline Var linear(Graph& g, Var x, Var weight, Var bias) {
  return add_row(g, matmul(g, x, weight), bias);
}

/// tanh-approximated GELU.
inline Var gelu(Graph& g, Var x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  const auto& xv = g.value(x);
  Tensor out(xv.rows(), xv.cols());
  Tensor deriv(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    const double t = std::tanh(k * (v + a * v * v * v));
    out[i] = 0.5 * v * (1.0 + t);
    deriv[i] = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * a * v * v);
  }
  return g.record(std::move(out), {x.id},
                  [x, deriv = std::move(deriv)](Graph& g, std::size_t self) {
                    const Tensor& dy = g.grad(self);
                    auto& dx = g.grad(x.id);
                    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * deriv[i];
                  });
}

inline Var relu(Graph& g, Var x) {
  Tensor out = g.value(x);
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return g.record(std::move(out), {x.id}, [x](Graph& g, std::size_t self) {
    const Tensor& dy = g.grad(self);
    const Tensor& xv = g.value(x);
    auto& dx = g.grad(x.id);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (xv[i] > 0.0) dx[i] += dy[i];
  });
}

/// Per-row layer normalization followed by gain/bias ([1,c] each).
inline Var layer_norm(Graph& g, Var x, Var gain, Var bias, double eps = 1e-5) {
  const auto& xv = g.value(x);
  const auto& gv = g.value(gain);
  const auto& bv = g.value(bias);
  const std::size_t n = xv.rows(), c = xv.cols();
  detail::require(gv.size() == c && bv.size() == c, "layer_norm: affine size mismatch");
  Tensor normed(n, c);
  std::vector<double> inv_std(n);
  Tensor out(n, c);
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xv(r, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xv(r, j) - mean) * (xv(r, j) - mean);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      normed(r, j) = (xv(r, j) - mean) * inv_std[r];
      out(r, j) = normed(r, j) * gv[j] + bv[j];
    }
  }
  return g.record(
      std::move(out), {x.id, gain.id, bias.id},
      [x, gain, bias, normed = std::move(normed), inv_std = std::move(inv_std)](Graph& g,
                                                                                std::size_t self) {
        const Tensor dy = g.grad(self);
        const Tensor& gv = g.value(gain);
        const std::size_t n = dy.rows(), c = dy.cols();
        auto& dgain = g.grad(gain.id);
        auto& dbias = g.grad(bias.id);
        auto& dx = g.grad(x.id);
        std::vector<double> dnorm(c);
        for (std::size_t r = 0; r < n; ++r) {
          double mean_dn = 0.0, mean_dn_n = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            dgain[j] += dy(r, j) * normed(r, j);
            dbias[j] += dy(r, j);
            dnorm[j] = dy(r, j) * gv[j];
            mean_dn += dnorm[j];
            mean_dn_n += dnorm[j] * normed(r, j);
          }
          mean_dn /= static_cast<double>(c);
          mean_dn_n /= static_cast<double>(c);
          for (std::size_t j = 0; j < c; ++j)
            dx(r, j) += inv_std[r] * (dnorm[j] - mean_dn - normed(r, j) * mean_dn_n);
        }
      });
}

/// Row softmax where entry (r, c) participates only if allowed(r, c). Rows with no
/// allowed entry are all zero.
inline Var masked_softmax(Graph& g, Var x, const std::vector<std::vector<bool>>* allowed) {
  const auto& xv = g.value(x);
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto p = softmax(xv.row_span(r), allowed ? &(*allowed)[r] : nullptr);
    std::copy(p.begin(), p.end(), out.row_span(r).begin());
  }
  return g.record(std::move(out), {x.id}, [x](Graph& g, std::size_t self) {
    const Tensor& y = g.value(self);
    const Tensor dy = g.grad(self);
    auto& dx = g.grad(x.id);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += dy(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) += y(r, c) * (dy(r, c) - dot);
    }
  });
}

inline Var softmax_rows(Graph& g, Var x) { return masked_softmax(g, x, nullptr); }

/// Row log-softmax over the allowed columns of each row. Disallowed entries are
/// reported as 0 and receive no gradient; callers must not pick them.
inline Var masked_log_softmax(Graph& g, Var x, const std::vector<std::vector<bool>>* allowed) {
  const auto& xv = g.value(x);
  Tensor out(xv.rows(), xv.cols());
  Tensor probs(xv.rows(), xv.cols(), -1.0);  // -1 marks a disallowed entry
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const std::vector<bool>* row_mask = allowed ? &(*allowed)[r] : nullptr;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < xv.cols(); ++c)
      if (!row_mask || (*row_mask)[c]) mx = std::max(mx, xv(r, c));
    detail::require(std::isfinite(mx), "masked_log_softmax: row with no allowed entry");
    double sum = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c)
      if (!row_mask || (*row_mask)[c]) sum += std::exp(xv(r, c) - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t c = 0; c < xv.cols(); ++c) {
      if (row_mask && !(*row_mask)[c]) continue;
      out(r, c) = xv(r, c) - lse;
      probs(r, c) = std::exp(out(r, c));
    }
  }
  return g.record(std::move(out), {x.id}, [x, probs = std::move(probs)](Graph& g, std::size_t self) {
    const Tensor dy = g.grad(self);
    auto& dx = g.grad(x.id);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < dy.cols(); ++c)
        if (probs(r, c) >= 0.0) total += dy(r, c);
      for (std::size_t c = 0; c < dy.cols(); ++c)
        if (probs(r, c) >= 0.0) dx(r, c) += dy(r, c) - probs(r, c) * total;
    }
  });
}

/// Rows of `table` selected by `ids`, in order.
inline Var gather_rows(Graph& g, Var table, std::vector<std::size_t> ids) {
  const auto& tv = g.value(table);
  Tensor out(ids.size(), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::require(ids[i] < tv.rows(), "gather_rows: id " + std::to_string(ids[i]) +
                                            " out of range " + std::to_string(tv.rows()));
    auto src = tv.row_span(ids[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  return g.record(std::move(out), {table.id}, [table, ids = std::move(ids)](Graph& g, std::size_t self) {
    const Tensor dy = g.grad(self);
    auto& dt = g.grad(table.id);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t c = 0; c < dy.cols(); ++c) dt(ids[i], c) += dy(i, c);
  });
}

inline Var slice_cols(Graph& g, Var x, std::size_t start, std::size_t count) {
  const auto& xv = g.value(x);
  detail::require(start + count <= xv.cols(), "slice_cols: out of range");
  Tensor out(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = xv(r, start + c);
  return g.record(std::move(out), {x.id}, [x, start](Graph& g, std::size_t self) {
    const Tensor dy = g.grad(self);
    auto& dx = g.grad(x.id);
    for (std::size_t r = 0; r < dy.rows(); ++r)
      for (std::size_t c = 0; c < dy.cols(); ++c) dx(r, start + c) += dy(r, c);
  });
}

inline Var concat_cols(Graph& g, const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = g.value(parts[0]).rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (auto p : parts) {
    detail::require(g.value(p).rows() == rows, "concat_cols: row mismatch");
    cols += g.value(p).cols();
    ids.push_back(p.id);
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (auto p : parts) {
    const auto& pv = g.value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, offset + c) = pv(r, c);
    offset += pv.cols();
  }
  return g.record(std::move(out), ids, [ids](Graph& g, std::size_t self) {
    const Tensor dy = g.grad(self);
    std::size_t offset = 0;
    for (auto id : ids) {
      auto& dp = g.grad(id);
      for (std::size_t r = 0; r < dp.rows(); ++r)
        for (std::size_t c = 0; c < dp.cols(); ++c) dp(r, c) += dy(r, offset + c);
      offset += dp.cols();
    }
  });
}

/// Average over rows: [n,c] -> [1,c].
inline Var mean_rows(Graph& g, Var x) {
  const auto& xv = g.value(x);
  detail::require(xv.rows() > 0, "mean_rows: empty input");
  Tensor out(1, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out[c] += xv(r, c);
  out *= 1.0 / static_cast<double>(xv.rows());
  return g.record(std::move(out), {x.id}, [x](Graph& g, std::size_t self) {
    const Tensor dy = g.grad(self);
    auto& dx = g.grad(x.id);
    const double inv = 1.0 / static_cast<double>(dx.rows());
    for (std::size_t r = 0; r < dx.rows(); ++r)
      for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) += dy[c] * inv;
  });
}

inline Var select_row(Graph& g, Var x, std::size_t row) {
  const auto& xv = g.value(x);
  detail::require(row < xv.rows(), "select_row: out of range");
  auto src = xv.row_span(row);
  Tensor out = Tensor::row(std::vector<double>(src.begin(), src.end()));
  return g.record(std::move(out), {x.id}, [x, row](Graph& g, std::size_t self) {
    const Tensor dy = g.grad(self);
    auto& dx = g.grad(x.id);
    for (std::size_t c = 0; c < dy.cols(); ++c) dx(row, c) += dy[c];
  });
}

/// Scalar element x(r, c).
inline Var pick(Graph& g, Var x, std::size_t r, std::size_t c) {
  const auto& xv = g.value(x);
  detail::require(r < xv.rows() && c < xv.cols(), "pick: out of range");
  return g.record(Tensor::scalar(xv(r, c)), {x.id}, [x, r, c](Graph& g, std::size_t self) {
    g.grad(x.id)(r, c) += g.grad(self)[0];
  });
}

inline Var sum(Graph& g, Var x) {
  double s = 0.0;
  for (double v : g.value(x).data()) s += v;
  return g.record(Tensor::scalar(s), {x.id}, [x](Graph& g, std::size_t self) {
    const double dy = g.grad(self)[0];
    for (auto& v : g.grad(x.id).data()) v += dy;
  });
}

/// sum_i weights[i] * terms[i] over scalar terms.
inline Var weighted_sum(Graph& g, const std::vector<Var>& terms, std::vector<double> weights) {
  detail::require(terms.size() == weights.size(), "weighted_sum: size mismatch");
  double s = 0.0;
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    s += weights[i] * g.value(terms[i]).item();
    ids.push_back(terms[i].id);
  }
  return g.record(Tensor::scalar(s), ids,
                  [ids, weights = std::move(weights)](Graph& g, std::size_t self) {
                    const double dy = g.grad(self)[0];
                    for (std::size_t i = 0; i < ids.size(); ++i) g.grad(ids[i])[0] += dy * weights[i];
                  });
}

/// Negative log-likelihood of `target` under the softmax of a [1,c] logit row.
inline Var cross_entropy(Graph& g, Var logits_row, std::size_t target) {
  auto logp = masked_log_softmax(g, logits_row, nullptr);
  return scale(g, pick(g, logp, 0, target), -1.0);
}

}  // namespace dxformer::num::ops
