#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dxformer::num {

/// Dense row-major matrix of doubles. Vectors are 1 x n.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                  " does not match shape " + std::to_string(rows_) + "x" +
                                  std::to_string(cols_));
    }
  }

  static Tensor row(std::vector<double> values) {
    const auto n = values.size();
    return Tensor(1, n, std::move(values));
  }

  static Tensor row(std::initializer_list<double> values) {
    return row(std::vector<double>(values));
  }

  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::array<std::size_t, 2> shape() const noexcept { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> row_span(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  double item() const {
    if (data_.size() != 1) throw std::logic_error("item() on non-scalar tensor");
    return data_[0];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Tensor& operator*=(double s) {
    for (auto& x : data_) x *= s;
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  void require_same_shape(const Tensor& o, const char* what) const {
    if (!same_shape(o)) {
      throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string() +
                                  " vs " + o.shape_string());
    }
  }

  std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// out += a * b  where a is [n,k], b is [k,m].
inline void gemm_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

/// out += a * b^T  where a is [n,k], b is [m,k].
inline void gemm_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = pb + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      po[i * m + j] += s;
    }
  }
}

/// out += a^T * b  where a is [k,n], b is [k,m].
inline void gemm_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = pa + p * n;
    const double* brow = pb + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = po + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

/// Numerically stable softmax of a span. Entries where `allowed` is false get probability 0.
inline std::vector<double> softmax(std::span<const double> x, const std::vector<bool>* allowed = nullptr) {
  std::vector<double> out(x.size(), 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (allowed && !(*allowed)[i]) continue;
    mx = std::max(mx, x[i]);
  }
  if (!std::isfinite(mx)) return out;
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (allowed && !(*allowed)[i]) continue;
    out[i] = std::exp(x[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

/// Row-wise softmax along the column axis (axis = 1) or column-wise (axis = 0).
inline Tensor softmax(const Tensor& x, int axis = 1) {
  Tensor out(x.rows(), x.cols());
  if (axis == 1) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto p = softmax(x.row_span(r));
      std::copy(p.begin(), p.end(), out.row_span(r).begin());
    }
  } else if (axis == 0) {
    std::vector<double> col(x.rows());
    for (std::size_t c = 0; c < x.cols(); ++c) {
      for (std::size_t r = 0; r < x.rows(); ++r) col[r] = x(r, c);
      auto p = softmax(col);
      for (std::size_t r = 0; r < x.rows(); ++r) out(r, c) = p[r];
    }
  } else {
    throw std::invalid_argument("softmax axis must be 0 or 1");
  }
  return out;
}

}  // namespace dxformer::num
