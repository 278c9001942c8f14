// One-vs-rest linear SVM (hinge loss, L2 penalty) solved by dual coordinate
// descent. The bias is learned as the weight of a constant feature.

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "dxformer/error.hpp"

namespace dxformer::eval {

struct SvmOptions {
  double c = 1.0;
  double tolerance = 0.1;
  std::size_t max_iterations = 1000;
  std::uint64_t seed = 1;
};

/// Binary hinge-loss SVM; labels are +1 / -1. Returns weights with the bias last.
inline std::vector<double> train_binary_svm(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                            const SvmOptions& opt) {
  const std::size_t n = x.size();
  const std::size_t f = n ? x[0].size() : 0;
  std::vector<double> w(f + 1, 0.0);
  std::vector<double> alpha(n, 0.0);
  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) {
    double q = 1.0;  // bias feature
    for (double v : x[i]) q += v * v;
    diag[i] = q;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opt.seed);
  for (std::size_t iter = 0; iter < opt.max_iterations; ++iter) {
    std::shuffle(order.begin(), order.end(), rng);
    double pg_max = -std::numeric_limits<double>::infinity();
    double pg_min = std::numeric_limits<double>::infinity();
    for (auto i : order) {
      double margin = w[f];
      for (std::size_t j = 0; j < f; ++j) margin += w[j] * x[i][j];
      const double grad = y[i] * margin - 1.0;
      double pg = grad;
      if (alpha[i] == 0.0) {
        pg = std::min(grad, 0.0);
      } else if (alpha[i] == opt.c) {
        pg = std::max(grad, 0.0);
      }
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (pg == 0.0) continue;
      const double old = alpha[i];
      alpha[i] = std::clamp(old - grad / diag[i], 0.0, opt.c);
      const double delta = (alpha[i] - old) * y[i];
      for (std::size_t j = 0; j < f; ++j) w[j] += delta * x[i][j];
      w[f] += delta;
    }
    if (pg_max - pg_min < opt.tolerance) break;
  }
  return w;
}

class LinearSvm {
 public:
  /// Fits one binary machine per class present in `labels` (classes in [0, classes)).
  void fit(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& labels, std::size_t classes,
           const SvmOptions& opt) {
    std::vector<bool> present(classes, false);
    for (auto l : labels) present.at(l) = true;
    if (std::count(present.begin(), present.end(), true) < 2)
      throw Error(ErrorCategory::invariant, "linear svm: training data has a single class");
    weights_.assign(classes, {});
    present_ = present;
    std::vector<int> y(labels.size());
    for (std::size_t c = 0; c < classes; ++c) {
      if (!present[c]) continue;
      for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == c ? 1 : -1;
      SvmOptions o = opt;
      o.seed = opt.seed + c;
      weights_[c] = train_binary_svm(x, y, o);
    }
  }

  std::size_t predict(const std::vector<double>& features) const {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < weights_.size(); ++c) {
      if (!present_[c]) continue;
      const auto& w = weights_[c];
      double s = w.back();
      for (std::size_t j = 0; j < features.size(); ++j) s += w[j] * features[j];
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    return best;
  }

  double accuracy(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& labels) const {
    if (x.empty()) return 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < x.size(); ++i) ok += predict(x[i]) == labels[i];
    return static_cast<double>(ok) / static_cast<double>(x.size());
  }

 private:
  std::vector<std::vector<double>> weights_;
  std::vector<bool> present_;
};

}  // namespace dxformer::eval
