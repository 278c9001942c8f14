#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dxformer/corpus.hpp"
#include "dxformer/eval/linear_svm.hpp"

namespace dxformer::eval {

/// Which symptoms a reference classifier sees.
enum class FeatureMode {
  lower_bound,       // explicit only
  upper_bound,       // explicit + all implicit
  upper_bound_pos,   // explicit + POS implicit
  upper_bound_neg,   // explicit + NEG implicit
};

inline std::string_view to_string(FeatureMode m) {
  switch (m) {
    case FeatureMode::lower_bound: return "LB";
    case FeatureMode::upper_bound: return "UB";
    case FeatureMode::upper_bound_pos: return "UB_P";
    case FeatureMode::upper_bound_neg: return "UB_N";
  }
  return "?";
}

inline std::optional<FeatureMode> parse_feature_mode(std::string_view s) {
  if (s == "LB") return FeatureMode::lower_bound;
  if (s == "UB") return FeatureMode::upper_bound;
  if (s == "UB_P" || s == "UB(P)") return FeatureMode::upper_bound_pos;
  if (s == "UB_N" || s == "UB(N)") return FeatureMode::upper_bound_neg;
  return std::nullopt;
}

/// Signed bag of symptoms: POS -> +1, NEG -> -1, absent -> 0.
inline std::vector<double> bound_features(const StructuredMCR& r, std::size_t symptom_count, FeatureMode mode) {
  std::vector<double> f(symptom_count, 0.0);
  auto put = [&f](const Observation& o) {
    f.at(o.symptom) = o.attribute == Attribute::pos ? 1.0 : o.attribute == Attribute::neg ? -1.0 : 0.0;
  };
  for (const auto& o : r.explicit_symptoms) put(o);
  for (const auto& o : r.implicit_symptoms) {
    const bool keep = mode == FeatureMode::upper_bound ||
                      (mode == FeatureMode::upper_bound_pos && o.attribute == Attribute::pos) ||
                      (mode == FeatureMode::upper_bound_neg && o.attribute == Attribute::neg);
    if (keep) put(o);
  }
  return f;
}

/// Penalty weights tried by cross-validation: 10^-3 .. 10^2 in half-decade steps.
inline std::vector<double> default_penalty_grid() {
  std::vector<double> grid;
  for (int k = -6; k <= 4; ++k) grid.push_back(std::pow(10.0, k / 2.0));
  return grid;
}

struct BoundsEntry {
  FeatureMode mode = FeatureMode::upper_bound;
  double accuracy = 0.0;
  double penalty = 0.0;
  std::vector<double> fold_scores;

  double cv_mean() const {
    if (fold_scores.empty()) return 0.0;
    return std::accumulate(fold_scores.begin(), fold_scores.end(), 0.0) / static_cast<double>(fold_scores.size());
  }

  json to_json() const {
    return json{{"mode", std::string(to_string(mode))},
                {"accuracy", accuracy},
                {"penalty", penalty},
                {"cv_fold_scores", fold_scores},
                {"cv_mean", cv_mean()}};
  }
};

struct BoundsOptions {
  std::size_t folds = 5;
  std::vector<double> penalty_grid = default_penalty_grid();
  std::uint64_t seed = 7;
};

/// Stratified fold assignment: records of each class are dealt round-robin after a seeded shuffle.
inline std::vector<std::size_t> stratified_folds(const std::vector<std::size_t>& labels, std::size_t classes,
                                                 std::size_t folds, std::uint64_t seed) {
  std::vector<std::size_t> fold(labels.size());
  std::mt19937_64 rng(seed);
  std::size_t offset = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < idx.size(); ++k) fold[idx[k]] = (offset + k) % folds;
    offset += idx.size();
  }
  return fold;
}

/// Reference classifier accuracy for one feature mode: the penalty is chosen by
/// k-fold cross-validation on `train`, then a model refit on all of `train` is scored on `test`.
inline BoundsEntry bounds(const std::vector<StructuredMCR>& train, const std::vector<StructuredMCR>& test,
                          std::size_t symptom_count, std::size_t disease_count, FeatureMode mode,
                          const BoundsOptions& opt = {}) {
  if (train.empty() || test.empty()) throw Error(ErrorCategory::invariant, "bounds: empty split");
  std::vector<std::vector<double>> xtr, xte;
  std::vector<std::size_t> ytr, yte;
  for (const auto& r : train) {
    xtr.push_back(bound_features(r, symptom_count, mode));
    ytr.push_back(r.disease);
  }
  for (const auto& r : test) {
    xte.push_back(bound_features(r, symptom_count, mode));
    yte.push_back(r.disease);
  }
  const auto fold = stratified_folds(ytr, disease_count, opt.folds, opt.seed);

  BoundsEntry best;
  best.mode = mode;
  double best_mean = -1.0;
  for (double c : opt.penalty_grid) {
    std::vector<double> scores;
    for (std::size_t k = 0; k < opt.folds; ++k) {
      std::vector<std::vector<double>> xa, xb;
      std::vector<std::size_t> ya, yb;
      for (std::size_t i = 0; i < xtr.size(); ++i) {
        if (fold[i] == k) {
          xb.push_back(xtr[i]);
          yb.push_back(ytr[i]);
        } else {
          xa.push_back(xtr[i]);
          ya.push_back(ytr[i]);
        }
      }
      LinearSvm svm;
      svm.fit(xa, ya, disease_count, {.c = c, .seed = opt.seed});
      scores.push_back(svm.accuracy(xb, yb));
    }
    const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
    if (mean > best_mean) {
      best_mean = mean;
      best.penalty = c;
      best.fold_scores = scores;
    }
  }
  LinearSvm svm;
  svm.fit(xtr, ytr, disease_count, {.c = best.penalty, .seed = opt.seed});
  best.accuracy = svm.accuracy(xte, yte);
  return best;
}

}  // namespace dxformer::eval
