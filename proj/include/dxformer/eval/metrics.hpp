#pragma once

#include <algorithm>
#include <set>
#include <span>
#include <vector>

#include "dxformer/corpus.hpp"
#include "dxformer/dialogue.hpp"
#include "dxformer/error.hpp"

namespace dxformer::eval {

struct RecallCounts {
  std::size_t found = 0;
  std::size_t total = 0;
};

/// |S_agt ∩ S_imp| and |S_imp| for one session.
inline RecallCounts recall_counts(std::span<const SymptomId> asked, const StructuredMCR& record) {
  RecallCounts c;
  c.total = record.implicit_symptoms.size();
  for (const auto& o : record.implicit_symptoms)
    if (std::find(asked.begin(), asked.end(), o.symptom) != asked.end()) ++c.found;
  return c;
}

/// Corpus-level ratio of summed intersections to summed implicit-set sizes.
inline double symptom_recall(std::span<const Trajectory> trajectories, std::span<const StructuredMCR> records) {
  if (trajectories.size() != records.size())
    throw Error(ErrorCategory::invariant, "symptom_recall: trajectory/record count mismatch");
  std::size_t found = 0, total = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto asked = trajectories[i].asked_symptoms();
    const auto c = recall_counts(asked, records[i]);
    found += c.found;
    total += c.total;
  }
  if (total == 0) throw Error(ErrorCategory::invariant, "symptom_recall: no implicit symptoms in the corpus");
  return static_cast<double>(found) / static_cast<double>(total);
}

inline double diagnostic_accuracy(std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& t : trajectories) correct += t.predicted == t.true_disease;
  return static_cast<double>(correct) / static_cast<double>(trajectories.size());
}

}  // namespace dxformer::eval
