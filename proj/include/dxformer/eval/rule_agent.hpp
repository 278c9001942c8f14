#pragma once

#include <span>
#include <vector>

#include "dxformer/agent.hpp"
#include "dxformer/corpus.hpp"

namespace dxformer::eval {

enum class RuleAggregation { sum, max };

/// Co-occurrence score of candidate `s` against the collected symptoms:
/// aggregate over s' of count(s, s') / count(s').
inline double rule_score(SymptomId s, std::span<const Observation> collected, const CoOccurrence& cooc,
                         RuleAggregation agg = RuleAggregation::sum) {
  double score = 0.0;
  for (const auto& o : collected) {
    const auto m = cooc.marginal(o.symptom);
    if (m == 0) continue;
    const double ratio = static_cast<double>(cooc.pair_count(s, o.symptom)) / static_cast<double>(m);
    score = agg == RuleAggregation::sum ? score + ratio : std::max(score, ratio);
  }
  return score;
}

/// Highest-scoring allowed symptom, smallest id on ties.
inline SymptomId rule_agent_next(std::span<const Observation> collected, const CoOccurrence& cooc,
                                 const std::vector<bool>& mask, RuleAggregation agg = RuleAggregation::sum) {
  if (!any_allowed(mask)) throw Error(ErrorCategory::state, "rule agent: every action is masked");
  std::size_t best = mask.size();
  double best_score = 0.0;
  for (std::size_t s = 0; s < mask.size(); ++s) {
    if (!mask[s]) continue;
    const double sc = rule_score(s, collected, cooc, agg);
    if (best == mask.size() || sc > best_score) {
      best = s;
      best_score = sc;
    }
  }
  return best;
}

/// Rule-based inquiry over explicit symptoms plus POS/NEG answers so far.
class RuleAgentPolicy final : public InquiryPolicy {
 public:
  explicit RuleAgentPolicy(const CoOccurrence& cooc, RuleAggregation agg = RuleAggregation::sum)
      : cooc_(&cooc), agg_(agg) {}

  SymptomChoice choose(const DialogueState& state, const std::vector<bool>& mask, Rng&) const override {
    const auto collected = classifier_view(state);
    return {rule_agent_next(collected, *cooc_, mask, agg_), 0.0};
  }

 private:
  const CoOccurrence* cooc_;
  RuleAggregation agg_;
};

}  // namespace dxformer::eval
