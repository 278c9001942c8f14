#pragma once

#include <span>
#include <vector>

#include "dxformer/corpus.hpp"
#include "dxformer/error.hpp"

namespace dxformer {

struct RewardConfig {
  double priori_pos = 1.0;
  double priori_neg = -1.0;
  double ground_hit = 2.5;
  double ground_miss = -0.5;

  void validate() const {
    if (!(ground_hit > 0.0 && ground_miss < 0.0 && priori_pos > 0.0 && priori_neg < 0.0))
      throw Error(ErrorCategory::config, "reward config: hit/pos rewards must be positive and miss/neg negative");
  }

  json to_json() const {
    return json{{"priori_pos", priori_pos}, {"priori_neg", priori_neg}, {"ground_hit", ground_hit},
                {"ground_miss", ground_miss}};
  }

  void merge_json(const json& j) {
    if (j.contains("priori_pos")) priori_pos = j.at("priori_pos").get<double>();
    if (j.contains("priori_neg")) priori_neg = j.at("priori_neg").get<double>();
    if (j.contains("ground_hit")) ground_hit = j.at("ground_hit").get<double>();
    if (j.contains("ground_miss")) ground_miss = j.at("ground_miss").get<double>();
  }
};

/// Rewards asking symptoms that ever co-occur with the true disease in training data.
inline double priori_reward(SymptomId symptom, DiseaseId disease, const CoOccurrence& cooc,
                            const RewardConfig& cfg = {}) {
  return cooc.disease_symptom_count(disease, symptom) > 0 ? cfg.priori_pos : cfg.priori_neg;
}

/// Rewards asking one of the record's implicit symptoms.
inline double ground_reward(SymptomId symptom, std::span<const Observation> implicit_symptoms,
                            const RewardConfig& cfg = {}) {
  for (const auto& o : implicit_symptoms)
    if (o.symptom == symptom) return cfg.ground_hit;
  return cfg.ground_miss;
}

inline std::vector<double> step_rewards(std::span<const SymptomId> asked, const StructuredMCR& record,
                                        const CoOccurrence& cooc, const RewardConfig& cfg = {}) {
  std::vector<double> out;
  out.reserve(asked.size());
  for (auto s : asked)
    out.push_back(priori_reward(s, record.disease, cooc, cfg) + ground_reward(s, record.implicit_symptoms, cfg));
  return out;
}

/// G_t = sum_{i >= t} r_i (undiscounted).
inline std::vector<double> returns_to_go(std::span<const double> rewards) {
  std::vector<double> g(rewards.size(), 0.0);
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc += rewards[t];
    g[t] = acc;
  }
  return g;
}

}  // namespace dxformer
