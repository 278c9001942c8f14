#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "dxformer/corpus.hpp"

namespace dxformer {

/// Generator for corpora where each disease owns a disjoint cluster of symptoms.
struct SyntheticSpec {
  std::size_t diseases = 4;
  std::size_t symptoms_per_disease = 5;
  /// Extra symptoms common to every disease.
  std::size_t shared_symptoms = 0;
  std::size_t records = 200;
  std::size_t min_implicit = 2;
  std::size_t max_implicit = 4;
  double negative_rate = 0.0;
  /// Draw the explicit symptom from the shared pool, so explicit features alone are uninformative.
  bool ambiguous_explicit = false;
  std::uint64_t seed = 1;
};

inline std::string synthetic_symptom_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%03zu", i);
  return buf;
}

inline std::vector<RawRecord> synthetic_records(const SyntheticSpec& spec, const std::string& id_prefix = "syn") {
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> pick_disease(0, spec.diseases - 1);
  std::uniform_int_distribution<std::size_t> pick_count(spec.min_implicit, spec.max_implicit);
  std::bernoulli_distribution negative(spec.negative_rate);
  const std::size_t clustered = spec.diseases * spec.symptoms_per_disease;
  std::vector<RawRecord> out;
  for (std::size_t n = 0; n < spec.records; ++n) {
    RawRecord r;
    r.id = id_prefix + "-" + std::to_string(n);
    const std::size_t d = pick_disease(rng);
    r.disease = "d" + std::to_string(d);
    std::vector<std::size_t> cluster(spec.symptoms_per_disease);
    for (std::size_t j = 0; j < cluster.size(); ++j) cluster[j] = d * spec.symptoms_per_disease + j;
    std::shuffle(cluster.begin(), cluster.end(), rng);
    std::size_t used = 0;
    if (spec.ambiguous_explicit && spec.shared_symptoms > 0) {
      std::uniform_int_distribution<std::size_t> pick_shared(0, spec.shared_symptoms - 1);
      r.explicit_symptoms.emplace_back(synthetic_symptom_name(clustered + pick_shared(rng)), Attribute::pos);
    } else {
      r.explicit_symptoms.emplace_back(synthetic_symptom_name(cluster[used++]), Attribute::pos);
    }
    const std::size_t m = std::min(pick_count(rng), cluster.size() - used);
    for (std::size_t j = 0; j < m; ++j)
      r.implicit_symptoms.emplace_back(synthetic_symptom_name(cluster[used++]),
                                       negative(rng) ? Attribute::neg : Attribute::pos);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dxformer
