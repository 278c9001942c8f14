#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dxformer/corpus.hpp"
#include "dxformer/error.hpp"

namespace dxformer {

enum class StopReason { threshold, max_turns };

inline std::string_view to_string(StopReason r) {
  return r == StopReason::threshold ? "threshold" : "max_turns";
}

struct Diagnosis {
  DiseaseId disease = 0;
  std::vector<double> probabilities;

  double confidence() const {
    return probabilities.empty() ? 0.0 : probabilities.at(disease);
  }
};

/// Answers symptom queries from a hidden record: the recorded attribute for
/// implicit symptoms, UNK for everything else (explicit symptoms included).
class PatientSimulator {
 public:
  PatientSimulator(const StructuredMCR& record, std::size_t symptom_count)
      : record_(&record), symptom_count_(symptom_count) {}

  Attribute respond(SymptomId symptom) const {
    if (symptom >= symptom_count_)
      throw Error(ErrorCategory::vocabulary, "symptom id " + std::to_string(symptom) + " out of range");
    for (const auto& o : record_->implicit_symptoms)
      if (o.symptom == symptom) return o.attribute;
    return Attribute::unk;
  }

  const StructuredMCR& record() const noexcept { return *record_; }
  std::size_t symptom_count() const noexcept { return symptom_count_; }

 private:
  const StructuredMCR* record_;
  std::size_t symptom_count_;
};

inline Attribute respond(const PatientSimulator& sim, SymptomId symptom) { return sim.respond(symptom); }

/// Explicit symptoms followed by every asked symptom with its answer.
struct DialogueState {
  std::vector<Observation> context;
  std::size_t explicit_count = 0;
  std::size_t turn = 0;
  std::optional<StopReason> stopped;
  std::optional<Diagnosis> diagnosis;

  static DialogueState start(std::vector<Observation> explicit_symptoms) {
    if (explicit_symptoms.empty())
      throw Error(ErrorCategory::invariant, "a session needs at least one explicit symptom");
    DialogueState s;
    s.explicit_count = explicit_symptoms.size();
    s.context = std::move(explicit_symptoms);
    return s;
  }

  static DialogueState start(const StructuredMCR& record) { return start(record.explicit_symptoms); }

  std::span<const Observation> explicit_symptoms() const {
    return std::span(context).first(explicit_count);
  }
  std::span<const Observation> asked() const { return std::span(context).subspan(explicit_count); }

  bool mentions(SymptomId s) const {
    return std::any_of(context.begin(), context.end(), [s](const Observation& o) { return o.symptom == s; });
  }
  bool is_stopped() const noexcept { return stopped.has_value(); }
};

/// Records `attribute` as the answer to `symptom`. Used directly when a human plays the patient.
inline DialogueState apply_answer(DialogueState state, SymptomId symptom, Attribute attribute) {
  if (state.stopped) throw Error(ErrorCategory::state, "session already stopped");
  if (state.mentions(symptom))
    throw Error(ErrorCategory::state, "symptom " + std::to_string(symptom) + " already known or asked");
  state.context.push_back({symptom, attribute});
  ++state.turn;
  return state;
}

inline DialogueState step(DialogueState state, const PatientSimulator& sim, SymptomId symptom) {
  const auto attribute = sim.respond(symptom);
  return apply_answer(std::move(state), symptom, attribute);
}

/// Explicit pairs plus asked pairs with a POS/NEG answer; UNK answers dropped.
inline std::vector<Observation> classifier_view(const DialogueState& state) {
  std::vector<Observation> out(state.context.begin(), state.context.begin() + state.explicit_count);
  for (const auto& o : state.asked())
    if (o.attribute != Attribute::unk) out.push_back(o);
  return out;
}

/// True at every symptom that may still be asked.
inline std::vector<bool> action_mask(const DialogueState& state, std::size_t symptom_count) {
  std::vector<bool> mask(symptom_count, true);
  for (const auto& o : state.context)
    if (o.symptom < symptom_count) mask[o.symptom] = false;
  return mask;
}

inline bool any_allowed(const std::vector<bool>& mask) {
  return std::find(mask.begin(), mask.end(), true) != mask.end();
}

struct Trajectory {
  DialogueState state;
  std::vector<double> step_rewards;
  std::vector<double> log_probs;
  std::vector<double> confidence_trace;
  DiseaseId true_disease = 0;
  DiseaseId predicted = 0;

  std::vector<SymptomId> asked_symptoms() const {
    std::vector<SymptomId> out;
    for (const auto& o : state.asked()) out.push_back(o.symptom);
    return out;
  }
};

}  // namespace dxformer
