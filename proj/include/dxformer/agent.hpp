// Inquiry policies, diagnosers, and the session driver that alternates
// between them under a stopping policy. The same driver backs offline
// rollouts, the HTTP service and the terminal console, so all three produce
// identical traces for identical answers.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dxformer/corpus.hpp"
#include "dxformer/dialogue.hpp"
#include "dxformer/model.hpp"
#include "dxformer/rewards.hpp"

namespace dxformer {

using Rng = std::mt19937_64;

class InquiryPolicy {
 public:
  virtual ~InquiryPolicy() = default;
  /// `mask` has at least one allowed entry.
  virtual SymptomChoice choose(const DialogueState& state, const std::vector<bool>& mask, Rng& rng) const = 0;
};

class Diagnoser {
 public:
  virtual ~Diagnoser() = default;
  virtual std::vector<double> diagnose(std::span<const Observation> symptoms) const = 0;
};

class DecoderPolicy final : public InquiryPolicy {
 public:
  DecoderPolicy(const DxFormer& model, DecodeMode mode) : model_(&model), mode_(mode) {}

  SymptomChoice choose(const DialogueState& state, const std::vector<bool>& mask, Rng& rng) const override {
    const auto logits = model_->decoder_logits(state.context);
    return next_symptom(logits, mask, mode_, rng);
  }

 private:
  const DxFormer* model_;
  DecodeMode mode_;
};

class EncoderDiagnoser final : public Diagnoser {
 public:
  explicit EncoderDiagnoser(const DxFormer& model) : model_(&model) {}

  std::vector<double> diagnose(std::span<const Observation> symptoms) const override {
    return model_->classify(symptoms);
  }

 private:
  const DxFormer* model_;
};

/// Uniform over the allowed symptoms.
class RandomPolicy final : public InquiryPolicy {
 public:
  SymptomChoice choose(const DialogueState&, const std::vector<bool>& mask, Rng& rng) const override {
    std::vector<SymptomId> allowed;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) allowed.push_back(i);
    std::uniform_int_distribution<std::size_t> pick(0, allowed.size() - 1);
    return {allowed[pick(rng)], -std::log(static_cast<double>(allowed.size()))};
  }
};

struct StopPolicy {
  std::size_t max_turns = 10;
  /// Threshold on the top disease probability; disabled when empty.
  std::optional<double> epsilon;
};

inline Diagnosis make_diagnosis(std::vector<double> probs) {
  Diagnosis d;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[d.disease]) d.disease = i;
  d.probabilities = std::move(probs);
  return d;
}

class SessionDriver {
 public:
  SessionDriver(const InquiryPolicy& policy, const Diagnoser& diagnoser, StopPolicy stop, std::size_t symptom_count,
                DialogueState initial, std::uint64_t seed = 0)
      : policy_(&policy),
        diagnoser_(&diagnoser),
        stop_(stop),
        symptom_count_(symptom_count),
        state_(std::move(initial)),
        rng_(seed) {
    if (stop_.max_turns == 0) throw Error(ErrorCategory::config, "max_turns must be at least 1");
    advance();
  }

  const DialogueState& state() const noexcept { return state_; }
  std::optional<SymptomId> pending_query() const noexcept { return pending_; }
  const std::vector<double>& confidence_trace() const noexcept { return confidence_; }
  const std::vector<double>& log_probs() const noexcept { return log_probs_; }
  /// Latest disease distribution, whether or not the session has stopped.
  const std::optional<std::vector<double>>& latest_probabilities() const noexcept { return latest_; }

  void answer(Attribute attribute) {
    if (state_.stopped) throw Error(ErrorCategory::state, "session already diagnosed");
    if (!pending_) throw Error(ErrorCategory::state, "no pending query");
    state_ = apply_answer(std::move(state_), *pending_, attribute);
    pending_.reset();
    advance();
  }

 private:
  std::vector<double> classify_now() {
    auto probs = diagnoser_->diagnose(classifier_view(state_));
    double top = 0.0;
    for (double p : probs) top = std::max(top, p);
    confidence_.push_back(top);
    latest_ = probs;
    return probs;
  }

  void finish(StopReason reason, std::vector<double> probs) {
    state_.stopped = reason;
    state_.diagnosis = make_diagnosis(std::move(probs));
  }

  void advance() {
    std::optional<std::vector<double>> probs;
    if (stop_.epsilon) {
      probs = classify_now();
      const auto d = make_diagnosis(*probs);
      if (d.confidence() >= *stop_.epsilon) {
        finish(StopReason::threshold, std::move(*probs));
        return;
      }
    }
    const auto mask = action_mask(state_, symptom_count_);
    if (state_.turn >= stop_.max_turns || !any_allowed(mask)) {
      finish(StopReason::max_turns, probs ? std::move(*probs) : classify_now());
      return;
    }
    const auto choice = policy_->choose(state_, mask, rng_);
    if (choice.symptom >= symptom_count_ || !mask[choice.symptom])
      throw Error(ErrorCategory::state, "policy chose a masked symptom");
    pending_ = choice.symptom;
    log_probs_.push_back(choice.log_prob);
  }

  const InquiryPolicy* policy_;
  const Diagnoser* diagnoser_;
  StopPolicy stop_;
  std::size_t symptom_count_;
  DialogueState state_;
  Rng rng_;
  std::optional<SymptomId> pending_;
  std::vector<double> confidence_;
  std::vector<double> log_probs_;
  std::optional<std::vector<double>> latest_;
};

/// Plays one session against the record's simulator. Rewards are filled in when
/// `cooc` is given.
inline Trajectory rollout(const StructuredMCR& record, const InquiryPolicy& policy, const Diagnoser& diagnoser,
                          StopPolicy stop, std::size_t symptom_count, std::uint64_t seed,
                          const CoOccurrence* cooc = nullptr, const RewardConfig& rewards = {}) {
  const PatientSimulator sim(record, symptom_count);
  SessionDriver driver(policy, diagnoser, stop, symptom_count, DialogueState::start(record), seed);
  while (auto q = driver.pending_query()) driver.answer(sim.respond(*q));
  Trajectory t;
  t.state = driver.state();
  t.log_probs = driver.log_probs();
  t.confidence_trace = driver.confidence_trace();
  t.true_disease = record.disease;
  t.predicted = t.state.diagnosis->disease;
  if (cooc) {
    const auto asked = t.asked_symptoms();
    t.step_rewards = step_rewards(asked, record, *cooc, rewards);
  }
  return t;
}

/// Convenience overload for the model's own decoder/encoder.
inline Trajectory rollout(const DxFormer& model, const StructuredMCR& record, DecodeMode mode, StopPolicy stop,
                          std::uint64_t seed, const CoOccurrence* cooc = nullptr, const RewardConfig& rewards = {}) {
  const DecoderPolicy policy(model, mode);
  const EncoderDiagnoser diagnoser(model);
  return rollout(record, policy, diagnoser, stop, model.config().symptoms, seed, cooc, rewards);
}

}  // namespace dxformer
