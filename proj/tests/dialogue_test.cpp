#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "dxformer/agent.hpp"
#include "dxformer/dialogue.hpp"
#include "dxformer/rewards.hpp"

namespace {

using namespace dxformer;

constexpr Attribute P = Attribute::pos;
constexpr Attribute N = Attribute::neg;
constexpr Attribute U = Attribute::unk;

// Symptom ids for the small fixtures below.
constexpr SymptomId cough = 0, fever = 1, rash = 2, sneeze = 3, ache = 4;

StructuredMCR uri_record() {
  StructuredMCR r;
  r.id = "uri";
  r.explicit_symptoms = {{cough, P}};
  r.implicit_symptoms = {{fever, P}, {sneeze, N}};
  r.disease = 0;
  return r;
}

/// Asks a fixed list of symptoms in order.
class ScriptedPolicy final : public InquiryPolicy {
 public:
  explicit ScriptedPolicy(std::vector<SymptomId> script) : script_(std::move(script)) {}
  SymptomChoice choose(const DialogueState& state, const std::vector<bool>& mask, Rng&) const override {
    for (auto s : script_)
      if (mask[s]) return {s, -1.0};
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) return {i, -1.0};
    (void)state;
    return {0, 0.0};
  }

 private:
  std::vector<SymptomId> script_;
};

/// Returns a fixed confidence after a given number of turns, a low one before.
class ScheduledDiagnoser final : public Diagnoser {
 public:
  ScheduledDiagnoser(std::size_t explicit_count, std::size_t confident_at, double confidence)
      : explicit_count_(explicit_count), confident_at_(confident_at), confidence_(confidence) {}
  std::vector<double> diagnose(std::span<const Observation> symptoms) const override {
    // classifier_view size grows only on POS/NEG answers; the fixtures answer POS.
    const bool confident = symptoms.size() >= explicit_count_ + confident_at_;
    const double top = confident ? confidence_ : 0.4;
    return {top, 1.0 - top};
  }

 private:
  std::size_t explicit_count_, confident_at_;
  double confidence_;
};

TEST(Simulator, RespondsFromImplicitOnly) {
  const auto r = uri_record();
  const PatientSimulator sim(r, 5);
  EXPECT_EQ(respond(sim, fever), P);
  EXPECT_EQ(respond(sim, sneeze), N);
  EXPECT_EQ(respond(sim, rash), U);
  EXPECT_EQ(respond(sim, cough), U);  // explicit only
  EXPECT_THROW(respond(sim, 5), Error);
}

TEST(Simulator, ExhaustiveQueryingRecoversImplicitSet) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t ns = 4 + rng() % 20;
    std::vector<SymptomId> ids(ns);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    StructuredMCR r;
    const std::size_t k = 1 + rng() % 2, n = k + rng() % (ns - k);
    for (std::size_t i = 0; i < n; ++i) (i < k ? r.explicit_symptoms : r.implicit_symptoms).push_back({ids[i], rng() % 2 ? P : N});
    const PatientSimulator sim(r, ns);
    std::vector<Observation> recovered;
    for (SymptomId s = 0; s < ns; ++s)
      if (auto a = sim.respond(s); a != U) recovered.push_back({s, a});
    auto expected = r.implicit_symptoms;
    auto by_id = [](const Observation& a, const Observation& b) { return a.symptom < b.symptom; };
    std::sort(expected.begin(), expected.end(), by_id);
    EXPECT_EQ(recovered, expected);
  }
}

TEST(Step, AppendsAnswerAndCountsTurns) {
  const auto r = uri_record();
  const PatientSimulator sim(r, 5);
  auto s = step(DialogueState::start(r), sim, fever);
  ASSERT_EQ(s.context.size(), 2u);
  EXPECT_EQ(s.context[1], (Observation{fever, P}));
  EXPECT_EQ(s.turn, 1u);
  EXPECT_EQ(s.asked().size(), s.turn);
  EXPECT_EQ(s.context.size(), s.explicit_count + s.turn);
  EXPECT_EQ(step(DialogueState::start(r), sim, fever).context, s.context);  // deterministic
}

TEST(Step, RejectsRepeatsExplicitAndStoppedSessions) {
  const auto r = uri_record();
  const PatientSimulator sim(r, 5);
  auto s = step(DialogueState::start(r), sim, fever);
  EXPECT_THROW(step(s, sim, fever), Error);
  EXPECT_THROW(step(s, sim, cough), Error);
  s.stopped = StopReason::max_turns;
  EXPECT_THROW(step(s, sim, rash), Error);
  EXPECT_THROW(DialogueState::start(std::vector<Observation>{}), Error);
}

TEST(Step, DriverStopsAtMaxTurnsThenRejectsFurtherSteps) {
  StructuredMCR r;
  r.explicit_symptoms = {{0, P}};
  const std::size_t ns = 20;
  const ScriptedPolicy policy({});
  const ScheduledDiagnoser diag(1, 100, 0.9);
  SessionDriver d(policy, diag, StopPolicy{10, std::nullopt}, ns, DialogueState::start(r));
  const PatientSimulator sim(r, ns);
  while (auto q = d.pending_query()) d.answer(sim.respond(*q));
  EXPECT_EQ(d.state().turn, 10u);
  EXPECT_EQ(d.state().stopped, StopReason::max_turns);
  EXPECT_THROW(d.answer(U), Error);
  EXPECT_THROW(step(d.state(), sim, 15), Error);
}

TEST(ClassifierView, DropsUnknownAnswers) {
  auto s = DialogueState::start({{cough, P}});
  EXPECT_EQ(classifier_view(s), (std::vector<Observation>{{cough, P}}));
  s = apply_answer(s, fever, P);
  s = apply_answer(s, rash, U);
  EXPECT_EQ(classifier_view(s), (std::vector<Observation>{{cough, P}, {fever, P}}));
  auto t = apply_answer(apply_answer(DialogueState::start({{cough, N}}), fever, U), rash, U);
  EXPECT_EQ(classifier_view(t), (std::vector<Observation>{{cough, N}}));
}

TEST(ActionMask, ExcludesExactlyKnownSymptoms) {
  std::vector<Observation> exp{{3, P}, {7, N}};
  auto s = DialogueState::start(exp);
  auto m = action_mask(s, 41);
  EXPECT_EQ(std::count(m.begin(), m.end(), true), 39);

  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    auto mask = action_mask(s, 41);
    std::vector<SymptomId> allowed;
    for (SymptomId k = 0; k < 41; ++k)
      if (mask[k]) allowed.push_back(k);
    s = apply_answer(s, allowed[rng() % allowed.size()], U);
    std::set<SymptomId> known;
    for (const auto& o : s.context) known.insert(o.symptom);
    mask = action_mask(s, 41);
    for (SymptomId k = 0; k < 41; ++k) EXPECT_EQ(mask[k], known.count(k) == 0);
  }
  for (SymptomId k = 0; k < 41; ++k)
    if (!s.mentions(k)) s = apply_answer(s, k, U);
  EXPECT_FALSE(any_allowed(action_mask(s, 41)));
}

TEST(Rewards, QuotedValues) {
  CoOccurrence c(5, 2);
  c.disease_symptom[0 * 5 + fever] = 3;
  EXPECT_EQ(priori_reward(fever, 0, c), 1.0);
  EXPECT_EQ(priori_reward(fever, 1, c), -1.0);
  const auto r = uri_record();
  EXPECT_EQ(ground_reward(fever, r.implicit_symptoms), 2.5);
  EXPECT_EQ(ground_reward(rash, r.implicit_symptoms), -0.5);
  for (SymptomId s = 0; s < 5; ++s) EXPECT_EQ(ground_reward(s, {}), -0.5);
}

TEST(Rewards, StepRewardsForHandTrace) {
  const auto r = uri_record();
  CoOccurrence c(5, 2);
  c.disease_symptom[0 * 5 + fever] = 1;
  c.disease_symptom[0 * 5 + ache] = 2;
  const std::vector<SymptomId> asked{fever, ache, rash};
  const auto got = step_rewards(asked, r, c);
  EXPECT_EQ(got, (std::vector<double>{1.0 + 2.5, 1.0 - 0.5, -1.0 - 0.5}));
}

TEST(Rewards, PerStepValuesFormFourCombinations) {
  std::set<double> seen;
  const RewardConfig cfg;
  for (double p : {cfg.priori_pos, cfg.priori_neg})
    for (double g : {cfg.ground_hit, cfg.ground_miss}) seen.insert(p + g);
  EXPECT_EQ(seen, (std::set<double>{3.5, 1.5, 0.5, -1.5}));
}

TEST(Rewards, ReturnToGoRecursion) {
  const std::vector<double> r{3.5, -1.5, 0.5, 1.5};
  const auto g = returns_to_go(r);
  EXPECT_EQ(g, (std::vector<double>{4.0, 0.5, 2.0, 1.5}));
  for (std::size_t t = 0; t + 1 < r.size(); ++t) EXPECT_DOUBLE_EQ(g[t], r[t] + g[t + 1]);
  EXPECT_TRUE(returns_to_go({}).empty());
}

TEST(Rewards, ConfigValidation) {
  RewardConfig cfg;
  cfg.ground_miss = 0.1;
  EXPECT_THROW(cfg.validate(), Error);
  RewardConfig ok;
  ok.merge_json(json{{"ground_hit", 3.0}});
  EXPECT_EQ(ok.ground_hit, 3.0);
  EXPECT_NO_THROW(ok.validate());
}

TEST(Driver, EpsilonAboveOneRunsFullBudget) {
  StructuredMCR r;
  r.explicit_symptoms = {{0, P}};
  r.implicit_symptoms = {{1, P}, {2, P}};
  const ScriptedPolicy policy({1, 2});
  const ScheduledDiagnoser diag(1, 0, 1.0);
  const auto t = rollout(r, policy, diag, StopPolicy{6, 1.01}, 10, 0);
  EXPECT_EQ(t.state.turn, 6u);
  EXPECT_EQ(t.state.stopped, StopReason::max_turns);
  EXPECT_EQ(t.confidence_trace.size(), 7u);
}

TEST(Driver, ThresholdStopAfterFirstTurn) {
  StructuredMCR r;
  r.explicit_symptoms = {{0, P}};
  r.implicit_symptoms = {{1, P}};
  const ScriptedPolicy policy({1});
  const ScheduledDiagnoser diag(1, 1, 0.995);
  const auto t = rollout(r, policy, diag, StopPolicy{10, 0.99}, 5, 0);
  EXPECT_EQ(t.state.turn, 1u);
  EXPECT_EQ(t.state.stopped, StopReason::threshold);
  EXPECT_EQ(t.predicted, 0u);
  EXPECT_DOUBLE_EQ(t.state.diagnosis->confidence(), 0.995);
}

TEST(Driver, ConfidentAtStartAsksNothing) {
  const ScriptedPolicy policy({});
  const ScheduledDiagnoser diag(1, 0, 0.995);
  SessionDriver d(policy, diag, StopPolicy{10, 0.99}, 5, DialogueState::start({{0, P}}));
  EXPECT_FALSE(d.pending_query().has_value());
  EXPECT_EQ(d.state().stopped, StopReason::threshold);
}

TEST(Driver, MaskExhaustionStopsEarly) {
  StructuredMCR r;
  r.explicit_symptoms = {{0, P}, {1, N}};
  const ScriptedPolicy policy({});
  const ScheduledDiagnoser diag(2, 100, 0.5);
  const auto t = rollout(r, policy, diag, StopPolicy{10, std::nullopt}, 4, 0);
  EXPECT_EQ(t.state.turn, 2u);
  EXPECT_EQ(t.state.stopped, StopReason::max_turns);
}

TEST(Driver, RolloutRewardsMatchHandTrace) {
  auto r = uri_record();
  r.implicit_symptoms = {{fever, P}};
  CoOccurrence c(5, 1);
  c.disease_symptom[fever] = 4;
  const ScriptedPolicy policy({fever, rash});
  const ScheduledDiagnoser diag(1, 100, 0.5);
  const auto t = rollout(r, policy, diag, StopPolicy{2, std::nullopt}, 5, 0, &c);
  EXPECT_EQ(t.asked_symptoms(), (std::vector<SymptomId>{fever, rash}));
  EXPECT_EQ(t.step_rewards, (std::vector<double>{1.0 + 2.5, -1.0 - 0.5}));
  EXPECT_EQ(t.step_rewards.size(), t.state.turn);
}

TEST(Driver, NonUnknownResponsesAreImplicitPairs) {
  std::mt19937_64 rng(77);
  const RandomPolicy policy;
  const ScheduledDiagnoser diag(1, 100, 0.5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t ns = 12;
    std::vector<SymptomId> ids(ns);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    StructuredMCR r;
    r.explicit_symptoms = {{ids[0], P}};
    for (std::size_t i = 1; i < 5; ++i) r.implicit_symptoms.push_back({ids[i], rng() % 2 ? P : N});
    const auto t = rollout(r, policy, diag, StopPolicy{8, std::nullopt}, ns, trial);
    for (const auto& o : t.state.asked()) {
      if (o.attribute == U) continue;
      EXPECT_NE(std::find(r.implicit_symptoms.begin(), r.implicit_symptoms.end(), o), r.implicit_symptoms.end());
    }
  }
}

}  // namespace
