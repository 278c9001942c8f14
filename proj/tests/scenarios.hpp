// Scenarios shared by the unit tests and the acceptance binary.

#pragma once

#include <chrono>
#include <cmath>
#include <random>
#include <vector>

#include "dxformer/agent.hpp"
#include "dxformer/corpus.hpp"
#include "dxformer/eval/evaluate.hpp"
#include "dxformer/model.hpp"
#include "dxformer/num/adam.hpp"
#include "dxformer/synthetic.hpp"
#include "dxformer/trainer.hpp"

namespace dxtest {

using namespace dxformer;

/// Single-step two-armed bandit trained with the REINFORCE surrogate. Arm 0 pays
/// the ground hit reward, arm 1 the miss reward. Returns P(arm 0) after `steps`.
inline double run_bandit(std::size_t steps, double lr, std::uint64_t seed) {
  const RewardConfig rewards;
  num::ParameterSet ps;
  ps.add("logits", num::Tensor(1, 2));
  num::AdamState adam;
  adam.learning_rate = lr;
  std::mt19937_64 rng(seed);
  const std::vector<bool> open{true, true};
  for (std::size_t i = 0; i < steps; ++i) {
    const auto choice = next_symptom(ps[0].row_span(0), open, DecodeMode::sample, rng);
    const double r = choice.symptom == 0 ? rewards.ground_hit : rewards.ground_miss;
    num::Graph g(ps);
    const auto logp = num::ops::masked_log_softmax(g, g.param(0), nullptr);
    const auto loss = reinforce_loss(g, {num::ops::pick(g, logp, 0, choice.symptom)}, {r});
    g.backward(loss);
    num::adam_step(ps, g.parameter_gradients(), adam);
  }
  return num::softmax(ps[0].row_span(0))[0];
}

inline ModelConfig gradient_check_config() {
  ModelConfig c;
  c.symptoms = 6;
  c.diseases = 3;
  c.embed_dim = 8;
  c.decoder_layers = 2;
  c.encoder_layers = 1;
  c.heads = 2;
  c.ff_dim = 16;
  c.max_sequence_length = 8;
  return c;
}

struct GradientCheck {
  double worst_relative_error = 0.0;
  std::size_t scalars = 0;
  std::string worst_parameter;
};

/// Compares the analytic gradient of the joint loss with central differences for
/// every scalar of every parameter. Trajectories are sampled once and held fixed.
/// Relative error is |a - n| / max(|a|, |n|, floor); at h = 1e-5 the difference
/// quotient itself carries about 1e-10 of roundoff, so the floor keeps
/// near-zero entries from measuring only that noise.
inline GradientCheck check_joint_gradient(std::uint64_t seed, double h = 1e-5, double floor = 1e-4) {
  DxFormer model(gradient_check_config(), seed);
  {
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& t : model.parameters().values())
      for (auto& v : t.data()) v += n(rng);
  }
  StructuredMCR record;
  record.explicit_symptoms = {{0, Attribute::pos}, {3, Attribute::neg}};
  record.implicit_symptoms = {{1, Attribute::pos}, {4, Attribute::neg}, {5, Attribute::pos}};
  record.disease = 2;
  CoOccurrence cooc(6, 3);
  for (SymptomId s : {0, 1, 3, 4}) cooc.disease_symptom[2 * 6 + s] = 1;
  const auto sampled = rollout(model, record, DecodeMode::sample, StopPolicy{4, std::nullopt}, seed, &cooc);
  const auto greedy = rollout(model, record, DecodeMode::greedy, StopPolicy{4, std::nullopt}, 0);

  auto loss_value = [&](const DxFormer& m) {
    num::Graph g(m.parameters());
    return g.value(joint_loss(g, m, sampled, greedy).total).item();
  };
  num::Graph g(model.parameters());
  g.backward(joint_loss(g, model, sampled, greedy).total);
  const auto grads = g.parameter_gradients();

  GradientCheck out;
  auto& params = model.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = params[p][i];
      params[p][i] = orig + h;
      const double up = loss_value(model);
      params[p][i] = orig - h;
      const double down = loss_value(model);
      params[p][i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads[p].empty() ? 0.0 : grads[p][i];
      const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      if (err > out.worst_relative_error) {
        out.worst_relative_error = err;
        out.worst_parameter = params.name(p) + "[" + std::to_string(i) + "]";
      }
      ++out.scalars;
    }
  }
  return out;
}

/// 20 symptoms in four disjoint five-symptom clusters, one per disease.
struct SyntheticTask {
  Vocabulary vocab;
  std::vector<StructuredMCR> train, dev, test;
  CoOccurrence cooc;
};

inline SyntheticTask make_synthetic_task(std::size_t train_records = 200, std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.records = train_records;
  const auto train_raw = synthetic_records(spec, "train");
  spec.seed = seed + 100;
  spec.records = 40;
  const auto dev_raw = synthetic_records(spec, "dev");
  spec.seed = seed + 200;
  spec.records = 100;
  const auto test_raw = synthetic_records(spec, "test");
  SyntheticTask t;
  t.vocab = build_vocabulary(train_raw);
  t.train = resolve(train_raw, t.vocab);
  t.dev = resolve(dev_raw, t.vocab);
  t.test = resolve(test_raw, t.vocab);
  t.cooc = build_cooccurrence(t.train, t.vocab);
  return t;
}

inline ModelConfig synthetic_model_config(const SyntheticTask& t) {
  ModelConfig c;
  c.symptoms = t.vocab.symptom_count();
  c.diseases = t.vocab.disease_count();
  c.embed_dim = 16;
  c.ff_dim = 32;
  c.heads = 2;
  c.decoder_layers = 2;
  c.encoder_layers = 1;
  c.max_sequence_length = 24;
  return c;
}

inline TrainConfig synthetic_train_config() {
  TrainConfig cfg;
  cfg.pretrain_lr = 3e-3;
  cfg.rl_lr = 1e-3;
  cfg.pretrain_epochs = 30;
  cfg.joint_epochs = 5;
  cfg.max_turns_train = 10;
  cfg.batch_size = 16;
  cfg.patience = 5;
  cfg.seed = 3;
  return cfg;
}

/// In this construction the explicit symptom already names the cluster, so
/// evaluation turns the threshold off to measure inquiry rather than early stopping.
inline StopPolicy synthetic_eval_stop() { return StopPolicy{10, std::nullopt}; }

}  // namespace dxtest
