// Language-model pretraining and joint REINFORCE + cross-entropy training.
//
// Per-record losses are built on independent graphs (optionally in parallel),
// their parameter gradients are summed in record order and averaged over the
// batch, so results do not depend on the thread count.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <sstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dxformer/agent.hpp"
#include "dxformer/corpus.hpp"
#include "dxformer/eval/evaluate.hpp"
#include "dxformer/model.hpp"
#include "dxformer/num/adam.hpp"
#include "dxformer/num/graph.hpp"
#include "dxformer/num/ops.hpp"
#include "dxformer/parallel.hpp"
#include "dxformer/rewards.hpp"

namespace dxformer {

struct TrainConfig {
  std::size_t max_turns_train = 40;
  std::size_t max_turns_infer = 10;
  double epsilon = 0.99;
  double pretrain_lr = 3e-4;
  double rl_lr = 1e-4;
  std::size_t batch_size = 16;
  std::size_t pretrain_epochs = 50;
  std::size_t joint_epochs = 30;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  double grad_clip = 1.0;
  /// Weight every log-probability by the whole-trajectory return instead of the return-to-go.
  bool full_return = false;
  /// Subtract an exponential moving average of trajectory returns.
  bool reward_baseline = false;
  double baseline_decay = 0.9;
  /// Joint phase updates only the encoder and shared embeddings.
  bool freeze_decoder = false;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCategory::config, "train config: " + m); };
    if (!(epsilon > 0.0)) fail("epsilon must be positive");
    if (max_turns_train == 0 || max_turns_infer == 0) fail("max turns must be at least 1");
    if (batch_size == 0) fail("batch_size must be positive");
    if (!(pretrain_lr > 0.0) || !(rl_lr > 0.0)) fail("learning rates must be positive");
  }

  json to_json() const {
    return json{{"max_turns_train", max_turns_train},
                {"max_turns_infer", max_turns_infer},
                {"epsilon", epsilon},
                {"pretrain_lr", pretrain_lr},
                {"rl_lr", rl_lr},
                {"batch_size", batch_size},
                {"pretrain_epochs", pretrain_epochs},
                {"joint_epochs", joint_epochs},
                {"patience", patience},
                {"seed", seed},
                {"threads", threads},
                {"grad_clip", grad_clip},
                {"full_return", full_return},
                {"reward_baseline", reward_baseline},
                {"baseline_decay", baseline_decay},
                {"freeze_decoder", freeze_decoder}};
  }

  void merge_json(const json& j) {
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    try {
      get("max_turns_train", max_turns_train);
      get("max_turns_infer", max_turns_infer);
      get("epsilon", epsilon);
      get("pretrain_lr", pretrain_lr);
      get("rl_lr", rl_lr);
      get("batch_size", batch_size);
      get("pretrain_epochs", pretrain_epochs);
      get("joint_epochs", joint_epochs);
      get("patience", patience);
      get("seed", seed);
      get("threads", threads);
      get("grad_clip", grad_clip);
      get("full_return", full_return);
      get("reward_baseline", reward_baseline);
      get("baseline_decay", baseline_decay);
      get("freeze_decoder", freeze_decoder);
    } catch (const json::exception& e) {
      throw Error(ErrorCategory::config, std::string("train config: ") + e.what());
    }
  }
};

struct EpochMetrics {
  std::string phase;
  std::size_t epoch = 0;
  /// Pretraining: mean next-symptom NLL. Joint: mean trajectory return R(tau).
  double objective = 0.0;
  double ce_loss = 0.0;
  double dev_loss = std::numeric_limits<double>::quiet_NaN();
  double dev_sx_recall = std::numeric_limits<double>::quiet_NaN();
  double dev_dx_accuracy = std::numeric_limits<double>::quiet_NaN();
  double mean_turns = std::numeric_limits<double>::quiet_NaN();
};

inline std::string metrics_csv_header() {
  return "phase,epoch,objective,ce_loss,dev_loss,dev_sx_recall,dev_dx_accuracy,mean_turns\n";
}

inline std::string metrics_csv_row(const EpochMetrics& m) {
  std::ostringstream ss;
  ss << std::setprecision(10) << m.phase << ',' << m.epoch << ',' << m.objective << ',' << m.ce_loss << ','
     << m.dev_loss << ',' << m.dev_sx_recall << ',' << m.dev_dx_accuracy << ',' << m.mean_turns << '\n';
  return ss.str();
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Surrogate -sum_t log p(a_t) * G_t over scalar log-probability nodes.
inline num::Var reinforce_loss(num::Graph& g, const std::vector<num::Var>& log_probs,
                               const std::vector<double>& rewards, bool full_return = false, double baseline = 0.0) {
  if (log_probs.size() != rewards.size())
    throw Error(ErrorCategory::invariant, "reinforce_loss: " + std::to_string(rewards.size()) + " rewards for " +
                                              std::to_string(log_probs.size()) + " actions");
  std::vector<double> weights = returns_to_go(rewards);
  if (full_return && !weights.empty()) std::fill(weights.begin(), weights.end(), weights.front());
  for (auto& w : weights) w = -(w - baseline);
  return num::ops::weighted_sum(g, log_probs, std::move(weights));
}

/// Scalar value of the surrogate for already-computed log-probabilities.
inline double reinforce_surrogate(const std::vector<double>& log_probs, const std::vector<double>& rewards) {
  if (log_probs.size() != rewards.size()) throw Error(ErrorCategory::invariant, "reinforce_surrogate: length mismatch");
  const auto g = returns_to_go(rewards);
  double loss = 0.0;
  for (std::size_t t = 0; t < g.size(); ++t) loss -= log_probs[t] * g[t];
  return loss;
}

/// Log-probability nodes of every asked symptom under the masked decoder policy,
/// recomputed in one causal pass over the final context.
inline std::vector<num::Var> action_log_probs(num::Graph& g, const DxFormer& model, const DialogueState& state) {
  const std::size_t k = state.explicit_count;
  const std::size_t turns = state.turn;
  if (turns == 0) return {};
  const std::span<const Observation> inputs(state.context.data(), k + turns - 1);
  const auto logits = model.decoder_forward(g, inputs);
  const std::size_t ns = model.config().symptoms;
  std::vector<std::vector<bool>> masks(inputs.size(), std::vector<bool>(ns, true));
  std::vector<bool> mask(ns, true);
  for (std::size_t i = 0; i < k; ++i) mask[state.context[i].symptom] = false;
  for (std::size_t t = 0; t < turns; ++t) {
    masks[k - 1 + t] = mask;
    mask[state.context[k + t].symptom] = false;
  }
  const auto logp = num::ops::masked_log_softmax(g, logits, &masks);
  std::vector<num::Var> out;
  out.reserve(turns);
  for (std::size_t t = 0; t < turns; ++t) out.push_back(num::ops::pick(g, logp, k - 1 + t, state.context[k + t].symptom));
  return out;
}

inline num::Var encoder_forward_ce(num::Graph& g, const DxFormer& model, std::span<const Observation> symptoms,
                                   DiseaseId target) {
  return num::ops::cross_entropy(g, model.encoder_forward(g, symptoms), target);
}

struct PretrainLoss {
  num::Var total;
  double lm = 0.0;  // mean next-symptom NLL; 0 when the record has no implicit symptoms
  double ce = 0.0;
};

/// Teacher-forced next-implicit-symptom NLL (averaged over positions) plus the
/// encoder's cross-entropy on the complete symptom set.
inline PretrainLoss pretrain_loss(num::Graph& g, const DxFormer& model, const StructuredMCR& record) {
  using namespace num::ops;
  PretrainLoss out;
  std::vector<Observation> full = record.explicit_symptoms;
  full.insert(full.end(), record.implicit_symptoms.begin(), record.implicit_symptoms.end());
  const auto enc = encoder_forward_ce(g, model, full, record.disease);
  out.ce = g.value(enc).item();
  if (record.implicit_symptoms.empty()) {
    out.total = enc;
    return out;
  }
  DialogueState teacher;
  teacher.context = full;
  teacher.explicit_count = record.explicit_symptoms.size();
  teacher.turn = record.implicit_symptoms.size();
  const auto logps = action_log_probs(g, model, teacher);
  const double inv = -1.0 / static_cast<double>(logps.size());
  const auto lm = weighted_sum(g, logps, std::vector<double>(logps.size(), inv));
  out.lm = g.value(lm).item();
  out.total = add(g, lm, enc);
  return out;
}

struct JointLoss {
  num::Var total;
  double reinforce = 0.0;
  double ce = 0.0;
};

/// REINFORCE surrogate on the sampled session plus cross-entropy of the encoder on
/// the greedy session's collected symptoms.
inline JointLoss joint_loss(num::Graph& g, const DxFormer& model, const Trajectory& sampled,
                            const Trajectory& greedy, bool full_return = false, double baseline = 0.0,
                            bool include_reinforce = true) {
  JointLoss out;
  const auto view = classifier_view(greedy.state);
  const auto ce = encoder_forward_ce(g, model, view, greedy.true_disease);
  out.ce = g.value(ce).item();
  if (!include_reinforce || sampled.state.turn == 0) {
    out.total = ce;
    return out;
  }
  const auto logps = action_log_probs(g, model, sampled.state);
  const auto rl = reinforce_loss(g, logps, sampled.step_rewards, full_return, baseline);
  out.reinforce = g.value(rl).item();
  out.total = num::ops::add(g, rl, ce);
  return out;
}

namespace detail {

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

inline std::size_t needed_sequence_length(const std::vector<StructuredMCR>& records, std::size_t turns) {
  std::size_t n = 0;
  for (const auto& r : records) n = std::max(n, r.explicit_count() + std::max(turns, r.implicit_symptoms.size()));
  return n;
}

}  // namespace detail

/// Sequence length a model needs to run `turns` inquiry turns (and teacher forcing) on `records`.
inline std::size_t required_sequence_length(const std::vector<StructuredMCR>& records, std::size_t turns) {
  return detail::needed_sequence_length(records, turns);
}

struct PretrainResult {
  std::vector<EpochMetrics> history;
  double best_dev_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
};

inline double mean_pretrain_loss(const DxFormer& model, const std::vector<StructuredMCR>& records,
                                 std::size_t threads) {
  if (records.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> losses(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) {
    num::Graph g(model.parameters());
    losses[i] = g.value(pretrain_loss(g, model, records[i]).total).item();
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(records.size());
}

/// Maximum-likelihood pretraining of the decoder (and encoder head). The model is left
/// at the parameters with the lowest dev loss; training stops after `patience`
/// epochs without improvement.
inline PretrainResult pretrain(DxFormer& model, const std::vector<StructuredMCR>& train,
                               const std::vector<StructuredMCR>& dev, const TrainConfig& cfg,
                               const EpochCallback& on_epoch = {}) {
  if (train.empty()) throw Error(ErrorCategory::invariant, "pretrain: empty training corpus");
  cfg.validate();
  num::AdamState adam;
  adam.learning_rate = cfg.pretrain_lr;
  PretrainResult result;
  num::ParameterSet best = model.parameters();
  std::size_t since_best = 0;
  const StopPolicy dev_stop{cfg.max_turns_infer, cfg.epsilon};
  for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
    const auto order = detail::shuffled_indices(train.size(), mix_seed(cfg.seed, 0x5052, epoch));
    double lm_sum = 0.0, ce_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      std::vector<num::Gradients> grads(count);
      std::vector<PretrainLoss> parts(count);
      parallel_for(count, cfg.threads, [&](std::size_t b) {
        num::Graph g(model.parameters());
        parts[b] = pretrain_loss(g, model, train[order[start + b]]);
        g.backward(parts[b].total);
        grads[b] = g.parameter_gradients();
      });
      num::Gradients total(model.parameters().size());
      for (std::size_t b = 0; b < count; ++b) {
        total.accumulate(grads[b]);
        lm_sum += parts[b].lm;
        ce_sum += parts[b].ce;
      }
      total.scale(1.0 / static_cast<double>(count));
      num::adam_step(model.parameters(), total, adam);
    }
    EpochMetrics m;
    m.phase = "pretrain";
    m.epoch = epoch;
    m.objective = lm_sum / static_cast<double>(train.size());
    m.ce_loss = ce_sum / static_cast<double>(train.size());
    if (!dev.empty()) {
      m.dev_loss = mean_pretrain_loss(model, dev, cfg.threads);
      const auto report = eval::evaluate(model, dev, dev_stop, cfg.threads);
      m.dev_sx_recall = report.sx_recall;
      m.dev_dx_accuracy = report.dx_accuracy;
      m.mean_turns = report.mean_turns;
    }
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
    const double score = dev.empty() ? m.objective + m.ce_loss : m.dev_loss;
    if (score < result.best_dev_loss) {
      result.best_dev_loss = score;
      result.best_epoch = epoch;
      best = model.parameters();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  model.parameters() = best;
  return result;
}

struct JointResult {
  std::vector<EpochMetrics> history;
  double best_dev_accuracy = -1.0;
  double best_dev_recall = -1.0;
  std::size_t best_epoch = 0;
};

/// Joint training. Each record contributes one sampled session (REINFORCE, no
/// threshold stop, max_turns_train turns) and one greedy session whose collected
/// symptoms train the encoder. The model is left at the best dev DX-Acc epoch.
inline JointResult train_joint(DxFormer& model, const std::vector<StructuredMCR>& train,
                               const std::vector<StructuredMCR>& dev, const CoOccurrence& cooc,
                               const TrainConfig& cfg, const RewardConfig& rewards = {},
                               const EpochCallback& on_epoch = {}) {
  if (train.empty()) throw Error(ErrorCategory::invariant, "train_joint: empty training corpus");
  cfg.validate();
  rewards.validate();
  num::AdamState adam;
  adam.learning_rate = cfg.rl_lr;
  JointResult result;
  num::ParameterSet best = model.parameters();
  std::size_t since_best = 0;
  double baseline = 0.0;
  bool baseline_ready = false;
  const StopPolicy train_stop{cfg.max_turns_train, std::nullopt};
  const StopPolicy dev_stop{cfg.max_turns_infer, cfg.epsilon};
  for (std::size_t epoch = 1; epoch <= cfg.joint_epochs; ++epoch) {
    const auto order = detail::shuffled_indices(train.size(), mix_seed(cfg.seed, 0x4a4f, epoch));
    double return_sum = 0.0, ce_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      std::vector<num::Gradients> grads(count);
      std::vector<JointLoss> parts(count);
      std::vector<double> returns(count);
      const double batch_baseline = cfg.reward_baseline && baseline_ready ? baseline : 0.0;
      parallel_for(count, cfg.threads, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        const auto& record = train[idx];
        const auto sampled = rollout(model, record, DecodeMode::sample, train_stop,
                                     mix_seed(cfg.seed, epoch, idx), &cooc, rewards);
        const auto greedy = rollout(model, record, DecodeMode::greedy, train_stop, 0);
        num::Graph g(model.parameters());
        parts[b] = joint_loss(g, model, sampled, greedy, cfg.full_return, batch_baseline, !cfg.freeze_decoder);
        g.backward(parts[b].total);
        grads[b] = g.parameter_gradients();
        returns[b] = std::accumulate(sampled.step_rewards.begin(), sampled.step_rewards.end(), 0.0);
      });
      num::Gradients total(model.parameters().size());
      for (std::size_t b = 0; b < count; ++b) {
        total.accumulate(grads[b]);
        return_sum += returns[b];
        ce_sum += parts[b].ce;
      }
      total.scale(1.0 / static_cast<double>(count));
      if (cfg.freeze_decoder)
        for (std::size_t i = 0; i < total.size(); ++i)
          if (model.is_decoder_parameter(i)) total[i] = num::Tensor{};
      if (cfg.grad_clip > 0.0) total.clip_global_norm(cfg.grad_clip);
      num::adam_step(model.parameters(), total, adam);
      const double batch_mean = std::accumulate(returns.begin(), returns.end(), 0.0) / static_cast<double>(count);
      baseline = baseline_ready ? cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * batch_mean : batch_mean;
      baseline_ready = true;
    }
    EpochMetrics m;
    m.phase = "joint";
    m.epoch = epoch;
    m.objective = return_sum / static_cast<double>(train.size());
    m.ce_loss = ce_sum / static_cast<double>(train.size());
    const auto& eval_set = dev.empty() ? train : dev;
    const auto report = eval::evaluate(model, eval_set, dev_stop, cfg.threads);
    m.dev_sx_recall = report.sx_recall;
    m.dev_dx_accuracy = report.dx_accuracy;
    m.mean_turns = report.mean_turns;
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
    const bool better = report.dx_accuracy > result.best_dev_accuracy ||
                        (report.dx_accuracy == result.best_dev_accuracy && report.sx_recall > result.best_dev_recall);
    if (better) {
      result.best_dev_accuracy = report.dx_accuracy;
      result.best_dev_recall = report.sx_recall;
      result.best_epoch = epoch;
      best = model.parameters();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  model.parameters() = best;
  return result;
}

}  // namespace dxformer
