#pragma once

#include <cstdint>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dxformer/agent.hpp"
#include "dxformer/eval/metrics.hpp"
#include "dxformer/parallel.hpp"

namespace dxformer::eval {

struct EvalReport {
  double sx_recall = 0.0;
  double dx_accuracy = 0.0;
  double mean_turns = 0.0;
  std::size_t records = 0;
  std::vector<double> per_disease_accuracy;
  std::vector<std::size_t> per_disease_count;
  std::size_t stopped_threshold = 0;
  std::size_t stopped_max_turns = 0;
  std::size_t max_turns = 0;
  std::optional<double> epsilon;

  /// Stop policy plus corpus size, enough to tell two reports' settings apart.
  std::string fingerprint() const {
    std::ostringstream ss;
    ss << "max_turns=" << max_turns << ";epsilon=";
    if (epsilon) {
      ss << std::setprecision(17) << *epsilon;
    } else {
      ss << "off";
    }
    ss << ";records=" << records;
    return ss.str();
  }

  json to_json(const Vocabulary* vocab = nullptr) const {
    json per = json::array();
    for (std::size_t d = 0; d < per_disease_accuracy.size(); ++d) {
      json row{{"disease", vocab ? json(vocab->disease_name(d)) : json(d)},
               {"count", per_disease_count[d]},
               {"accuracy", per_disease_accuracy[d]}};
      per.push_back(std::move(row));
    }
    return json{{"sx_recall", sx_recall},
                {"dx_accuracy", dx_accuracy},
                {"mean_turns", mean_turns},
                {"records", records},
                {"per_disease", per},
                {"stop_reasons", {{"threshold", stopped_threshold}, {"max_turns", stopped_max_turns}}},
                {"fingerprint", fingerprint()}};
  }
};

inline EvalReport summarize(const std::vector<Trajectory>& trajectories, const std::vector<StructuredMCR>& records,
                            std::size_t disease_count, StopPolicy stop) {
  EvalReport r;
  r.records = records.size();
  r.max_turns = stop.max_turns;
  r.epsilon = stop.epsilon;
  r.sx_recall = symptom_recall(trajectories, records);
  r.dx_accuracy = diagnostic_accuracy(trajectories);
  r.per_disease_accuracy.assign(disease_count, 0.0);
  r.per_disease_count.assign(disease_count, 0);
  double turns = 0.0;
  for (const auto& t : trajectories) {
    turns += static_cast<double>(t.state.turn);
    ++r.per_disease_count.at(t.true_disease);
    r.per_disease_accuracy[t.true_disease] += t.predicted == t.true_disease;
    if (t.state.stopped == StopReason::threshold) {
      ++r.stopped_threshold;
    } else {
      ++r.stopped_max_turns;
    }
  }
  for (std::size_t d = 0; d < disease_count; ++d)
    if (r.per_disease_count[d]) r.per_disease_accuracy[d] /= static_cast<double>(r.per_disease_count[d]);
  r.mean_turns = trajectories.empty() ? 0.0 : turns / static_cast<double>(trajectories.size());
  return r;
}

/// Runs one session per record under `stop`. Deterministic for deterministic policies.
inline EvalReport evaluate(const InquiryPolicy& policy, const Diagnoser& diagnoser,
                           const std::vector<StructuredMCR>& records, std::size_t symptom_count,
                           std::size_t disease_count, StopPolicy stop, std::size_t threads = 1,
                           std::uint64_t seed = 0, std::vector<Trajectory>* trajectories_out = nullptr) {
  std::vector<Trajectory> trajectories(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) {
    trajectories[i] = rollout(records[i], policy, diagnoser, stop, symptom_count, mix_seed(seed, i));
  });
  auto report = summarize(trajectories, records, disease_count, stop);
  if (trajectories_out) *trajectories_out = std::move(trajectories);
  return report;
}

/// Greedy decoder queries with the encoder as diagnoser.
inline EvalReport evaluate(const DxFormer& model, const std::vector<StructuredMCR>& records, StopPolicy stop,
                           std::size_t threads = 1, std::vector<Trajectory>* trajectories_out = nullptr) {
  const DecoderPolicy policy(model, DecodeMode::greedy);
  const EncoderDiagnoser diagnoser(model);
  return evaluate(policy, diagnoser, records, model.config().symptoms, model.config().diseases, stop, threads, 0,
                  trajectories_out);
}

enum class SweepAxis { max_turns, epsilon };

inline std::string_view to_string(SweepAxis a) { return a == SweepAxis::max_turns ? "max_turns" : "epsilon"; }

struct SweepRow {
  double value = 0.0;
  EvalReport report;
};

/// One evaluate() per grid point; the swept quantity overrides `base`.
inline std::vector<SweepRow> sweep(const InquiryPolicy& policy, const Diagnoser& diagnoser,
                                   const std::vector<StructuredMCR>& records, std::size_t symptom_count,
                                   std::size_t disease_count, SweepAxis axis, const std::vector<double>& grid,
                                   StopPolicy base, std::size_t threads = 1) {
  if (grid.empty()) throw Error(ErrorCategory::config, "sweep: empty grid");
  std::vector<SweepRow> rows;
  for (double v : grid) {
    StopPolicy stop = base;
    if (axis == SweepAxis::max_turns) {
      if (v < 1.0) throw Error(ErrorCategory::config, "sweep: max_turns must be >= 1");
      stop.max_turns = static_cast<std::size_t>(v);
    } else {
      stop.epsilon = v;
    }
    rows.push_back({v, evaluate(policy, diagnoser, records, symptom_count, disease_count, stop, threads)});
  }
  return rows;
}

inline std::string sweep_csv(SweepAxis axis, const std::vector<SweepRow>& rows) {
  std::ostringstream ss;
  ss << std::setprecision(17);
  ss << to_string(axis) << ",sx_recall,dx_accuracy,mean_turns\n";
  for (const auto& r : rows)
    ss << r.value << ',' << r.report.sx_recall << ',' << r.report.dx_accuracy << ',' << r.report.mean_turns << '\n';
  return ss.str();
}

}  // namespace dxformer::eval
