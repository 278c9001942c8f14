// Live consultation sessions where a person plays the patient. Shared by the
// HTTP service and the terminal console.

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dxformer/agent.hpp"
#include "dxformer/corpus.hpp"
#include "dxformer/model.hpp"

namespace dxformer {

struct SessionSettings {
  std::size_t max_turns = 10;
  double epsilon = 0.99;
  std::size_t session_cap = 1024;
  std::chrono::seconds ttl{1800};
};

class Session {
 public:
  using Clock = std::chrono::steady_clock;

  Session(std::string id, SessionDriver driver, Clock::time_point now)
      : id_(std::move(id)), driver_(std::move(driver)), created_(now), last_used_(now) {}

  const std::string& id() const noexcept { return id_; }
  const SessionDriver& driver() const noexcept { return driver_; }
  SessionDriver& driver() noexcept { return driver_; }
  std::mutex& mutex() noexcept { return mutex_; }
  Clock::time_point created() const noexcept { return created_; }
  Clock::time_point last_used() const noexcept { return last_used_; }
  void touch(Clock::time_point now) noexcept { last_used_ = now; }

 private:
  std::string id_;
  SessionDriver driver_;
  Clock::time_point created_;
  Clock::time_point last_used_;
  std::mutex mutex_;
};

class SessionManager {
 public:
  using Clock = Session::Clock;
  using NowFn = std::function<Clock::time_point()>;

  SessionManager(const DxFormer& model, const Vocabulary& vocab, SessionSettings settings, NowFn now = {})
      : model_(&model),
        vocab_(&vocab),
        settings_(settings),
        policy_(model, DecodeMode::greedy),
        diagnoser_(model),
        now_(now ? std::move(now) : NowFn([] { return Clock::now(); })),
        id_rng_(std::random_device{}()) {
    if (vocab.symptom_count() != model.config().symptoms || vocab.disease_count() != model.config().diseases)
      throw Error(ErrorCategory::checkpoint, "vocabulary size does not match the model");
  }

  const SessionSettings& settings() const noexcept { return settings_; }
  const Vocabulary& vocab() const noexcept { return *vocab_; }

  /// Parses [[name, "POS"|"NEG"], ...] into observations.
  std::vector<Observation> parse_explicit(const json& pairs) const {
    if (!pairs.is_array()) throw Error(ErrorCategory::parse, "'explicit' must be an array of [symptom, attribute]");
    std::vector<Observation> out;
    for (const auto& p : pairs) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_string())
        throw Error(ErrorCategory::parse, "malformed explicit entry " + p.dump());
      const auto attr = parse_attribute(p[1].get<std::string>());
      if (!attr || *attr == Attribute::unk)
        throw Error(ErrorCategory::parse, "explicit attribute must be POS or NEG, got " + p[1].dump());
      const auto id = vocab_->symptom_id(p[0].get<std::string>());
      for (const auto& o : out)
        if (o.symptom == id) throw Error(ErrorCategory::parse, "symptom '" + p[0].get<std::string>() + "' repeated");
      out.push_back({id, *attr});
    }
    if (out.empty()) throw Error(ErrorCategory::parse, "at least one explicit symptom is required");
    return out;
  }

  std::shared_ptr<Session> create(std::vector<Observation> explicit_symptoms) {
    auto state = DialogueState::start(std::move(explicit_symptoms));
    const auto now = now_();
    std::lock_guard lock(mutex_);
    evict_expired(now);
    if (sessions_.size() >= settings_.session_cap)
      throw Error(ErrorCategory::capacity, "session limit of " + std::to_string(settings_.session_cap) + " reached");
    if (state.context.size() + settings_.max_turns > model_->config().max_sequence_length + 1)
      throw Error(ErrorCategory::parse, "too many explicit symptoms for this model");
    auto session = std::make_shared<Session>(
        new_id(), SessionDriver(policy_, diagnoser_, StopPolicy{settings_.max_turns, settings_.epsilon},
                                model_->config().symptoms, std::move(state)),
        now);
    sessions_.emplace(session->id(), session);
    return session;
  }

  std::shared_ptr<Session> find(const std::string& id) {
    const auto now = now_();
    std::lock_guard lock(mutex_);
    evict_expired(now);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorCategory::not_found, "no session '" + id + "'");
    it->second->touch(now);
    return it->second;
  }

  /// Applies a human answer to the pending query. `expected_turn`, when given, must
  /// equal the session's current turn, which makes retried requests harmless.
  void answer(Session& s, Attribute attribute, std::optional<std::size_t> expected_turn = std::nullopt) {
    std::lock_guard lock(s.mutex());
    auto& d = s.driver();
    if (d.state().is_stopped()) throw Error(ErrorCategory::state, "session already diagnosed");
    if (expected_turn && *expected_turn != d.state().turn)
      throw Error(ErrorCategory::state, "turn " + std::to_string(*expected_turn) + " does not match session turn " +
                                            std::to_string(d.state().turn));
    d.answer(attribute);
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return sessions_.size();
  }

  /// {session_id, turn, query, confidence[, diagnosis]}
  json response(Session& s) const {
    std::lock_guard lock(s.mutex());
    return response_unlocked(s);
  }

  json snapshot(Session& s) const {
    std::lock_guard lock(s.mutex());
    const auto& d = s.driver();
    const auto& st = d.state();
    json context = json::array();
    for (std::size_t i = 0; i < st.context.size(); ++i) {
      const auto& o = st.context[i];
      context.push_back({vocab_->symptom_name(o.symptom), std::string(to_string(o.attribute))});
    }
    json j = response_unlocked(s);
    j["explicit_count"] = st.explicit_count;
    j["context"] = std::move(context);
    j["confidence_trace"] = d.confidence_trace();
    j["stopped"] = st.is_stopped();
    return j;
  }

 private:
  json response_unlocked(const Session& s) const {
    const auto& d = s.driver();
    const auto& st = d.state();
    json j{{"session_id", s.id()}, {"turn", st.turn}};
    if (const auto q = d.pending_query()) {
      j["query"] = vocab_->symptom_name(*q);
    } else {
      j["query"] = nullptr;
    }
    j["confidence"] = d.confidence_trace().empty() ? 0.0 : d.confidence_trace().back();
    if (st.diagnosis) {
      j["diagnosis"] = json{{"disease", vocab_->disease_name(st.diagnosis->disease)},
                            {"probs", st.diagnosis->probabilities},
                            {"stop_reason", std::string(to_string(*st.stopped))}};
    }
    return j;
  }

  void evict_expired(Clock::time_point now) {
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (now - it->second->last_used() > settings_.ttl) {
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }

  std::string new_id() {
    std::ostringstream ss;
    ss << std::hex;
    for (int i = 0; i < 2; ++i) {
      ss.width(16);
      ss.fill('0');
      ss << id_rng_();
    }
    return ss.str();
  }

  const DxFormer* model_;
  const Vocabulary* vocab_;
  SessionSettings settings_;
  DecoderPolicy policy_;
  EncoderDiagnoser diagnoser_;
  NowFn now_;
  std::mt19937_64 id_rng_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions_;
};

}  // namespace dxformer
