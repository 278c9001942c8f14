// Symptom-inquiry decoder and disease-classifier encoder.
//
// Both stacks are pre-norm transformer blocks over (symptom, attribute) token
// embeddings that they share. The decoder is causal and adds sinusoidal
// positions; the encoder attends bidirectionally, has no positions and mean
// pools before its classifier head, so its output does not depend on input order.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dxformer/corpus.hpp"
#include "dxformer/dialogue.hpp"
#include "dxformer/error.hpp"
#include "dxformer/num/attention.hpp"
#include "dxformer/num/graph.hpp"
#include "dxformer/num/ops.hpp"

namespace dxformer {

struct ModelConfig {
  std::size_t decoder_layers = 4;
  std::size_t encoder_layers = 1;
  std::size_t embed_dim = 128;
  std::size_t ff_dim = 256;
  std::size_t heads = 4;
  std::size_t symptoms = 0;
  std::size_t diseases = 0;
  std::size_t max_sequence_length = 64;
  /// One-hot symptom/attribute inputs with a per-stack projection instead of shared dense embeddings.
  bool sparse_inputs = false;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCategory::config, "model config: " + m); };
    if (encoder_layers >= decoder_layers) fail("encoder must be shallower than the decoder");
    if (encoder_layers == 0) fail("encoder needs at least one layer");
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) fail("embed_dim must be divisible by heads");
    if (ff_dim == 0) fail("ff_dim must be positive");
    if (symptoms == 0 || diseases == 0) fail("symptom and disease counts must be positive");
    if (max_sequence_length == 0) fail("max_sequence_length must be positive");
  }

  json to_json() const {
    return json{{"decoder_layers", decoder_layers}, {"encoder_layers", encoder_layers},
                {"embed_dim", embed_dim},           {"ff_dim", ff_dim},
                {"heads", heads},                   {"symptoms", symptoms},
                {"diseases", diseases},             {"max_sequence_length", max_sequence_length},
                {"sparse_inputs", sparse_inputs}};
  }

  /// Missing keys keep their current values.
  void merge_json(const json& j) {
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    try {
      get("decoder_layers", decoder_layers);
      get("encoder_layers", encoder_layers);
      get("embed_dim", embed_dim);
      get("ff_dim", ff_dim);
      get("heads", heads);
      get("symptoms", symptoms);
      get("diseases", diseases);
      get("max_sequence_length", max_sequence_length);
      get("sparse_inputs", sparse_inputs);
    } catch (const json::exception& e) {
      throw Error(ErrorCategory::config, std::string("model config: ") + e.what());
    }
  }

  static ModelConfig from_json(const json& j) {
    ModelConfig c;
    c.merge_json(j);
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class DecodeMode { greedy, sample };

struct SymptomChoice {
  SymptomId symptom = 0;
  double log_prob = 0.0;
};

/// Picks the next symptom from masked logits. Greedy breaks ties toward the smallest id.
template <class Rng>
SymptomChoice next_symptom(std::span<const double> logits, const std::vector<bool>& mask, DecodeMode mode,
                           Rng& rng) {
  if (logits.size() != mask.size()) throw Error(ErrorCategory::invariant, "next_symptom: mask size mismatch");
  if (!any_allowed(mask)) throw Error(ErrorCategory::state, "next_symptom: every action is masked");
  const auto probs = num::softmax(logits, &mask);
  std::size_t chosen = 0;
  if (mode == DecodeMode::greedy) {
    bool found = false;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      if (!mask[i]) continue;
      if (!found || logits[i] > logits[chosen]) {
        chosen = i;
        found = true;
      }
    }
  } else {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const double u = uniform(rng);
    double cumulative = 0.0;
    std::size_t last_allowed = 0;
    bool picked = false;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (!mask[i]) continue;
      last_allowed = i;
      cumulative += probs[i];
      if (u < cumulative) {
        chosen = i;
        picked = true;
        break;
      }
    }
    if (!picked) chosen = last_allowed;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) sum += std::exp(logits[i] - mx);
  return {chosen, logits[chosen] - mx - std::log(sum)};
}

/// Fixed sinusoidal position table [length, dim].
inline num::Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  num::Tensor pe(length, dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      pe(pos, i) = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < dim) pe(pos, i + 1) = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return pe;
}

class DxFormer {
 public:
  struct BlockParams {
    std::size_t norm1_gain, norm1_bias;
    std::size_t query_weight, query_bias, key_weight, value_weight, value_bias;
    std::size_t output_weight, output_bias;
    std::size_t norm2_gain, norm2_bias;
    std::size_t ff1_weight, ff1_bias, ff2_weight, ff2_bias;
  };

  struct StackParams {
    std::vector<BlockParams> blocks;
    std::size_t final_norm_gain = 0, final_norm_bias = 0;
    std::size_t head_weight = 0, head_bias = 0;
    // sparse_inputs only
    std::size_t input_projection = 0, input_bias = 0;
  };

  DxFormer() = default;

  DxFormer(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    auto random = [&](std::size_t r, std::size_t c) {
      num::Tensor t(r, c);
      for (auto& v : t.data()) v = normal(rng);
      return t;
    };
    const std::size_t d = config_.embed_dim;
    if (!config_.sparse_inputs) {
      symptom_embedding_ = params_.add("embedding.symptom", random(config_.symptoms, d));
      attribute_embedding_ = params_.add("embedding.attribute", random(kAttributeCount, d));
    }
    auto build_stack = [&](const std::string& prefix, std::size_t layers, std::size_t head_out) {
      StackParams s;
      if (config_.sparse_inputs) {
        s.input_projection =
            params_.add(prefix + ".input.projection", random(config_.symptoms + kAttributeCount, d));
        s.input_bias = params_.add(prefix + ".input.bias", num::Tensor(1, d));
      }
      for (std::size_t l = 0; l < layers; ++l) {
        const auto p = prefix + ".block" + std::to_string(l) + ".";
        BlockParams b{};
        b.norm1_gain = params_.add(p + "norm1.gain", num::Tensor(1, d, 1.0));
        b.norm1_bias = params_.add(p + "norm1.bias", num::Tensor(1, d));
        b.query_weight = params_.add(p + "attn.query.weight", random(d, d));
        b.query_bias = params_.add(p + "attn.query.bias", num::Tensor(1, d));
        b.key_weight = params_.add(p + "attn.key.weight", random(d, d));
        b.value_weight = params_.add(p + "attn.value.weight", random(d, d));
        b.value_bias = params_.add(p + "attn.value.bias", num::Tensor(1, d));
        b.output_weight = params_.add(p + "attn.output.weight", random(d, d));
        b.output_bias = params_.add(p + "attn.output.bias", num::Tensor(1, d));
        b.norm2_gain = params_.add(p + "norm2.gain", num::Tensor(1, d, 1.0));
        b.norm2_bias = params_.add(p + "norm2.bias", num::Tensor(1, d));
        b.ff1_weight = params_.add(p + "ff1.weight", random(d, config_.ff_dim));
        b.ff1_bias = params_.add(p + "ff1.bias", num::Tensor(1, config_.ff_dim));
        b.ff2_weight = params_.add(p + "ff2.weight", random(config_.ff_dim, d));
        b.ff2_bias = params_.add(p + "ff2.bias", num::Tensor(1, d));
        s.blocks.push_back(b);
      }
      s.final_norm_gain = params_.add(prefix + ".final_norm.gain", num::Tensor(1, d, 1.0));
      s.final_norm_bias = params_.add(prefix + ".final_norm.bias", num::Tensor(1, d));
      s.head_weight = params_.add(prefix + ".head.weight", random(d, head_out));
      s.head_bias = params_.add(prefix + ".head.bias", num::Tensor(1, head_out));
      return s;
    };
    shared_end_ = params_.size();
    decoder_ = build_stack("decoder", config_.decoder_layers, config_.symptoms);
    decoder_end_ = params_.size();
    encoder_ = build_stack("encoder", config_.encoder_layers, config_.diseases);
    positions_ = sinusoidal_positions(config_.max_sequence_length, d);
  }

  const ModelConfig& config() const noexcept { return config_; }
  num::ParameterSet& parameters() noexcept { return params_; }
  const num::ParameterSet& parameters() const noexcept { return params_; }

  /// Whether parameter `i` is owned by the decoder stack only (not shared, not encoder).
  bool is_decoder_parameter(std::size_t i) const noexcept { return i >= shared_end_ && i < decoder_end_; }
  bool is_encoder_parameter(std::size_t i) const noexcept { return i >= decoder_end_; }
  bool is_shared_parameter(std::size_t i) const noexcept { return i < shared_end_; }

  /// Next-symptom logits at every position of `context`: [len, symptoms].
  num::Var decoder_forward(num::Graph& g, std::span<const Observation> context) const {
    if (context.empty()) throw Error(ErrorCategory::invariant, "decoder: empty context");
    if (context.size() > config_.max_sequence_length)
      throw Error(ErrorCategory::invariant, "decoder: context of length " + std::to_string(context.size()) +
                                                " exceeds max_sequence_length " +
                                                std::to_string(config_.max_sequence_length));
    num::Var x = embed(g, context, decoder_);
    num::Tensor pos(context.size(), config_.embed_dim);
    for (std::size_t r = 0; r < context.size(); ++r) {
      auto src = positions_.row_span(r);
      std::copy(src.begin(), src.end(), pos.row_span(r).begin());
    }
    x = num::ops::add(g, x, g.constant(std::move(pos)));
    const auto mask = num::causal_mask(context.size());
    x = run_stack(g, x, decoder_, mask);
    return num::ops::linear(g, x, g.param(decoder_.head_weight), g.param(decoder_.head_bias));
  }

  /// Disease logits [1, diseases] for an unordered bag of observations.
  num::Var encoder_forward(num::Graph& g, std::span<const Observation> symptoms) const {
    if (symptoms.empty()) throw Error(ErrorCategory::invariant, "encoder: empty input");
    num::Var x = embed(g, symptoms, encoder_);
    const auto mask = num::full_mask(symptoms.size(), symptoms.size());
    x = run_stack(g, x, encoder_, mask);
    const num::Var pooled = num::ops::mean_rows(g, x);
    return num::ops::linear(g, pooled, g.param(encoder_.head_weight), g.param(encoder_.head_bias));
  }

  /// Next-symptom logits after the last context position.
  std::vector<double> decoder_logits(std::span<const Observation> context) const {
    num::Graph g(params_);
    const auto logits = decoder_forward(g, context);
    const auto row = g.value(logits).row_span(context.size() - 1);
    return {row.begin(), row.end()};
  }

  std::vector<double> classify(std::span<const Observation> symptoms) const {
    num::Graph g(params_);
    const auto logits = encoder_forward(g, symptoms);
    return num::softmax(g.value(logits).row_span(0));
  }

 private:
  num::Var embed(num::Graph& g, std::span<const Observation> obs, const StackParams& stack) const {
    std::vector<std::size_t> symptom_ids, attribute_ids;
    for (const auto& o : obs) {
      if (o.symptom >= config_.symptoms)
        throw Error(ErrorCategory::vocabulary, "symptom id " + std::to_string(o.symptom) + " out of range");
      symptom_ids.push_back(o.symptom);
      attribute_ids.push_back(static_cast<std::size_t>(o.attribute));
    }
    if (config_.sparse_inputs) {
      for (auto& a : attribute_ids) a += config_.symptoms;
      const auto table = g.param(stack.input_projection);
      const auto x = num::ops::add(g, num::ops::gather_rows(g, table, std::move(symptom_ids)),
                                   num::ops::gather_rows(g, table, std::move(attribute_ids)));
      return num::ops::add_row(g, x, g.param(stack.input_bias));
    }
    return num::ops::add(g, num::ops::gather_rows(g, g.param(symptom_embedding_), std::move(symptom_ids)),
                         num::ops::gather_rows(g, g.param(attribute_embedding_), std::move(attribute_ids)));
  }

  num::Var run_stack(num::Graph& g, num::Var x, const StackParams& stack, const num::AttentionMask& mask) const {
    using namespace num::ops;
    for (const auto& b : stack.blocks) {
      const auto h = layer_norm(g, x, g.param(b.norm1_gain), g.param(b.norm1_bias));
      const num::AttentionWeights w{g.param(b.query_weight), g.param(b.query_bias),   g.param(b.key_weight),
                                    std::nullopt,            g.param(b.value_weight), g.param(b.value_bias),
                                    g.param(b.output_weight), g.param(b.output_bias)};
      x = add(g, x, num::multi_head_attention(g, h, h, w, mask, config_.heads));
      const auto h2 = layer_norm(g, x, g.param(b.norm2_gain), g.param(b.norm2_bias));
      const auto ff = linear(g, gelu(g, linear(g, h2, g.param(b.ff1_weight), g.param(b.ff1_bias))),
                             g.param(b.ff2_weight), g.param(b.ff2_bias));
      x = add(g, x, ff);
    }
    return layer_norm(g, x, g.param(stack.final_norm_gain), g.param(stack.final_norm_bias));
  }

  ModelConfig config_;
  num::ParameterSet params_;
  std::size_t symptom_embedding_ = 0;
  std::size_t attribute_embedding_ = 0;
  std::size_t shared_end_ = 0;
  std::size_t decoder_end_ = 0;
  StackParams decoder_;
  StackParams encoder_;
  num::Tensor positions_;
};

}  // namespace dxformer
