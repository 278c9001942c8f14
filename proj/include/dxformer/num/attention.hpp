#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "dxformer/num/ops.hpp"

namespace dxformer::num {

/// The key bias is optional because softmax is invariant to it: it shifts every
/// score in a row by the same amount.
struct AttentionWeights {
  Var query_weight, query_bias;
  Var key_weight;
  std::optional<Var> key_bias;
  Var value_weight, value_bias;
  Var output_weight, output_bias;
};

/// allowed[i][j] is true when query position i may attend to key position j.
using AttentionMask = std::vector<std::vector<bool>>;

inline AttentionMask causal_mask(std::size_t n) {
  AttentionMask m(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i][j] = true;
  return m;
}

inline AttentionMask full_mask(std::size_t queries, std::size_t keys) {
  return AttentionMask(queries, std::vector<bool>(keys, true));
}

/// Multi-head scaled dot-product attention. `queries` is [n,d], `keys_values` is
/// [m,d]; output is [n,d] after concatenating heads and the output projection.
inline Var multi_head_attention(Graph& g, Var queries, Var keys_values, const AttentionWeights& w,
                                const AttentionMask& mask, std::size_t heads) {
  const std::size_t d = g.value(queries).cols();
  const std::size_t n = g.value(queries).rows();
  const std::size_t m = g.value(keys_values).rows();
  ops::detail::require(heads > 0 && d % heads == 0, "attention: model dim not divisible by heads");
  ops::detail::require(g.value(keys_values).cols() == d, "attention: query/key dim mismatch");
  ops::detail::require(mask.size() == n && (n == 0 || mask[0].size() == m),
                       "attention: mask shape does not match sequence lengths");

  const Var q = ops::linear(g, queries, w.query_weight, w.query_bias);
  const Var k = w.key_bias ? ops::linear(g, keys_values, w.key_weight, *w.key_bias)
                           : ops::matmul(g, keys_values, w.key_weight);
  const Var v = ops::linear(g, keys_values, w.value_weight, w.value_bias);
  const std::size_t head_dim = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  std::vector<Var> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = ops::slice_cols(g, q, h * head_dim, head_dim);
    const Var kh = ops::slice_cols(g, k, h * head_dim, head_dim);
    const Var vh = ops::slice_cols(g, v, h * head_dim, head_dim);
    const Var scores = ops::scale(g, ops::matmul_nt(g, qh, kh), inv_scale);
    const Var weights = ops::masked_softmax(g, scores, &mask);
    head_outputs.push_back(ops::matmul(g, weights, vh));
  }
  const Var merged = heads == 1 ? head_outputs[0] : ops::concat_cols(g, head_outputs);
  return ops::linear(g, merged, w.output_weight, w.output_bias);
}

}  // namespace dxformer::num
