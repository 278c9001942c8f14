#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dxformer/model.hpp"

namespace dxtest {

using dxformer::DxFormer;
using dxformer::ModelConfig;
using dxformer::Observation;
using Mat = std::vector<std::vector<double>>;

/// Replaces every parameter with larger random values so the oracle comparison
/// is not dominated by near-zero initial weights.
inline void scramble(DxFormer& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& t : m.parameters().values())
    for (auto& v : t.data()) v = n(rng);
}

/// Step-by-step forward pass written from the equations with plain loops.
class Oracle {
 public:
  explicit Oracle(const DxFormer& m) : cfg_(m.config()) {
    const auto& ps = m.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const auto& t = ps[i];
      Mat mat(t.rows(), std::vector<double>(t.cols()));
      for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) mat[r][c] = t(r, c);
      p_[ps.name(i)] = mat;
    }
  }

  Mat decoder(const std::vector<Observation>& ctx) const {
    Mat x = embed(ctx, "decoder");
    const std::size_t d = cfg_.embed_dim;
    for (std::size_t pos = 0; pos < x.size(); ++pos)
      for (std::size_t i = 0; i < d; ++i) {
        const double angle = pos / std::pow(10000.0, static_cast<double>(i - i % 2) / d);
        x[pos][i] += i % 2 == 0 ? std::sin(angle) : std::cos(angle);
      }
    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) x = block(x, "decoder.block" + std::to_string(l) + ".", true);
    x = norm(x, "decoder.final_norm.");
    return affine(x, "decoder.head.weight", "decoder.head.bias");
  }

  std::vector<double> encoder_probs(const std::vector<Observation>& in) const {
    Mat x = embed(in, "encoder");
    for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) x = block(x, "encoder.block" + std::to_string(l) + ".", false);
    x = norm(x, "encoder.final_norm.");
    Mat pooled(1, std::vector<double>(cfg_.embed_dim, 0.0));
    for (const auto& row : x)
      for (std::size_t i = 0; i < row.size(); ++i) pooled[0][i] += row[i] / x.size();
    auto logits = affine(pooled, "encoder.head.weight", "encoder.head.bias")[0];
    double mx = *std::max_element(logits.begin(), logits.end()), z = 0;
    for (auto& v : logits) z += std::exp(v - mx);
    for (auto& v : logits) v = std::exp(v - mx) / z;
    return logits;
  }

 private:
  const Mat& P(const std::string& name) const { return p_.at(name); }

  Mat embed(const std::vector<Observation>& in, const std::string& stack) const {
    Mat x;
    for (const auto& o : in) {
      std::vector<double> row(cfg_.embed_dim);
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (cfg_.sparse_inputs) {
          const auto& w = P(stack + ".input.projection");
          row[i] = w[o.symptom][i] + w[cfg_.symptoms + static_cast<std::size_t>(o.attribute)][i] +
                   P(stack + ".input.bias")[0][i];
        } else {
          row[i] = P("embedding.symptom")[o.symptom][i] +
                   P("embedding.attribute")[static_cast<std::size_t>(o.attribute)][i];
        }
      }
      x.push_back(row);
    }
    return x;
  }

  Mat affine(const Mat& x, const std::string& w, const std::string& b) const {
    const auto& W = P(w);
    const auto& B = P(b);
    Mat out(x.size(), std::vector<double>(W[0].size()));
    for (std::size_t r = 0; r < x.size(); ++r)
      for (std::size_t c = 0; c < W[0].size(); ++c) {
        double s = B[0][c];
        for (std::size_t k = 0; k < W.size(); ++k) s += x[r][k] * W[k][c];
        out[r][c] = s;
      }
    return out;
  }

  Mat norm(const Mat& x, const std::string& prefix) const {
    Mat out = x;
    for (std::size_t r = 0; r < x.size(); ++r) {
      double mean = 0, var = 0;
      for (double v : x[r]) mean += v / x[r].size();
      for (double v : x[r]) var += (v - mean) * (v - mean) / x[r].size();
      for (std::size_t c = 0; c < x[r].size(); ++c)
        out[r][c] = (x[r][c] - mean) / std::sqrt(var + 1e-5) * P(prefix + "gain")[0][c] + P(prefix + "bias")[0][c];
    }
    return out;
  }

  Mat block(const Mat& x, const std::string& p, bool causal) const {
    const std::size_t n = x.size(), d = cfg_.embed_dim, hd = d / cfg_.heads;
    const Mat h = norm(x, p + "norm1.");
    const Mat q = affine(h, p + "attn.query.weight", p + "attn.query.bias");
    const Mat v = affine(h, p + "attn.value.weight", p + "attn.value.bias");
    Mat k(n, std::vector<double>(d, 0.0));
    const auto& Wk = P(p + "attn.key.weight");
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c)
        for (std::size_t j = 0; j < d; ++j) k[r][c] += h[r][j] * Wk[j][c];
    Mat merged(n, std::vector<double>(d, 0.0));
    for (std::size_t head = 0; head < cfg_.heads; ++head)
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t visible = causal ? i + 1 : n;
        std::vector<double> w(visible);
        double mx = -1e300, z = 0;
        for (std::size_t j = 0; j < visible; ++j) {
          double s = 0;
          for (std::size_t c = 0; c < hd; ++c) s += q[i][head * hd + c] * k[j][head * hd + c];
          w[j] = s / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, w[j]);
        }
        for (auto& e : w) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j < visible; ++j)
          for (std::size_t c = 0; c < hd; ++c) merged[i][head * hd + c] += w[j] / z * v[j][head * hd + c];
      }
    const Mat attn = affine(merged, p + "attn.output.weight", p + "attn.output.bias");
    Mat x1 = x;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) x1[r][c] += attn[r][c];
    Mat ff = affine(norm(x1, p + "norm2."), p + "ff1.weight", p + "ff1.bias");
    for (auto& row : ff)
      for (auto& e : row) e = 0.5 * e * (1 + std::tanh(std::sqrt(2 / M_PI) * (e + 0.044715 * e * e * e)));
    const Mat ff2 = affine(ff, p + "ff2.weight", p + "ff2.bias");
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) x1[r][c] += ff2[r][c];
    return x1;
  }

  ModelConfig cfg_;
  std::map<std::string, Mat> p_;
};

}  // namespace dxtest
