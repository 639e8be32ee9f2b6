#pragma once

// Multi-head causal attention in two forms:
//  * attention_explicit materialises the weights, so guidance can be added to
//    them directly before mixing the values;
//  * attention_fused streams over key tiles with an online softmax and only
//    ever returns the output, the way fused kernels behave.
//
// Q is (n_q x H*d_head), K and V are (n_kv x H*d_head). Query row i sits at
// absolute position n_kv - n_q + i and sees keys [0, n_kv - n_q + i].

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "vga/numerics.hpp"

namespace vga {

// Additive guidance for one query row: alpha[h](row, s + i) += head_scale[h] * weights[i].
struct GuidanceRow {
  std::size_t row = 0;
  std::size_t visual_start = 0;
  Vector weights;
  Vector head_scale;
};

struct ExplicitAttention {
  Matrix z;                   // n_q x H*d_head
  std::vector<Matrix> alpha;  // per head, n_q x n_kv (guided rows included)
};

namespace detail {

inline void check_qkv(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t n_heads) {
  if (n_heads == 0) throw ShapeError("attention: n_heads must be >= 1");
  if (q.cols() != k.cols() || k.cols() != v.cols())
    throw ShapeError("attention: Q, K, V widths differ");
  if (k.rows() != v.rows()) throw ShapeError("attention: K and V row counts differ");
  if (q.cols() % n_heads != 0) throw ShapeError("attention: width not divisible by n_heads");
  if (q.rows() > k.rows()) throw ShapeError("attention: more queries than keys");
  require_finite(q.data(), "attention Q");
  require_finite(k.data(), "attention K");
  require_finite(v.data(), "attention V");
}

// z_row[h] = sum_j alpha_row[j] * V[j, h]
inline void mix_values(std::span<const float> alpha_row, const Matrix& v, std::size_t head,
                       std::size_t d_head, std::span<float> z_row) {
  std::vector<double> acc(d_head, 0.0);
  for (std::size_t j = 0; j < alpha_row.size(); ++j) {
    const double a = alpha_row[j];
    if (a == 0.0) continue;
    const auto vr = v.row(j).subspan(head * d_head, d_head);
    for (std::size_t c = 0; c < d_head; ++c) acc[c] += a * vr[c];
  }
  auto zh = z_row.subspan(head * d_head, d_head);
  for (std::size_t c = 0; c < d_head; ++c) zh[c] = static_cast<float>(acc[c]);
}

}  // namespace detail

// Adds guidance to one row of materialised weights and recomputes that row of z.
inline void apply_guidance_explicit(ExplicitAttention& att, const Matrix& v,
                                    const GuidanceRow& g) {
  const std::size_t n_heads = att.alpha.size();
  if (g.head_scale.size() != n_heads) throw ShapeError("guidance: head_scale length != n_heads");
  if (g.row >= att.z.rows()) throw ShapeError("guidance: row out of range");
  const std::size_t n_kv = v.rows();
  if (g.visual_start + g.weights.size() > n_kv)
    throw ShapeError("guidance: visual slice out of range");
  const std::size_t causal_end = n_kv - att.z.rows() + g.row + 1;
  if (g.visual_start + g.weights.size() > causal_end)
    throw ShapeError("guidance: visual slice beyond causal horizon");
  const std::size_t d_head = att.z.cols() / n_heads;
  for (std::size_t h = 0; h < n_heads; ++h) {
    auto row = att.alpha[h].row(g.row);
    for (std::size_t i = 0; i < g.weights.size(); ++i)
      row[g.visual_start + i] += g.head_scale[h] * g.weights[i];
    detail::mix_values(row, v, h, d_head, att.z.row(g.row));
  }
}

inline ExplicitAttention attention_explicit(const Matrix& q, const Matrix& k, const Matrix& v,
                                            std::size_t n_heads,
                                            std::span<const GuidanceRow> guidance = {}) {
  detail::check_qkv(q, k, v, n_heads);
  const std::size_t n_q = q.rows(), n_kv = k.rows();
  const std::size_t d_head = q.cols() / n_heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(d_head));
  const std::size_t offset = n_kv - n_q;

  ExplicitAttention out{Matrix(n_q, q.cols()), std::vector<Matrix>(n_heads, Matrix(n_q, n_kv))};
  for (std::size_t h = 0; h < n_heads; ++h) {
    auto& a = out.alpha[h];
    for (std::size_t i = 0; i < n_q; ++i) {
      const auto qi = q.row(i).subspan(h * d_head, d_head);
      const std::size_t visible = offset + i + 1;
      auto row = a.row(i);
      for (std::size_t j = 0; j < visible; ++j)
        row[j] = static_cast<float>(dot(qi, k.row(j).subspan(h * d_head, d_head))) * scale;
      softmax_inplace(row.first(visible));
      // masked entries stay exactly zero
      detail::mix_values(row, v, h, d_head, out.z.row(i));
    }
  }
  for (const auto& g : guidance) apply_guidance_explicit(out, v, g);
  return out;
}

// Online-softmax attention over key tiles; weights are never stored.
inline Matrix attention_fused(const Matrix& q, const Matrix& k, const Matrix& v,
                              std::size_t n_heads) {
  detail::check_qkv(q, k, v, n_heads);
  constexpr std::size_t kTile = 16;
  const std::size_t n_q = q.rows(), n_kv = k.rows();
  const std::size_t d_head = q.cols() / n_heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(d_head));
  const std::size_t offset = n_kv - n_q;

  Matrix z(n_q, q.cols());
  std::vector<double> acc(d_head);
  std::array<float, kTile> s{};
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t i = 0; i < n_q; ++i) {
      const auto qi = q.row(i).subspan(h * d_head, d_head);
      const std::size_t visible = offset + i + 1;
      float running_max = -std::numeric_limits<float>::infinity();
      double running_sum = 0.0;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t t0 = 0; t0 < visible; t0 += kTile) {
        const std::size_t t1 = std::min(visible, t0 + kTile);
        float tile_max = -std::numeric_limits<float>::infinity();
        for (std::size_t j = t0; j < t1; ++j) {
          s[j - t0] = static_cast<float>(dot(qi, k.row(j).subspan(h * d_head, d_head))) * scale;
          tile_max = std::max(tile_max, s[j - t0]);
        }
        const float new_max = std::max(running_max, tile_max);
        const double correction = std::exp(static_cast<double>(running_max) - new_max);
        running_sum *= correction;
        for (auto& x : acc) x *= correction;
        for (std::size_t j = t0; j < t1; ++j) {
          const double p = std::exp(static_cast<double>(s[j - t0]) - new_max);
          running_sum += p;
          const auto vr = v.row(j).subspan(h * d_head, d_head);
          for (std::size_t c = 0; c < d_head; ++c) acc[c] += p * vr[c];
        }
        running_max = new_max;
      }
      auto zh = z.row(i).subspan(h * d_head, d_head);
      for (std::size_t c = 0; c < d_head; ++c) zh[c] = static_cast<float>(acc[c] / running_sum);
    }
  }
  return z;
}

// Guidance callback used by the decoder. `z_row` is the attention output of
// the query row (all heads), `values` the full value matrix of the layer.
class AttentionHook {
 public:
  virtual ~AttentionHook() = default;

  // Called once the visual span has been forwarded, before any text row is
  // processed, with the vocabulary logits of the visual positions.
  virtual void on_visual_logits(const Matrix& /*visual_logits*/, const Matrix& /*visual_probs*/) {}

  virtual bool guides(std::size_t layer) const = 0;

  // Explicit route: the additive weights for this row (row index filled by caller).
  virtual std::optional<GuidanceRow> plan(std::size_t layer, std::span<const float> z_row,
                                          const Matrix& values) = 0;

  // Fused route: rewrite z_row in place without access to attention weights.
  virtual void apply(std::size_t layer, std::span<float> z_row, const Matrix& values) = 0;
};

}  // namespace vga
