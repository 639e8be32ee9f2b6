#pragma once

// Pre-norm decoder forward pass with a KV cache. Prefill runs the whole prompt
// once and keeps the vocabulary logits of every visual position; decode_step
// appends one token. Guidance enters through an AttentionHook on the current
// query row only.

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vga/attention.hpp"
#include "vga/model.hpp"

namespace vga {

struct SequenceLayout {
  std::vector<TokenId> tokens;
  std::size_t visual_start = 0;  // s
  std::size_t visual_end = 0;    // e (exclusive)

  std::size_t visual_count() const { return visual_end - visual_start; }

  void validate(const ModelConfig& cfg) const {
    if (!(visual_start < visual_end && visual_end <= tokens.size()))
      throw ShapeError("layout: need 0 <= s < e <= prompt length");
    if (visual_count() != cfg.grid.patches())
      throw ShapeError("layout: visual span has " + std::to_string(visual_count()) +
                       " tokens, grid has " + std::to_string(cfg.grid.patches()));
    for (TokenId t : tokens)
      if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
        throw IndexError("layout: token id " + std::to_string(t) + " outside vocabulary");
  }
};

// [BOS] + one image token per patch + tokenized text.
inline SequenceLayout make_layout(const Vocabulary& vocab, const std::vector<std::string>& patches,
                                  std::string_view text) {
  SequenceLayout l;
  l.tokens.push_back(vocab.bos());
  l.visual_start = 1;
  for (const auto& c : patches) l.tokens.push_back(vocab.image_token(c));
  l.visual_end = l.tokens.size();
  for (TokenId t : vocab.tokenize(text)) l.tokens.push_back(t);
  return l;
}

enum class AttentionPath { fused, explicit_weights };

struct ForwardOptions {
  AttentionPath path = AttentionPath::fused;
  // Guide every prefill row after the visual span instead of only the last one.
  bool guide_all_rows = false;
  // Keep per-layer, per-head attention of the last prefill row to position 0.
  // Needs the explicit path.
  bool record_bos = false;
};

class KvCache {
 public:
  KvCache() = default;
  KvCache(const ModelConfig& cfg) : capacity_(cfg.max_seq_len) {
    keys_.assign(cfg.n_layers, Matrix(0, cfg.d_model));
    values_.assign(cfg.n_layers, Matrix(0, cfg.d_model));
    for (auto& m : keys_) m.reserve_rows(capacity_);
    for (auto& m : values_) m.reserve_rows(capacity_);
  }

  std::size_t length() const { return length_; }
  std::size_t capacity() const { return capacity_; }
  // Number of forward invocations and of tokens pushed through the layers.
  std::size_t forward_passes() const { return forward_passes_; }
  std::size_t tokens_forwarded() const { return length_; }

  const Matrix& keys(std::size_t layer) const { return keys_.at(layer); }
  const Matrix& values(std::size_t layer) const { return values_.at(layer); }

 private:
  friend struct ForwardAccess;
  std::vector<Matrix> keys_, values_;
  std::size_t length_ = 0;
  std::size_t capacity_ = 0;
  std::size_t forward_passes_ = 0;
};

struct PrefillResult {
  KvCache cache;
  Matrix visual_logits;  // m x V
  Matrix visual_probs;   // m x V, row softmax of visual_logits
  Vector last_logits;    // V
  std::vector<Vector> bos_attention;  // [layer][head], only with record_bos
};

inline float gelu(float x) {
  constexpr float k = 0.7978845608028654f;  // sqrt(2/pi)
  return 0.5f * x * (1.0f + std::tanh(k * (x + 0.044715f * x * x * x)));
}

inline void rms_norm(std::span<const float> x, std::span<const float> gain, std::span<float> out) {
  double ss = 0.0;
  for (float v : x) ss += static_cast<double>(v) * v;
  const float inv = static_cast<float>(1.0 / std::sqrt(ss / static_cast<double>(x.size()) + 1e-6));
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
}

struct ForwardAccess {
  // Runs `tokens` (absolute positions pos0..) through every layer, appending to
  // the cache, and returns the final hidden states. `guided(row)` selects the
  // query rows handed to the hook.
  template <typename GuidedFn>
  static Matrix run(const Model& model, KvCache& cache, std::span<const TokenId> tokens,
                    AttentionHook* hook, const ForwardOptions& opt, GuidedFn guided,
                    std::vector<Vector>* bos_out, bool counts_as_pass = true) {
    const auto& cfg = model.config;
    const std::size_t n = tokens.size(), d = cfg.d_model, pos0 = cache.length_;
    if (pos0 + n > cfg.max_seq_len)
      throw CapacityError("sequence of " + std::to_string(pos0 + n) + " tokens exceeds max_seq_len " +
                          std::to_string(cfg.max_seq_len));
    Matrix x(n, d);
    for (std::size_t r = 0; r < n; ++r) {
      const auto t = static_cast<std::size_t>(tokens[r]);
      if (t >= cfg.vocab_size) throw IndexError("token id " + std::to_string(t) + " outside vocabulary");
      const auto e = model.tok_embed.row(t);
      const auto p = model.pos_embed.row(pos0 + r);
      auto xr = x.row(r);
      for (std::size_t c = 0; c < d; ++c) xr[c] = e[c] + p[c];
    }
    Matrix xn(n, d), q(n, d), k(n, d), v(n, d), attn_out(n, d), hidden(n, cfg.d_ff), mlp_out(n, d);
    for (std::size_t li = 0; li < cfg.n_layers; ++li) {
      const auto& w = model.layers[li];
      for (std::size_t r = 0; r < n; ++r) rms_norm(x.row(r), w.norm1, xn.row(r));
      for (std::size_t r = 0; r < n; ++r) {
        vec_mat(xn.row(r), w.wq, q.row(r));
        vec_mat(xn.row(r), w.wk, k.row(r));
        vec_mat(xn.row(r), w.wv, v.row(r));
      }
      auto& kc = cache.keys_[li];
      auto& vc = cache.values_[li];
      kc.resize_rows(pos0 + n);
      vc.resize_rows(pos0 + n);
      for (std::size_t r = 0; r < n; ++r) {
        std::copy(k.row(r).begin(), k.row(r).end(), kc.row(pos0 + r).begin());
        std::copy(v.row(r).begin(), v.row(r).end(), vc.row(pos0 + r).begin());
      }
      const bool hooked = hook != nullptr && hook->guides(li);
      Matrix z;
      if (opt.path == AttentionPath::explicit_weights) {
        auto att = attention_explicit(q, kc, vc, cfg.n_heads);
        if (hooked) {
          for (std::size_t r = 0; r < n; ++r) {
            if (!guided(r)) continue;
            if (auto g = hook->plan(li, att.z.row(r), vc)) {
              g->row = r;
              apply_guidance_explicit(att, vc, *g);
            }
          }
        }
        if (bos_out) {
          Vector per_head(cfg.n_heads);
          for (std::size_t h = 0; h < cfg.n_heads; ++h) per_head[h] = att.alpha[h](n - 1, 0);
          bos_out->push_back(std::move(per_head));
        }
        z = std::move(att.z);
      } else {
        z = attention_fused(q, kc, vc, cfg.n_heads);
        if (hooked) {
          for (std::size_t r = 0; r < n; ++r)
            if (guided(r)) hook->apply(li, z.row(r), vc);
        }
      }
      for (std::size_t r = 0; r < n; ++r) {
        vec_mat(z.row(r), w.wo, attn_out.row(r));
        auto xr = x.row(r);
        const auto ar = attn_out.row(r);
        for (std::size_t c = 0; c < d; ++c) xr[c] += ar[c];
        rms_norm(xr, w.norm2, xn.row(r));
        vec_mat(xn.row(r), w.mlp_w1, hidden.row(r));
        for (auto& hval : hidden.row(r)) hval = gelu(hval);
        vec_mat(hidden.row(r), w.mlp_w2, mlp_out.row(r));
        const auto mr = mlp_out.row(r);
        for (std::size_t c = 0; c < d; ++c) xr[c] += mr[c];
      }
    }
    cache.length_ = pos0 + n;
    if (counts_as_pass) ++cache.forward_passes_;
    return x;
  }
};

inline Vector unembed_row(const Model& model, std::span<const float> hidden) {
  Vector logits(model.config.vocab_size);
  vec_mat(hidden, model.unembed, logits);
  return logits;
}

inline PrefillResult prefill(const Model& model, const SequenceLayout& layout,
                             AttentionHook* hook = nullptr, const ForwardOptions& opt = {}) {
  layout.validate(model.config);
  if (layout.tokens.size() > model.config.max_seq_len)
    throw CapacityError("prompt of " + std::to_string(layout.tokens.size()) +
                        " tokens exceeds max_seq_len");
  if (opt.record_bos && opt.path != AttentionPath::explicit_weights)
    throw ConfigError("record_bos requires the explicit attention path");
  PrefillResult res{KvCache(model.config), {}, {}, {}, {}};
  const std::size_t n = layout.tokens.size(), e = layout.visual_end;
  const std::span<const TokenId> all(layout.tokens);
  auto* bos = opt.record_bos ? &res.bos_attention : nullptr;

  // Visual prefix first, so the grounding exists before the text rows are
  // forwarded. Every token is still forwarded exactly once and the two chunks
  // count as one pass.
  const Matrix hv = ForwardAccess::run(model, res.cache, all.first(e), nullptr, opt,
                                       [](std::size_t) { return false; }, e == n ? bos : nullptr, e == n);
  const std::size_t m = layout.visual_count();
  res.visual_logits = Matrix(m, model.config.vocab_size);
  for (std::size_t i = 0; i < m; ++i)
    vec_mat(hv.row(layout.visual_start + i), model.unembed, res.visual_logits.row(i));
  res.visual_probs = row_softmax(res.visual_logits);

  if (e == n) {
    res.last_logits = unembed_row(model, hv.row(n - 1));
    return res;
  }
  if (hook) hook->on_visual_logits(res.visual_logits, res.visual_probs);
  const std::size_t n_text = n - e;
  auto guided = [&](std::size_t r) { return opt.guide_all_rows || r + 1 == n_text; };
  const Matrix ht = ForwardAccess::run(model, res.cache, all.subspan(e), hook, opt, guided, bos);
  res.last_logits = unembed_row(model, ht.row(n_text - 1));
  return res;
}

inline Vector decode_step(const Model& model, KvCache& cache, TokenId token,
                          AttentionHook* hook = nullptr, const ForwardOptions& opt = {}) {
  if (cache.length() == 0) throw InvalidInput("decode_step: cache not populated by prefill");
  if (cache.length() >= model.config.max_seq_len)
    throw CapacityError("KV cache exhausted at max_seq_len " + std::to_string(model.config.max_seq_len));
  const TokenId toks[1] = {token};
  const Matrix h = ForwardAccess::run(model, cache, toks, hook, opt,
                                      [](std::size_t) { return true; }, nullptr);
  return unembed_row(model, h.row(0));
}

}  // namespace vga
