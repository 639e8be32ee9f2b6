#pragma once

// Vision-guided attention.
//
// The guided output of a head is z + beta * gamma_h * rho * dz_h where
// dz_h = sum_i G_i V_{h, s+i}. It never needs attention weights, so it runs on
// top of the fused path; the explicit path instead adds the same scaled G to
// the weights of the query row. Both give the same result up to rounding.

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vga/attention.hpp"
#include "vga/decoder.hpp"
#include "vga/grounding.hpp"

namespace vga {

enum class TaskMode { vqa, caption };

enum class GuidanceSource { automatic, none, even, vsc, vss, reversed_vss, ground_truth };

inline std::string to_string(TaskMode m) { return m == TaskMode::vqa ? "vqa" : "caption"; }

inline std::string to_string(GuidanceSource s) {
  switch (s) {
    case GuidanceSource::automatic: return "auto";
    case GuidanceSource::none: return "none";
    case GuidanceSource::even: return "even";
    case GuidanceSource::vsc: return "vsc";
    case GuidanceSource::vss: return "vss";
    case GuidanceSource::reversed_vss: return "reversed_vss";
    case GuidanceSource::ground_truth: return "ground_truth";
  }
  return "?";
}

inline std::string to_string(VssSign s) { return s == VssSign::raw ? "raw" : "flipped"; }

inline TaskMode parse_mode(std::string_view s) {
  if (s == "vqa") return TaskMode::vqa;
  if (s == "caption") return TaskMode::caption;
  throw ConfigError("unknown mode '" + std::string(s) + "'");
}

inline GuidanceSource parse_source(std::string_view s) {
  for (auto v : {GuidanceSource::automatic, GuidanceSource::none, GuidanceSource::even,
                 GuidanceSource::vsc, GuidanceSource::vss, GuidanceSource::reversed_vss,
                 GuidanceSource::ground_truth})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown guidance source '" + std::string(s) + "'");
}

inline VssSign parse_vss_sign(std::string_view s) {
  if (s == "raw") return VssSign::raw;
  if (s == "flipped") return VssSign::flipped;
  throw ConfigError("unknown vss sign '" + std::string(s) + "'");
}

struct VgaConfig {
  double beta = 0.2;     // guidance strength
  double lambda = 0.02;  // programmed-guidance rate
  std::size_t start_layer = 0;
  std::optional<std::size_t> end_layer;  // exclusive; defaults to n_layers / 2
  std::size_t top_k = 10;
  double exist_threshold = kExistThreshold;
  TaskMode mode = TaskMode::vqa;
  GuidanceSource source = GuidanceSource::automatic;  // vqa -> vsc, caption -> vss
  bool head_balancing = true;
  bool early_termination = true;  // off: guide every layer from start_layer on
  bool pvg_enabled = true;        // caption mode only
  bool pvg_content_only = false;  // skip updates for tokens without visual support
  VssSign vss_sign = VssSign::raw;
  bool guide_all_rows = false;

  GuidanceSource resolved_source() const {
    if (source != GuidanceSource::automatic) return source;
    return mode == TaskMode::vqa ? GuidanceSource::vsc : GuidanceSource::vss;
  }

  std::size_t resolved_end(std::size_t n_layers) const {
    if (!early_termination) return n_layers;
    return end_layer.value_or(n_layers / 2);
  }

  void validate(std::size_t n_layers) const {
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    const std::size_t end = resolved_end(n_layers);
    if (!(start_layer <= end && end <= n_layers))
      throw ConfigError("need 0 <= start_layer <= end_layer <= n_layers");
    if (top_k < 2) throw ConfigError("top_k must be >= 2");
  }
};

// Default strength for existence questions.
inline constexpr double kExistenceBeta = 0.25;

struct HeadBalance {
  Vector gamma_prime;  // normalised per-head similarity
  Vector gamma;        // ReLU(2 - H * gamma')
};

// dz_h = sum_i G_i V_{h, s+i}, laid out like a z row (H * d_head).
inline Vector delta_z(const Grounding& g, const Matrix& values, std::size_t visual_start) {
  const std::size_t m = g.size();
  if (visual_start + m > values.rows())
    throw ShapeError("delta_z: grounding of length " + std::to_string(m) + " at " +
                     std::to_string(visual_start) + " exceeds " + std::to_string(values.rows()) +
                     " value rows");
  Vector dz(values.cols(), 0.0f);
  for (std::size_t i = 0; i < m; ++i) {
    const float w = g.weights[i];
    if (w == 0.0f) continue;
    const auto vr = values.row(visual_start + i);
    for (std::size_t c = 0; c < dz.size(); ++c) dz[c] += w * vr[c];
  }
  return dz;
}

struct BalanceCoefficients {
  std::vector<double> gamma_prime, gamma;
};

// gamma' = Norm(sims), gamma = ReLU(2 - H gamma'); sims already clamped to >= 0.
inline BalanceCoefficients balance_from_similarities(std::span<const double> sims) {
  const std::size_t H = sims.size();
  if (H == 0) throw ShapeError("head_balance: n_heads must be >= 1");
  BalanceCoefficients b{std::vector<double>(H), std::vector<double>(H)};
  double total = 0.0;
  for (double x : sims) total += x;
  const bool flat = total < tol::kNormEpsilon ||
                    std::all_of(sims.begin(), sims.end(), [&](double x) { return x == sims.front(); });
  for (std::size_t h = 0; h < H; ++h) {
    b.gamma_prime[h] = flat ? 1.0 / static_cast<double>(H) : sims[h] / total;
    b.gamma[h] = flat ? 1.0 : std::max(0.0, 2.0 - static_cast<double>(H) * b.gamma_prime[h]);
  }
  return b;
}

inline HeadBalance head_balance(std::span<const float> z_row, std::span<const float> dz_row,
                                std::size_t n_heads) {
  if (n_heads == 0) throw ShapeError("head_balance: n_heads must be >= 1");
  if (z_row.size() != dz_row.size() || z_row.size() % n_heads != 0)
    throw ShapeError("head_balance: z and dz rows must be equal and split evenly over heads");
  const std::size_t dh = z_row.size() / n_heads;
  std::vector<double> sims(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h)
    sims[h] = cosine_sim_clamped(z_row.subspan(h * dh, dh), dz_row.subspan(h * dh, dh));
  const auto b = balance_from_similarities(sims);
  HeadBalance hb;
  hb.gamma_prime.assign(b.gamma_prime.begin(), b.gamma_prime.end());
  hb.gamma.assign(b.gamma.begin(), b.gamma.end());
  return hb;
}

// Norm(ReLU((1 + lambda) G - lambda G_w)) in double; empty if nothing survives.
inline std::vector<double> pvg_weights(std::span<const double> g, std::span<const double> g_w, double lambda) {
  if (g_w.size() != g.size()) throw ShapeError("pvg: G_w length differs from G");
  std::vector<double> next(g.size());
  double total = 0.0;
  for (std::size_t i = 0; i < next.size(); ++i) {
    next[i] = std::max(0.0, (1.0 + lambda) * g[i] - lambda * g_w[i]);
    total += next[i];
  }
  if (total < tol::kNormEpsilon) return {};
  for (auto& x : next) x /= total;
  return next;
}

// Holds the grounding for one generation and acts as the decoder's hook.
class VgaSession : public AttentionHook {
 public:
  VgaSession(const Model& model, SequenceLayout layout, VgaConfig config, std::string question = {},
             std::optional<MaskAnnotation> annotation = std::nullopt)
      : model_(&model),
        layout_(std::move(layout)),
        config_(std::move(config)),
        question_(std::move(question)),
        annotation_(std::move(annotation)) {
    config_.validate(model.config.n_layers);
    end_layer_ = config_.resolved_end(model.config.n_layers);
    if (config_.resolved_source() == GuidanceSource::ground_truth && !annotation_)
      throw ConfigError("ground_truth guidance needs a mask annotation");
    if (annotation_ && annotation_->overlaps.size() != layout_.visual_count())
      throw ShapeError("annotation length differs from visual token count");
  }

  const VgaConfig& config() const { return config_; }
  const SequenceLayout& layout() const { return layout_; }
  const Grounding& grounding() const { return grounding_; }
  const Matrix& visual_probs() const { return visual_probs_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  bool ready() const { return ready_; }
  std::size_t end_layer() const { return end_layer_; }

  // Builds the grounding from the visual logits of this prompt.
  void on_visual_logits(const Matrix& visual_logits, const Matrix& visual_probs) override {
    visual_probs_ = visual_probs;
    grounding_ = initial_grounding(visual_logits);
    ready_ = true;
  }

  // rho as used in the update: 1 for questions, live fraction for captions.
  double guidance_rho() const {
    if (grounding_.degenerate) return 0.0;
    return config_.mode == TaskMode::caption ? grounding_.rho : 1.0;
  }

  bool active() const {
    return ready_ && config_.resolved_source() != GuidanceSource::none && config_.beta > 0.0 &&
           guidance_rho() > 0.0;
  }

  bool guides(std::size_t layer) const override {
    return active() && layer >= config_.start_layer && layer < end_layer_;
  }

  // beta * gamma_h * rho for each head, gamma from the head-balancing rule.
  Vector head_scales(std::span<const float> z_row, std::span<const float> dz) const {
    const std::size_t H = model_->config.n_heads;
    Vector scale(H, 1.0f);
    if (config_.head_balancing) scale = head_balance(z_row, dz, H).gamma;
    const double k = config_.beta * guidance_rho();
    for (auto& s : scale) s = static_cast<float>(s * k);
    return scale;
  }

  std::optional<GuidanceRow> plan(std::size_t layer, std::span<const float> z_row,
                                  const Matrix& values) override {
    if (!guides(layer)) return std::nullopt;
    const Vector dz = delta_z(grounding_, values, layout_.visual_start);
    GuidanceRow g;
    g.visual_start = layout_.visual_start;
    g.weights = grounding_.weights;
    g.head_scale = head_scales(z_row, dz);
    return g;
  }

  void apply(std::size_t layer, std::span<float> z_row, const Matrix& values) override {
    if (!guides(layer)) return;
    const Vector out = guided_output(z_row, values, layer);
    std::copy(out.begin(), out.end(), z_row.begin());
  }

  // z + beta * gamma_h * rho * dz_h per head; z unchanged outside the layer range.
  Vector guided_output(std::span<const float> z_row, const Matrix& values, std::size_t layer) const {
    Vector out(z_row.begin(), z_row.end());
    if (!guides(layer)) return out;
    const Vector dz = delta_z(grounding_, values, layout_.visual_start);
    if (dz.size() != out.size()) throw ShapeError("guided_output: z and values widths differ");
    const Vector scale = head_scales(z_row, dz);
    const std::size_t dh = out.size() / scale.size();
    for (std::size_t h = 0; h < scale.size(); ++h)
      for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) out[c] += scale[h] * dz[c];
    return out;
  }

  // G <- Norm(ReLU((1 + lambda) G - lambda G_w)) for the token just generated.
  void pvg_update(TokenId generated) {
    if (!ready_ || config_.mode != TaskMode::caption || !config_.pvg_enabled) return;
    if (grounding_.degenerate) return;  // exhausted guidance stays off
    const Vector column = vsc_column(visual_probs_, generated);
    if (config_.pvg_content_only) {
      const float peak = *std::max_element(column.begin(), column.end());
      if (peak <= 2.0f / static_cast<float>(visual_probs_.cols())) return;
    }
    grounding_ = pvg_step(grounding_, sum_normalize(column).values, config_.lambda);
  }

  static Grounding pvg_step(const Grounding& g, std::span<const float> g_w, double lambda) {
    if (g_w.size() != g.size()) throw ShapeError("pvg: G_w length differs from G");
    const std::vector<double> cur(g.weights.begin(), g.weights.end()), w(g_w.begin(), g_w.end());
    const auto next = pvg_weights(cur, w, lambda);
    if (next.empty()) return make_grounding(Vector(g.size(), 0.0f));
    return make_grounding(Vector(next.begin(), next.end()));
  }

 private:
  Grounding initial_grounding(const Matrix& visual_logits) {
    const std::size_t m = visual_logits.rows();
    switch (config_.resolved_source()) {
      case GuidanceSource::none:
      case GuidanceSource::even:
        return uniform_grounding(m);
      case GuidanceSource::vss:
        return vss(visual_logits, config_.top_k, config_.vss_sign);
      case GuidanceSource::reversed_vss: {
        const Grounding base = vss(visual_logits, config_.top_k, config_.vss_sign);
        return make_grounding(reflect_from_max(base.weights));
      }
      case GuidanceSource::ground_truth:
        return make_grounding(annotation_->overlaps);
      case GuidanceSource::vsc:
      case GuidanceSource::automatic: {
        std::vector<Grounding> parts;
        for (const auto& w : extract_objects(question_, model_->vocab))
          parts.push_back(object_grounding(visual_logits, model_->vocab.id(w)));
        if (parts.empty()) {
          warnings_.push_back("no vocabulary object in question; using uniform grounding");
          return uniform_grounding(m);
        }
        return merge_groundings(parts);
      }
    }
    return uniform_grounding(m);
  }

  const Model* model_;
  SequenceLayout layout_;
  VgaConfig config_;
  std::string question_;
  std::optional<MaskAnnotation> annotation_;
  std::size_t end_layer_ = 0;
  Grounding grounding_;
  Matrix visual_probs_;
  bool ready_ = false;
  std::vector<std::string> warnings_;
};

inline Vector guided_output(std::span<const float> z_row, const Matrix& values,
                            const VgaSession& session, std::size_t layer) {
  return session.guided_output(z_row, values, layer);
}

inline void pvg_update(VgaSession& session, TokenId generated) { session.pvg_update(generated); }

// Session built from an already computed prefill (grounding from its visual logits).
inline VgaSession init_session(const Model& model, const SequenceLayout& layout,
                               const PrefillResult& prefill, std::string question,
                               const VgaConfig& config,
                               std::optional<MaskAnnotation> annotation = std::nullopt) {
  VgaSession s(model, layout, config, std::move(question), std::move(annotation));
  s.on_visual_logits(prefill.visual_logits, prefill.visual_probs);
  return s;
}

// Per layer: attention of the last prompt row to position 0, max over heads.
inline Vector bos_profile(const Model& model, const SequenceLayout& layout) {
  if (layout.tokens.empty() || layout.tokens.front() != model.vocab.bos())
    throw InvalidInput("bos_profile: prompt must start with BOS");
  ForwardOptions opt;
  opt.path = AttentionPath::explicit_weights;
  opt.record_bos = true;
  const auto res = prefill(model, layout, nullptr, opt);
  Vector profile;
  for (const auto& heads : res.bos_attention)
    profile.push_back(*std::max_element(heads.begin(), heads.end()));
  return profile;
}

struct StartLayer {
  std::size_t layer = 0;
  bool fallback = false;  // no layer reached the threshold
};

inline StartLayer suggest_start_layer(std::span<const float> profile, double theta = 0.2) {
  if (profile.empty()) throw InvalidInput("suggest_start_layer: empty profile");
  for (std::size_t i = 0; i < profile.size(); ++i)
    if (profile[i] >= theta) return {i, false};
  return {0, true};
}

}  // namespace vga
