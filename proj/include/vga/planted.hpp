#pragma once

// Hand-built decoder whose visual semantics are known by construction.
//
// Residual stream layout (d_model >= 12 + 3N + a few free dims, N objects):
//   one | pad | bos | ask | cap | objkey | y | n | yes_gate | no_gate | bg | vis |
//   U[N] visual concept | T[N] text identity | Q[N] gathered identity | free
//
// Every input embedding (token + position) has norm sqrt(d_model), so the
// first RMSNorm is the identity.
//
//   layer 0  gather:    "?" attends to the object word of the question and
//                       copies its identity T_o into Q_o.
//   layer 1  existence: both heads, query Q_o matches keys U_o of patches;
//                       object patch values write evidence y, the BOS sink n.
//   layer 2  caption:   both heads, caption queries attend weakly to object
//                       patches; values copy U_o back so the object word gets
//                       logits in proportion to attention mass.
//   layer 3  MLP gate:  yes/no readout active only at "?" positions.
//   rest     zero.
// Key noise sigma on layers 1 and 2 blurs vanilla localisation.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vga/model.hpp"
#include "vga/vocab.hpp"

namespace vga {

struct PlantedSpec {
  std::vector<std::string> objects = default_object_words();
  GridShape grid{6, 6};
  std::size_t n_background = 4;
  double sigma = 0.0;  // std of Gaussian noise added to the patch-attending key projections
  double prior = 0.0;  // language prior: object word o raises the logit of its partner

  std::size_t d_model = 64;
  std::size_t n_heads = 2;
  std::size_t n_layers = 6;
  std::size_t d_ff = 16;
  std::size_t max_seq_len = 640;

  // Construction constants (attention scores are post 1/sqrt(d_head) scaling).
  double text_norm = 2.0;         // |T_o| in object word embeddings
  double visual_norm = 3.0;       // |U_o| in object patch embeddings
  double gathered_norm = 2.0;     // |Q_o| written by the gather layer
  double unembed_gain = 3.0;      // object logit = unembed_gain * |U_o|
  double gather_score = 12.0;
  double gather_sink = 4.0;
  double match_score = 8.0;
  double exist_sink = 5.0;
  double caption_score = 0.5;
  double caption_sink = 3.0;
  double idle_sink = 12.0;        // BOS score of non-caption rows in the caption layer
  double caption_gain = 60.0;     // object logit per unit attention mass
  double answer_bias = 20.0;      // yes/no baseline at "?" positions
  double gate_slope = 20.0;
  double gate_gain = 2.0;
  double background_noise = 0.1;  // std of background patch embedding entries
  double background_flag = 1.5;   // background patches lean towards the filler "image"
  double off_share = 0.4;         // caption value weight of concepts a head does not favour
  double head_skew = 0.5;         // per-head offset of the sink scores, so heads differ
  double filler_noise = 0.3;
};

namespace planted {
inline constexpr std::size_t kOne = 0, kPad = 1, kBos = 2, kAsk = 3, kCap = 4, kObjKey = 5,
                             kYes = 6, kNo = 7, kYesGate = 8, kNoGate = 9, kBg = 10,
                             kVis = 11, kFirstConcept = 12;
}

inline Model build_planted_model(const PlantedSpec& spec, std::uint64_t seed) {
  using namespace planted;
  const std::size_t N = spec.objects.size();
  const std::size_t U = kFirstConcept, T = U + N, Q = T + N, free0 = Q + N;
  if (N == 0) throw InvalidSpec("planted model needs at least one object word");
  if (spec.n_layers < 4) throw InvalidSpec("planted model needs at least 4 layers");
  if (spec.d_model % spec.n_heads != 0) throw InvalidSpec("d_model must divide into heads");
  const std::size_t dh = spec.d_model / spec.n_heads;
  if (free0 + 4 > spec.d_model || N + 1 > dh)
    throw InvalidSpec("d_model too small for " + std::to_string(N) + " objects");
  if (spec.sigma < 0.0) throw InvalidSpec("sigma must be >= 0");

  Vocabulary vocab = Vocabulary::standard(spec.objects, spec.n_background);
  ModelConfig cfg;
  cfg.n_layers = spec.n_layers;
  cfg.n_heads = spec.n_heads;
  cfg.d_model = spec.d_model;
  cfg.d_head = dh;
  cfg.d_ff = spec.d_ff;
  cfg.vocab_size = vocab.size();
  cfg.max_seq_len = spec.max_seq_len;
  cfg.grid = spec.grid;
  Model m = empty_model(cfg, vocab);

  std::mt19937_64 rng(seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  const auto d = spec.d_model;
  const double target_sq = static_cast<double>(d);
  const double sqrt_dh = std::sqrt(static_cast<double>(dh));
  auto f = [](double x) { return static_cast<float>(x); };

  // -- embeddings ----------------------------------------------------------
  auto obj_index = [&](const std::string& w) {
    for (std::size_t i = 0; i < N; ++i)
      if (spec.objects[i] == w) return i;
    throw InvalidSpec("object '" + w + "' missing");
  };
  for (std::size_t t = 0; t < vocab.size(); ++t) {
    auto e = m.tok_embed.row(t);
    const std::string& w = vocab.word(static_cast<TokenId>(t));
    if (w == tok::kBos) {
      e[kBos] = 1.0f;
    } else if (w == tok::kQuestion) {
      e[kAsk] = 1.0f;
    } else if (w == tok::kDescribe) {
      e[kCap] = 1.0f;
    } else if (vocab.is_object(static_cast<TokenId>(t))) {
      e[T + obj_index(w)] = f(spec.text_norm);
      e[kObjKey] = 1.0f;
      e[kCap] = 1.0f;
    } else if (w.rfind(tok::kImagePrefix, 0) == 0) {
      const std::string concept_name = w.substr(tok::kImagePrefix.size(), w.size() - tok::kImagePrefix.size() - 1);
      bool is_object = false;
      for (std::size_t i = 0; i < N; ++i)
        if (spec.objects[i] == concept_name) {
          e[U + i] = f(spec.visual_norm);
          e[kVis] = 1.0f;
          is_object = true;
        }
      if (!is_object) {
        e[kBg] = f(spec.background_flag);
        for (std::size_t i = 0; i < N; ++i) e[U + i] = f(spec.background_noise) * gauss(rng);
        for (std::size_t c = free0; c < d; ++c) e[c] = f(spec.background_noise) * gauss(rng);
      }
    } else {
      for (std::size_t c = free0; c < d; ++c) e[c] = f(spec.filler_noise) * gauss(rng);
    }
    double sq = 1.0;  // the positional "one"
    for (float x : e) sq += static_cast<double>(x) * x;
    if (sq >= target_sq) throw InvalidSpec("embedding norm too large for token '" + w + "'");
    e[kPad] = f(std::sqrt(target_sq - sq));
  }
  for (std::size_t p = 0; p < cfg.max_seq_len; ++p) m.pos_embed(p, kOne) = 1.0f;

  // -- layer 0: gather (head 0) -----------------------------------------------
  {
    auto& L = m.layers[0];
    L.wq(kAsk, 0) = f(spec.gather_score * sqrt_dh);
    L.wq(kOne, 1) = f(spec.gather_sink * sqrt_dh);
    L.wk(kObjKey, 0) = 1.0f;
    L.wk(kBos, 1) = 1.0f;
    for (std::size_t i = 0; i < N; ++i) {
      L.wv(T + i, i) = 1.0f;
      L.wo(i, Q + i) = f(spec.gathered_norm / spec.text_norm);
    }
  }

  // -- layer 1: existence (every head) ---------------------------------------
  {
    auto& L = m.layers[1];
    for (std::size_t h = 0; h < spec.n_heads; ++h) {
      const std::size_t o = h * dh;
      for (std::size_t i = 0; i < N; ++i) {
        L.wq(Q + i, o + i) = f(spec.match_score * sqrt_dh / (spec.gathered_norm * spec.visual_norm));
        L.wk(U + i, o + i) = 1.0f;
      }
      L.wv(kVis, o + 0) = 1.0f;
      L.wq(kOne, o + N) = f((spec.exist_sink + spec.head_skew * static_cast<double>(h)) * sqrt_dh);
      L.wk(kBos, o + N) = 1.0f;
      L.wv(kBos, o + 1) = 1.0f;
      L.wo(o + 0, kYes) = f(1.0 / static_cast<double>(spec.n_heads));
      L.wo(o + 1, kNo) = f(1.0 / static_cast<double>(spec.n_heads));
    }
  }

  // -- layer 2: caption (every head) -----------------------------------------
  // Rows without the caption flag see a strong BOS sink and stay put; caption
  // rows cancel most of it and spread some mass over object patches. The
  // heads differ in sink depth and output weight.
  {
    auto& L = m.layers[2];
    const double H = static_cast<double>(spec.n_heads);
    for (std::size_t h = 0; h < spec.n_heads; ++h) {
      const std::size_t o = h * dh;
      const double skew = spec.head_skew * (static_cast<double>(h) - (H - 1.0) / 2.0);
      const double sink = spec.caption_sink + spec.head_skew * static_cast<double>(h);
      L.wq(kCap, o + 0) = f(spec.caption_score * sqrt_dh);
      L.wq(kOne, o + 1) = f(spec.idle_sink * sqrt_dh);
      L.wq(kCap, o + 1) = f((sink - spec.idle_sink) * sqrt_dh);
      for (std::size_t i = 0; i < N; ++i) {
        L.wk(U + i, o + 0) = f(1.0 / spec.visual_norm);
        // Each head favours its own share of the concepts.
        const double share = i % spec.n_heads == h ? 1.0 : spec.off_share;
        L.wv(U + i, o + i) = f(share / spec.visual_norm);
        L.wo(o + i, U + i) = f((1.0 + skew) * spec.caption_gain / (spec.unembed_gain * H));
      }
      L.wk(kBos, o + 1) = 1.0f;
    }
  }

  // Key noise on the concept-matching key columns of layers 1 and 2. The sink
  // columns stay clean so noise blurs localisation without leaking into the
  // BOS fallback.
  if (spec.sigma > 0.0) {
    std::normal_distribution<float> noise(0.0f, f(spec.sigma));
    for (std::size_t h = 0; h < spec.n_heads; ++h) {
      const std::size_t o = h * dh;
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) m.layers[1].wk(U + i, o + j) += noise(rng);
      for (std::size_t i = 0; i < N; ++i)
        m.layers[2].wk(U + i, o + 0) += f(1.0 / spec.visual_norm) * noise(rng);
    }
  }

  // -- layer 3 MLP: yes/no gate at "?" positions -------------------------------
  {
    auto& L = m.layers[3];
    const double k = spec.gate_slope;
    // unit 0 > 0 iff ask and y > 0.5; unit 1 > 0 iff ask and y < 0.5
    L.mlp_w1(kYes, 0) = f(k);
    L.mlp_w1(kAsk, 0) = f(k);
    L.mlp_w1(kOne, 0) = f(-1.5 * k);
    L.mlp_w1(kYes, 1) = f(-k);
    L.mlp_w1(kAsk, 1) = f(k);
    L.mlp_w1(kOne, 1) = f(-0.5 * k);
    L.mlp_w2(0, kYesGate) = 1.0f;
    L.mlp_w2(1, kNoGate) = 1.0f;
  }

  // -- unembedding -----------------------------------------------------------
  const auto yes = static_cast<std::size_t>(vocab.yes());
  const auto no = static_cast<std::size_t>(vocab.no());
  m.unembed(kAsk, yes) = f(spec.answer_bias);
  m.unembed(kAsk, no) = f(spec.answer_bias);
  m.unembed(kYesGate, yes) = f(spec.gate_gain);
  m.unembed(kNoGate, no) = f(spec.gate_gain);
  m.unembed(kBg, static_cast<std::size_t>(vocab.id("image"))) = f(spec.unembed_gain);
  for (std::size_t i = 0; i < N; ++i) {
    const auto col = static_cast<std::size_t>(vocab.id(spec.objects[i]));
    m.unembed(U + i, col) = f(spec.unembed_gain);
    if (spec.prior != 0.0) {
      const auto partner =
          static_cast<std::size_t>(vocab.id(cooccurrence_partner(spec.objects, spec.objects[i])));
      m.unembed(T + i, partner) += f(spec.prior);
    }
  }
  m.validate();
  return m;
}

}  // namespace vga
