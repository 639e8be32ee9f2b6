#pragma once

// Visual Semantic Confidence / Salience: reading object evidence straight out
// of the vocabulary logits of visual positions, and turning it into grounding
// vectors over the patches.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vga/numerics.hpp"
#include "vga/vocab.hpp"

namespace vga {

// Sum-normalised, nonnegative weights over the m visual tokens.
struct Grounding {
  Vector weights;
  double rho = 0.0;  // live-mass fraction; 0 for a degenerate grounding
  bool degenerate = false;

  std::size_t size() const { return weights.size(); }
};

// Normalises raw nonnegative scores. An all-zero input yields uniform weights
// flagged degenerate with rho = 0, so it carries no guidance.
inline Grounding make_grounding(std::span<const float> raw) {
  auto n = sum_normalize(raw);
  Grounding g;
  g.degenerate = n.degenerate;
  g.rho = n.degenerate ? 0.0 : l0_fraction(n.values);
  g.weights = std::move(n.values);
  return g;
}

inline Grounding uniform_grounding(std::size_t m) {
  const Vector ones(m, 1.0f);
  return make_grounding(ones);
}

struct MaskAnnotation {
  std::string word;
  Vector overlaps;  // g_i in [0, 1], fraction of patch i covered by the object
};

enum class VssSign { raw, flipped };

namespace detail {
inline void check_patch_word(const Matrix& logits, std::size_t patch, TokenId word) {
  if (patch >= logits.rows())
    throw IndexError("patch " + std::to_string(patch) + " >= m=" + std::to_string(logits.rows()));
  if (word < 0 || static_cast<std::size_t>(word) >= logits.cols())
    throw IndexError("word id " + std::to_string(word) + " outside vocabulary");
}
}  // namespace detail

// softmax(logit_{v_i})[word]
inline double vsc_token(const Matrix& visual_logits, std::size_t patch, TokenId word) {
  detail::check_patch_word(visual_logits, patch, word);
  const auto row = visual_logits.row(patch);
  require_finite(row, "vsc_token");
  const float mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (float x : row) sum += std::exp(static_cast<double>(x) - mx);
  return std::exp(static_cast<double>(row[static_cast<std::size_t>(word)]) - mx) / sum;
}

// Per-patch confidence for `word`, read from precomputed row-softmax probabilities.
inline Vector vsc_column(const Matrix& visual_probs, TokenId word) {
  detail::check_patch_word(visual_probs, 0, word);
  Vector col(visual_probs.rows());
  for (std::size_t i = 0; i < col.size(); ++i)
    col[i] = visual_probs(i, static_cast<std::size_t>(word));
  return col;
}

inline Vector vsc_vector(const Matrix& visual_logits, TokenId word) {
  Vector out(visual_logits.rows());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(vsc_token(visual_logits, i, word));
  return out;
}

// c(O) = max_i c_{v_i}(o_0)
inline double image_confidence(const Matrix& visual_logits, TokenId word) {
  double best = 0.0;
  for (std::size_t i = 0; i < visual_logits.rows(); ++i)
    best = std::max(best, vsc_token(visual_logits, i, word));
  return best;
}

inline constexpr double kExistThreshold = -2.5;

// log c(O) > threshold, strictly.
inline bool exists(double conf, double threshold = kExistThreshold) {
  if (!(conf > 0.0)) throw InvalidInput("exists: confidence must be > 0");
  return std::log(conf) > threshold;
}

inline Grounding object_grounding(const Matrix& visual_logits, TokenId word) {
  return make_grounding(vsc_vector(visual_logits, word));
}

// Elementwise max over groundings, renormalised to unit mass.
inline Grounding merge_groundings(std::span<const Grounding> gs) {
  if (gs.empty()) throw InvalidInput("merge_groundings: empty list");
  const std::size_t m = gs.front().size();
  Vector mx(m, 0.0f);
  bool all_degenerate = true;
  for (const auto& g : gs) {
    if (g.size() != m) throw ShapeError("merge_groundings: length mismatch");
    all_degenerate = all_degenerate && g.degenerate;
    for (std::size_t i = 0; i < m; ++i) mx[i] = std::max(mx[i], g.weights[i]);
  }
  if (all_degenerate) return make_grounding(Vector(m, 0.0f));
  return make_grounding(mx);
}

// Per-patch -sum_k log p(w_k) / log K over the top-k probabilities (natural logs).
inline Vector vss_raw(const Matrix& visual_logits, std::size_t k) {
  if (k < 2 || k > visual_logits.cols())
    throw InvalidInput("vss: k must satisfy 2 <= k <= V, got " + std::to_string(k));
  const Matrix probs = row_softmax(visual_logits);
  Vector out(probs.rows());
  std::vector<float> row;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const auto r = probs.row(i);
    row.assign(r.begin(), r.end());
    std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k), row.end(),
                      std::greater<>());
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      acc -= std::log(std::max(static_cast<double>(row[j]), 1e-300));
    out[i] = static_cast<float>(acc / std::log(static_cast<double>(k)));
  }
  return out;
}

// (max - x) per entry; used both for the flipped VSS sign and reversed guidance.
inline Vector reflect_from_max(std::span<const float> x) {
  const float mx = *std::max_element(x.begin(), x.end());
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = mx - x[i];
  return out;
}

inline Grounding vss(const Matrix& visual_logits, std::size_t k, VssSign sign = VssSign::raw) {
  Vector raw = vss_raw(visual_logits, k);
  if (sign == VssSign::flipped) raw = reflect_from_max(raw);
  return make_grounding(raw);
}

// 2 sum c_i g_i / (sum c_i + sum g_i)
inline double dice(std::span<const float> c, std::span<const float> g) {
  if (c.size() != g.size()) throw ShapeError("dice: length mismatch");
  double num = 0.0, sc = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c[i] < 0.0f || g[i] < 0.0f) throw InvalidInput("dice: negative entry");
    num += static_cast<double>(c[i]) * g[i];
    sc += c[i];
    sg += g[i];
  }
  if (sc + sg == 0.0) throw InvalidInput("dice: both vectors are all-zero");
  return 2.0 * num / (sc + sg);
}

inline double dice(const Grounding& c, const MaskAnnotation& g) { return dice(c.weights, g.overlaps); }

// Case-insensitive whole-word matches of vocabulary object words, in order of
// first appearance, deduplicated.
inline std::vector<std::string> extract_objects(std::string_view question, const Vocabulary& vocab) {
  std::vector<std::string> found;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    const auto& objs = vocab.objects();
    if (std::find(objs.begin(), objs.end(), cur) != objs.end() &&
        std::find(found.begin(), found.end(), cur) == found.end())
      found.push_back(cur);
    cur.clear();
  };
  for (char ch : question) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) cur.push_back(static_cast<char>(std::tolower(c)));
    else flush();
  }
  flush();
  return found;
}

}  // namespace vga
