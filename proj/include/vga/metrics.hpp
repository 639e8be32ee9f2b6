#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "vga/errors.hpp"

namespace vga {

using ObjectSet = std::set<std::string>;

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// 0/0 counts as 0 everywhere.
inline Prf prf(double tp, double fp, double fn) {
  Prf r;
  r.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

struct ChairScores {
  double chair_s = 0.0;  // captions with at least one hallucinated object
  double chair_i = 0.0;  // hallucinated object mentions over all object mentions
};

inline ChairScores chair_metrics(std::span<const ObjectSet> generated, std::span<const ObjectSet> annotated) {
  if (generated.empty()) throw InvalidInput("chair_metrics: empty caption set");
  if (generated.size() != annotated.size()) throw ShapeError("chair_metrics: caption/annotation count mismatch");
  std::size_t bad_captions = 0, mentions = 0, hallucinated = 0;
  for (std::size_t c = 0; c < generated.size(); ++c) {
    std::size_t h = 0;
    for (const auto& o : generated[c]) h += annotated[c].count(o) ? 0 : 1;
    mentions += generated[c].size();
    hallucinated += h;
    bad_captions += h > 0 ? 1 : 0;
  }
  ChairScores s;
  s.chair_s = static_cast<double>(bad_captions) / static_cast<double>(generated.size());
  s.chair_i = mentions ? static_cast<double>(hallucinated) / static_cast<double>(mentions) : 0.0;
  return s;
}

struct AmberScores {
  double chair = 0.0;
  double cover = 0.0;
  double hal = 0.0;
  double cog = 0.0;
  double amber = 0.0;
  std::vector<std::string> warnings;
};

// Per caption: CHAIR = 1 - |R & A| / |R|, Cover = |R & A| / |A|, Cog = |R & H| / |R|,
// Hal = share of captions with CHAIR > 0; all averaged over captions.
// AMBER = (1 - CHAIR + f1) / 2.
inline AmberScores amber_metrics(std::span<const ObjectSet> generated, std::span<const ObjectSet> annotated,
                                 std::span<const ObjectSet> hallu_targets, double f1) {
  if (generated.empty()) throw InvalidInput("amber_metrics: empty caption set");
  if (generated.size() != annotated.size() || generated.size() != hallu_targets.size())
    throw ShapeError("amber_metrics: caption/annotation count mismatch");
  auto inter = [](const ObjectSet& a, const ObjectSet& b) {
    std::size_t n = 0;
    for (const auto& x : a) n += b.count(x);
    return static_cast<double>(n);
  };
  AmberScores s;
  const double n = static_cast<double>(generated.size());
  for (std::size_t c = 0; c < generated.size(); ++c) {
    const auto& r = generated[c];
    double chair = 0.0, cog = 0.0;
    if (r.empty()) {
      s.warnings.push_back("caption " + std::to_string(c) + ": no objects generated, CHAIR and Cog scored 0");
    } else {
      const double len = static_cast<double>(r.size());
      chair = 1.0 - inter(r, annotated[c]) / len;
      cog = inter(r, hallu_targets[c]) / len;
    }
    double cover = 0.0;
    if (annotated[c].empty())
      s.warnings.push_back("caption " + std::to_string(c) + ": empty annotation, Cover scored 0");
    else
      cover = inter(r, annotated[c]) / static_cast<double>(annotated[c].size());
    s.chair += chair / n;
    s.cover += cover / n;
    s.cog += cog / n;
    s.hal += (chair > 0.0 ? 1.0 : 0.0) / n;
  }
  s.amber = (1.0 - s.chair + f1) / 2.0;
  return s;
}

// Point-biserial correlation: (M1 - M0) / s * sqrt(p q), s the population std.
inline double point_biserial(std::span<const float> values, std::span<const float> labels) {
  if (values.size() != labels.size()) throw ShapeError("point_biserial: length mismatch");
  double n1 = 0, n0 = 0, s1 = 0, s0 = 0, sum = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (labels[i] != 0.0f && labels[i] != 1.0f) throw InvalidInput("point_biserial: labels must be 0 or 1");
    sum += values[i];
    if (labels[i] == 1.0f) {
      ++n1;
      s1 += values[i];
    } else {
      ++n0;
      s0 += values[i];
    }
  }
  if (n1 == 0 || n0 == 0) throw InvalidInput("point_biserial: both classes must be present");
  const double n = n1 + n0, mean = sum / n;
  double var = 0.0;
  for (float v : values) var += (v - mean) * (v - mean);
  var /= n;
  if (var <= 0.0) throw InvalidInput("point_biserial: values have zero variance");
  return (s1 / n1 - s0 / n0) / std::sqrt(var) * std::sqrt(n1 / n * n0 / n);
}

// Probability that a random positive scores above a random negative, ties half.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc_auc: length mismatch");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with midranks.
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]]) rank_sum += mid;
    i = j;
  }
  for (int l : labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw InvalidInput("roc_auc: both classes must be present");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

}  // namespace vga
