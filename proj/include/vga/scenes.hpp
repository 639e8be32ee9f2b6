#pragma once

// Synthetic scenes: rectangular objects on the patch grid, with per-patch
// mask overlaps, balanced yes/no existence questions and caption annotations.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vga/grounding.hpp"
#include "vga/model.hpp"

namespace vga {

struct Question {
  std::string word;
  bool present = false;
  bool operator==(const Question&) const = default;
};

struct Scene {
  GridShape grid;
  std::vector<std::string> patches;  // concept per patch, row-major
  std::vector<MaskAnnotation> objects;
  std::vector<Question> questions;
  std::vector<std::string> annotated;      // objects a faithful caption may mention
  std::vector<std::string> hallu_targets;  // plausible objects that are not there

  const MaskAnnotation* find_object(const std::string& word) const {
    for (const auto& o : objects)
      if (o.word == word) return &o;
    return nullptr;
  }
};

enum class NegativeSampling { random, popular, adversarial };

inline std::string to_string(NegativeSampling s) {
  switch (s) {
    case NegativeSampling::random: return "random";
    case NegativeSampling::popular: return "popular";
    case NegativeSampling::adversarial: return "adversarial";
  }
  return "?";
}

inline NegativeSampling parse_sampling(const std::string& s) {
  for (auto v : {NegativeSampling::random, NegativeSampling::popular, NegativeSampling::adversarial})
    if (s == to_string(v)) return v;
  throw InvalidParams("unknown negative sampling '" + s + "'");
}

struct SceneParams {
  std::size_t n_scenes = 100;
  GridShape grid{6, 6};
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  std::size_t max_extent = 3;      // rectangle side, in patches
  double half_patch_prob = 0.25;   // chance of a half-covered extra row or column
  NegativeSampling sampling = NegativeSampling::random;
  std::vector<std::string> objects = default_object_words();
  std::size_t n_background = 4;
};

inline bool operator==(const MaskAnnotation& a, const MaskAnnotation& b) {
  return a.word == b.word && a.overlaps == b.overlaps;
}

inline bool operator==(const Scene& a, const Scene& b) {
  return a.grid.rows == b.grid.rows && a.grid.cols == b.grid.cols && a.patches == b.patches &&
         a.objects == b.objects && a.questions == b.questions && a.annotated == b.annotated &&
         a.hallu_targets == b.hallu_targets;
}

namespace detail {

// Places one rectangle (plus optional half-covered strip) on free cells.
// Returns false if no placement was found.
inline bool place_object(std::mt19937_64& rng, const SceneParams& p, std::vector<int>& owner,
                         int id, Vector& overlaps) {
  const std::size_t R = p.grid.rows, C = p.grid.cols;
  std::uniform_int_distribution<std::size_t> ext(1, std::max<std::size_t>(1, p.max_extent));
  std::bernoulli_distribution half(p.half_patch_prob);
  for (int attempt = 0; attempt < 64; ++attempt) {
    const std::size_t h = std::min(ext(rng), R), w = std::min(ext(rng), C);
    const std::size_t r0 = std::uniform_int_distribution<std::size_t>(0, R - h)(rng);
    const std::size_t c0 = std::uniform_int_distribution<std::size_t>(0, C - w)(rng);
    bool free = true;
    for (std::size_t r = r0; r < r0 + h && free; ++r)
      for (std::size_t c = c0; c < c0 + w && free; ++c) free = owner[r * C + c] < 0;
    if (!free) continue;
    overlaps.assign(R * C, 0.0f);
    for (std::size_t r = r0; r < r0 + h; ++r)
      for (std::size_t c = c0; c < c0 + w; ++c) {
        owner[r * C + c] = id;
        overlaps[r * C + c] = 1.0f;
      }
    if (half(rng)) {
      // Half a patch beyond the right edge, or below the bottom edge.
      const bool right = std::bernoulli_distribution(0.5)(rng);
      std::vector<std::size_t> strip;
      if (right && c0 + w < C)
        for (std::size_t r = r0; r < r0 + h; ++r) strip.push_back(r * C + c0 + w);
      else if (!right && r0 + h < R)
        for (std::size_t c = c0; c < c0 + w; ++c) strip.push_back((r0 + h) * C + c);
      const bool strip_free =
          std::all_of(strip.begin(), strip.end(), [&](std::size_t i) { return owner[i] < 0; });
      if (strip_free)
        for (std::size_t i : strip) {
          owner[i] = id;  // coverage 0.5 is enough to carry the concept
          overlaps[i] = 0.5f;
        }
    }
    return true;
  }
  return false;
}

}  // namespace detail

inline std::vector<Scene> make_scenes(const SceneParams& p, std::uint64_t seed) {
  const std::size_t m = p.grid.patches();
  if (m == 0) throw InvalidParams("grid must have at least one patch");
  if (p.min_objects < 1 || p.min_objects > p.max_objects)
    throw InvalidParams("need 1 <= min_objects <= max_objects");
  if (p.max_objects > m)
    throw InvalidParams("more objects (" + std::to_string(p.max_objects) + ") than patches (" +
                        std::to_string(m) + ")");
  if (p.max_objects >= p.objects.size())
    throw InvalidParams("need more object words than objects per scene, so absent questions exist");
  if (p.n_background == 0) throw InvalidParams("need at least one background concept");

  std::mt19937_64 rng(seed);
  std::vector<Scene> scenes;
  std::vector<std::vector<std::string>> present_lists;
  std::map<std::string, std::size_t> freq;
  for (std::size_t s = 0; s < p.n_scenes; ++s) {
    Scene sc;
    sc.grid = p.grid;
    const std::size_t want =
        std::uniform_int_distribution<std::size_t>(p.min_objects, p.max_objects)(rng);
    std::vector<std::string> pool = p.objects;
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<int> owner(m, -1);
    for (std::size_t k = 0; k < want; ++k) {
      MaskAnnotation a;
      a.word = pool[k];
      if (!detail::place_object(rng, p, owner, static_cast<int>(sc.objects.size()), a.overlaps))
        break;
      sc.objects.push_back(std::move(a));
    }
    if (sc.objects.empty()) throw InvalidParams("could not place any object on the grid");
    std::uniform_int_distribution<std::size_t> bg(0, p.n_background - 1);
    sc.patches.resize(m);
    for (std::size_t i = 0; i < m; ++i)
      sc.patches[i] = owner[i] >= 0 ? sc.objects[static_cast<std::size_t>(owner[i])].word
                                    : "bg" + std::to_string(bg(rng));
    std::vector<std::string> present;
    for (const auto& o : sc.objects) {
      present.push_back(o.word);
      ++freq[o.word];
    }
    sc.annotated = present;
    for (const auto& w : p.objects)
      if (std::find(present.begin(), present.end(), w) == present.end()) sc.hallu_targets.push_back(w);
    present_lists.push_back(present);
    scenes.push_back(std::move(sc));
  }

  // Popularity ranking over the whole set: most frequent first, ties by name.
  std::vector<std::string> by_popularity = p.objects;
  std::stable_sort(by_popularity.begin(), by_popularity.end(),
                   [&](const std::string& a, const std::string& b) { return freq[a] > freq[b]; });

  for (std::size_t s = 0; s < scenes.size(); ++s) {
    auto& sc = scenes[s];
    const auto& present = present_lists[s];
    std::vector<std::string> absent = sc.hallu_targets;
    std::vector<std::string> picked;
    auto take = [&](const std::string& w) {
      if (picked.size() < present.size() &&
          std::find(absent.begin(), absent.end(), w) != absent.end() &&
          std::find(picked.begin(), picked.end(), w) == picked.end())
        picked.push_back(w);
    };
    switch (p.sampling) {
      case NegativeSampling::adversarial:
        for (const auto& w : present) take(cooccurrence_partner(p.objects, w));
        break;
      case NegativeSampling::popular:
        for (const auto& w : by_popularity) take(w);
        break;
      case NegativeSampling::random:
        break;
    }
    std::shuffle(absent.begin(), absent.end(), rng);
    for (const auto& w : absent) take(w);
    for (std::size_t k = 0; k < present.size(); ++k) {
      sc.questions.push_back({present[k], true});
      sc.questions.push_back({picked[k], false});
    }
  }
  return scenes;
}

// ---- scene files -------------------------------------------------------------

inline nlohmann::json scenes_to_json(const std::vector<Scene>& scenes) {
  using nlohmann::json;
  json j;
  const GridShape g = scenes.empty() ? GridShape{} : scenes.front().grid;
  j["grid"] = {{"rows", g.rows}, {"cols", g.cols}};
  j["scenes"] = json::array();
  for (const auto& s : scenes) {
    json js;
    js["patches"] = s.patches;
    js["objects"] = json::array();
    for (const auto& o : s.objects) js["objects"].push_back({{"word", o.word}, {"mask_overlaps", o.overlaps}});
    js["questions"] = json::array();
    for (const auto& q : s.questions)
      js["questions"].push_back({{"word", q.word}, {"label", q.present ? "present" : "absent"}});
    js["annotated"] = s.annotated;
    js["hallu_targets"] = s.hallu_targets;
    j["scenes"].push_back(std::move(js));
  }
  return j;
}

inline std::vector<Scene> scenes_from_json(const nlohmann::json& j) {
  std::vector<Scene> out;
  try {
    const GridShape g{j.at("grid").at("rows").get<std::size_t>(), j.at("grid").at("cols").get<std::size_t>()};
    for (const auto& js : j.at("scenes")) {
      Scene s;
      s.grid = g;
      s.patches = js.at("patches").get<std::vector<std::string>>();
      if (s.patches.size() != g.patches())
        throw FormatError("scene has " + std::to_string(s.patches.size()) + " patches, grid has " +
                          std::to_string(g.patches()));
      for (const auto& o : js.at("objects")) {
        MaskAnnotation a{o.at("word").get<std::string>(), o.at("mask_overlaps").get<Vector>()};
        if (a.overlaps.size() != g.patches()) throw FormatError("mask of '" + a.word + "' has wrong length");
        s.objects.push_back(std::move(a));
      }
      for (const auto& q : js.at("questions")) {
        const auto label = q.at("label").get<std::string>();
        if (label != "present" && label != "absent") throw FormatError("question label '" + label + "'");
        s.questions.push_back({q.at("word").get<std::string>(), label == "present"});
      }
      s.annotated = js.at("annotated").get<std::vector<std::string>>();
      s.hallu_targets = js.at("hallu_targets").get<std::vector<std::string>>();
      for (const auto& q : s.questions) {
        const bool seen = std::find(s.patches.begin(), s.patches.end(), q.word) != s.patches.end();
        if (seen != q.present) throw FormatError("question label for '" + q.word + "' contradicts the patches");
      }
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scene file: ") + e.what());
  }
  return out;
}

inline void save_scenes(const std::vector<Scene>& scenes, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << scenes_to_json(scenes).dump(1) << '\n';
  if (!f) throw IoError("write to '" + path + "' failed");
}

inline std::vector<Scene> load_scenes(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("scene file '" + path + "': " + e.what());
  }
  return scenes_from_json(j);
}

}  // namespace vga
