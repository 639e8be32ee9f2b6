#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/fixtures.hpp"
#include "vga/metrics.hpp"
#include "vga/scenes.hpp"

using namespace vga;

namespace {

Matrix logits_from_probs(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = static_cast<float>(std::log(rows[i][j]));
  return m;
}

std::vector<Scene> planted_scenes(std::size_t n, std::uint64_t seed) {
  SceneParams p;
  p.n_scenes = n;
  return make_scenes(p, seed);
}

Matrix visual_logits(const Model& m, const Scene& s) {
  return prefill(m, make_layout(m.vocab, s.patches, "describe")).visual_logits;
}

void expect_sums_to_one(const Grounding& g) {
  double s = 0;
  for (float x : g.weights) {
    ASSERT_GE(x, 0.0f);
    s += x;
  }
  EXPECT_NEAR(s, 1.0, 1e-6);
}

}  // namespace

TEST(Vsc, UniformLogitsGiveQuarter) {
  const Matrix z(3, 4, 0.7f);
  for (std::size_t p = 0; p < 3; ++p)
    for (TokenId w = 0; w < 4; ++w) EXPECT_NEAR(vsc_token(z, p, w), 0.25, 1e-12);
}

TEST(Vsc, SumsToOneOverVocabulary) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g(0, 4);
  Matrix z(5, 30);
  for (auto& x : z.data()) x = g(rng);
  for (std::size_t p = 0; p < 5; ++p) {
    double s = 0;
    for (TokenId w = 0; w < 30; ++w) s += vsc_token(z, p, w);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Vsc, IndexErrors) {
  const Matrix z(2, 4);
  EXPECT_THROW(vsc_token(z, 2, 0), IndexError);
  EXPECT_THROW(vsc_token(z, 0, 4), IndexError);
  EXPECT_THROW(vsc_token(z, 0, -1), IndexError);
}

TEST(ImageConfidence, MaxOverPatches) {
  // column 0 carries per-patch confidences 0.1, 0.7, 0.2
  const auto z = logits_from_probs({{0.1, 0.9}, {0.7, 0.3}, {0.2, 0.8}});
  EXPECT_NEAR(image_confidence(z, 0), 0.7, 1e-6);
  const auto one = logits_from_probs({{0.35, 0.65}});
  EXPECT_EQ(image_confidence(one, 1), vsc_token(one, 0, 1));
}

TEST(ImageConfidence, BruteForceEqualsMax) {
  std::mt19937_64 rng(2);
  std::normal_distribution<float> g(0, 3);
  for (int t = 0; t < 50; ++t) {
    Matrix z(1 + t % 9, 12);
    for (auto& x : z.data()) x = g(rng);
    for (TokenId w = 0; w < 12; ++w) {
      double best = -1;
      for (std::size_t p = 0; p < z.rows(); ++p) best = std::max(best, vsc_token(z, p, w));
      ASSERT_EQ(image_confidence(z, w), best);
    }
  }
}

TEST(Exists, ThresholdExamples) {
  EXPECT_TRUE(exists(0.7));
  EXPECT_FALSE(exists(0.05));
  EXPECT_FALSE(exists(std::exp(-2.5)));
  EXPECT_TRUE(exists(std::nextafter(std::exp(-2.5), 1.0)));
  EXPECT_THROW(exists(0.0), InvalidInput);
  EXPECT_THROW(exists(-0.1), InvalidInput);
}

TEST(ObjectGrounding, Examples) {
  const auto z = logits_from_probs({{0.2, 0.8}, {0.6, 0.4}, {0.2, 0.8}});
  const auto g = object_grounding(z, 0);
  EXPECT_NEAR(g.weights[0], 0.2, 1e-6);
  EXPECT_NEAR(g.weights[1], 0.6, 1e-6);
  EXPECT_NEAR(g.weights[2], 0.2, 1e-6);
  EXPECT_FALSE(g.degenerate);
  EXPECT_EQ(g.rho, 1.0);

  const Matrix flat(2, 3, 0.0f);
  const auto h = object_grounding(flat, 1);
  EXPECT_NEAR(h.weights[0], 0.5, 1e-7);
  EXPECT_NEAR(h.weights[1], 0.5, 1e-7);
}

TEST(MergeGroundings, Examples) {
  const Grounding a = make_grounding(Vector{1, 0}), b = make_grounding(Vector{0, 1});
  const std::vector<Grounding> ab{a, b};
  const auto m = merge_groundings(ab);
  EXPECT_FLOAT_EQ(m.weights[0], 0.5f);
  EXPECT_FLOAT_EQ(m.weights[1], 0.5f);
  const std::vector<Grounding> one{a};
  EXPECT_EQ(merge_groundings(one).weights, a.weights);
  const Grounding c = make_grounding(Vector{0.2f, 0.3f, 0.5f});
  const std::vector<Grounding> cc{c, c};
  const auto mc = merge_groundings(cc);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(mc.weights[i], c.weights[i], 1e-7);
  const std::vector<Grounding> bad{a, c};
  EXPECT_THROW(merge_groundings(bad), ShapeError);
  EXPECT_THROW(merge_groundings(std::span<const Grounding>{}), InvalidInput);
}

TEST(MergeGroundings, IdempotentAndCommutative) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0, 1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = 1 + t % 12;
    Vector x(m), y(m);
    for (auto& v : x) v = u(rng) < 0.3f ? 0.0f : u(rng);
    for (auto& v : y) v = u(rng);
    const auto a = make_grounding(x), b = make_grounding(y);
    const std::vector<Grounding> ab{a, b}, ba{b, a}, aa{a, a};
    const auto m1 = merge_groundings(ab), m2 = merge_groundings(ba);
    ASSERT_EQ(m1.weights, m2.weights);
    const auto ma = merge_groundings(aa);
    for (std::size_t i = 0; i < m; ++i) ASSERT_NEAR(ma.weights[i], a.weights[i], 1e-6);
    const std::vector<Grounding> again{m1, m1};
    const auto mm = merge_groundings(again);
    for (std::size_t i = 0; i < m; ++i) ASSERT_NEAR(mm.weights[i], m1.weights[i], 1e-6);
    expect_sums_to_one(m1);
  }
}

TEST(Vss, UniformRowRawValue) {
  const Matrix z(3, 4, 0.0f);
  const auto raw = vss_raw(z, 2);
  for (float x : raw) EXPECT_NEAR(x, 4.0, 1e-5);
  const auto g = vss(z, 2);
  for (float x : g.weights) EXPECT_NEAR(x, 1.0 / 3.0, 1e-7);
}

TEST(Vss, IdenticalPatchesGiveUniform) {
  std::mt19937_64 rng(4);
  std::normal_distribution<float> n(0, 2);
  Matrix z(7, 20);
  for (std::size_t j = 0; j < 20; ++j) {
    const float v = n(rng);
    for (std::size_t i = 0; i < 7; ++i) z(i, j) = v;
  }
  for (auto sign : {VssSign::raw}) {
    const auto g = vss(z, 10, sign);
    for (float x : g.weights) EXPECT_NEAR(x, 1.0 / 7.0, 1e-6);
  }
}

TEST(Vss, KOutOfRange) {
  const Matrix z(2, 5);
  EXPECT_THROW(vss(z, 1), InvalidInput);
  EXPECT_THROW(vss(z, 6), InvalidInput);
  EXPECT_NO_THROW(vss(z, 5));
}

TEST(Vss, FlippedIsReflection) {
  const auto z = logits_from_probs({{0.9, 0.05, 0.05}, {0.4, 0.3, 0.3}, {0.6, 0.3, 0.1}});
  const auto raw = vss_raw(z, 2);
  const auto f = vss(z, 2, VssSign::flipped);
  const float mx = *std::max_element(raw.begin(), raw.end());
  double total = 0;
  for (float x : raw) total += mx - x;
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(f.weights[i], (mx - raw[i]) / total, 1e-6);
}

TEST(Dice, Examples) {
  const Vector a{1, 0, 1, 0}, b{0, 1, 0, 1};
  EXPECT_DOUBLE_EQ(dice(a, a), 1.0);
  EXPECT_DOUBLE_EQ(dice(a, b), 0.0);
  EXPECT_DOUBLE_EQ(dice(Vector{0.5f, 0.5f, 0, 0}, Vector{1, 0, 0, 0}), 0.5);
  EXPECT_THROW(dice(Vector{0, 0}, Vector{0, 0}), InvalidInput);
  EXPECT_THROW(dice(Vector{0, 1}, Vector{1}), ShapeError);
  EXPECT_THROW(dice(Vector{-1, 1}, Vector{1, 1}), InvalidInput);
}

TEST(Dice, SymmetricAndBounded) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0, 1);
  for (int t = 0; t < 500; ++t) {
    const std::size_t m = 1 + t % 10;
    Vector c(m), g(m);
    for (auto& x : c) x = u(rng);
    for (auto& x : g) x = u(rng) < 0.5f ? 0.0f : u(rng);
    const double d = dice(c, g);
    ASSERT_DOUBLE_EQ(d, dice(g, c));
    ASSERT_GE(d, 0.0);
    ASSERT_LE(d, 1.0 + 1e-12);
  }
}

TEST(ExtractObjects, Examples) {
  const Vocabulary v({"dog", "cat", "is", "there", "a"}, {"dog", "cat"});
  EXPECT_EQ(extract_objects("Is there a dog in the image?", v), (std::vector<std::string>{"dog"}));
  EXPECT_EQ(extract_objects("a cat and a dog", v), (std::vector<std::string>{"cat", "dog"}));
  EXPECT_TRUE(extract_objects("Is there a zebra?", v).empty());
  EXPECT_EQ(extract_objects("DOG, dog; hotdog cat", v), (std::vector<std::string>{"dog", "cat"}));
}

TEST(GroundingInvariant, RandomLogitsSumToOne) {
  std::mt19937_64 rng(6);
  std::normal_distribution<float> n(0, 5);
  for (int t = 0; t < 200; ++t) {
    Matrix z(1 + t % 16, 25);
    for (auto& x : z.data()) x = n(rng);
    expect_sums_to_one(object_grounding(z, static_cast<TokenId>(t % 25)));
    expect_sums_to_one(vss(z, 2 + t % 10));
    const auto g = make_grounding(Vector(z.rows(), 0.0f));
    EXPECT_TRUE(g.degenerate);
    EXPECT_EQ(g.rho, 0.0);
  }
}

// ---- planted model -----------------------------------------------------------

TEST(PlantedGrounding, PresentObjectsOutscoreAbsent) {
  const Model& m = fx::planted();
  const auto scenes = planted_scenes(100, 21);
  double present = 0, absent = 0;
  std::size_t np = 0, na = 0;
  for (const auto& s : scenes) {
    const auto z = visual_logits(m, s);
    for (const auto& q : s.questions) {
      const double c = image_confidence(z, m.vocab.id(q.word));
      (q.present ? present : absent) += c;
      ++(q.present ? np : na);
    }
  }
  EXPECT_GT(present / np, absent / na);
}

TEST(PlantedGrounding, VscDiceAtZeroNoise) {
  const Model& m = fx::planted();
  const auto scenes = planted_scenes(100, 22);
  double total = 0;
  std::size_t n = 0;
  for (const auto& s : scenes) {
    const auto z = visual_logits(m, s);
    for (const auto& o : s.objects) {
      // scored on the per-patch confidences; a unit-mass vector caps Dice at 2 / (1 + |mask|)
      total += dice(vsc_vector(z, m.vocab.id(o.word)), o.overlaps);
      ++n;
    }
  }
  EXPECT_GE(total / n, 0.8);
}

TEST(PlantedGrounding, AbsentObjectsLeanOnBackground) {
  const Model& m = fx::planted();
  const auto scenes = planted_scenes(100, 23);
  double present_bg = 0, absent_bg = 0;
  std::size_t np = 0, na = 0;
  for (const auto& s : scenes) {
    const auto z = visual_logits(m, s);
    std::vector<bool> bg(s.patches.size());
    for (std::size_t i = 0; i < bg.size(); ++i) bg[i] = s.patches[i].rfind("bg", 0) == 0;
    for (const auto& q : s.questions) {
      const auto g = object_grounding(z, m.vocab.id(q.word));
      double mass = 0;
      for (std::size_t i = 0; i < bg.size(); ++i) mass += bg[i] ? g.weights[i] : 0.0;
      (q.present ? present_bg : absent_bg) += mass;
      ++(q.present ? np : na);
    }
  }
  EXPECT_GT(absent_bg / na, present_bg / np);
}

TEST(PlantedGrounding, VssSeparatesObjectPatches) {
  const Model& m = fx::planted();
  const auto scenes = planted_scenes(100, 24);
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : scenes) {
    const auto g = vss(visual_logits(m, s), 10, VssSign::raw);
    for (std::size_t i = 0; i < s.patches.size(); ++i) {
      scores.push_back(g.weights[i]);
      labels.push_back(s.patches[i].rfind("bg", 0) == 0 ? 0 : 1);
    }
  }
  EXPECT_GE(roc_auc(scores, labels), 0.8);
}
