#include <gtest/gtest.h>

#include <random>

#include "support/fixtures.hpp"
#include "support/reference_forward.hpp"
#include "vga/generate.hpp"

using namespace vga;

namespace {

void expect_close(std::span<const float> got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i)
    ASSERT_NEAR(got[i], want[i], tol * std::max(1.0, std::fabs(want[i]))) << "index " << i;
}

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, float sd = 1.0f) {
  std::normal_distribution<float> g(0.0f, sd);
  Matrix m(r, c);
  for (auto& x : m.data()) x = g(rng);
  return m;
}

SequenceLayout random_layout(const Model& m, std::mt19937_64& rng) {
  return make_layout(m.vocab, fx::random_patches(rng, m.config.grid.patches()), fx::random_question(rng));
}

}  // namespace

TEST(Prefill, ShapesAndCache) {
  const Model m = fx::small_random(1);
  std::mt19937_64 rng(1);
  const auto layout = random_layout(m, rng);
  const auto pre = prefill(m, layout);
  EXPECT_EQ(pre.visual_logits.rows(), m.config.grid.patches());
  EXPECT_EQ(pre.visual_logits.cols(), m.config.vocab_size);
  EXPECT_EQ(pre.visual_probs.rows(), pre.visual_logits.rows());
  EXPECT_EQ(pre.last_logits.size(), m.config.vocab_size);
  EXPECT_EQ(pre.cache.length(), layout.tokens.size());
  EXPECT_EQ(pre.cache.forward_passes(), 1u);
  EXPECT_EQ(pre.cache.tokens_forwarded(), layout.tokens.size());
}

TEST(Prefill, MatchesNoCacheRecompute) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const Model m = fx::small_random(100 + t);
    const auto layout = random_layout(m, rng);
    const auto pre = prefill(m, layout);
    const auto want = ref::logits(m, layout.tokens);
    expect_close(pre.last_logits, want.back(), 1e-5);
    for (std::size_t i = 0; i < layout.visual_count(); ++i)
      expect_close(pre.visual_logits.row(i), want[layout.visual_start + i], 1e-5);
  }
}

TEST(Prefill, ExplicitAndFusedPathsAgree) {
  std::mt19937_64 rng(3);
  const Model m = fx::small_random(3);
  ForwardOptions ex;
  ex.path = AttentionPath::explicit_weights;
  for (int t = 0; t < 10; ++t) {
    const auto layout = random_layout(m, rng);
    const auto a = prefill(m, layout), b = prefill(m, layout, nullptr, ex);
    for (std::size_t i = 0; i < a.last_logits.size(); ++i) ASSERT_NEAR(a.last_logits[i], b.last_logits[i], 1e-5);
  }
}

TEST(Prefill, EmptyLayerRangeHookIsNoOp) {
  std::mt19937_64 rng(4);
  const Model m = fx::small_random(4);
  const auto layout = random_layout(m, rng);
  VgaConfig cfg;
  cfg.start_layer = 1;
  cfg.end_layer = 1;
  VgaSession s(m, layout, cfg, "is there a dog ?");
  const auto a = prefill(m, layout), b = prefill(m, layout, &s);
  EXPECT_EQ(a.last_logits, b.last_logits);
  EXPECT_TRUE(a.visual_logits == b.visual_logits);
}

TEST(Prefill, TooLongIsCapacityError) {
  auto c = fx::small_config();
  c.max_seq_len = 10;
  const Model m = fx::small_random(5, c);
  const auto layout = make_layout(m.vocab, std::vector<std::string>(6, "dog"), "is there a dog in the image ?");
  EXPECT_THROW(prefill(m, layout), CapacityError);
}

TEST(Prefill, BosRecordingNeedsExplicitPath) {
  const Model m = fx::small_random(6);
  std::mt19937_64 rng(6);
  ForwardOptions o;
  o.record_bos = true;
  EXPECT_THROW(prefill(m, random_layout(m, rng), nullptr, o), ConfigError);
}

TEST(Prefill, CausalityOfVisualLogits) {
  std::mt19937_64 rng(7);
  const Model m = fx::small_random(7);
  auto layout = random_layout(m, rng);
  const auto base = prefill(m, layout);
  // Changing the text never touches the visual rows; changing the last patch
  // leaves all earlier patches alone.
  std::vector<std::string> patches;
  for (std::size_t i = layout.visual_start; i < layout.visual_end; ++i) {
    const auto& w = m.vocab.word(layout.tokens[i]);
    patches.push_back(w.substr(5, w.size() - 6));
  }
  const auto a = prefill(m, make_layout(m.vocab, patches, "describe the cat"));
  EXPECT_TRUE(a.visual_logits == base.visual_logits);
  patches.back() = patches.back() == "kite" ? "cup" : "kite";
  const auto b = prefill(m, make_layout(m.vocab, patches, ""));
  for (std::size_t i = 0; i + 1 < patches.size(); ++i)
    for (std::size_t v = 0; v < b.visual_logits.cols(); ++v)
      ASSERT_EQ(b.visual_logits(i, v), base.visual_logits(i, v));
}

TEST(DecodeStep, MatchesRecomputeAndGrowsCache) {
  std::mt19937_64 rng(8);
  const Model m = fx::small_random(8);
  auto layout = random_layout(m, rng);
  auto pre = prefill(m, layout);
  const std::size_t n = pre.cache.length();
  const TokenId a = m.vocab.id("cat"), b = m.vocab.id("the");
  const auto la = decode_step(m, pre.cache, a);
  const auto lb = decode_step(m, pre.cache, b);
  EXPECT_EQ(pre.cache.length(), n + 2);
  auto toks = layout.tokens;
  toks.push_back(a);
  expect_close(la, ref::logits(m, toks).back(), 1e-5);
  toks.push_back(b);
  expect_close(lb, ref::logits(m, toks).back(), 1e-5);
}

TEST(DecodeStep, EmptyOrFullCacheRejected) {
  const Model m = fx::small_random(9);
  KvCache empty(m.config);
  EXPECT_THROW(decode_step(m, empty, 0), InvalidInput);
  auto c = fx::small_config();
  c.max_seq_len = 12;
  const Model s = fx::small_random(9, c);
  auto pre = prefill(s, make_layout(s.vocab, std::vector<std::string>(6, "dog"), "is there a cat"));
  while (pre.cache.length() < c.max_seq_len) decode_step(s, pre.cache, 0);
  EXPECT_THROW(decode_step(s, pre.cache, 0), CapacityError);
}

TEST(DecodeStep, ZeroBetaHookMatchesHookless) {
  std::mt19937_64 rng(10);
  const Model m = fx::small_random(10);
  const auto layout = random_layout(m, rng);
  VgaConfig cfg;
  cfg.beta = 0.0;
  VgaSession s(m, layout, cfg, "is there a dog ?");
  auto p1 = prefill(m, layout);
  auto p2 = prefill(m, layout, &s);
  const auto a = decode_step(m, p1.cache, 3);
  const auto b = decode_step(m, p2.cache, 3, &s);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-6);
}

TEST(Generate, MaxLenOneGivesOneToken) {
  std::mt19937_64 rng(11);
  const Model m = fx::small_random(11);
  GenerationOptions g;
  g.max_len = 1;
  g.stop_at_eos = false;
  const auto out = greedy_generate(m, random_layout(m, rng), nullptr, g);
  EXPECT_EQ(out.tokens.size(), 1u);
  EXPECT_EQ(out.forward_passes, 1u);
  g.max_len = 0;
  EXPECT_THROW(greedy_generate(m, random_layout(m, rng), nullptr, g), InvalidInput);
}

TEST(Generate, CachedEqualsFullRecompute) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 50; ++t) {
    const Model m = fx::small_random(200 + t);
    const auto layout = random_layout(m, rng);
    GenerationOptions g;
    g.max_len = 1 + t % 8;
    const auto got = greedy_generate(m, layout, nullptr, g, true);
    ref::Rows want_logits;
    const auto want = ref::greedy(m, layout.tokens, g.max_len, &want_logits);
    ASSERT_EQ(got.tokens, want) << "prompt " << t;
    for (std::size_t s = 0; s < got.logits.size(); ++s) expect_close(got.logits[s], want_logits[s], 1e-5);
    EXPECT_EQ(got.forward_passes, got.tokens.size());
  }
}

TEST(Generate, Deterministic) {
  std::mt19937_64 rng(13);
  const Model m = fx::small_random(13);
  const auto layout = random_layout(m, rng);
  VgaConfig cfg;
  cfg.mode = TaskMode::caption;
  GenerationOptions g;
  g.max_len = 20;
  VgaSession a(m, layout, cfg, "describe"), b(m, layout, cfg, "describe");
  EXPECT_EQ(greedy_generate(m, layout, &a, g).tokens, greedy_generate(m, layout, &b, g).tokens);
}

// ---- attention kernels --------------------------------------------------------

TEST(Attention, FusedEqualsExplicitAcrossShapes) {
  std::mt19937_64 rng(20);
  std::uniform_int_distribution<std::size_t> heads(1, 4), dh(1, 12), nkv(1, 70);
  for (int t = 0; t < 150; ++t) {
    const std::size_t H = heads(rng), d = H * dh(rng), n_kv = nkv(rng);
    const std::size_t n_q = std::uniform_int_distribution<std::size_t>(1, n_kv)(rng);
    const auto q = random_matrix(rng, n_q, d, 2.0f), k = random_matrix(rng, n_kv, d, 2.0f),
               v = random_matrix(rng, n_kv, d);
    const auto ex = attention_explicit(q, k, v, H);
    const auto fu = attention_fused(q, k, v, H);
    ASSERT_EQ(fu.rows(), n_q);
    ASSERT_EQ(fu.cols(), d);
    for (std::size_t i = 0; i < fu.data().size(); ++i) ASSERT_NEAR(fu.data()[i], ex.z.data()[i], 1e-6);
    EXPECT_TRUE(attention_fused(q, k, v, H) == fu);
  }
}

TEST(Attention, RowsSumToOneAndRespectCausality) {
  std::mt19937_64 rng(21);
  const auto q = random_matrix(rng, 5, 8), k = random_matrix(rng, 9, 8), v = random_matrix(rng, 9, 8);
  const auto ex = attention_explicit(q, k, v, 2);
  for (const auto& a : ex.alpha)
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 9; ++j) {
        s += a(i, j);
        if (j > 4 + i) {
          ASSERT_EQ(a(i, j), 0.0f);
        }
      }
      ASSERT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Attention, GuidedRowSumAndZeroScale) {
  std::mt19937_64 rng(22);
  const auto q = random_matrix(rng, 3, 8), k = random_matrix(rng, 10, 8), v = random_matrix(rng, 10, 8);
  GuidanceRow g;
  g.row = 2;
  g.visual_start = 1;
  g.weights = {0.1f, 0.2f, 0.3f, 0.4f};
  g.head_scale = {0.2f, 0.35f};
  const auto ex = attention_explicit(q, k, v, 2, std::span(&g, 1));
  for (std::size_t h = 0; h < 2; ++h) {
    double s = 0;
    for (std::size_t j = 0; j < 10; ++j) s += ex.alpha[h](2, j);
    EXPECT_NEAR(s, 1.0 + g.head_scale[h], 1e-5);
  }
  g.head_scale = {0.0f, 0.0f};
  const auto zero = attention_explicit(q, k, v, 2, std::span(&g, 1));
  const auto plain = attention_explicit(q, k, v, 2);
  EXPECT_TRUE(zero.z == plain.z);
}

TEST(Attention, GuidanceSliceChecked) {
  std::mt19937_64 rng(23);
  const auto q = random_matrix(rng, 2, 4), k = random_matrix(rng, 6, 4), v = random_matrix(rng, 6, 4);
  GuidanceRow g;
  g.row = 0;
  g.visual_start = 3;
  g.weights = {0.5f, 0.5f, 0.0f, 0.0f};
  g.head_scale = {0.1f};
  EXPECT_THROW(attention_explicit(q, k, v, 1, std::span(&g, 1)), ShapeError);
  g.weights = {0.5f, 0.5f};
  g.row = 0;  // row 0 sees keys 0..4, slice is 3..4
  EXPECT_NO_THROW(attention_explicit(q, k, v, 1, std::span(&g, 1)));
  g.visual_start = 4;  // slice 4..5 lies beyond row 0's horizon
  EXPECT_THROW(attention_explicit(q, k, v, 1, std::span(&g, 1)), ShapeError);
}

TEST(Attention, ShapeErrors) {
  Matrix q(2, 6), k(3, 6), v(3, 4);
  EXPECT_THROW(attention_fused(q, k, v, 2), ShapeError);
  EXPECT_THROW(attention_fused(q, k, Matrix(3, 6), 4), ShapeError);
  EXPECT_THROW(attention_fused(Matrix(4, 6), k, Matrix(3, 6), 2), ShapeError);
}
