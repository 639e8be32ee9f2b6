#pragma once

// Evaluation loops over synthetic scenes. Every loop is paired: the same
// scenes, prompts and order for every configuration, so two reports can be
// compared question by question.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "vga/generate.hpp"
#include "vga/metrics.hpp"
#include "vga/scenes.hpp"

namespace vga {

inline const std::string kCaptionPrompt = "describe";

inline std::string existence_prompt(const std::string& word) { return "is there a " + word + " ?"; }

struct EvalOptions {
  std::size_t jobs = 1;
  std::size_t max_len = 512;  // caption length budget
  AttentionPath path = AttentionPath::fused;
  std::uint64_t seed = 0;     // echoed into the report only
};

struct DiceBucket {
  double mean_dice = 0.0;
  std::size_t count = 0;
};

struct GroundingQuality {
  double mean_dice = 0.0;
  std::size_t pairs = 0;
  DiceBucket small, medium, large;
};

struct EvalReport {
  std::string kind;  // existence | caption | grounding
  std::size_t items = 0;

  // existence
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0, unmapped = 0;
  std::vector<int> correct;  // per question, in scene order

  // caption
  ChairScores chair;
  AmberScores amber;
  double mean_objects = 0.0;  // distinct objects per caption
  std::vector<ObjectSet> generated;

  // grounding
  GroundingQuality grounding;

  VgaConfig config;
  std::uint64_t seed = 0;
  double elapsed_seconds = 0.0;
  std::vector<std::string> warnings;
};

namespace detail {

// Runs fn(i) for i in [0, n) on up to `jobs` threads; results go to slots
// owned by each index, so the outcome does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// Scores one answer word per question (scenes and questions in order).
// Answers map case-insensitively to yes/no; anything else counts as wrong.
inline EvalReport score_existence(const std::vector<Scene>& scenes, const std::vector<std::string>& answers) {
  std::vector<const Question*> qs;
  for (const auto& s : scenes)
    for (const auto& q : s.questions) qs.push_back(&q);
  if (qs.size() != answers.size())
    throw ShapeError("score_existence: " + std::to_string(answers.size()) + " answers for " +
                     std::to_string(qs.size()) + " questions");
  EvalReport r;
  r.kind = "existence";
  r.items = qs.size();
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const bool truth = qs[i]->present;
    const std::string a = detail::lower(answers[i]);
    const bool yes = a == tok::kYes, no = a == tok::kNo;
    if (!yes && !no) {
      ++r.unmapped;
      r.warnings.push_back("question '" + existence_prompt(qs[i]->word) + "': unmapped answer '" + answers[i] +
                           "'");
    }
    if (truth) (yes ? r.tp : r.fn) += 1;
    else (no ? r.tn : r.fp) += 1;
    r.correct.push_back((truth && yes) || (!truth && no) ? 1 : 0);
  }
  const auto s = prf(static_cast<double>(r.tp), static_cast<double>(r.fp), static_cast<double>(r.fn));
  r.precision = s.precision;
  r.recall = s.recall;
  r.f1 = s.f1;
  r.accuracy = r.items ? static_cast<double>(std::count(r.correct.begin(), r.correct.end(), 1)) /
                             static_cast<double>(r.items)
                       : 0.0;
  return r;
}

// One greedy token per question.
inline EvalReport run_existence_eval(const Model& model, const std::vector<Scene>& scenes,
                                     const VgaConfig& config, const EvalOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  struct Item {
    const Scene* scene;
    const Question* q;
  };
  std::vector<Item> items;
  for (const auto& s : scenes)
    for (const auto& q : s.questions) items.push_back({&s, &q});

  std::vector<std::string> answers(items.size());
  GenerationOptions gen;
  gen.max_len = 1;
  gen.path = opt.path;
  detail::parallel_for(items.size(), opt.jobs, [&](std::size_t i) {
    const auto& [scene, q] = items[i];
    const std::string prompt = existence_prompt(q->word);
    const auto layout = make_layout(model.vocab, scene->patches, prompt);
    std::optional<MaskAnnotation> mask;
    if (config.resolved_source() == GuidanceSource::ground_truth) {
      const auto* obj = scene->find_object(q->word);
      mask = obj ? *obj : MaskAnnotation{q->word, Vector(layout.visual_count(), 0.0f)};
    }
    VgaSession session(model, layout, config, prompt, mask);
    const auto out = greedy_generate(model, layout, &session, gen);
    answers[i] = model.vocab.word(out.tokens.front());
  });

  EvalReport r = score_existence(scenes, answers);
  r.config = config;
  r.seed = opt.seed;
  r.elapsed_seconds = detail::seconds_since(t0);
  return r;
}

// Objects mentioned in a token stream: vocabulary object words, deduplicated.
inline ObjectSet mentioned_objects(const Vocabulary& vocab, const std::vector<TokenId>& tokens) {
  ObjectSet out;
  for (TokenId t : tokens)
    if (vocab.is_object(t)) out.insert(vocab.word(t));
  return out;
}

// Union of all object masks (elementwise max).
inline MaskAnnotation scene_mask(const Scene& s) {
  MaskAnnotation a{"*", Vector(s.grid.patches(), 0.0f)};
  for (const auto& o : s.objects)
    for (std::size_t i = 0; i < a.overlaps.size(); ++i) a.overlaps[i] = std::max(a.overlaps[i], o.overlaps[i]);
  return a;
}

inline EvalReport run_caption_eval(const Model& model, const std::vector<Scene>& scenes,
                                   const VgaConfig& config, const EvalOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<ObjectSet> generated(scenes.size());
  std::vector<std::vector<std::string>> warn(scenes.size());
  GenerationOptions gen;
  gen.max_len = opt.max_len;
  gen.path = opt.path;
  detail::parallel_for(scenes.size(), opt.jobs, [&](std::size_t i) {
    const auto layout = make_layout(model.vocab, scenes[i].patches, kCaptionPrompt);
    std::optional<MaskAnnotation> mask;
    if (config.resolved_source() == GuidanceSource::ground_truth) mask = scene_mask(scenes[i]);
    VgaSession session(model, layout, config, kCaptionPrompt, mask);
    const auto out = greedy_generate(model, layout, &session, gen);
    generated[i] = mentioned_objects(model.vocab, out.tokens);
    warn[i] = out.warnings;
  });

  EvalReport r;
  r.kind = "caption";
  r.items = scenes.size();
  r.config = config;
  r.seed = opt.seed;
  std::vector<ObjectSet> annotated, targets;
  double tp = 0, fp = 0, fn = 0, objects = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    annotated.emplace_back(scenes[i].annotated.begin(), scenes[i].annotated.end());
    targets.emplace_back(scenes[i].hallu_targets.begin(), scenes[i].hallu_targets.end());
    for (const auto& o : generated[i]) (annotated.back().count(o) ? tp : fp) += 1;
    for (const auto& o : annotated.back()) fn += generated[i].count(o) ? 0 : 1;
    objects += static_cast<double>(generated[i].size());
    for (auto& w : warn[i]) r.warnings.push_back("scene " + std::to_string(i) + ": " + w);
  }
  if (!scenes.empty()) {
    const auto s = prf(tp, fp, fn);
    r.precision = s.precision;
    r.recall = s.recall;
    r.f1 = s.f1;
    r.chair = chair_metrics(generated, annotated);
    r.amber = amber_metrics(generated, annotated, targets, r.f1);
    for (const auto& w : r.amber.warnings) r.warnings.push_back(w);
    r.mean_objects = objects / static_cast<double>(scenes.size());
  }
  r.generated = std::move(generated);
  r.elapsed_seconds = detail::seconds_since(t0);
  return r;
}

enum class GroundingSource { vsc, vss };

// Dice of each object's grounding against its mask. VSC uses the per-patch
// confidence itself; VSS maps are min-max scaled to [0, 1] first.
inline EvalReport grounding_quality_eval(const Model& model, const std::vector<Scene>& scenes,
                                         GroundingSource source, std::size_t top_k = 10,
                                         VssSign sign = VssSign::raw, std::size_t jobs = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::vector<std::pair<double, std::size_t>>> per_scene(scenes.size());
  detail::parallel_for(scenes.size(), jobs, [&](std::size_t i) {
    const auto layout = make_layout(model.vocab, scenes[i].patches, "");
    const auto pre = prefill(model, layout);
    Vector vss_map;
    if (source == GroundingSource::vss) {
      vss_map = vss_raw(pre.visual_logits, top_k);
      if (sign == VssSign::flipped) vss_map = reflect_from_max(vss_map);
      const auto [lo, hi] = std::minmax_element(vss_map.begin(), vss_map.end());
      const float a = *lo, span = *hi - *lo;
      for (auto& v : vss_map) v = span > 0.0f ? (v - a) / span : 0.0f;
    }
    for (const auto& obj : scenes[i].objects) {
      const Vector c = source == GroundingSource::vsc
                           ? vsc_column(pre.visual_probs, model.vocab.id(obj.word))
                           : vss_map;
      std::size_t size = 0;
      for (float g : obj.overlaps) size += g > 0.0f ? 1 : 0;
      per_scene[i].push_back({dice(c, obj.overlaps), size});
    }
  });

  EvalReport r;
  r.kind = "grounding";
  r.items = scenes.size();
  auto& gq = r.grounding;
  double total = 0.0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const double m = static_cast<double>(scenes[i].grid.patches());
    for (const auto& [d, size] : per_scene[i]) {
      const double frac = static_cast<double>(size) / m;
      DiceBucket& b = frac <= 0.05 ? gq.small : (frac >= 0.25 ? gq.large : gq.medium);
      b.mean_dice += d;
      ++b.count;
      total += d;
      ++gq.pairs;
    }
  }
  for (DiceBucket* b : {&gq.small, &gq.medium, &gq.large})
    if (b->count) b->mean_dice /= static_cast<double>(b->count);
  gq.mean_dice = gq.pairs ? total / static_cast<double>(gq.pairs) : 0.0;
  r.elapsed_seconds = detail::seconds_since(t0);
  return r;
}

struct TtftPrompt {
  SequenceLayout layout;
  std::string text;
};

struct TtftStats {
  std::size_t prompts = 0;
  std::size_t runs = 0;
  std::size_t samples = 0;           // per arm: prompts * runs
  double vanilla_seconds = 0.0;      // mean TTFT
  double vga_seconds = 0.0;
  double overhead = 0.0;             // vga / vanilla - 1
  std::size_t vanilla_forward_passes = 0;
  std::size_t vga_forward_passes = 0;
  std::size_t vanilla_tokens_forwarded = 0;
  std::size_t vga_tokens_forwarded = 0;
};

// Strictly serial. Arms alternate per prompt so drift hits both equally.
inline TtftStats bench_ttft(const Model& model, const std::vector<TtftPrompt>& prompts,
                            const VgaConfig& config, std::size_t runs, bool vga_on_both_arms = false) {
  if (runs < 1) throw InvalidInput("bench_ttft: runs must be >= 1");
  if (prompts.empty()) throw InvalidInput("bench_ttft: no prompts");
  GenerationOptions gen;
  gen.max_len = 1;
  VgaConfig vanilla = config;
  vanilla.source = GuidanceSource::none;
  const VgaConfig& base = vga_on_both_arms ? config : vanilla;
  TtftStats st;
  st.prompts = prompts.size();
  st.runs = runs;
  auto once = [&](const TtftPrompt& p, const VgaConfig& cfg, double& acc, std::size_t& passes,
                  std::size_t& toks) {
    VgaSession s(model, p.layout, cfg, p.text);
    const auto out = greedy_generate(model, p.layout, &s, gen);
    acc += out.ttft_seconds;
    passes += out.forward_passes;
    toks += out.tokens_forwarded;
  };
  {
    double sink = 0;
    std::size_t a = 0, b = 0;
    once(prompts.front(), config, sink, a, b);  // warm-up
  }
  for (std::size_t r = 0; r < runs; ++r)
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const bool vga_first = (r + i) % 2 == 1;
      if (vga_first) once(prompts[i], config, st.vga_seconds, st.vga_forward_passes, st.vga_tokens_forwarded);
      once(prompts[i], base, st.vanilla_seconds, st.vanilla_forward_passes, st.vanilla_tokens_forwarded);
      if (!vga_first) once(prompts[i], config, st.vga_seconds, st.vga_forward_passes, st.vga_tokens_forwarded);
    }
  st.samples = runs * prompts.size();
  st.vanilla_seconds /= static_cast<double>(st.samples);
  st.vga_seconds /= static_cast<double>(st.samples);
  st.overhead = st.vanilla_seconds > 0 ? st.vga_seconds / st.vanilla_seconds - 1.0 : 0.0;
  return st;
}

}  // namespace vga
