#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "vga/decoder.hpp"
#include "vga/vga.hpp"

namespace vga {

struct GenerationOptions {
  std::size_t max_len = 512;
  AttentionPath path = AttentionPath::fused;
  bool stop_at_eos = true;
};

struct GenerationResult {
  std::vector<TokenId> tokens;
  std::size_t forward_passes = 0;
  std::size_t tokens_forwarded = 0;
  double ttft_seconds = 0.0;  // start of generation to first emitted token
  std::vector<Vector> logits;  // one row per generated token, only if requested
  std::vector<std::string> warnings;
};

// Greedy decoding (ties to the lowest id). With a session, the prefill builds
// the grounding from the visual logits, guides the last prompt row, and every
// generated token feeds programmed guidance before the next step.
inline GenerationResult greedy_generate(const Model& model, const SequenceLayout& layout,
                                        VgaSession* session, const GenerationOptions& gen = {},
                                        bool keep_logits = false) {
  if (gen.max_len < 1) throw InvalidInput("greedy_generate: max_len must be >= 1");
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  ForwardOptions fopt;
  fopt.path = gen.path;
  if (session) fopt.guide_all_rows = session->config().guide_all_rows;

  GenerationResult out;
  PrefillResult pre = prefill(model, layout, session, fopt);
  Vector logits = std::move(pre.last_logits);
  KvCache& cache = pre.cache;
  const TokenId eos = model.vocab.eos();
  for (std::size_t step = 0; step < gen.max_len; ++step) {
    const auto next = static_cast<TokenId>(argmax(logits));
    if (step == 0) out.ttft_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    out.tokens.push_back(next);
    if (keep_logits) out.logits.push_back(logits);
    if (gen.stop_at_eos && next == eos) break;
    if (step + 1 == gen.max_len) break;
    if (session) session->pvg_update(next);
    logits = decode_step(model, cache, next, session, fopt);
  }
  out.forward_passes = cache.forward_passes();
  out.tokens_forwarded = cache.tokens_forwarded();
  if (session) out.warnings = session->warnings();
  return out;
}

}  // namespace vga
