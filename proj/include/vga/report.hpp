#pragma once

// JSON forms of configs and reports. Wall-clock data lives under "timestamps"
// so two runs can be compared by dropping that key.

#include <chrono>
#include <ctime>
#include <string>

#include <json.hpp>

#include "vga/eval.hpp"

namespace vga {

inline nlohmann::json to_json(const VgaConfig& c, std::size_t n_layers) {
  return {{"beta", c.beta},
          {"lambda", c.lambda},
          {"start_layer", c.start_layer},
          {"end_layer", c.resolved_end(n_layers)},
          {"top_k", c.top_k},
          {"exist_threshold", c.exist_threshold},
          {"mode", to_string(c.mode)},
          {"guidance", to_string(c.source)},
          {"resolved_guidance", to_string(c.resolved_source())},
          {"head_balancing", c.head_balancing},
          {"early_termination", c.early_termination},
          {"pvg_enabled", c.pvg_enabled},
          {"pvg_content_only", c.pvg_content_only},
          {"vss_sign", to_string(c.vss_sign)},
          {"guide_all_rows", c.guide_all_rows}};
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json to_json(const GroundingQuality& g) {
  auto bucket = [](const DiceBucket& b) { return nlohmann::json{{"mean_dice", b.mean_dice}, {"count", b.count}}; };
  return {{"mean_dice", g.mean_dice},
          {"pairs", g.pairs},
          {"small", bucket(g.small)},
          {"medium", bucket(g.medium)},
          {"large", bucket(g.large)}};
}

inline nlohmann::json to_json(const EvalReport& r, std::size_t n_layers) {
  nlohmann::json j;
  j["kind"] = r.kind;
  j["items"] = r.items;
  if (r.kind == "existence") {
    j["accuracy"] = r.accuracy;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
    j["counts"] = {{"tp", r.tp}, {"fp", r.fp}, {"tn", r.tn}, {"fn", r.fn}, {"unmapped", r.unmapped}};
  } else if (r.kind == "caption") {
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
    j["chair_s"] = r.chair.chair_s;
    j["chair_i"] = r.chair.chair_i;
    j["amber"] = {{"chair", r.amber.chair},
                  {"cover", r.amber.cover},
                  {"hal", r.amber.hal},
                  {"cog", r.amber.cog},
                  {"score", r.amber.amber}};
    j["mean_objects"] = r.mean_objects;
    j["generated"] = nlohmann::json::array();
    for (const auto& g : r.generated) j["generated"].push_back(g);
  } else if (r.kind == "grounding") {
    j["grounding"] = to_json(r.grounding);
  }
  if (r.kind != "grounding") j["config"] = to_json(r.config, n_layers);
  j["seed"] = r.seed;
  j["warnings"] = r.warnings;
  j["timestamps"] = {{"finished", utc_now()}, {"elapsed_seconds", r.elapsed_seconds}};
  return j;
}

inline nlohmann::json to_json(const TtftStats& s) {
  return {{"prompts", s.prompts},
          {"runs", s.runs},
          {"samples_per_arm", s.samples},
          {"forward_passes", {{"vanilla", s.vanilla_forward_passes}, {"vga", s.vga_forward_passes}}},
          {"tokens_forwarded", {{"vanilla", s.vanilla_tokens_forwarded}, {"vga", s.vga_tokens_forwarded}}},
          {"timestamps",
           {{"finished", utc_now()},
            {"vanilla_ttft_seconds", s.vanilla_seconds},
            {"vga_ttft_seconds", s.vga_seconds},
            {"overhead", s.overhead}}}};
}

}  // namespace vga
