#pragma once

// vga_lab command line. Exit codes: 0 ok, 1 usage error, 2 runtime error.

#include <cctype>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vga/eval.hpp"
#include "vga/heatmap.hpp"
#include "vga/planted.hpp"
#include "vga/report.hpp"

namespace vga::cli {

struct VgaFlags {
  std::optional<double> beta;
  double lambda = 0.02;
  std::size_t start_layer = 0;
  std::optional<std::size_t> end_layer;
  std::size_t top_k = 10;
  std::string mode = "vqa";
  std::string guidance = "auto";
  std::string vss_sign = "raw";
  bool no_head_balance = false;
  bool no_early_term = false;
  bool no_pvg = false;
  bool guide_all_rows = false;

  void attach(CLI::App& app, bool with_mode = true) {
    app.add_option("--beta", beta, "guidance strength");
    app.add_option("--lambda", lambda, "programmed guidance rate");
    app.add_option("--start-layer", start_layer, "first guided layer");
    app.add_option("--end-layer", end_layer, "one past the last guided layer (default L/2)");
    app.add_option("--top-k", top_k, "K of the salience statistic");
    if (with_mode) app.add_option("--mode", mode, "vqa | caption");
    app.add_option("--guidance", guidance, "auto | none | even | vsc | vss | reversed_vss | ground_truth");
    app.add_option("--vss-sign", vss_sign, "raw | flipped");
    app.add_flag("--no-head-balance", no_head_balance, "fixed gamma = 1");
    app.add_flag("--no-early-term", no_early_term, "guide every layer from start-layer on");
    app.add_flag("--no-pvg", no_pvg, "static grounding while captioning");
    app.add_flag("--guide-all-rows", guide_all_rows, "guide every prompt row after the image");
  }

  VgaConfig resolve(double default_beta) const {
    VgaConfig c;
    c.beta = beta.value_or(default_beta);
    c.lambda = lambda;
    c.start_layer = start_layer;
    c.end_layer = end_layer;
    c.top_k = top_k;
    c.mode = parse_mode(mode);
    c.source = parse_source(guidance);
    c.vss_sign = parse_vss_sign(vss_sign);
    c.head_balancing = !no_head_balance;
    c.early_termination = !no_early_term;
    c.pvg_enabled = !no_pvg;
    c.guide_all_rows = guide_all_rows;
    return c;
  }
};

// Usage errors detected after parsing (bad enum values, inconsistent flags).
struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error("UsageError: " + m) {}
};

inline void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text << '\n';
    return;
  }
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text << '\n';
  if (!f) throw IoError("write to '" + path + "' failed");
}

inline std::vector<std::string> split_patches(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

// Image given either as a comma list of concepts or as a scene of a scene file.
struct ImageArgs {
  std::string scenes;
  std::size_t scene = 0;
  std::string patches;

  void attach(CLI::App& app) {
    app.add_option("--scenes", scenes, "scene file");
    app.add_option("--scene", scene, "scene index within --scenes");
    app.add_option("--patches", patches, "comma-separated patch concepts, row-major");
  }

  std::vector<std::string> resolve(std::optional<Scene>* scene_out = nullptr) const {
    if (!patches.empty()) return split_patches(patches);
    if (scenes.empty()) throw UsageError("need --scenes or --patches");
    auto all = load_scenes(scenes);
    if (scene >= all.size())
      throw UsageError("--scene " + std::to_string(scene) + " out of range (" + std::to_string(all.size()) +
                       " scenes)");
    if (scene_out) *scene_out = all[scene];
    return all[scene].patches;
  }
};

inline std::string words(const Vocabulary& v, const std::vector<TokenId>& toks) {
  std::string s;
  for (TokenId t : toks) {
    if (!s.empty()) s += ' ';
    s += v.word(t);
  }
  return s;
}

// CLI11 reports a missing required option before leftover arguments. Look
// for an unknown flag first so the message names what was mistyped.
inline std::string unknown_flag(CLI::App& app, int argc, const char* const* argv) {
  CLI::App* sub = nullptr;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (!sub) {
      sub = app.get_subcommand_no_throw(a);
      continue;
    }
    if (a.size() < 2 || a[0] != '-' || a == "--") continue;
    if (std::isdigit(static_cast<unsigned char>(a[1])) || a[1] == '.') continue;  // negative number
    const auto eq = a.find('=');
    if (eq != std::string::npos) a.resize(eq);
    if (a == "-h" || a == "--help") continue;
    if (!sub->get_option_no_throw(a)) return a;
  }
  return {};
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Vision-guided attention laboratory", "vga_lab"};
  app.require_subcommand(1);

  std::string model_path, out_path;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  // make-model
  auto* mk = app.add_subcommand("make-model", "write planted or random weights");
  std::string kind = "planted";
  PlantedSpec pspec;
  mk->add_option("--kind", kind, "planted | random")->check(CLI::IsMember({"planted", "random"}));
  mk->add_option("--sigma", pspec.sigma, "key noise of the planted model")->check(CLI::NonNegativeNumber);
  mk->add_option("--prior", pspec.prior, "language prior towards co-occurring objects");
  mk->add_option("--seed", seed);
  mk->add_option("--out", out_path)->required();

  // make-scenes
  auto* ms = app.add_subcommand("make-scenes", "write a synthetic scene file");
  SceneParams sparams;
  std::string sampling = "random";
  ms->add_option("--n", sparams.n_scenes, "number of scenes");
  ms->add_option("--rows", sparams.grid.rows);
  ms->add_option("--cols", sparams.grid.cols);
  ms->add_option("--min-objects", sparams.min_objects);
  ms->add_option("--max-objects", sparams.max_objects);
  ms->add_option("--sampling", sampling, "random | popular | adversarial")
      ->check(CLI::IsMember({"random", "popular", "adversarial"}));
  ms->add_option("--seed", seed);
  ms->add_option("--out", out_path)->required();

  // generate
  auto* gen = app.add_subcommand("generate", "greedy decoding of one prompt");
  VgaFlags gflags;
  gflags.guidance = "none";
  ImageArgs gimg;
  std::string prompt;
  std::size_t max_len = 512;
  bool explicit_path = false;
  gen->add_option("--model", model_path)->required();
  gimg.attach(*gen);
  gen->add_option("--prompt", prompt)->required();
  gen->add_option("--max-len", max_len);
  gen->add_flag("--explicit", explicit_path, "materialise attention weights");
  gen->add_option("--seed", seed);
  gen->add_option("--out", out_path);
  gflags.attach(*gen);

  // ground
  auto* gr = app.add_subcommand("ground", "grounding map as JSON plus a PGM heatmap");
  ImageArgs grimg;
  std::string word, source = "vsc", heatmap;
  std::size_t top_k = 10;
  std::string gr_sign = "raw";
  gr->add_option("--model", model_path)->required();
  grimg.attach(*gr);
  gr->add_option("--source", source, "vsc | vss")->check(CLI::IsMember({"vsc", "vss"}));
  gr->add_option("--word", word, "object word (vsc)");
  gr->add_option("--top-k", top_k);
  gr->add_option("--vss-sign", gr_sign)->check(CLI::IsMember({"raw", "flipped"}));
  gr->add_option("--heatmap", heatmap, "PGM output path");
  gr->add_option("--out", out_path);

  // profile-bos
  auto* pb = app.add_subcommand("profile-bos", "per-layer attention to BOS and suggested start layer");
  ImageArgs pbimg;
  std::string pb_prompt = "describe";
  double theta = 0.2;
  pb->add_option("--model", model_path)->required();
  pbimg.attach(*pb);
  pb->add_option("--prompt", pb_prompt);
  pb->add_option("--theta", theta);
  pb->add_option("--out", out_path);

  // eval-exist / eval-caption
  auto* ee = app.add_subcommand("eval-exist", "existence questions over a scene file");
  auto* ec = app.add_subcommand("eval-caption", "captions over a scene file");
  auto* eg = app.add_subcommand("eval-ground", "grounding Dice against scene masks");
  VgaFlags eflags, cflags;
  std::string scenes_path;
  std::size_t cap_len = 512;
  for (auto* sc : {ee, ec, eg}) {
    sc->add_option("--model", model_path)->required();
    sc->add_option("--scenes", scenes_path)->required();
    sc->add_option("--jobs", jobs)->check(CLI::PositiveNumber);
    sc->add_option("--seed", seed);
    sc->add_option("--out", out_path);
  }
  eflags.attach(*ee, false);
  cflags.attach(*ec, false);
  ec->add_option("--max-len", cap_len);
  std::string eg_source = "vsc", eg_sign = "raw";
  std::size_t eg_k = 10;
  eg->add_option("--source", eg_source)->check(CLI::IsMember({"vsc", "vss"}));
  eg->add_option("--top-k", eg_k);
  eg->add_option("--vss-sign", eg_sign)->check(CLI::IsMember({"raw", "flipped"}));

  // bench-ttft
  auto* bt = app.add_subcommand("bench-ttft", "time to first token, vanilla vs guided");
  VgaFlags bflags;
  std::size_t runs = 3, n_prompts = 100;
  bt->add_option("--model", model_path)->required();
  bt->add_option("--scenes", scenes_path)->required();
  bt->add_option("--runs", runs)->check(CLI::PositiveNumber);
  bt->add_option("--prompts", n_prompts)->check(CLI::PositiveNumber);
  bt->add_option("--seed", seed);
  bt->add_option("--out", out_path);
  bflags.attach(*bt, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    const auto bad = unknown_flag(app, argc, argv);
    if (!bad.empty()) err << "usage error: unknown flag " << bad << '\n';
    else err << "usage error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*mk) {
      Model m = kind == "planted" ? build_planted_model(pspec, seed)
                                  : random_model(build_planted_model(pspec, seed).config,
                                                 Vocabulary::standard(pspec.objects, pspec.n_background), seed);
      save_model(m, out_path);
      return 0;
    }
    if (*ms) {
      sparams.sampling = parse_sampling(sampling);
      save_scenes(make_scenes(sparams, seed), out_path);
      return 0;
    }
    if (*gen) {
      const Model m = load_model(model_path);
      const auto layout = make_layout(m.vocab, gimg.resolve(), prompt);
      VgaConfig cfg;
      try {
        cfg = gflags.resolve(0.2);
        cfg.validate(m.config.n_layers);
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      VgaSession session(m, layout, cfg, prompt);
      GenerationOptions go;
      go.max_len = max_len;
      go.path = explicit_path ? AttentionPath::explicit_weights : AttentionPath::fused;
      const auto res = greedy_generate(m, layout, &session, go);
      for (const auto& w : res.warnings) err << "warning: " << w << '\n';
      emit(words(m.vocab, res.tokens), out_path, out);
      return 0;
    }
    if (*gr) {
      const Model m = load_model(model_path);
      const auto layout = make_layout(m.vocab, grimg.resolve(), "");
      const auto pre = prefill(m, layout);
      Grounding g;
      if (source == "vsc") {
        if (word.empty()) throw UsageError("--word is required with --source vsc");
        if (!m.vocab.find(word)) throw UsageError("--word '" + word + "' is not in the vocabulary");
        g = object_grounding(pre.visual_logits, m.vocab.id(word));
      } else {
        g = vss(pre.visual_logits, top_k, parse_vss_sign(gr_sign));
      }
      if (!heatmap.empty()) export_heatmap(g, m.config.grid, heatmap);
      nlohmann::json j{{"source", source},
                       {"grid", {{"rows", m.config.grid.rows}, {"cols", m.config.grid.cols}}},
                       {"weights", g.weights},
                       {"rho", g.rho},
                       {"degenerate", g.degenerate}};
      if (source == "vsc") {
        j["word"] = word;
        j["image_confidence"] = image_confidence(pre.visual_logits, m.vocab.id(word));
        j["exists"] = exists(j["image_confidence"].get<double>());
      }
      emit(j.dump(1), out_path, out);
      return 0;
    }
    if (*pb) {
      const Model m = load_model(model_path);
      const auto layout = make_layout(m.vocab, pbimg.resolve(), pb_prompt);
      const Vector profile = bos_profile(m, layout);
      const auto s = suggest_start_layer(profile, theta);
      nlohmann::json j{{"profile", profile}, {"theta", theta}, {"suggested_start_layer", s.layer},
                       {"fallback", s.fallback}};
      if (s.fallback) err << "warning: no layer reaches theta; suggesting layer 0\n";
      emit(j.dump(1), out_path, out);
      return 0;
    }
    if (*ee || *ec || *eg) {
      const Model m = load_model(model_path);
      const auto scenes = load_scenes(scenes_path);
      EvalOptions eo;
      eo.jobs = jobs;
      eo.seed = seed;
      eo.max_len = cap_len;
      EvalReport r;
      if (*eg) {
        r = grounding_quality_eval(m, scenes, eg_source == "vsc" ? GroundingSource::vsc : GroundingSource::vss,
                                   eg_k, parse_vss_sign(eg_sign), jobs);
        r.seed = seed;
      } else {
        VgaConfig cfg;
        try {
          cfg = *ee ? eflags.resolve(kExistenceBeta) : cflags.resolve(0.2);
          cfg.mode = *ee ? TaskMode::vqa : TaskMode::caption;
          cfg.validate(m.config.n_layers);
        } catch (const ConfigError& e) {
          throw UsageError(e.what());
        }
        r = *ee ? run_existence_eval(m, scenes, cfg, eo) : run_caption_eval(m, scenes, cfg, eo);
      }
      emit(to_json(r, m.config.n_layers).dump(1), out_path, out);
      return 0;
    }
    if (*bt) {
      const Model m = load_model(model_path);
      const auto scenes = load_scenes(scenes_path);
      VgaConfig cfg;
      try {
        cfg = bflags.resolve(kExistenceBeta);
        cfg.mode = TaskMode::vqa;
        cfg.validate(m.config.n_layers);
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      std::vector<TtftPrompt> prompts;
      for (const auto& s : scenes)
        for (const auto& q : s.questions) {
          if (prompts.size() == n_prompts) break;
          const auto text = existence_prompt(q.word);
          prompts.push_back({make_layout(m.vocab, s.patches, text), text});
        }
      const auto st = bench_ttft(m, prompts, cfg, runs);
      auto j = to_json(st);
      j["config"] = to_json(cfg, m.config.n_layers);
      j["seed"] = seed;
      emit(j.dump(1), out_path, out);
      return 0;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace vga::cli
