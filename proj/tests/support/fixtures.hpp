#pragma once

#include <random>
#include <string>
#include <vector>

#include "vga/decoder.hpp"
#include "vga/planted.hpp"

namespace fx {

inline vga::ModelConfig small_config(std::size_t layers = 3, std::size_t heads = 2, std::size_t d_head = 8,
                                     vga::GridShape grid = {2, 3}) {
  vga::ModelConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_head = d_head;
  c.d_model = heads * d_head;
  c.d_ff = 2 * c.d_model;
  c.grid = grid;
  c.vocab_size = vga::Vocabulary::standard().size();
  c.max_seq_len = 64;
  return c;
}

inline vga::Model small_random(std::uint64_t seed, vga::ModelConfig c = small_config()) {
  return vga::random_model(c, vga::Vocabulary::standard(), seed);
}

// Random patch concepts drawn from objects and backgrounds.
inline std::vector<std::string> random_patches(std::mt19937_64& rng, std::size_t m) {
  const auto& objs = vga::default_object_words();
  std::vector<std::string> p(m);
  std::uniform_int_distribution<std::size_t> pick(0, objs.size() + 3);
  for (auto& s : p) {
    const std::size_t k = pick(rng);
    s = k < objs.size() ? objs[k] : "bg" + std::to_string(k - objs.size());
  }
  return p;
}

inline std::string random_question(std::mt19937_64& rng) {
  const auto& objs = vga::default_object_words();
  const std::string a = objs[std::uniform_int_distribution<std::size_t>(0, objs.size() - 1)(rng)];
  static const std::vector<std::string> forms = {"is there a {} ?", "is there a {} in the image ?",
                                                 "any {} in this picture ?", "describe the {}"};
  std::string f = forms[std::uniform_int_distribution<std::size_t>(0, forms.size() - 1)(rng)];
  f.replace(f.find("{}"), 2, a);
  return f;
}

inline const vga::Model& planted(double sigma = 0.0) {
  static const vga::Model clean = vga::build_planted_model(vga::PlantedSpec{}, 7);
  static const vga::Model noisy = [] {
    vga::PlantedSpec s;
    s.sigma = 0.7;
    return vga::build_planted_model(s, 7);
  }();
  return sigma == 0.0 ? clean : noisy;
}

}  // namespace fx
