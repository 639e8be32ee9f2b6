#pragma once

// Weights of the toy visual-prefix decoder and the manifest+blob container.
//
// File layout:
//   u64 LE   manifest length N
//   N bytes  UTF-8 JSON manifest {name -> {shape, dtype:"f32", offset, length}}
//   blob     raw little-endian f32 data, offsets relative to blob start
// The manifest also carries a "__meta__" entry with the config and word table.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "vga/errors.hpp"
#include "vga/numerics.hpp"
#include "vga/vocab.hpp"

namespace vga {

static_assert(std::endian::native == std::endian::little,
              "weight files are little-endian f32; big-endian hosts are unsupported");

struct GridShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t patches() const { return rows * cols; }
  bool operator==(const GridShape&) const = default;
};

struct ModelConfig {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t d_model = 0;
  std::size_t d_head = 0;
  std::size_t d_ff = 0;
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 0;
  GridShape grid;

  void validate() const {
    if (n_layers < 1) throw InvalidSpec("n_layers must be >= 1");
    if (n_heads < 1) throw InvalidSpec("n_heads must be >= 1");
    if (d_model != n_heads * d_head)
      throw InvalidSpec("d_model must equal n_heads * d_head");
    if (d_ff < 1) throw InvalidSpec("d_ff must be >= 1");
    if (vocab_size < 4) throw InvalidSpec("vocab_size must be >= 4");
    if (grid.patches() < 1) throw InvalidSpec("grid must have at least one patch");
    if (max_seq_len < grid.patches() + 2) throw InvalidSpec("max_seq_len too small for grid");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
  Matrix wq, wk, wv, wo;  // d_model x d_model, x * W convention
  Vector norm1, norm2;    // pre-attention / pre-MLP RMSNorm gains
  Matrix mlp_w1;          // d_model x d_ff
  Matrix mlp_w2;          // d_ff x d_model
  bool operator==(const LayerWeights&) const = default;
};

struct Model {
  ModelConfig config;
  Vocabulary vocab;
  Matrix tok_embed;  // V x d_model
  Matrix pos_embed;  // max_seq_len x d_model
  std::vector<LayerWeights> layers;
  Matrix unembed;  // d_model x V

  std::size_t visual_count() const { return config.grid.patches(); }

  void validate() const {
    config.validate();
    const auto d = config.d_model;
    auto check = [](const Matrix& m, std::size_t r, std::size_t c, const std::string& name) {
      if (m.rows() != r || m.cols() != c)
        throw ShapeError(name + " has shape " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + ", expected " + std::to_string(r) + "x" +
                         std::to_string(c));
      require_finite(m.data(), name.c_str());
    };
    if (vocab.size() != config.vocab_size) throw ShapeError("vocabulary size differs from config");
    check(tok_embed, config.vocab_size, d, "embed.tok");
    check(pos_embed, config.max_seq_len, d, "embed.pos");
    check(unembed, d, config.vocab_size, "unembed");
    if (layers.size() != config.n_layers) throw ShapeError("layer count differs from config");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto p = "layers." + std::to_string(i) + ".";
      const auto& l = layers[i];
      check(l.wq, d, d, p + "wq");
      check(l.wk, d, d, p + "wk");
      check(l.wv, d, d, p + "wv");
      check(l.wo, d, d, p + "wo");
      if (l.norm1.size() != d || l.norm2.size() != d) throw ShapeError(p + "norm gain length");
      require_finite(l.norm1, (p + "norm1").c_str());
      require_finite(l.norm2, (p + "norm2").c_str());
      check(l.mlp_w1, d, config.d_ff, p + "mlp.w1");
      check(l.mlp_w2, config.d_ff, d, p + "mlp.w2");
    }
  }

  bool operator==(const Model& o) const {
    return config == o.config && vocab.words() == o.vocab.words() &&
           vocab.objects() == o.vocab.objects() && tok_embed == o.tok_embed &&
           pos_embed == o.pos_embed && layers == o.layers && unembed == o.unembed;
  }
};

// Zero-initialised model with unit norm gains.
inline Model empty_model(const ModelConfig& cfg, Vocabulary vocab) {
  cfg.validate();
  Model m;
  m.config = cfg;
  m.vocab = std::move(vocab);
  const auto d = cfg.d_model;
  m.tok_embed = Matrix(cfg.vocab_size, d);
  m.pos_embed = Matrix(cfg.max_seq_len, d);
  m.unembed = Matrix(d, cfg.vocab_size);
  m.layers.resize(cfg.n_layers);
  for (auto& l : m.layers) {
    l.wq = l.wk = l.wv = l.wo = Matrix(d, d);
    l.norm1.assign(d, 1.0f);
    l.norm2.assign(d, 1.0f);
    l.mlp_w1 = Matrix(d, cfg.d_ff);
    l.mlp_w2 = Matrix(cfg.d_ff, d);
  }
  return m;
}

// Gaussian-initialised model (std scaled by 1/sqrt(fan_in)); useful for
// property tests that must not depend on the planted construction.
inline Model random_model(const ModelConfig& cfg, Vocabulary vocab, std::uint64_t seed) {
  Model m = empty_model(cfg, std::move(vocab));
  std::mt19937_64 rng(seed);
  auto fill = [&rng](Matrix& w, double stddev) {
    std::normal_distribution<float> dist(0.0f, static_cast<float>(stddev));
    for (auto& x : w.data()) x = dist(rng);
  };
  const double d = static_cast<double>(cfg.d_model);
  fill(m.tok_embed, 1.0);
  fill(m.pos_embed, 0.5);
  fill(m.unembed, 1.0 / std::sqrt(d));
  for (auto& l : m.layers) {
    fill(l.wq, 1.0 / std::sqrt(d));
    fill(l.wk, 1.0 / std::sqrt(d));
    fill(l.wv, 1.0 / std::sqrt(d));
    fill(l.wo, 1.0 / std::sqrt(d));
    fill(l.mlp_w1, 1.0 / std::sqrt(d));
    fill(l.mlp_w2, 1.0 / std::sqrt(static_cast<double>(cfg.d_ff)));
    std::uniform_real_distribution<float> g(0.8f, 1.2f);
    for (auto& x : l.norm1) x = g(rng);
    for (auto& x : l.norm2) x = g(rng);
  }
  return m;
}

namespace detail {

template <typename Float>
struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  Float* data;
  std::size_t count;
};

// Canonical tensor order and names; works on const and mutable models.
template <typename M>
auto tensor_table(M& m) {
  using Float = std::conditional_t<std::is_const_v<M>, const float, float>;
  std::vector<NamedTensor<Float>> t;
  auto add_m = [&t](std::string n, auto& x) {
    t.push_back({std::move(n), {x.rows(), x.cols()}, x.data().data(), x.size()});
  };
  auto add_v = [&t](std::string n, auto& x) {
    t.push_back({std::move(n), {x.size()}, x.data(), x.size()});
  };
  add_m("embed.tok", m.tok_embed);
  add_m("embed.pos", m.pos_embed);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto p = "layers." + std::to_string(i) + ".";
    auto& l = m.layers[i];
    add_m(p + "wq", l.wq);
    add_m(p + "wk", l.wk);
    add_m(p + "wv", l.wv);
    add_m(p + "wo", l.wo);
    add_v(p + "norm1", l.norm1);
    add_v(p + "norm2", l.norm2);
    add_m(p + "mlp.w1", l.mlp_w1);
    add_m(p + "mlp.w2", l.mlp_w2);
  }
  add_m("unembed", m.unembed);
  return t;
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers}, {"n_heads", c.n_heads},     {"d_model", c.d_model},
          {"d_head", c.d_head},     {"d_ff", c.d_ff},           {"vocab_size", c.vocab_size},
          {"max_seq_len", c.max_seq_len}, {"grid", {c.grid.rows, c.grid.cols}}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_head = j.at("d_head").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.grid.rows = j.at("grid").at(0).get<std::size_t>();
  c.grid.cols = j.at("grid").at(1).get<std::size_t>();
  return c;
}

}  // namespace detail

inline void save_model(const Model& model, const std::string& path) {
  model.validate();
  nlohmann::json manifest = nlohmann::json::object();
  std::uint64_t offset = 0;
  const auto table = detail::tensor_table(model);
  for (const auto& t : table) {
    const std::uint64_t len = t.count * sizeof(float);
    manifest[t.name] = {{"shape", t.shape}, {"dtype", "f32"}, {"offset", offset}, {"length", len}};
    offset += len;
  }
  manifest["__meta__"] = {{"config", detail::config_to_json(model.config)},
                          {"words", model.vocab.words()},
                          {"objects", model.vocab.objects()}};
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const std::uint64_t n = text.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : table)
    out.write(reinterpret_cast<const char*>(t.data), static_cast<std::streamsize>(t.count * sizeof(float)));
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(std::uint64_t)) throw FormatError("file shorter than header");
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data(), sizeof n);
  if (n > bytes.size() - sizeof n) throw FormatError("manifest length exceeds file size");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + sizeof n, bytes.begin() + static_cast<std::ptrdiff_t>(sizeof n + n));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  const char* blob = bytes.data() + sizeof n + n;
  const std::size_t blob_size = bytes.size() - sizeof n - n;

  if (!manifest.is_object() || !manifest.contains("__meta__"))
    throw FormatError("manifest lacks __meta__ entry");
  Model model;
  try {
    const auto& meta = manifest.at("__meta__");
    model.config = detail::config_from_json(meta.at("config"));
    model.vocab = Vocabulary(meta.at("words").get<std::vector<std::string>>(),
                             meta.at("objects").get<std::vector<std::string>>());
    model = empty_model(model.config, model.vocab);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed __meta__: ") + e.what());
  } catch (const InvalidSpec& e) {
    throw FormatError(std::string("invalid __meta__: ") + e.what());
  }

  for (const auto& t : detail::tensor_table(model)) {
    if (!manifest.contains(t.name)) throw FormatError("tensor '" + t.name + "' missing from manifest");
    const auto& e = manifest.at(t.name);
    std::vector<std::size_t> shape;
    std::uint64_t off = 0, len = 0;
    try {
      if (e.at("dtype").get<std::string>() != "f32")
        throw FormatError("tensor '" + t.name + "' has unsupported dtype");
      shape = e.at("shape").get<std::vector<std::size_t>>();
      off = e.at("offset").get<std::uint64_t>();
      len = e.at("length").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError("tensor '" + t.name + "' entry malformed: " + ex.what());
    }
    if (shape != t.shape) throw FormatError("tensor '" + t.name + "' shape disagrees with config");
    if (len != t.count * sizeof(float))
      throw FormatError("tensor '" + t.name + "' length disagrees with shape");
    if (off > blob_size || len > blob_size - off)
      throw FormatError("tensor '" + t.name + "' extends past end of blob (truncated file?)");
    std::memcpy(t.data, blob + off, len);
  }
  try {
    model.validate();
  } catch (const Error& e) {
    throw FormatError(e.what());
  }
  return model;
}

}  // namespace vga
