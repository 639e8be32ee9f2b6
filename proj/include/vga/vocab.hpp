#pragma once

// Fixed integer-id vocabulary with a word table. Visual patches are fed to the
// decoder as image-concept tokens ("<img:dog>", "<img:bg0>") that live in the
// same id space as text.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vga/errors.hpp"

namespace vga {

using TokenId = std::int32_t;

namespace tok {
inline constexpr std::string_view kBos = "<bos>";
inline constexpr std::string_view kEos = "<eos>";
inline constexpr std::string_view kUnk = "<unk>";
inline constexpr std::string_view kYes = "yes";
inline constexpr std::string_view kNo = "no";
inline constexpr std::string_view kQuestion = "?";
inline constexpr std::string_view kDescribe = "describe";
inline constexpr std::string_view kImagePrefix = "<img:";
}  // namespace tok

// Default object inventory and the co-occurrence partner used for
// "adversarial" negative sampling and for the planted language prior.
inline const std::vector<std::string>& default_object_words() {
  static const std::vector<std::string> words = {
      "dog", "cat", "car", "bus", "tree", "bench",
      "person", "bicycle", "bird", "kite", "cup", "chair"};
  return words;
}

inline const std::vector<std::string>& default_filler_words() {
  static const std::vector<std::string> words = {
      "is", "there", "a", "an", "the", "in", "image", "of", "and", "any", "this", "picture"};
  return words;
}

class Vocabulary {
 public:
  Vocabulary() = default;

  // Layout: specials, fillers, object words, image tokens for every object,
  // then `n_background` background image tokens.
  static Vocabulary standard(const std::vector<std::string>& objects = default_object_words(),
                             std::size_t n_background = 4) {
    std::vector<std::string> words;
    for (auto s : {tok::kBos, tok::kEos, tok::kUnk, tok::kYes, tok::kNo, tok::kQuestion,
                   tok::kDescribe})
      words.emplace_back(s);
    for (const auto& f : default_filler_words()) words.push_back(f);
    for (const auto& o : objects) words.push_back(o);
    for (const auto& o : objects) words.push_back(image_token_name(o));
    for (std::size_t i = 0; i < n_background; ++i)
      words.push_back(image_token_name(background_concept(i)));
    return Vocabulary(std::move(words), objects);
  }

  Vocabulary(std::vector<std::string> words, std::vector<std::string> objects)
      : words_(std::move(words)), objects_(std::move(objects)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], static_cast<TokenId>(i)).second)
        throw InvalidSpec("duplicate vocabulary word '" + words_[i] + "'");
    }
    for (const auto& o : objects_) {
      if (!index_.count(o)) throw InvalidSpec("object word '" + o + "' not in vocabulary");
      object_ids_.push_back(index_.at(o));
    }
  }

  static std::string image_token_name(std::string_view concept_name) {
    return std::string(tok::kImagePrefix) + std::string(concept_name) + ">";
  }
  static std::string background_concept(std::size_t i) { return "bg" + std::to_string(i); }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::string>& objects() const { return objects_; }
  const std::vector<TokenId>& object_ids() const { return object_ids_; }

  const std::string& word(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
      throw IndexError("token id " + std::to_string(id) + " out of range");
    return words_[static_cast<std::size_t>(id)];
  }

  std::optional<TokenId> find(std::string_view w) const {
    auto it = index_.find(std::string(w));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  TokenId id(std::string_view w) const {
    auto f = find(w);
    if (!f) throw InvalidSpec("word '" + std::string(w) + "' not in vocabulary");
    return *f;
  }

  bool is_object(TokenId id) const {
    return std::find(object_ids_.begin(), object_ids_.end(), id) != object_ids_.end();
  }

  TokenId bos() const { return id(tok::kBos); }
  TokenId eos() const { return id(tok::kEos); }
  TokenId yes() const { return id(tok::kYes); }
  TokenId no() const { return id(tok::kNo); }

  // Token for a visual patch carrying `concept_name` (an object word or "bgN").
  TokenId image_token(std::string_view concept_name) const {
    auto f = find(image_token_name(concept_name));
    if (!f) throw InvalidSpec("no image token for concept '" + std::string(concept_name) + "'");
    return *f;
  }

  // Lower-cases, splits on anything that is not alphanumeric and keeps '?'
  // as its own token. Unknown words map to <unk>.
  std::vector<TokenId> tokenize(std::string_view text) const {
    std::vector<TokenId> out;
    std::string cur;
    auto flush = [&] {
      if (cur.empty()) return;
      auto f = find(cur);
      out.push_back(f ? *f : id(tok::kUnk));
      cur.clear();
    };
    for (char ch : text) {
      const auto c = static_cast<unsigned char>(ch);
      if (std::isalnum(c)) {
        cur.push_back(static_cast<char>(std::tolower(c)));
      } else {
        flush();
        if (ch == '?') out.push_back(id(tok::kQuestion));
      }
    }
    flush();
    return out;
  }

 private:
  std::vector<std::string> words_;
  std::vector<std::string> objects_;
  std::vector<TokenId> object_ids_;
  std::unordered_map<std::string, TokenId> index_;
};

// Fixed pairing used for adversarial negatives and the planted language prior.
inline std::string cooccurrence_partner(const std::vector<std::string>& objects,
                                        std::string_view word) {
  auto it = std::find(objects.begin(), objects.end(), word);
  if (it == objects.end()) throw InvalidSpec("unknown object '" + std::string(word) + "'");
  const auto i = static_cast<std::size_t>(it - objects.begin());
  const std::size_t j = (i % 2 == 0) ? i + 1 : i - 1;
  return j < objects.size() ? objects[j] : objects[0];
}

}  // namespace vga
