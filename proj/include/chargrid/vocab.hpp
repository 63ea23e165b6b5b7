#pragma once

#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "chargrid/doc.hpp"

namespace chargrid {

// Character encoding E: dense indices with two reserved slots.
// Index 0 is background/padding, index 1 the unknown character; real
// characters occupy [2, n_classes). Characters are case-folded before
// counting and lookup.
struct Vocabulary {
  static constexpr int kBackground = 0;
  static constexpr int kUnknown = 1;

  std::map<char32_t, int> char_to_index;
  int n_classes = 54;

  int encode(char32_t c) const {
    const auto it = char_to_index.find(fold_char(c));
    return it == char_to_index.end() ? kUnknown : it->second;
  }

  bool operator==(const Vocabulary&) const = default;
};

inline void validate_vocabulary(const Vocabulary& v) {
  check(v.n_classes >= 3, "vocabulary needs n_classes >= 3");
  check(static_cast<int>(v.char_to_index.size()) <= v.n_classes - 2,
        "vocabulary holds more characters than n_classes allows");
  std::vector<bool> used(static_cast<std::size_t>(v.n_classes), false);
  for (const auto& [ch, idx] : v.char_to_index) {
    check(idx >= 2 && idx < v.n_classes, "vocabulary index out of range");
    check(!used[static_cast<std::size_t>(idx)], "vocabulary index used twice");
    used[static_cast<std::size_t>(idx)] = true;
  }
}

// The (n_classes - 2) most frequent characters get indices 2..n_classes-1 in
// descending frequency order; frequency ties break by code point ascending.
inline Vocabulary build_vocabulary(std::span<const DocumentPage> corpus, int n_classes) {
  check(n_classes >= 3, "build_vocabulary: n_classes must be >= 3 (got " +
                            std::to_string(n_classes) + ")");
  check(!corpus.empty(), "build_vocabulary: empty corpus");
  std::map<char32_t, std::int64_t> counts;
  for (const DocumentPage& page : corpus) {
    for (const CharBox& c : page.chars) counts[fold_char(c.ch)]++;
  }
  check(!counts.empty(), "build_vocabulary: corpus contains no characters");

  std::vector<std::pair<char32_t, std::int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  v.n_classes = n_classes;
  const std::size_t slots = static_cast<std::size_t>(n_classes - 2);
  for (std::size_t i = 0; i < ranked.size() && i < slots; ++i) {
    v.char_to_index[ranked[i].first] = static_cast<int>(i) + 2;
  }
  return v;
}

inline nlohmann::json vocabulary_to_json(const Vocabulary& v) {
  nlohmann::json jmap = nlohmann::json::object();
  for (const auto& [ch, idx] : v.char_to_index) jmap[utf8_encode(ch)] = idx;
  return nlohmann::json{{"version", 1}, {"n_classes", v.n_classes}, {"map", jmap}};
}

inline Vocabulary vocabulary_from_json(const nlohmann::json& j) {
  check(j.value("version", 0) == 1, "unsupported vocabulary version");
  Vocabulary v;
  v.n_classes = j.at("n_classes").get<int>();
  for (const auto& [key, val] : j.at("map").items()) {
    const std::u32string cs = utf8_decode(key);
    check(cs.size() == 1, "vocabulary key must be one code point: " + key);
    v.char_to_index[cs[0]] = val.get<int>();
  }
  validate_vocabulary(v);
  return v;
}

inline void save_vocabulary(const Vocabulary& v, const std::string& path) {
  std::ofstream f(path);
  check(f.good(), "cannot open for write: " + path);
  f << vocabulary_to_json(v).dump(2) << "\n";
  check(f.good(), "write failed: " + path);
}

inline Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "cannot open: " + path);
  nlohmann::json j;
  f >> j;
  return vocabulary_from_json(j);
}

}  // namespace chargrid
