#pragma once

#include <array>
#include <string>
#include <vector>

#include "emoattn/corpus_io.hpp"
#include "emoattn/rng.hpp"

namespace emoattn::synthetic {

// Keyword sets per emotion; the lexicon below lists them under joy,
// sadness and anger.
inline const std::array<std::vector<std::string>, 3> kKeywords = {{
    {"happy", "glad", "delighted", "joyful", "cheerful", "thrilled"},
    {"sad", "unhappy", "miserable", "gloomy", "heartbroken", "lonely"},
    {"angry", "furious", "annoyed", "irritated", "outraged", "mad"},
}};

inline const std::vector<std::string> kFiller = {
    "the",    "a",      "i",     "you",   "we",     "it",    "is",     "was",   "today", "really", "just",
    "so",     "feel",   "am",    "that",  "this",   "about", "with",   "my",    "your",  "day",    "work",
    "home",   "friend", "movie", "food",  "music",  "game",  "school", "night", "week",  "call",   "see",
    "think",  "know",   "get",   "went",  "going",  "there", "here",   "now",   "then",  "what",   "how",
    "why",    "when",   "maybe", "sure",  "okay",   "yes",   "no",     "well",  "also",  "still",  "again",
    "people", "time",   "thing", "place", "weather"};

struct DatasetOptions {
  std::size_t n = 2000;
  std::uint64_t seed = 7;
  double others_share = 0.4;     // remaining share split evenly over emotions
  double distractor_rate = 0.6;  // chance turn 2 carries another class's keyword
  std::size_t min_len = 3;
  std::size_t max_len = 7;
};

namespace detail {

inline std::string filler_sentence(Rng& rng, std::size_t min_len, std::size_t max_len) {
  const std::size_t len = min_len + rng.below(max_len - min_len + 1);
  std::string out;
  for (std::size_t i = 0; i < len; ++i) {
    if (i) out += ' ';
    out += kFiller[rng.below(kFiller.size())];
  }
  return out;
}

inline std::string with_word(Rng& rng, std::string sentence, const std::string& word) {
  std::vector<std::string> words;
  std::size_t start = 0;
  while (start <= sentence.size()) {
    const auto sp = sentence.find(' ', start);
    words.push_back(sentence.substr(start, sp == std::string::npos ? std::string::npos : sp - start));
    if (sp == std::string::npos) break;
    start = sp + 1;
  }
  words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), word);
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) out += (i ? " " : "") + words[i];
  return out;
}

}  // namespace detail

/// Labeled conversations: an emotion's keyword is planted in turn 3,
/// turn 2 may carry a keyword of a different emotion, turn 1 is filler.
inline std::vector<ConversationRecord> make_dataset(const DatasetOptions& opt) {
  Rng rng = Rng(opt.seed).split("synthetic-dataset");
  std::vector<ConversationRecord> out;
  out.reserve(opt.n);
  for (std::size_t i = 0; i < opt.n; ++i) {
    Rng r = rng.split(i);
    ConversationRecord rec;
    rec.id = "s" + std::to_string(i);
    Emotion label = Emotion::others;
    if (!r.bernoulli(opt.others_share)) label = kEmotionClasses[r.below(3)];
    rec.label = label;
    rec.turns[0] = detail::filler_sentence(r, opt.min_len, opt.max_len);
    rec.turns[1] = detail::filler_sentence(r, opt.min_len, opt.max_len);
    rec.turns[2] = detail::filler_sentence(r, opt.min_len, opt.max_len);
    const auto k = static_cast<std::size_t>(label);
    if (r.bernoulli(opt.distractor_rate)) {
      std::size_t other = r.below(3);
      if (label != Emotion::others && other == k) other = (other + 1 + r.below(2)) % 3;
      rec.turns[1] = detail::with_word(r, rec.turns[1], kKeywords[other][r.below(kKeywords[other].size())]);
    }
    if (label != Emotion::others) {
      rec.turns[2] = detail::with_word(r, rec.turns[2], kKeywords[k][r.below(kKeywords[k].size())]);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

/// Plain sentences over the same words, for language-model pretraining.
inline std::vector<std::string> make_corpus(std::size_t n_lines, std::uint64_t seed) {
  Rng rng = Rng(seed).split("synthetic-corpus");
  std::vector<std::string> out;
  out.reserve(n_lines);
  for (std::size_t i = 0; i < n_lines; ++i) {
    Rng r = rng.split(i);
    std::string s = detail::filler_sentence(r, 4, 10);
    if (r.bernoulli(0.3)) {
      const auto& set = kKeywords[r.below(3)];
      s = detail::with_word(r, s, set[r.below(set.size())]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Lexicon rows (word, emotion, flag) listing every keyword under its
/// emotion, plus zero-flag rows for filler words.
inline std::string lexicon_text() {
  static const std::array<const char*, 3> names = {"joy", "sadness", "anger"};
  std::string out;
  for (std::size_t k = 0; k < 3; ++k) {
    for (const auto& w : kKeywords[k]) {
      for (std::size_t j = 0; j < 3; ++j) out += w + "\t" + names[j] + "\t" + (j == k ? "1" : "0") + "\n";
    }
  }
  for (const auto& w : kFiller) out += w + "\tjoy\t0\n";
  return out;
}

}  // namespace emoattn::synthetic
