#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "emoattn/error.hpp"
#include "emoattn/unicode.hpp"

namespace emoattn {

enum class Emotion { happy = 0, sad = 1, angry = 2, others = 3 };

inline constexpr std::size_t kNumClasses = 4;
inline constexpr std::array<Emotion, 3> kEmotionClasses = {Emotion::happy, Emotion::sad, Emotion::angry};

inline std::string_view emotion_name(Emotion e) {
  static constexpr std::array<std::string_view, 4> names = {"happy", "sad", "angry", "others"};
  return names[static_cast<std::size_t>(e)];
}

inline std::optional<Emotion> parse_emotion(std::string_view s) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (emotion_name(static_cast<Emotion>(i)) == s) return static_cast<Emotion>(i);
  }
  return std::nullopt;
}

/// Lexicon categories retained from word/emotion/flag association tables.
enum class LexEmotion { joy = 0, sadness = 1, anger = 2 };

inline std::string_view lex_emotion_name(LexEmotion e) {
  static constexpr std::array<std::string_view, 3> names = {"joy", "sadness", "anger"};
  return names[static_cast<std::size_t>(e)];
}

/// One three-turn exchange: turns 1 and 3 by the same speaker.
struct ConversationRecord {
  std::string id;
  std::array<std::string, 3> turns;
  std::optional<Emotion> label;

  friend bool operator==(const ConversationRecord&, const ConversationRecord&) = default;
};

struct EmotionLexicon {
  std::map<std::string, std::set<LexEmotion>> entries;

  bool contains(const std::string& word, LexEmotion e) const {
    auto it = entries.find(word);
    return it != entries.end() && it->second.count(e) > 0;
  }
  std::size_t size() const { return entries.size(); }
};

namespace detail {

inline std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      cols.emplace_back(line.substr(start));
      break;
    }
    cols.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cols;
}

inline void chomp(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

}  // namespace detail

/// Parses `id<TAB>turn1<TAB>turn2<TAB>turn3[<TAB>label]` rows after a header
/// line. With has_labels the label column is required; without it a label
/// column, if present, is ignored.
inline std::vector<ConversationRecord> read_conversations(std::istream& in, bool has_labels,
                                                          const std::string& source = "<stream>") {
  std::vector<ConversationRecord> out;
  std::string line;
  if (!std::getline(in, line)) return out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    detail::chomp(line);
    if (line.empty()) continue;
    auto cols = detail::split_tabs(line);
    const bool ok = has_labels ? cols.size() == 5 : (cols.size() == 4 || cols.size() == 5);
    if (!ok) {
      throw ParseError(source + ": line " + std::to_string(lineno) + ": expected " + (has_labels ? "5" : "4") +
                       " tab-separated columns, found " + std::to_string(cols.size()));
    }
    ConversationRecord rec;
    rec.id = cols[0];
    rec.turns = {cols[1], cols[2], cols[3]};
    if (has_labels) {
      rec.label = parse_emotion(cols[4]);
      if (!rec.label) {
        throw ParseError(source + ": line " + std::to_string(lineno) + ": unknown label '" + cols[4] + "'");
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<ConversationRecord> load_conversations(const std::filesystem::path& path, bool has_labels) {
  auto in = detail::open_input(path);
  return read_conversations(in, has_labels, path.string());
}

inline void write_conversations(std::ostream& out, const std::vector<ConversationRecord>& records, bool with_labels) {
  out << "id\tturn1\tturn2\tturn3" << (with_labels ? "\tlabel" : "") << "\n";
  for (const auto& r : records) {
    for (const auto& t : r.turns) {
      if (t.find_first_of("\t\n") != std::string::npos) {
        throw Error("conversation " + r.id + ": turns may not contain tabs or newlines");
      }
    }
    out << r.id << "\t" << r.turns[0] << "\t" << r.turns[1] << "\t" << r.turns[2];
    if (with_labels) {
      if (!r.label) throw Error("conversation " + r.id + " has no label");
      out << "\t" << emotion_name(*r.label);
    }
    out << "\n";
  }
}

inline void save_conversations(const std::filesystem::path& path, const std::vector<ConversationRecord>& records,
                               bool with_labels) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_conversations(out, records, with_labels);
}

inline EmotionLexicon read_lexicon(std::istream& in, const std::string& source = "<stream>") {
  EmotionLexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    detail::chomp(line);
    if (line.empty()) continue;
    auto cols = detail::split_tabs(line);
    if (cols.size() != 3 || cols[0].empty() || (cols[2] != "0" && cols[2] != "1")) {
      throw ParseError(source + ": line " + std::to_string(lineno) + ": expected word<TAB>emotion<TAB>0|1");
    }
    if (cols[2] != "1") continue;
    std::optional<LexEmotion> e;
    if (cols[1] == "joy") e = LexEmotion::joy;
    if (cols[1] == "sadness") e = LexEmotion::sadness;
    if (cols[1] == "anger") e = LexEmotion::anger;
    if (!e) continue;
    lex.entries[unicode::lower(cols[0])].insert(*e);
  }
  return lex;
}

inline EmotionLexicon load_lexicon(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return read_lexicon(in, path.string());
}

/// Non-blank lines of a plain-text corpus, in file order.
inline std::vector<std::string> load_corpus(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    detail::chomp(line);
    if (line.find_first_not_of(" \t\f\v") == std::string::npos) continue;
    lines.push_back(line);
  }
  if (in.bad()) throw IoError("error reading " + path.string());
  return lines;
}

}  // namespace emoattn
