#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "emoattn/corpus_io.hpp"
#include "emoattn/error.hpp"
#include "emoattn/unicode.hpp"

namespace emoattn {

inline constexpr std::array<std::string_view, 6> kReservedTokens = {"<pad>", "<unk>", "<bos>",
                                                                    "<maj>", "<up>",  "<rep>"};
inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kBosId = 2;
inline constexpr std::size_t kNumReserved = kReservedTokens.size();

inline bool is_reserved_token(std::string_view tok) {
  return std::find(kReservedTokens.begin(), kReservedTokens.end(), tok) != kReservedTokens.end();
}

/// NFC normalization, whitespace runs collapsed to one space, ends trimmed.
inline std::string normalize_text(std::string_view text) {
  const auto cps = unicode::decode(unicode::nfc(text));
  std::vector<char32_t> out;
  bool pending_space = false;
  for (char32_t c : cps) {
    if (unicode::is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(U' ');
    pending_space = false;
    out.push_back(c);
  }
  return unicode::encode(out);
}

namespace detail {

inline void emit_word(const std::vector<char32_t>& word, std::vector<std::string>& out) {
  if (word.empty()) return;
  std::vector<char32_t> collapsed;
  std::vector<std::size_t> runs;
  for (std::size_t i = 0; i < word.size();) {
    std::size_t j = i + 1;
    while (j < word.size() && unicode::to_lower(word[j]) == unicode::to_lower(word[i])) ++j;
    const std::size_t n = j - i;
    if (n >= 3) {
      runs.push_back(n);
      collapsed.push_back(word[i]);
    } else {
      collapsed.insert(collapsed.end(), word.begin() + static_cast<std::ptrdiff_t>(i),
                       word.begin() + static_cast<std::ptrdiff_t>(j));
    }
    i = j;
  }
  for (std::size_t n : runs) {
    out.emplace_back("<rep>");
    out.push_back(std::to_string(n));
  }
  std::size_t upper = 0, lower = 0;
  for (char32_t c : word) {
    upper += unicode::is_upper(c) ? 1 : 0;
    lower += unicode::is_lower(c) ? 1 : 0;
  }
  if (word.size() >= 2 && upper > 0 && lower == 0) {
    out.emplace_back("<up>");
  } else if (unicode::is_upper(word.front())) {
    out.emplace_back("<maj>");
  }
  for (auto& c : collapsed) c = unicode::to_lower(c);
  out.push_back(unicode::encode(collapsed));
}

inline bool is_apostrophe(char32_t c) { return c == U'\'' || c == U'’'; }

}  // namespace detail

/// Splits normalized text into words, punctuation and emoji, inserting
/// marker tokens: <up> before an all-caps word, <maj> before a capitalized
/// word, and <rep> n for each character run of length n >= 3 that was
/// collapsed inside a word. Words are emitted lowercased.
inline std::vector<std::string> tokenize(std::string_view text) {
  const auto cps = unicode::decode(normalize_text(text));
  std::vector<std::string> out;
  std::vector<char32_t> word;
  auto flush = [&] {
    detail::emit_word(word, out);
    word.clear();
  };
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i];
    if (unicode::is_space(c)) {
      flush();
    } else if (unicode::is_emoji(c) && !unicode::is_word(c)) {
      flush();
      std::vector<char32_t> emoji{c};
      while (i + 1 < cps.size()) {
        const char32_t next = cps[i + 1];
        if (unicode::is_emoji_continuation(next)) {
          emoji.push_back(next);
          ++i;
          if (next == 0x200D && i + 1 < cps.size() && unicode::is_emoji(cps[i + 1])) {
            emoji.push_back(cps[++i]);
          }
        } else if (c >= 0x1F1E6 && c <= 0x1F1FF && emoji.size() == 1 && next >= 0x1F1E6 && next <= 0x1F1FF) {
          emoji.push_back(next);
          ++i;
        } else {
          break;
        }
      }
      out.push_back(unicode::encode(emoji));
    } else if (unicode::is_word(c)) {
      word.push_back(c);
    } else if (detail::is_apostrophe(c) && !word.empty() && i + 1 < cps.size() && unicode::is_word(cps[i + 1])) {
      word.push_back(c);
    } else {
      flush();
      std::string p;
      unicode::append(p, c);
      out.push_back(std::move(p));
    }
  }
  flush();
  return out;
}

/// Token list with reserved markers at ids 0..5 followed by corpus tokens
/// ordered by descending frequency, then lexicographically.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(1) {}

  explicit Vocabulary(std::size_t min_count) : min_count_(min_count) {
    for (auto t : kReservedTokens) push(std::string(t), 0);
  }

  std::size_t size() const { return id_to_token_.size(); }
  std::size_t min_count() const { return min_count_; }

  std::size_t id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
  }
  std::optional<std::size_t> find(const std::string& token) const {
    auto it = token_to_id_.find(token);
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }
  const std::string& token(std::size_t id) const { return id_to_token_.at(id); }
  std::size_t frequency(std::size_t id) const { return freq_.at(id); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  /// Adds a token (or updates a reserved token's count).
  void push(std::string token, std::size_t frequency) {
    if (auto it = token_to_id_.find(token); it != token_to_id_.end()) {
      freq_[it->second] = frequency;
      return;
    }
    token_to_id_.emplace(token, id_to_token_.size());
    id_to_token_.push_back(std::move(token));
    freq_.push_back(frequency);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_ && a.freq_ == b.freq_ && a.min_count_ == b.min_count_;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::size_t> token_to_id_;
  std::vector<std::size_t> freq_;
  std::size_t min_count_;
};

inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& streams, std::size_t min_count = 3) {
  if (min_count < 1) throw Error("build_vocab: min_count must be at least 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& s : streams)
    for (const auto& t : s) ++counts[t];
  Vocabulary vocab(min_count);
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (is_reserved_token(tok)) {
      vocab.push(tok, n);
    } else if (n >= min_count) {
      kept.emplace_back(tok, n);
    }
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (auto& [tok, n] : kept) vocab.push(tok, n);
  return vocab;
}

inline constexpr const char* kVocabHeader = "emoattn-vocab 1";

inline void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << kVocabHeader << "\tmin_count=" << vocab.min_count() << "\n";
  for (std::size_t i = 0; i < vocab.size(); ++i) out << vocab.token(i) << "\t" << vocab.frequency(i) << "\n";
}

inline Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  const std::string prefix = std::string(kVocabHeader) + "\tmin_count=";
  if (line.rfind(prefix, 0) != 0) throw ParseError(path.string() + ": line 1: unsupported vocabulary header");
  Vocabulary vocab(std::stoull(line.substr(prefix.size())));
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw ParseError(path.string() + ": line " + std::to_string(lineno) + ": expected token<TAB>count");
    vocab.push(line.substr(0, tab), std::stoull(line.substr(tab + 1)));
  }
  return vocab;
}

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

/// Concatenated token ids of the three turns with each turn's span.
struct NumericalizedConversation {
  std::string id;
  std::vector<std::size_t> ids;
  std::vector<std::string> tokens;
  std::array<Span, 3> spans{};
  std::optional<std::size_t> label_id;

  std::size_t size() const { return ids.size(); }
};

inline NumericalizedConversation numericalize(const ConversationRecord& rec, const Vocabulary& vocab) {
  NumericalizedConversation out;
  out.id = rec.id;
  for (std::size_t t = 0; t < 3; ++t) {
    auto toks = tokenize(rec.turns[t]);
    if (toks.empty()) toks.emplace_back("<unk>");
    out.spans[t].begin = out.ids.size();
    for (auto& tok : toks) {
      out.ids.push_back(vocab.id(tok));
      out.tokens.push_back(std::move(tok));
    }
    out.spans[t].end = out.ids.size();
  }
  if (rec.label) out.label_id = static_cast<std::size_t>(*rec.label);
  return out;
}

template <class Seq>
Seq reversed(Seq s) {
  std::reverse(s.begin(), s.end());
  return s;
}

inline std::vector<std::size_t> reverse(std::vector<std::size_t> ids) { return reversed(std::move(ids)); }

/// Reverses the token order; each turn's span is remapped so it still
/// addresses that turn's (now reversed) tokens.
inline NumericalizedConversation reverse(const NumericalizedConversation& conv) {
  NumericalizedConversation out = conv;
  out.ids = reversed(conv.ids);
  out.tokens = reversed(conv.tokens);
  const std::size_t n = conv.ids.size();
  for (std::size_t t = 0; t < 3; ++t) out.spans[t] = Span{n - conv.spans[t].end, n - conv.spans[t].begin};
  return out;
}

}  // namespace emoattn
