#include <gtest/gtest.h>

#include <filesystem>

#include "emoattn/rng.hpp"
#include "emoattn/text_pipeline.hpp"

using namespace emoattn;

using Tokens = std::vector<std::string>;

TEST(Tokenize, CapitalizationMarkers) {
  EXPECT_EQ(tokenize("I am SAD"), (Tokens{"<maj>", "i", "am", "<up>", "sad"}));
  EXPECT_EQ(tokenize("Hello WORLD"), (Tokens{"<maj>", "hello", "<up>", "world"}));
}

TEST(Tokenize, RepeatedCharacters) {
  EXPECT_EQ(tokenize("soooo"), (Tokens{"<rep>", "4", "so"}));
  EXPECT_EQ(tokenize("too"), (Tokens{"too"}));
}

TEST(Tokenize, EmptyText) {
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize("   \t ").empty());
}

TEST(Tokenize, PunctuationAndEmojiStandalone) {
  EXPECT_EQ(tokenize("ok!!"), (Tokens{"ok", "!", "!"}));
  EXPECT_EQ(tokenize("great😀"), (Tokens{"great", "😀"}));
  EXPECT_EQ(tokenize("👍🏽 nice"), (Tokens{"👍🏽", "nice"}));
}

TEST(Tokenize, ApostropheInsideWord) {
  EXPECT_EQ(tokenize("don't"), (Tokens{"don't"}));
}

TEST(Tokenize, NormalizesComposedForms) {
  // e + combining acute equals precomposed é after NFC.
  EXPECT_EQ(tokenize("cafe\xCC\x81"), tokenize("caf\xC3\xA9"));
}

TEST(Tokenize, NoReservedTokensFromPlainText) {
  Rng rng(5);
  const std::string alphabet = "abcXYZ !?'😀 <>pad";
  for (int trial = 0; trial < 300; ++trial) {
    std::string s;
    const std::size_t n = rng.below(20);
    for (std::size_t i = 0; i < n; ++i) s += alphabet[rng.below(alphabet.size())];
    for (const auto& t : tokenize(s)) {
      if (t == "<maj>" || t == "<up>" || t == "<rep>") continue;
      EXPECT_FALSE(is_reserved_token(t)) << s;
    }
  }
}

TEST(Vocab, ReservedTokensFirst) {
  auto v = build_vocab({}, 3);
  ASSERT_EQ(v.size(), kNumReserved);
  const Tokens expected = {"<pad>", "<unk>", "<bos>", "<maj>", "<up>", "<rep>"};
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(v.token(i), expected[i]);
}

TEST(Vocab, FrequencyCutoff) {
  auto v = build_vocab({{"a", "b", "a", "c"}, {"b", "a"}}, 3);
  ASSERT_EQ(v.size(), kNumReserved + 1);
  EXPECT_EQ(v.token(kNumReserved), "a");
  EXPECT_EQ(v.id("b"), kUnkId);
}

TEST(Vocab, MinCountOneKeepsAllOrderedByFrequencyThenLexicographic) {
  auto v = build_vocab({{"d", "b", "c", "b", "a", "c"}}, 1);
  ASSERT_EQ(v.size(), kNumReserved + 4);
  EXPECT_EQ(v.token(kNumReserved + 0), "b");
  EXPECT_EQ(v.token(kNumReserved + 1), "c");
  EXPECT_EQ(v.token(kNumReserved + 2), "a");
  EXPECT_EQ(v.token(kNumReserved + 3), "d");
}

TEST(Vocab, InverseMapsAndRoundTrip) {
  Rng rng(8);
  std::vector<Tokens> streams(10);
  for (auto& s : streams)
    for (int i = 0; i < 40; ++i) s.push_back("w" + std::to_string(rng.below(30)));
  auto v = build_vocab(streams, 2);
  for (std::size_t k = 0; k < v.size(); ++k) EXPECT_EQ(v.id(v.token(k)), k);
  for (std::size_t k = kNumReserved; k < v.size(); ++k) EXPECT_GE(v.frequency(k), 2u);
  auto path = std::filesystem::temp_directory_path() / "emoattn_vocab_test.txt";
  save_vocab(v, path);
  EXPECT_TRUE(load_vocab(path) == v);
}

TEST(Numericalize, SpansFollowTurnLengths) {
  auto v = build_vocab({{"a", "b", "c", "d", "e", "f", "g", "h", "i"}}, 1);
  ConversationRecord r{"x", {"a b", "c d e", "f g h i"}, Emotion::happy};
  auto n = numericalize(r, v);
  ASSERT_EQ(n.size(), 9u);
  EXPECT_EQ(n.spans[0], (Span{0, 2}));
  EXPECT_EQ(n.spans[1], (Span{2, 5}));
  EXPECT_EQ(n.spans[2], (Span{5, 9}));
  EXPECT_EQ(n.label_id, std::optional<std::size_t>(0));
}

TEST(Numericalize, OovAndEmptyTurns) {
  auto v = build_vocab({{"known"}}, 1);
  ConversationRecord r{"x", {"qx yv", "", "known"}, std::nullopt};
  auto n = numericalize(r, v);
  EXPECT_EQ(n.ids[0], kUnkId);
  EXPECT_EQ(n.ids[1], kUnkId);
  EXPECT_EQ(n.spans[1].size(), 1u);
  EXPECT_EQ(n.ids[n.spans[1].begin], kUnkId);
  EXPECT_EQ(n.ids.back(), v.id("known"));
}

TEST(Numericalize, SpansPartitionIds) {
  Rng rng(21);
  const Tokens words = {"hi", "Hey", "WOW", "sooo", "!", "😀", "", "ok ok"};
  auto v = build_vocab({{"hi", "ok"}}, 1);
  for (int trial = 0; trial < 500; ++trial) {
    ConversationRecord r;
    for (auto& t : r.turns) {
      const std::size_t n = rng.below(4);
      for (std::size_t i = 0; i < n; ++i) t += words[rng.below(words.size())] + " ";
    }
    auto c = numericalize(r, v);
    std::size_t expect = 0;
    for (const auto& s : c.spans) {
      EXPECT_EQ(s.begin, expect);
      EXPECT_GE(s.size(), 1u);
      expect = s.end;
    }
    EXPECT_EQ(expect, c.ids.size());
    EXPECT_EQ(c.tokens.size(), c.ids.size());
  }
}

TEST(Reverse, IdsAndSpans) {
  EXPECT_EQ(reverse(std::vector<std::size_t>{1, 2, 3}), (std::vector<std::size_t>{3, 2, 1}));
  NumericalizedConversation c;
  c.ids = {10, 11, 12, 13, 14};
  c.tokens = {"a", "b", "c", "d", "e"};
  c.spans = {Span{0, 2}, Span{2, 5}, Span{5, 5}};
  auto r = reverse(c);
  EXPECT_EQ(r.spans[0], (Span{3, 5}));
  EXPECT_EQ(r.spans[1], (Span{0, 3}));
  EXPECT_EQ(r.ids, (std::vector<std::size_t>{14, 13, 12, 11, 10}));
  // turn 1's tokens, in reversed order
  EXPECT_EQ(r.tokens[3], "b");
  EXPECT_EQ(r.tokens[4], "a");
  auto rr = reverse(r);
  EXPECT_EQ(rr.ids, c.ids);
  EXPECT_EQ(rr.spans, c.spans);
}
