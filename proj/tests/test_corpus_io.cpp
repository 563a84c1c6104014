#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "emoattn/corpus_io.hpp"
#include "emoattn/rng.hpp"

using namespace emoattn;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
  auto dir = std::filesystem::temp_directory_path() / "emoattn_test_corpus_io";
  std::filesystem::create_directories(dir);
  auto path = dir / name;
  std::ofstream(path) << content;
  return path;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Conversations, ParsesLabeledLine) {
  std::istringstream in("id\tturn1\tturn2\tturn3\tlabel\n17\thi\thello\tI am so happy\thappy\n");
  auto recs = read_conversations(in, true);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].id, "17");
  EXPECT_EQ(recs[0].turns[0], "hi");
  EXPECT_EQ(recs[0].turns[1], "hello");
  EXPECT_EQ(recs[0].turns[2], "I am so happy");
  ASSERT_TRUE(recs[0].label);
  EXPECT_EQ(*recs[0].label, Emotion::happy);
}

TEST(Conversations, EmptyAfterHeader) {
  std::istringstream in("id\tturn1\tturn2\tturn3\tlabel\n");
  EXPECT_TRUE(read_conversations(in, true).empty());
}

TEST(Conversations, WrongColumnCountNamesLine) {
  std::istringstream in("header\n1\ta\tb\tc\tsad\n2\ta\tb\n");
  const auto msg = error_of([&] { read_conversations(in, true, "data.tsv"); });
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
}

TEST(Conversations, UnknownLabelNamesValue) {
  std::istringstream in("header\n1\ta\tb\tc\tjoyful\n");
  const auto msg = error_of([&] { read_conversations(in, true); });
  EXPECT_NE(msg.find("joyful"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
}

TEST(Conversations, UnlabeledFileAcceptsFourColumns) {
  std::istringstream in("id\tturn1\tturn2\tturn3\n5\tx\ty\tz\n");
  auto recs = read_conversations(in, false);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_FALSE(recs[0].label);
}

TEST(Conversations, EmptyTurnsArePresent) {
  std::istringstream in("h\n9\t\tmid\t\tothers\n");
  auto recs = read_conversations(in, true);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].turns[0], "");
  EXPECT_EQ(recs[0].turns[1], "mid");
  EXPECT_EQ(recs[0].turns[2], "");
}

TEST(Conversations, RoundTripIsFieldIdentical) {
  Rng rng(3);
  const std::vector<std::string> pieces = {"hi", "WOW", "so   sad", "", "😀 ok", "l'amour", "ñandú", "!!"};
  std::vector<ConversationRecord> recs;
  for (int i = 0; i < 50; ++i) {
    ConversationRecord r;
    r.id = "c" + std::to_string(i);
    for (auto& t : r.turns) t = pieces[rng.below(pieces.size())] + " " + pieces[rng.below(pieces.size())];
    r.label = static_cast<Emotion>(rng.below(kNumClasses));
    recs.push_back(r);
  }
  const auto path = temp_file("roundtrip.tsv", "");
  save_conversations(path, recs, true);
  auto back = load_conversations(path, true);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].id, recs[i].id);
    EXPECT_EQ(back[i].turns, recs[i].turns);
    EXPECT_EQ(back[i].label, recs[i].label);
  }
}

TEST(Conversations, TabsInsideTurnsRejectedOnWrite) {
  ConversationRecord r{"1", {"a\tb", "c", "d"}, Emotion::sad};
  std::ostringstream out;
  EXPECT_THROW(write_conversations(out, {r}, true), Error);
}

TEST(Conversations, MissingFileIsIoError) {
  EXPECT_THROW(load_conversations("/nonexistent/emoattn/data.tsv", true), IoError);
}

TEST(Lexicon, KeepsOnlyFlaggedTargetEmotions) {
  std::istringstream in("happy\tjoy\t1\nhappy\tanger\t0\nhappy\ttrust\t1\n");
  auto lex = read_lexicon(in);
  ASSERT_EQ(lex.size(), 1u);
  EXPECT_EQ(lex.entries.at("happy"), std::set<LexEmotion>{LexEmotion::joy});
}

TEST(Lexicon, MergesEmotionsPerWord) {
  std::istringstream in("gloom\tsadness\t1\ngloom\tanger\t1\n");
  auto lex = read_lexicon(in);
  EXPECT_EQ(lex.entries.at("gloom"), (std::set<LexEmotion>{LexEmotion::sadness, LexEmotion::anger}));
}

TEST(Lexicon, LowercasesWords) {
  std::istringstream in("Furious\tanger\t1\n");
  auto lex = read_lexicon(in);
  EXPECT_TRUE(lex.contains("furious", LexEmotion::anger));
}

TEST(Lexicon, EmptyFileGivesEmptyLexicon) {
  std::istringstream in("");
  EXPECT_EQ(read_lexicon(in).size(), 0u);
}

TEST(Lexicon, BadLineNamesLineNumber) {
  std::istringstream in("a\tjoy\t1\nbroken line\n");
  const auto msg = error_of([&] { read_lexicon(in, "lex.txt"); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
}

TEST(Lexicon, OrderIndependentAndIdempotent) {
  std::vector<std::string> lines = {"happy\tjoy\t1",      "gloom\tsadness\t1", "gloom\tanger\t1",
                                    "rage\tanger\t1",     "calm\tjoy\t0",      "bliss\tjoy\t1",
                                    "bliss\tsadness\t0",  "tears\tsadness\t1"};
  auto parse = [](const std::vector<std::string>& ls) {
    std::string s;
    for (const auto& l : ls) s += l + "\n";
    std::istringstream in(s);
    return read_lexicon(in).entries;
  };
  const auto ref = parse(lines);
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto shuffled = lines;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_EQ(parse(shuffled), ref);
    auto doubled = shuffled;
    doubled.insert(doubled.end(), lines.begin(), lines.end());
    EXPECT_EQ(parse(doubled), ref);
  }
}

TEST(Corpus, SkipsBlankLinesKeepsOrder) {
  auto path = temp_file("corpus.txt", "first line\n\n   \nsecond line\n");
  EXPECT_EQ(load_corpus(path), (std::vector<std::string>{"first line", "second line"}));
  EXPECT_TRUE(load_corpus(temp_file("empty.txt", "")).empty());
}

TEST(Corpus, EmojiPreservedByteExact) {
  auto path = temp_file("emoji.txt", "love it 😍🏽\n");
  EXPECT_EQ(load_corpus(path).at(0), "love it 😍🏽");
}
