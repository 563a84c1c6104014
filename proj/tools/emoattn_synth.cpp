// Writes a synthetic corpus, train/val/test conversations and a matching
// lexicon, for trying the pipeline without the real data.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "emoattn/synthetic.hpp"

namespace fs = std::filesystem;
using namespace emoattn;

int main(int argc, char** argv) {
  CLI::App app{"Synthetic conversations with an emotion keyword in turn 3"};
  std::string out = "synthetic-data";
  std::size_t n = 2000, corpus_lines = 2000;
  std::uint64_t seed = 7;
  app.add_option("--out", out, "output directory")->capture_default_str();
  app.add_option("-n,--conversations", n, "labeled conversations, split 80/10/10")->capture_default_str();
  app.add_option("--corpus-lines", corpus_lines, "lines of pretraining text")->capture_default_str();
  app.add_option("--seed", seed)->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    fs::create_directories(out);
    synthetic::DatasetOptions opt;
    opt.n = n;
    opt.seed = seed;
    const auto data = synthetic::make_dataset(opt);
    const std::size_t n_train = n * 8 / 10, n_val = n / 10;
    const std::vector<ConversationRecord> train(data.begin(), data.begin() + n_train);
    const std::vector<ConversationRecord> val(data.begin() + n_train, data.begin() + n_train + n_val);
    const std::vector<ConversationRecord> test(data.begin() + n_train + n_val, data.end());
    save_conversations(fs::path(out) / "train.tsv", train, true);
    save_conversations(fs::path(out) / "val.tsv", val, true);
    save_conversations(fs::path(out) / "test.tsv", test, true);

    std::ofstream corpus(fs::path(out) / "corpus.txt");
    for (const auto& line : synthetic::make_corpus(corpus_lines, seed + 1)) corpus << line << "\n";
    std::ofstream(fs::path(out) / "lexicon.txt") << synthetic::lexicon_text();
    std::cerr << "wrote " << out << "/{corpus.txt,train.tsv,val.tsv,test.tsv,lexicon.txt}\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
