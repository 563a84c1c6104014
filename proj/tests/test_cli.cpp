#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "emoattn/cli.hpp"
#include "emoattn/synthetic.hpp"

using namespace emoattn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "emoattn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Tiny model settings so a whole pipeline runs in about a second.
std::vector<std::string> tiny(std::vector<std::string> args) {
  for (const char* kv : {"encoder.emb_dim=8", "encoder.hidden_dim=16", "vocab.min_count=1", "pretrain.epochs=1",
                         "finetune.epochs=1", "classify.epochs=2", "pretrain.batch_size=8", "finetune.batch_size=8",
                         "classify.batch_size=16", "pretrain.bptt=20", "finetune.bptt=20"}) {
    args.push_back("--set");
    args.push_back(kv);
  }
  return args;
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("emoattn_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    auto data = synthetic::make_dataset({.n = 200, .seed = 4});
    save_conversations(dir_ / "train.tsv", {data.begin(), data.begin() + 150}, true);
    save_conversations(dir_ / "val.tsv", {data.begin() + 150, data.end()}, true);
    save_conversations(dir_ / "one.tsv", {data.begin(), data.begin() + 1}, false);
    std::ofstream(dir_ / "corpus.txt") << [] {
      std::string s;
      for (const auto& l : synthetic::make_corpus(150, 2)) s += l + "\n";
      return s;
    }();
    std::ofstream(dir_ / "lexicon.txt") << synthetic::lexicon_text();
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string p(const std::string& name) { return (dir_ / name).string(); }

  static int pipeline(const std::string& work, const std::string& seed, const std::string& direction = "fwd") {
    for (auto args : {std::vector<std::string>{"pretrain-lm", "--data", p("corpus.txt")},
                      std::vector<std::string>{"finetune-lm", "--data", p("train.tsv"), p("val.tsv")},
                      std::vector<std::string>{"train-cls", "--data", p("train.tsv"), "--val", p("val.tsv")}}) {
      for (const char* a : {"--out", work.c_str(), "--seed", seed.c_str(), "--direction", direction.c_str()})
        args.push_back(a);
      const auto r = run(tiny(args));
      if (r.code != 0) {
        ADD_FAILURE() << args[0] << ": " << r.err;
        return r.code;
      }
    }
    return 0;
  }

  static fs::path dir_;
};

fs::path CliPipeline::dir_;

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"fly"}).code, 1);
  EXPECT_EQ(run({"eval"}).code, 1);  // missing --data
  const auto missing = run({"pretrain-lm", "--out", "x"});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE((missing.out + missing.err).find("--data"), std::string::npos);
  EXPECT_EQ(run({"eval", "--data", "x.tsv", "--bogus"}).code, 1);
  EXPECT_EQ(run({"eval", "--data", "x.tsv", "--variant", "G"}).code, 1);
  EXPECT_EQ(run({"eval", "--data", "x.tsv", "--direction", "up"}).code, 1);
  EXPECT_EQ(run({"eval", "--data", "x.tsv", "--set", "encoder.colour=blue"}).code, 1);
  EXPECT_EQ(run({"eval", "--data", "x.tsv", "--set", "nonsense"}).code, 1);
  EXPECT_EQ(run({"eval", "--data", "x.tsv", "--seed", "-3"}).code, 1);
  EXPECT_EQ(run({"eval", "--data", "x.tsv", "--config", "/no/such/file"}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, RuntimeErrorsExitTwo) {
  const auto r = run({"eval", "--data", "/no/such/file.tsv", "--out", "/no/such/dir"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(Cli, GradcheckPrintsEveryOpAndPasses) {
  const auto r = run({"gradcheck"});
  EXPECT_EQ(r.code, 0) << r.out;
  for (const char* op : {"lstm_cell", "embedding_lookup", "attention_scores", "avg_pool_mean", "build_input_A",
                         "build_input_F", "linear_block"}) {
    EXPECT_NE(r.out.find(std::string(op) + "\t"), std::string::npos) << op;
  }
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST(CliSettings, LayeringAndSnapshot) {
  cli::RunConfig rc;
  rc.desk = true;
  rc.seed_text = "5";
  rc.overrides = {"classify.epochs=3", "sampler.others=0.3"};
  std::ostringstream err;
  cli::resolve(rc, err);
  EXPECT_EQ(rc.settings.encoder.emb_dim, 64u);
  EXPECT_EQ(rc.settings.encoder.hidden_dim, 128u);
  EXPECT_EQ(rc.settings.classify.batch_size, 32u);
  EXPECT_EQ(rc.settings.classify.epochs, 3u);
  EXPECT_EQ(rc.settings.classify.seed, 5u);
  EXPECT_EQ(rc.settings.sampler.weights[3], 0.3);
  const auto kv = cli::run_config_kv(rc);
  EXPECT_EQ(kv.get("seed"), "5");
  EXPECT_EQ(kv.get("classify.epochs"), "3");

  // the snapshot parses back to the same settings
  std::ostringstream snap;
  kv.write(snap);
  std::istringstream in(snap.str());
  auto back = KeyValues::parse(in);
  for (const char* k : {"subcommand", "out", "seed", "variant", "direction", "desk"}) back.remove(k);
  EXPECT_EQ(cli::settings_kv(cli::apply_overrides(cli::Settings::make(false, 0), back)).items(),
            cli::settings_kv(rc.settings).items());
}

TEST(CliSettings, SeedFromEnvironmentAndVariantF) {
  ::setenv("EMOATTN_SEED", "42", 1);
  cli::RunConfig rc;
  rc.variant = "F";
  rc.direction = "both";
  std::ostringstream err;
  cli::resolve(rc, err);
  ::unsetenv("EMOATTN_SEED");
  EXPECT_EQ(rc.seed, 42u);
  ASSERT_EQ(rc.directions.size(), 1u);
  EXPECT_EQ(rc.directions[0], Direction::forward);
  EXPECT_NE(err.str().find("forward-only"), std::string::npos);
}

TEST_F(CliPipeline, PredictOneRowSumsToOne) {
  const std::string work = p("work");
  ASSERT_EQ(pipeline(work, "3"), 0);
  const auto r = run({"predict", "--data", p("one.tsv"), "--out", work});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string header, row, extra;
  std::getline(lines, header);
  std::getline(lines, row);
  EXPECT_FALSE(std::getline(lines, extra));
  EXPECT_EQ(header, "id\tlabel\tp_happy\tp_sad\tp_angry\tp_others");
  auto cols = detail::split_tabs(row);
  ASSERT_EQ(cols.size(), 6u);
  double sum = 0.0;
  for (std::size_t k = 2; k < 6; ++k) sum += std::stod(cols[k]);
  EXPECT_NEAR(sum, 1.0, 1e-6);
  EXPECT_TRUE(parse_emotion(cols[1]).has_value());
  EXPECT_TRUE(fs::exists(fs::path(work) / "predict-A-fwd" / "run_config.txt"));
  EXPECT_TRUE(fs::exists(fs::path(work) / "fwd" / "classifier-A" / "run_config.txt"));

  const auto e = run({"eval", "--data", p("val.tsv"), "--out", work});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(e.out.rfind("Model  | Happy P", 0), 0u);
  EXPECT_NE(e.out.find("\nA      | "), std::string::npos);

  const auto a = run({"attn-report", "--data", p("val.tsv"), "--lexicon", p("lexicon.txt"), "--out", work});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out.rfind("Attention  | Joy", 0), 0u);
  EXPECT_EQ(run({"attn-report", "--data", p("val.tsv"), "--out", work}).code, 1);  // lexicon required
}

TEST_F(CliPipeline, SameSeedSameLogsAndBothDirections) {
  ASSERT_EQ(pipeline(p("a"), "9", "both"), 0);
  ASSERT_EQ(pipeline(p("b"), "9", "both"), 0);
  for (const char* sub : {"fwd/pretrained", "fwd/finetuned", "fwd/classifier-A", "bwd/classifier-A"}) {
    const auto la = slurp(fs::path(p("a")) / sub / "metrics.tsv");
    EXPECT_FALSE(la.empty()) << sub;
    EXPECT_EQ(la, slurp(fs::path(p("b")) / sub / "metrics.tsv")) << sub;
  }
  const auto e = run({"eval", "--data", p("val.tsv"), "--out", p("a"), "--direction", "both"});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("\nA-fwd  | "), std::string::npos);
  EXPECT_NE(e.out.find("\nA-bwd  | "), std::string::npos);
  EXPECT_NE(e.out.find("\nA      | "), std::string::npos);
}
