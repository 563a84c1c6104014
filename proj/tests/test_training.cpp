#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "emoattn/synthetic.hpp"
#include "emoattn/training.hpp"

using namespace emoattn;
namespace fs = std::filesystem;

namespace {

EncoderConfig small_encoder() {
  EncoderConfig cfg;
  cfg.emb_dim = 8;
  cfg.hidden_dim = 16;
  return cfg;
}

StageConfig lm_stage(Stage s, std::size_t epochs) {
  StageConfig sc = StageConfig::desk(s);
  sc.epochs = epochs;
  sc.batch_size = 8;
  sc.bptt = 20;
  sc.base_lr = 0.01;
  return sc;
}

const Checkpoint& shared_lm() {
  static const Checkpoint lm = [] {
    auto pre = pretrain_lm(synthetic::make_corpus(200, 1), small_encoder(), lm_stage(Stage::pretrain, 2), 1);
    auto data = synthetic::make_dataset({.n = 200, .seed = 2});
    return finetune_lm(pre.checkpoint, conversation_texts(data), lm_stage(Stage::finetune, 1), 1).checkpoint;
  }();
  return lm;
}

struct Split {
  std::vector<ConversationRecord> train, val;
};

Split small_split() {
  auto data = synthetic::make_dataset({.n = 160, .seed = 3});
  Split s;
  s.train.assign(data.begin(), data.begin() + 120);
  s.val.assign(data.begin() + 120, data.end());
  return s;
}

StageConfig cls_stage(std::size_t epochs, std::uint64_t seed = 0) {
  StageConfig sc = StageConfig::desk(Stage::classify);
  sc.epochs = epochs;
  sc.batch_size = 16;
  sc.seed = seed;
  return sc;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("emoattn_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Sampler, SingleClassAlwaysDrawn) {
  WeightedSampler s({2, 2, 2}, SamplerWeights{});
  Rng rng(1);
  for (auto i : s.sample(100, rng)) EXPECT_LT(i, 3u);
  EXPECT_DOUBLE_EQ(s.class_probabilities()[2], 1.0);
}

TEST(Sampler, EmotionDrawnTwiceAsOftenAsOthers) {
  // one happy, one others: weights 0.4 vs 0.2
  WeightedSampler s({0, 3}, SamplerWeights{});
  Rng rng(2);
  std::size_t happy = 0;
  const std::size_t n = 100000;
  for (auto i : s.sample(n, rng)) happy += i == 0;
  EXPECT_NEAR(static_cast<double>(happy) / n, 2.0 / 3.0, 0.03);
  EXPECT_NEAR(s.class_probabilities()[0], 2.0 / 3.0, 1e-12);
}

TEST(Sampler, UniformWeightsFollowClassFrequencies) {
  std::vector<std::size_t> labels{0, 0, 0, 1};
  WeightedSampler s(labels, SamplerWeights::uniform());
  Rng rng(3);
  std::size_t happy = 0;
  const std::size_t n = 100000;
  for (auto i : s.sample(n, rng)) happy += labels[i] == 0;
  EXPECT_NEAR(static_cast<double>(happy) / n, 0.75, 0.02);
}

TEST(Sampler, DeterministicForSeed) {
  std::vector<std::size_t> labels{0, 1, 2, 3, 3, 3};
  Rng a(4), b(4), c(5);
  EXPECT_EQ(weighted_sample(labels, {}, 50, a), weighted_sample(labels, {}, 50, b));
  EXPECT_NE(weighted_sample(labels, {}, 50, b), weighted_sample(labels, {}, 50, c));
}

TEST(Sampler, EmptyClassWarnsAndRenormalizes) {
  std::vector<std::string> warnings;
  WeightedSampler s({0, 1, 3}, SamplerWeights{}, [&](const std::string& m) { warnings.push_back(m); });
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("angry"), std::string::npos);
  EXPECT_EQ(s.class_probabilities()[2], 0.0);
  EXPECT_NEAR(s.class_probabilities()[0] + s.class_probabilities()[1] + s.class_probabilities()[3], 1.0, 1e-12);
  EXPECT_THROW(WeightedSampler({}, SamplerWeights{}), Error);
  EXPECT_THROW(WeightedSampler({4}, SamplerWeights{}), Error);
}

TEST(LmData, StreamAndWindows) {
  auto v = build_vocab({{"a", "b", "c"}}, 1);
  auto fwd = lm_stream({{"a", "b"}, {"c"}}, v, Direction::forward);
  auto bwd = lm_stream({{"a", "b"}, {"c"}}, v, Direction::backward);
  EXPECT_EQ(fwd, (std::vector<std::size_t>{kBosId, v.id("a"), v.id("b"), kBosId, v.id("c")}));
  EXPECT_EQ(bwd, (std::vector<std::size_t>{kBosId, v.id("b"), v.id("a"), kBosId, v.id("c")}));

  std::vector<std::size_t> stream(20);
  for (std::size_t i = 0; i < 20; ++i) stream[i] = i;
  LmBatcher b(stream, 2, 4);
  EXPECT_EQ(b.batch(), 2u);
  ASSERT_EQ(b.size(), 3u);
  auto w0 = b.window(0);
  EXPECT_EQ(w0.input.ids, (std::vector<std::size_t>{0, 10, 1, 11, 2, 12, 3, 13}));
  EXPECT_EQ(w0.targets, (std::vector<std::size_t>{1, 11, 2, 12, 3, 13, 4, 14}));
  auto w2 = b.window(2);
  EXPECT_EQ(w2.input.steps, 1u);
  EXPECT_EQ(w2.targets, (std::vector<std::size_t>{9, 19}));
  EXPECT_EQ(LmBatcher(stream, 100, 4).batch(), 10u);
  EXPECT_THROW(LmBatcher({1}, 1, 4), Error);
}

TEST(Schedule, GroupRatesAndUnfreezing) {
  EXPECT_DOUBLE_EQ(group_learning_rate(0.01, 4, 4, true), 0.01);
  EXPECT_DOUBLE_EQ(group_learning_rate(0.01, 3, 4, true), 0.01 / 2.6);
  EXPECT_DOUBLE_EQ(group_learning_rate(0.01, 0, 4, true), 0.01 / std::pow(2.6, 4));
  EXPECT_DOUBLE_EQ(group_learning_rate(0.01, 0, 4, false), 0.01);
  EXPECT_EQ(lowest_trainable_group(0, 4, true), 4);
  EXPECT_EQ(lowest_trainable_group(3, 4, true), 1);
  EXPECT_EQ(lowest_trainable_group(9, 4, true), 0);
  EXPECT_EQ(lowest_trainable_group(0, 4, false), 0);

  auto sc = StageConfig::defaults(Stage::classify);
  EXPECT_EQ(sc.schedule_for(5).kind, ScheduleKind::constant);
  EXPECT_EQ(sc.schedule_for(100).kind, ScheduleKind::slanted_triangular);
}

TEST(StageSettings, KeyValueRoundTripAndValidation) {
  auto sc = StageConfig::desk(Stage::finetune);
  sc.seed = 77;
  sc.schedule = ScheduleKind::constant;
  auto back = stage_config_from(stage_config_kv(sc), StageConfig::defaults(Stage::finetune));
  EXPECT_EQ(back.batch_size, 32u);
  EXPECT_EQ(back.seed, 77u);
  EXPECT_EQ(back.schedule, ScheduleKind::constant);
  EXPECT_EQ(back.base_lr, sc.base_lr);
  EXPECT_EQ(back.gradual_unfreeze, sc.gradual_unfreeze);

  KeyValues kv;
  kv.assign("cls.batch_size=0");
  EXPECT_THROW(stage_config_from(kv, sc, "cls."), Error);
  KeyValues bad;
  bad.assign("schedule=cosine");
  EXPECT_THROW(stage_config_from(bad, sc), Error);
}

TEST(Settings, ParseMergeAndTypes) {
  std::istringstream in("# comment\n\nepochs = 5\nname=x=y\n");
  auto kv = KeyValues::parse(in);
  EXPECT_EQ(kv.get_size("epochs", 0), 5u);
  EXPECT_EQ(kv.get("name"), "x=y");
  KeyValues over;
  over.set("epochs", std::size_t{9});
  over.set("ok", true);
  kv.merge(over);
  EXPECT_EQ(kv.get_size("epochs", 0), 9u);
  EXPECT_TRUE(kv.get_bool("ok", false));
  EXPECT_EQ(kv.get_double("missing", 1.5), 1.5);
  EXPECT_THROW(kv.get("missing"), Error);
  EXPECT_THROW(kv.get_double("name", 0), Error);
  EXPECT_THROW(kv.assign("no equals sign"), Error);
  std::istringstream broken("just words\n");
  EXPECT_THROW(KeyValues::parse(broken), Error);
}

TEST(Pretrain, LossDecreasesAndIsDeterministic) {
  auto corpus = synthetic::make_corpus(150, 4);
  MetricsLog log1, log2;
  auto a = pretrain_lm(corpus, small_encoder(), lm_stage(Stage::pretrain, 4), 1, &log1);
  auto b = pretrain_lm(corpus, small_encoder(), lm_stage(Stage::pretrain, 4), 1, &log2);
  ASSERT_EQ(a.epoch_losses.size(), 4u);
  EXPECT_LT(a.epoch_losses.back(), a.epoch_losses.front());
  EXPECT_EQ(log1.lines(), log2.lines());
  EXPECT_EQ(log1.lines()[0].rfind("pretrain\t1\ttrain\t", 0), 0u);
  EXPECT_EQ(a.checkpoint.kind, CheckpointKind::lm);
  EXPECT_EQ(a.checkpoint.encoder.vocab_size, a.checkpoint.vocab.size());
}

TEST(Pretrain, Errors) {
  EXPECT_THROW(pretrain_lm({}, small_encoder(), lm_stage(Stage::pretrain, 1)), Error);
  // every word occurs once, so a cutoff of 3 leaves only reserved tokens
  EXPECT_THROW(pretrain_lm({"alpha beta gamma"}, small_encoder(), lm_stage(Stage::pretrain, 1), 3), Error);
  auto bi = small_encoder();
  bi.direction = Direction::bidirectional;
  EXPECT_THROW(pretrain_lm(synthetic::make_corpus(20, 1), bi, lm_stage(Stage::pretrain, 1), 1), Error);
}

TEST(Finetune, KnownRowsCopiedNewRowsGetMean) {
  auto pre = pretrain_lm(synthetic::make_corpus(60, 5), small_encoder(), lm_stage(Stage::pretrain, 1), 1).checkpoint;
  auto vocab = build_vocab({{"the", "the", "zebra"}}, 1);
  auto moved = transfer_vocabulary(pre, vocab);
  const auto& old_emb = pre.params.get("encoder.embedding").value;
  const auto& emb = moved.params.get("encoder.embedding").value;
  ASSERT_EQ(emb.rows(), vocab.size());
  EXPECT_EQ(moved.encoder.vocab_size, vocab.size());
  const auto old_the = *pre.vocab.find("the");
  for (std::size_t c = 0; c < emb.cols(); ++c) {
    EXPECT_EQ(emb(vocab.id("the"), c), old_emb(old_the, c));
    EXPECT_EQ(emb(kUnkId, c), old_emb(kUnkId, c));
    double mean = 0.0;
    for (std::size_t r = 0; r < old_emb.rows(); ++r) mean += old_emb(r, c);
    EXPECT_NEAR(emb(vocab.id("zebra"), c), mean / old_emb.rows(), 1e-6);
  }
  // non-vocabulary parameters are untouched
  EXPECT_EQ(moved.params.get("encoder.l0.w_hh").value, pre.params.get("encoder.l0.w_hh").value);
}

TEST(Finetune, VocabularyComesFromTaskText) {
  auto pre = pretrain_lm(synthetic::make_corpus(60, 5), small_encoder(), lm_stage(Stage::pretrain, 1), 1).checkpoint;
  auto ft = finetune_lm(pre, {"hello there hello", "there hello"}, lm_stage(Stage::finetune, 1), 1);
  EXPECT_EQ(ft.checkpoint.vocab.size(), kNumReserved + 2);
  EXPECT_TRUE(ft.checkpoint.vocab.find("hello").has_value());
  EXPECT_FALSE(ft.checkpoint.vocab.find("weather").has_value());
  EXPECT_THROW(finetune_lm(pre, {}, lm_stage(Stage::finetune, 1)), Error);
}

TEST(Classifier, DecoderDroppedHeadInTopGroup) {
  const auto& lm = shared_lm();
  auto ck = make_classifier(lm, ClassifierConfig{}, 1);
  for (const auto* p : ck.params.all()) EXPECT_NE(p->name.rfind("decoder.", 0), 0u) << p->name;
  EXPECT_EQ(ck.params.get("attention.w1").group, lm.encoder.head_group());
  EXPECT_EQ(ck.params.get("classifier.fc2.weight").group, lm.encoder.head_group());
  EXPECT_EQ(ck.params.get("encoder.embedding").value, lm.params.get("encoder.embedding").value);
  EXPECT_THROW(make_classifier(ck, ClassifierConfig{}, 1), Error);
}

TEST(Classifier, EncoderReceivesGradientAndAttentionSharesHeadRate) {
  const auto split = small_split();
  ClassifierTrainOptions opts;
  bool saw_first = false;
  std::size_t rate_checks = 0;
  opts.after_backward = [&](std::size_t step, const ParamStore<float>& params) {
    if (step != 0) return;
    saw_first = true;
    for (const char* name : {"encoder.embedding", "encoder.l0.w_ih", "encoder.l2.w_hh", "attention.w1"}) {
      double norm = 0.0;
      for (float g : params.get(name).grad.values()) norm += double(g) * g;
      EXPECT_GT(norm, 0.0) << name;
    }
  };
  opts.after_step = [&](std::size_t, const Optimizer& opt) {
    const auto a = opt.last_rate("attention.w3");
    const auto c = opt.last_rate("classifier.fc1.weight");
    ASSERT_TRUE(a && c);
    EXPECT_EQ(*a, *c);
    if (auto l2 = opt.last_rate("encoder.l2.w_hh")) {
      EXPECT_DOUBLE_EQ(*l2, *c / 2.6);
      ++rate_checks;
    }
  };
  train_classifier(shared_lm(), split.train, split.val, ClassifierConfig{}, cls_stage(2), {}, opts);
  EXPECT_TRUE(saw_first);
  EXPECT_GT(rate_checks, 0u);  // the top recurrent layer unfreezes in epoch 2
}

TEST(Classifier, BestEpochSnapshotIsReturned) {
  const auto split = small_split();
  const std::vector<double> forced{0.5, 0.9, 0.9};
  std::map<std::size_t, Checkpoint> snapshots;
  ClassifierTrainOptions opts;
  opts.metric_hook = [&](std::size_t epoch, double) { return forced[epoch - 1]; };
  opts.on_epoch = [&](std::size_t epoch, const Checkpoint& ck) { snapshots[epoch] = ck; };
  auto r = train_classifier(shared_lm(), split.train, split.val, ClassifierConfig{}, cls_stage(3), {}, opts);
  EXPECT_EQ(r.best_epoch, 2u);
  EXPECT_EQ(r.best_f1, 0.9);
  EXPECT_EQ(r.val_f1, forced);
  for (const auto* p : r.best.params.all()) {
    EXPECT_EQ(p->value, snapshots.at(2).params.get(p->name).value) << p->name;
  }
  EXPECT_NE(r.best.params.get("attention.w1").value, snapshots.at(3).params.get("attention.w1").value);
}

TEST(Classifier, SameSeedGivesIdenticalLogs) {
  const auto split = small_split();
  auto run = [&](std::uint64_t seed) {
    std::ostringstream out;
    MetricsLog log;
    log.attach(out);
    ClassifierTrainOptions opts;
    opts.log = &log;
    train_classifier(shared_lm(), split.train, split.val, ClassifierConfig{}, cls_stage(2, seed), {}, opts);
    return out.str();
  };
  const auto a = run(11);
  EXPECT_EQ(a, run(11));
  EXPECT_NE(a, run(12));
  EXPECT_EQ(a.substr(0, a.find('\n')), MetricsLog::header());
  EXPECT_NE(a.find("classify\t1\tval\t"), std::string::npos);
}

TEST(Checkpoint, RoundTripGivesIdenticalPredictions) {
  const auto split = small_split();
  auto r = train_classifier(shared_lm(), split.train, split.val, ClassifierConfig{}, cls_stage(1));
  const auto dir = temp_dir("ckpt");
  save_checkpoint(r.best, dir);
  auto loaded = load_checkpoint(dir);
  EXPECT_EQ(loaded.kind, CheckpointKind::classifier);
  ASSERT_TRUE(loaded.classifier.has_value());
  EXPECT_EQ(loaded.classifier->variant, Variant::A);
  const auto convs = numericalize_all(split.val, loaded.vocab);
  const auto p1 = predict(r.best, convs);
  const auto p2 = predict(loaded, convs);
  for (std::size_t i = 0; i < p1.size(); ++i) {
    EXPECT_EQ(p1[i].probs, p2[i].probs);
    EXPECT_EQ(p1[i].attention, p2[i].attention);
  }
  EXPECT_EQ(evaluate(p1, convs).micro.f1, evaluate(p2, convs).micro.f1);

  std::ofstream(dir / "VERSION") << "emoattn-checkpoint 0\nclassifier\n";
  try {
    load_checkpoint(dir);
    FAIL() << "expected a version error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("incompatible checkpoint version"), std::string::npos);
  }
  EXPECT_THROW(load_checkpoint(dir / "missing"), IoError);
  fs::remove_all(dir);
}

TEST(Prediction, BackwardModelAttentionInTextOrder) {
  auto lm = shared_lm();
  lm.encoder.direction = Direction::backward;
  auto ck = make_classifier(lm, ClassifierConfig{}, 2);
  ConversationRecord rec{"x", {"i feel happy today", "ok", "you are glad now"}, Emotion::happy};
  auto conv = numericalize(rec, ck.vocab);
  auto p = predict(ck, {conv}).at(0);
  ASSERT_EQ(p.attention[0].size(), 4u);
  ASSERT_EQ(p.attention[1].size(), 4u);

  // same scores as reading the reversed conversation with a forward encoder
  auto fwd = ck;
  fwd.encoder.direction = Direction::forward;
  auto q = predict(fwd, {reverse(conv)}).at(0);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(p.attention[1][j], q.attention[1][3 - j]);
  EXPECT_EQ(p.probs, q.probs);
}

TEST(Prediction, EnsembleAndOutputs) {
  Prediction a, b;
  a.probs = {0.2, 0.8, 0.0, 0.0};
  b.probs = {0.4, 0.6, 0.0, 0.0};
  a.attention = {std::vector<double>{1.0, 0.0}, {}};
  b.attention = {std::vector<double>{0.0, 1.0}, std::vector<double>{1.0}};
  auto e = ensemble(std::vector<Prediction>{a}, std::vector<Prediction>{b}).at(0);
  EXPECT_NEAR(e.probs[0], 0.3, 1e-15);
  EXPECT_EQ(e.attention[0], (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(e.attention[1], (std::vector<double>{1.0}));

  NumericalizedConversation c;
  c.id = "c1";
  c.tokens = {"a", "b", "x", "y", "z"};
  c.spans = {Span{0, 2}, Span{2, 3}, Span{3, 5}};
  std::ostringstream preds, att;
  write_predictions(preds, {c}, {e});
  EXPECT_EQ(preds.str(), "id\tlabel\tp_happy\tp_sad\tp_angry\tp_others\nc1\tsad\t0.30000000\t0.70000000\t0.00000000\t0.00000000\n");
  Prediction sel = a;
  sel.attention = {std::vector<double>{0.9, 0.1}, std::vector<double>{0.2, 0.8}};
  write_attention_tsv(att, {c}, {sel});
  EXPECT_EQ(att.str(),
            "id\tturn\tposition\ttoken\tscore\n"
            "c1\t1\t0\ta\t0.900000\nc1\t1\t1\tb\t0.100000\n"
            "c1\t3\t0\ty\t0.200000\nc1\t3\t1\tz\t0.800000\n");

  c.label_id = 0;
  auto picked = select_attended_tokens({c}, {sel});
  EXPECT_EQ(picked[Emotion::happy], (std::vector<std::string>{"a", "z"}));
  c.label_id = 3;
  EXPECT_TRUE(select_attended_tokens({c}, {sel}).empty());
}
