#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "emoattn/checks.hpp"
#include "emoattn/runtime.hpp"
#include "emoattn/training.hpp"

namespace emoattn::cli {

namespace fs = std::filesystem;

/// Bad flags or settings; reported with exit code 1.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Every tunable of the pipeline, overridable with key=value lines.
struct Settings {
  EncoderConfig encoder;
  ClassifierConfig classifier;
  StageConfig pretrain = StageConfig::defaults(Stage::pretrain);
  StageConfig finetune = StageConfig::defaults(Stage::finetune);
  StageConfig classify = StageConfig::defaults(Stage::classify);
  std::size_t min_count = 3;
  SamplerWeights sampler;
  double attention_frac = 0.2;
  std::size_t eval_batch = 64;

  static Settings make(bool desk, std::uint64_t seed) {
    Settings s;
    if (desk) {
      s.encoder = desk_encoder_config();
      s.pretrain = StageConfig::desk(Stage::pretrain);
      s.finetune = StageConfig::desk(Stage::finetune);
      s.classify = StageConfig::desk(Stage::classify);
    }
    for (auto* sc : {&s.pretrain, &s.finetune, &s.classify}) sc->seed = seed;
    return s;
  }
};

inline KeyValues settings_kv(const Settings& s) {
  KeyValues kv;
  auto add = [&](const KeyValues& part, const std::string& prefix, std::set<std::string> skip = {}) {
    for (const auto& [k, v] : part.items())
      if (!skip.count(k)) kv.set(prefix + k, v);
  };
  // vocabulary size, direction and variant come from the data and flags
  add(encoder_config_kv(s.encoder), "encoder.", {"vocab_size", "direction"});
  add(classifier_config_kv(s.classifier), "classifier.", {"variant", "n_classes"});
  add(stage_config_kv(s.pretrain), "pretrain.");
  add(stage_config_kv(s.finetune), "finetune.");
  add(stage_config_kv(s.classify), "classify.");
  kv.set("vocab.min_count", s.min_count);
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    kv.set("sampler." + std::string(emotion_name(static_cast<Emotion>(k))), s.sampler.weights[k]);
  }
  kv.set("attention.frac", s.attention_frac);
  kv.set("eval.batch_size", s.eval_batch);
  return kv;
}

/// Applies overrides on top of `base`; unknown keys are usage errors.
inline Settings apply_overrides(Settings s, const KeyValues& kv) {
  const KeyValues known = settings_kv(s);
  for (const auto& [k, v] : kv.items()) {
    if (!known.has(k)) throw UsageError("unknown setting '" + k + "'");
  }
  s.encoder = encoder_config_from(kv, s.encoder, "encoder.");
  s.classifier = classifier_config_from(kv, s.classifier, "classifier.");
  s.pretrain = stage_config_from(kv, s.pretrain, "pretrain.");
  s.finetune = stage_config_from(kv, s.finetune, "finetune.");
  s.classify = stage_config_from(kv, s.classify, "classify.");
  s.min_count = kv.get_size("vocab.min_count", s.min_count);
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const std::string key = "sampler." + std::string(emotion_name(static_cast<Emotion>(k)));
    s.sampler.weights[k] = kv.get_double(key, s.sampler.weights[k]);
  }
  s.attention_frac = kv.get_double("attention.frac", s.attention_frac);
  s.eval_batch = kv.get_size("eval.batch_size", s.eval_batch);
  if (s.eval_batch == 0) throw UsageError("eval.batch_size must be positive");
  return s;
}

struct RunConfig {
  std::string subcommand;
  std::vector<std::string> data;
  std::string val;
  std::string lexicon;
  std::string out = "emoattn-out";
  std::string seed_text;
  std::string variant = "A";
  std::string direction = "fwd";
  bool desk = false;
  std::string config_file;
  std::vector<std::string> overrides;

  // resolved
  std::uint64_t seed = 0;
  Variant variant_id = Variant::A;
  std::vector<Direction> directions;
  Settings settings;
};

inline std::string_view short_name(Direction d) { return d == Direction::backward ? "bwd" : "fwd"; }

inline void resolve(RunConfig& rc, std::ostream& err) {
  std::string seed = rc.seed_text;
  if (seed.empty()) {
    const char* env = std::getenv("EMOATTN_SEED");
    seed = env ? env : "0";
  }
  const bool digits = !seed.empty() && seed.find_first_not_of("0123456789") == std::string::npos;
  try {
    if (!digits) throw std::invalid_argument(seed);
    rc.seed = std::stoull(seed);
  } catch (const std::exception&) {
    throw UsageError("seed must be a non-negative integer, got '" + seed + "'");
  }
  try {
    rc.variant_id = parse_variant(rc.variant);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (rc.variant_id == Variant::F && rc.direction != "fwd") {
    err << "note: variant F is the forward-only model; using --direction fwd\n";
    rc.direction = "fwd";
  }
  if (rc.direction == "fwd") {
    rc.directions = {Direction::forward};
  } else if (rc.direction == "bwd") {
    rc.directions = {Direction::backward};
  } else if (rc.direction == "both") {
    rc.directions = {Direction::forward, Direction::backward};
  } else {
    throw UsageError("--direction must be fwd, bwd or both");
  }

  KeyValues kv;
  if (!rc.config_file.empty()) {
    if (!fs::exists(rc.config_file)) throw UsageError("config file not found: " + rc.config_file);
    kv = KeyValues::load(rc.config_file);
  }
  for (const auto& line : rc.overrides) {
    try {
      kv.assign(line, "--set");
    } catch (const ParseError& e) {
      throw UsageError(e.what());
    }
  }
  rc.settings = apply_overrides(Settings::make(rc.desk, rc.seed), kv);
  rc.settings.classifier.variant = rc.variant_id;
}

inline KeyValues run_config_kv(const RunConfig& rc) {
  KeyValues kv;
  kv.set("subcommand", rc.subcommand);
  for (std::size_t i = 0; i < rc.data.size(); ++i) kv.set("data." + std::to_string(i), rc.data[i]);
  if (!rc.val.empty()) kv.set("val", rc.val);
  if (!rc.lexicon.empty()) kv.set("lexicon", rc.lexicon);
  kv.set("out", rc.out);
  kv.set("seed", std::to_string(rc.seed));
  kv.set("variant", std::string(1, variant_name(rc.variant_id)));
  kv.set("direction", rc.direction);
  kv.set("desk", rc.desk);
  kv.merge(settings_kv(rc.settings));
  return kv;
}

inline void write_run_config(const RunConfig& rc, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "run_config.txt");
  if (!out) throw IoError("cannot write " + (dir / "run_config.txt").string());
  out << "# resolved settings of this run\n";
  run_config_kv(rc).write(out);
}

// Work-directory layout under --out.
inline fs::path model_dir(const RunConfig& rc, Direction d) { return fs::path(rc.out) / short_name(d); }
inline fs::path pretrained_dir(const RunConfig& rc, Direction d) { return model_dir(rc, d) / "pretrained"; }
inline fs::path finetuned_dir(const RunConfig& rc, Direction d) { return model_dir(rc, d) / "finetuned"; }
inline fs::path classifier_dir(const RunConfig& rc, Direction d) {
  // F shares A's architecture; it only differs in running forward alone
  const char v = variant_name(rc.variant_id == Variant::F ? Variant::A : rc.variant_id);
  return model_dir(rc, d) / ("classifier-" + std::string(1, v));
}
inline fs::path report_dir(const RunConfig& rc, const std::string& what) {
  return fs::path(rc.out) / (what + "-" + std::string(1, variant_name(rc.variant_id)) + "-" + rc.direction);
}

inline Checkpoint load_kind(const fs::path& dir, CheckpointKind kind, const std::string& hint) {
  if (!fs::exists(dir / "VERSION")) throw IoError("no checkpoint at " + dir.string() + " (" + hint + ")");
  Checkpoint ck = load_checkpoint(dir);
  if (ck.kind != kind) throw Error("checkpoint " + dir.string() + " has the wrong kind");
  return ck;
}

inline std::ofstream open_output(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

inline void log_to(MetricsLog& log, std::ofstream& file, std::ostream& err) {
  log.attach(file);
  log.attach(err);
}

inline void cmd_pretrain(RunConfig& rc, std::ostream&, std::ostream& err) {
  const auto corpus = load_corpus(rc.data.at(0));
  for (Direction d : rc.directions) {
    const fs::path dir = pretrained_dir(rc, d);
    auto file = open_output(dir / "metrics.tsv");
    MetricsLog log;
    log_to(log, file, err);
    EncoderConfig enc = rc.settings.encoder;
    enc.direction = d;
    StageConfig sc = rc.settings.pretrain;
    auto r = pretrain_lm(corpus, enc, sc, rc.settings.min_count, &log);
    save_checkpoint(r.checkpoint, dir);
    write_run_config(rc, dir);
    err << "saved " << dir.string() << "\n";
  }
}

inline void cmd_finetune(RunConfig& rc, std::ostream&, std::ostream& err) {
  std::vector<ConversationRecord> records;
  for (const auto& path : rc.data) {
    auto part = load_conversations(path, false);
    records.insert(records.end(), part.begin(), part.end());
  }
  const auto texts = conversation_texts(records);
  for (Direction d : rc.directions) {
    const Checkpoint lm = load_kind(pretrained_dir(rc, d), CheckpointKind::lm, "run pretrain-lm first");
    const fs::path dir = finetuned_dir(rc, d);
    auto file = open_output(dir / "metrics.tsv");
    MetricsLog log;
    log_to(log, file, err);
    auto r = finetune_lm(lm, texts, rc.settings.finetune, rc.settings.min_count, &log);
    save_checkpoint(r.checkpoint, dir);
    write_run_config(rc, dir);
    err << "saved " << dir.string() << "\n";
  }
}

inline void cmd_train_cls(RunConfig& rc, std::ostream&, std::ostream& err) {
  if (rc.val.empty()) throw UsageError("train-cls needs --val");
  const auto train = load_conversations(rc.data.at(0), true);
  const auto val = load_conversations(rc.val, true);
  for (Direction d : rc.directions) {
    const Checkpoint lm = load_kind(finetuned_dir(rc, d), CheckpointKind::lm, "run finetune-lm first");
    const fs::path dir = classifier_dir(rc, d);
    auto file = open_output(dir / "metrics.tsv");
    MetricsLog log;
    log_to(log, file, err);
    ClassifierTrainOptions opts;
    opts.log = &log;
    opts.warn = [&](const std::string& m) { err << "warning: " << m << "\n"; };
    auto r = train_classifier(lm, train, val, rc.settings.classifier, rc.settings.classify, rc.settings.sampler, opts);
    save_checkpoint(r.best, dir);
    write_run_config(rc, dir);
    err << "best epoch " << r.best_epoch << " val micro-F1 " << fmt4(r.best_f1) << "; saved " << dir.string() << "\n";
  }
}

struct ModelPredictions {
  std::vector<std::pair<std::string, std::vector<Prediction>>> singles;
  std::vector<Prediction> combined;
};

/// Predictions of every requested direction plus their ensemble.
inline ModelPredictions predict_all(const RunConfig& rc, const std::vector<ConversationRecord>& records,
                                    std::vector<NumericalizedConversation>& convs) {
  ModelPredictions mp;
  for (Direction d : rc.directions) {
    Checkpoint ck = load_kind(classifier_dir(rc, d), CheckpointKind::classifier, "run train-cls first");
    auto nc = numericalize_all(records, ck.vocab);
    if (convs.empty()) convs = nc;
    mp.singles.emplace_back(std::string(short_name(d)), predict(ck, nc, rc.settings.eval_batch));
  }
  mp.combined = mp.singles.size() == 2 ? ensemble(mp.singles[0].second, mp.singles[1].second) : mp.singles[0].second;
  return mp;
}

inline void cmd_eval(RunConfig& rc, std::ostream& out, std::ostream& err) {
  const auto records = load_conversations(rc.data.at(0), true);
  std::vector<NumericalizedConversation> convs;
  const auto mp = predict_all(rc, records, convs);
  const std::string name(1, variant_name(rc.variant_id));
  std::vector<std::pair<std::string, MetricsReport>> rows;
  if (mp.singles.size() == 2) {
    for (const auto& [dir, preds] : mp.singles) rows.emplace_back(name + "-" + dir, evaluate(preds, convs));
  }
  rows.emplace_back(name, evaluate(mp.combined, convs));

  const fs::path dir = report_dir(rc, "eval");
  auto table = open_output(dir / "table.txt");
  write_metrics_table(table, rows);
  write_metrics_table(out, rows);
  auto tsv = open_output(dir / "metrics.tsv");
  for (const auto& [model, report] : rows) write_metrics_tsv(tsv, model, report);
  auto preds = open_output(dir / "predictions.tsv");
  write_predictions(preds, convs, mp.combined);
  write_run_config(rc, dir);
  err << "wrote " << dir.string() << "\n";
}

inline void cmd_predict(RunConfig& rc, std::ostream& out, std::ostream& err) {
  const auto records = load_conversations(rc.data.at(0), false);
  std::vector<NumericalizedConversation> convs;
  const auto mp = predict_all(rc, records, convs);
  const fs::path dir = report_dir(rc, "predict");
  auto file = open_output(dir / "predictions.tsv");
  write_predictions(file, convs, mp.combined);
  write_predictions(out, convs, mp.combined);
  write_run_config(rc, dir);
  err << "wrote " << (dir / "predictions.tsv").string() << "\n";
}

inline void cmd_attn_report(RunConfig& rc, std::ostream& out, std::ostream& err) {
  if (rc.lexicon.empty()) throw UsageError("attn-report needs --lexicon");
  if (rc.variant_id == Variant::B) throw UsageError("variant B has no attention to report");
  const auto lexicon = load_lexicon(rc.lexicon);
  const auto records = load_conversations(rc.data.at(0), true);
  std::vector<NumericalizedConversation> convs;
  const auto mp = predict_all(rc, records, convs);
  const auto rep = lexicon_match(select_attended_tokens(convs, mp.combined, rc.settings.attention_frac), lexicon);

  const fs::path dir = report_dir(rc, "attn");
  auto txt = open_output(dir / "attention_report.txt");
  write_attention_report(txt, rep);
  write_attention_report(out, rep);
  auto tsv = open_output(dir / "attention_report.tsv");
  write_attention_report_tsv(tsv, rep);
  auto scores = open_output(dir / "attention_scores.tsv");
  write_attention_tsv(scores, convs, mp.combined);
  write_run_config(rc, dir);
  err << "wrote " << dir.string() << "\n";
}

/// Returns false when some check exceeds the tolerance.
inline bool cmd_gradcheck(std::ostream& out) {
  bool ok = true;
  out << "op\tmax_rel_error\tstatus\n";
  for (const auto& c : run_gradient_checks()) {
    const bool pass = c.result.max_rel_error < 1e-4;
    ok = ok && pass;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", c.result.max_rel_error);
    out << c.name << "\t" << buf << "\t" << (pass ? "ok" : "FAIL") << "\n";
  }
  return ok;
}

/// Entry point; exit code 0 on success, 1 on usage errors, 2 on runtime errors.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Emotion classification of three-turn conversations with attention over a fine-tuned LSTM encoder"};
  app.require_subcommand(1);
  RunConfig rc;

  struct Spec {
    const char* name;
    const char* help;
    const char* data_help;  // nullptr: no --data
  };
  const std::vector<Spec> specs = {
      {"pretrain-lm", "train the language model on a plain-text corpus", "corpus, one text per line"},
      {"finetune-lm", "fine-tune the language model on task conversations", "conversation TSV file(s)"},
      {"train-cls", "train the attention classifier", "labeled training TSV"},
      {"eval", "score a labeled file and print the per-emotion table", "labeled TSV"},
      {"predict", "class probabilities per conversation", "TSV, label column optional"},
      {"attn-report", "share of attended tokens found in an emotion lexicon", "labeled TSV"},
      {"gradcheck", "finite-difference check of every differentiable op", nullptr},
  };
  for (const auto& s : specs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->callback([&rc, name = std::string(s.name)] { rc.subcommand = name; });
    if (!s.data_help) continue;
    auto* data = sub->add_option("--data", rc.data, s.data_help)->required();
    if (std::string(s.name) != "finetune-lm") data->expected(1);
    sub->add_option("--out", rc.out, "work directory for checkpoints and reports")->capture_default_str();
    sub->add_option("--seed", rc.seed_text, "random seed (default: $EMOATTN_SEED or 0)");
    sub->add_option("--direction", rc.direction, "fwd, bwd or both")
        ->check(CLI::IsMember({"fwd", "bwd", "both"}))
        ->capture_default_str();
    sub->add_flag("--desk", rc.desk, "small encoder and batches for a laptop run");
    sub->add_option("--config", rc.config_file, "file of key=value settings");
    sub->add_option("--set", rc.overrides, "key=value setting, repeatable");
    const std::string name = s.name;
    if (name != "pretrain-lm" && name != "finetune-lm") {
      sub->add_option("--variant", rc.variant, "classifier input variant A-F")
          ->check(CLI::IsMember({"A", "B", "C", "D", "E", "F"}))
          ->capture_default_str();
    }
    if (name == "train-cls") sub->add_option("--val", rc.val, "labeled validation TSV for model selection")->required();
    if (name == "attn-report") sub->add_option("--lexicon", rc.lexicon, "word<TAB>emotion<TAB>0|1 lexicon")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (rc.subcommand == "gradcheck") return cmd_gradcheck(out) ? 0 : 2;
    resolve(rc, err);
    tune_allocator();
    if (rc.subcommand == "pretrain-lm") cmd_pretrain(rc, out, err);
    if (rc.subcommand == "finetune-lm") cmd_finetune(rc, out, err);
    if (rc.subcommand == "train-cls") cmd_train_cls(rc, out, err);
    if (rc.subcommand == "eval") cmd_eval(rc, out, err);
    if (rc.subcommand == "predict") cmd_predict(rc, out, err);
    if (rc.subcommand == "attn-report") cmd_attn_report(rc, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace emoattn::cli
