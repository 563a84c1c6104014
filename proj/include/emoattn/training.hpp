#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "emoattn/attention.hpp"
#include "emoattn/checkpoint.hpp"
#include "emoattn/corpus_io.hpp"
#include "emoattn/encoder.hpp"
#include "emoattn/metrics.hpp"
#include "emoattn/optim.hpp"
#include "emoattn/params.hpp"
#include "emoattn/rng.hpp"
#include "emoattn/text_pipeline.hpp"

namespace emoattn {

enum class Stage { pretrain, finetune, classify };

inline std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::pretrain: return "pretrain";
    case Stage::finetune: return "finetune";
    case Stage::classify: return "classify";
  }
  return "classify";
}

struct StageConfig {
  Stage stage = Stage::classify;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double base_lr = 0.01;
  ScheduleKind schedule = ScheduleKind::slanted_triangular;
  double cut_frac = 0.1;
  double ratio = 32.0;
  std::uint64_t seed = 0;
  std::size_t bptt = 70;
  bool discriminative = true;
  double group_decay = 2.6;
  bool gradual_unfreeze = true;
  double clip = 0.25;

  static StageConfig defaults(Stage s) {
    StageConfig c;
    c.stage = s;
    switch (s) {
      case Stage::pretrain:
        c.epochs = 10;
        c.base_lr = 0.004;
        c.discriminative = false;
        c.gradual_unfreeze = false;
        break;
      case Stage::finetune:
        c.epochs = 14;
        c.base_lr = 0.004;
        c.gradual_unfreeze = false;
        break;
      case Stage::classify:
        c.clip = 1.0;
        break;
    }
    return c;
  }

  /// Desk preset: same schedule, batch 32.
  static StageConfig desk(Stage s) {
    StageConfig c = defaults(s);
    c.batch_size = 32;
    return c;
  }

  /// One schedule cycle over the stage. Runs too short for a warm-up step
  /// fall back to a constant rate.
  LRSchedule schedule_for(std::int64_t total_steps) const {
    LRSchedule s;
    s.kind = schedule;
    s.lr_max = base_lr;
    s.total_steps = std::max<std::int64_t>(total_steps, 1);
    s.cut_frac = cut_frac;
    s.ratio = ratio;
    if (s.kind == ScheduleKind::slanted_triangular && std::floor(double(s.total_steps) * cut_frac) < 1.0) {
      s.kind = ScheduleKind::constant;
    }
    return s;
  }
};

inline KeyValues stage_config_kv(const StageConfig& c) {
  KeyValues kv;
  kv.set("epochs", c.epochs);
  kv.set("batch_size", c.batch_size);
  kv.set("base_lr", c.base_lr);
  kv.set("schedule", c.schedule == ScheduleKind::constant ? "constant" : "stlr");
  kv.set("cut_frac", c.cut_frac);
  kv.set("ratio", c.ratio);
  kv.set("seed", std::to_string(c.seed));
  kv.set("bptt", c.bptt);
  kv.set("discriminative", c.discriminative);
  kv.set("group_decay", c.group_decay);
  kv.set("gradual_unfreeze", c.gradual_unfreeze);
  kv.set("clip", c.clip);
  return kv;
}

inline StageConfig stage_config_from(const KeyValues& kv, StageConfig c, const std::string& prefix = "") {
  c.epochs = kv.get_size(prefix + "epochs", c.epochs);
  c.batch_size = kv.get_size(prefix + "batch_size", c.batch_size);
  c.base_lr = kv.get_double(prefix + "base_lr", c.base_lr);
  if (kv.has(prefix + "schedule")) {
    const auto& s = kv.get(prefix + "schedule");
    if (s == "constant") {
      c.schedule = ScheduleKind::constant;
    } else if (s == "stlr") {
      c.schedule = ScheduleKind::slanted_triangular;
    } else {
      throw Error("unknown schedule '" + s + "' (expected stlr or constant)");
    }
  }
  c.cut_frac = kv.get_double(prefix + "cut_frac", c.cut_frac);
  c.ratio = kv.get_double(prefix + "ratio", c.ratio);
  c.seed = kv.get_size(prefix + "seed", c.seed);
  c.bptt = kv.get_size(prefix + "bptt", c.bptt);
  c.discriminative = kv.get_bool(prefix + "discriminative", c.discriminative);
  c.group_decay = kv.get_double(prefix + "group_decay", c.group_decay);
  c.gradual_unfreeze = kv.get_bool(prefix + "gradual_unfreeze", c.gradual_unfreeze);
  c.clip = kv.get_double(prefix + "clip", c.clip);
  if (c.batch_size == 0) throw Error(prefix + "batch_size must be positive");
  if (!(c.base_lr > 0.0)) throw Error(prefix + "base_lr must be positive");
  return c;
}

// ---------------------------------------------------------------------------
// Layer groups

/// Rate for a layer group: the head group gets lr, each group below it a
/// further factor 1/decay when discriminative.
inline double group_learning_rate(double lr, int group, int head_group, bool discriminative, double decay = 2.6) {
  if (!discriminative || group >= head_group) return lr;
  return lr * std::pow(decay, -static_cast<double>(head_group - group));
}

/// Lowest trainable group in a given epoch: one more group is unfrozen per
/// epoch from the top.
inline int lowest_trainable_group(std::size_t epoch, int head_group, bool gradual) {
  if (!gradual) return 0;
  return std::max(0, head_group - static_cast<int>(epoch));
}

/// Adam over a parameter store with per-group rates and frozen groups.
class Optimizer {
 public:
  explicit Optimizer(ParamStore<float>& store) : store_(&store) {}

  void step(double lr, int head_group, bool discriminative, double decay, int min_group) {
    for (auto* p : store_->all()) {
      if (p->group < min_group) continue;
      const double rate = group_learning_rate(lr, p->group, head_group, discriminative, decay);
      last_rate_[p->name] = rate;
      adam_step(p->value, p->grad, states_[p->name], rate);
    }
  }

  /// Rate applied to a parameter in the latest step it took part in.
  std::optional<double> last_rate(const std::string& name) const {
    auto it = last_rate_.find(name);
    if (it == last_rate_.end()) return std::nullopt;
    return it->second;
  }

 private:
  ParamStore<float>* store_;
  std::map<std::string, AdamState<float>> states_;
  std::map<std::string, double> last_rate_;
};

// ---------------------------------------------------------------------------
// Epoch log

/// Epoch metrics as TSV lines: stage, epoch, split, loss, microF1 (NA when
/// not computed). Lines go to every attached stream and are kept in memory.
class MetricsLog {
 public:
  void attach(std::ostream& out) {
    sinks_.push_back(&out);
    out << header() << "\n";
  }

  static std::string header() { return "stage\tepoch\tsplit\tloss\tmicroF1"; }

  void record(std::string_view stage, std::size_t epoch, std::string_view split, double loss,
              std::optional<double> f1 = std::nullopt) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", loss);
    std::string line = std::string(stage) + "\t" + std::to_string(epoch) + "\t" + std::string(split) + "\t" + buf + "\t";
    line += f1 ? fmt4(*f1) : std::string("NA");
    for (auto* s : sinks_) *s << line << "\n" << std::flush;
    lines_.push_back(std::move(line));
  }

  const std::vector<std::string>& lines() const { return lines_; }

 private:
  std::vector<std::ostream*> sinks_;
  std::vector<std::string> lines_;
};

// ---------------------------------------------------------------------------
// Language-model data

inline std::vector<std::vector<std::string>> tokenize_texts(const std::vector<std::string>& texts) {
  std::vector<std::vector<std::string>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(tokenize(t));
  return out;
}

/// The three turns of each conversation as one text.
inline std::vector<std::string> conversation_texts(const std::vector<ConversationRecord>& records) {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.turns[0] + " " + r.turns[1] + " " + r.turns[2]);
  return out;
}

/// <bos> followed by each text's ids, all texts concatenated. Backward
/// models read each text reversed.
inline std::vector<std::size_t> lm_stream(const std::vector<std::vector<std::string>>& texts, const Vocabulary& vocab,
                                          Direction direction) {
  std::vector<std::size_t> out;
  for (const auto& t : texts) {
    out.push_back(kBosId);
    const std::size_t start = out.size();
    for (const auto& tok : t) out.push_back(vocab.id(tok));
    if (direction == Direction::backward) std::reverse(out.begin() + static_cast<std::ptrdiff_t>(start), out.end());
  }
  return out;
}

struct LmWindow {
  SequenceBatch input;
  std::vector<std::size_t> targets;  // time-major, next token of each input position
};

/// Splits a token stream into `batch` contiguous streams read in windows of
/// `bptt` positions.
class LmBatcher {
 public:
  LmBatcher(const std::vector<std::size_t>& stream, std::size_t batch, std::size_t bptt) : bptt_(bptt) {
    if (stream.size() < 2) throw Error("language-model corpus needs at least two tokens");
    if (bptt == 0) throw Error("bptt must be positive");
    batch_ = std::max<std::size_t>(1, std::min(batch, stream.size() / 2));
    length_ = stream.size() / batch_;
    streams_.resize(batch_);
    for (std::size_t b = 0; b < batch_; ++b) {
      streams_[b].assign(stream.begin() + static_cast<std::ptrdiff_t>(b * length_),
                         stream.begin() + static_cast<std::ptrdiff_t>((b + 1) * length_));
    }
  }

  std::size_t batch() const { return batch_; }
  std::size_t size() const { return (length_ - 1 + bptt_ - 1) / bptt_; }

  LmWindow window(std::size_t i) const {
    const std::size_t start = i * bptt_;
    const std::size_t steps = std::min(bptt_, length_ - 1 - start);
    LmWindow w;
    w.input.steps = steps;
    w.input.batch = batch_;
    w.input.ids.resize(steps * batch_);
    w.targets.resize(steps * batch_);
    w.input.lengths.assign(batch_, steps);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t b = 0; b < batch_; ++b) {
        w.input.ids[t * batch_ + b] = streams_[b][start + t];
        w.targets[t * batch_ + b] = streams_[b][start + t + 1];
      }
    }
    return w;
  }

 private:
  std::size_t bptt_;
  std::size_t batch_ = 1;
  std::size_t length_ = 0;
  std::vector<std::vector<std::size_t>> streams_;
};

struct LmTrainResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_losses;
};

namespace detail {

inline void run_lm_epochs(Checkpoint& ck, const std::vector<std::size_t>& stream, const StageConfig& sc, MetricsLog* log,
                          std::vector<double>& losses) {
  if (ck.encoder.direction == Direction::bidirectional) {
    throw Error("language-model training requires a forward or backward encoder");
  }
  LmBatcher batcher(stream, sc.batch_size, sc.bptt);
  const auto sched = sc.schedule_for(static_cast<std::int64_t>(sc.epochs * batcher.size()));
  Optimizer opt(ck.params);
  const Rng root = Rng(sc.seed).split(stage_name(sc.stage));
  const int head = ck.encoder.head_group();
  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < sc.epochs; ++epoch) {
    EncoderState<float> state;
    double total = 0.0;
    std::size_t count = 0;
    const int min_group = lowest_trainable_group(epoch, head, sc.gradual_unfreeze);
    for (std::size_t i = 0; i < batcher.size(); ++i) {
      Rng rng = root.split(static_cast<std::uint64_t>(step));
      const LmWindow win = batcher.window(i);
      Graph<float> g;
      auto ew = bind_encoder(g, ck.params, ck.encoder);
      auto dw = bind_decoder(g, ck.params, ck.encoder, ew);
      auto out = encode_batch(g, ew, ck.encoder, win.input, Mode::train, rng, &state);
      Var<float> loss = lm_loss(lm_logits(out.vectors, dw), win.targets);
      ck.params.zero_grad();
      g.backward(loss);
      clip_grad_norm(ck.params.all(), sc.clip);
      opt.step(stlr(step, sched), head, sc.discriminative, sc.group_decay, min_group);
      total += static_cast<double>(loss.value()[0]) * static_cast<double>(win.targets.size());
      count += win.targets.size();
      ++step;
    }
    losses.push_back(total / static_cast<double>(count));
    if (log) log->record(stage_name(sc.stage), epoch + 1, "train", losses.back());
  }
}

}  // namespace detail

/// Mean next-token loss in eval mode (no dropout), state carried across windows.
inline double evaluate_lm_loss(Checkpoint& ck, const std::vector<std::size_t>& stream, std::size_t batch,
                               std::size_t bptt) {
  LmBatcher batcher(stream, batch, bptt);
  EncoderState<float> state;
  Rng rng(0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < batcher.size(); ++i) {
    const LmWindow win = batcher.window(i);
    Graph<float> g;
    auto ew = bind_encoder(g, ck.params, ck.encoder);
    auto dw = bind_decoder(g, ck.params, ck.encoder, ew);
    auto out = encode_batch(g, ew, ck.encoder, win.input, Mode::eval, rng, &state);
    total += static_cast<double>(lm_loss(lm_logits(out.vectors, dw), win.targets).value()[0]) *
             static_cast<double>(win.targets.size());
    count += win.targets.size();
  }
  return total / static_cast<double>(count);
}

/// Trains a randomly initialized encoder and decoder on a general corpus.
inline LmTrainResult pretrain_lm(const std::vector<std::string>& corpus, EncoderConfig enc, const StageConfig& sc,
                                 std::size_t min_count = 3, MetricsLog* log = nullptr) {
  if (corpus.empty()) throw Error("pretrain_lm: empty corpus");
  const auto texts = tokenize_texts(corpus);
  LmTrainResult r;
  Checkpoint& ck = r.checkpoint;
  ck.kind = CheckpointKind::lm;
  ck.vocab = build_vocab(texts, min_count);
  if (ck.vocab.size() <= kNumReserved) {
    throw Error("pretrain_lm: vocabulary too small (" + std::to_string(ck.vocab.size()) +
                " tokens, needs more than the reserved ones)");
  }
  enc.vocab_size = ck.vocab.size();
  ck.encoder = enc;
  init_encoder_params(ck.params, enc, Rng(sc.seed).split("pretrain-init"));
  detail::run_lm_epochs(ck, lm_stream(texts, ck.vocab, enc.direction), sc, log, r.epoch_losses);
  return r;
}

/// Copies vocabulary-indexed parameters onto a new vocabulary: rows of
/// tokens known to the old model are kept, new tokens get the mean row.
inline Checkpoint transfer_vocabulary(const Checkpoint& src, const Vocabulary& vocab) {
  Checkpoint out;
  out.kind = src.kind;
  out.encoder = src.encoder;
  out.encoder.vocab_size = vocab.size();
  out.classifier = src.classifier;
  out.vocab = vocab;
  auto remap = [&](const Tensor<float>& old) {
    const std::size_t cols = old.cols();
    std::vector<double> mean(cols, 0.0);
    for (std::size_t r = 0; r < old.rows(); ++r)
      for (std::size_t c = 0; c < cols; ++c) mean[c] += old(r, c);
    for (auto& m : mean) m /= static_cast<double>(old.rows());
    Tensor<float> t = Tensor<float>::matrix(vocab.size(), cols);
    for (std::size_t id = 0; id < vocab.size(); ++id) {
      const auto src_id = src.vocab.find(vocab.token(id));
      for (std::size_t c = 0; c < cols; ++c) t(id, c) = src_id ? old(*src_id, c) : static_cast<float>(mean[c]);
    }
    return t;
  };
  auto remap_bias = [&](const Tensor<float>& old) {
    double mean = 0.0;
    for (float v : old.values()) mean += v;
    mean /= static_cast<double>(old.size());
    Tensor<float> t = Tensor<float>::matrix(1, vocab.size());
    for (std::size_t id = 0; id < vocab.size(); ++id) {
      const auto src_id = src.vocab.find(vocab.token(id));
      t[id] = src_id ? old[*src_id] : static_cast<float>(mean);
    }
    return t;
  };
  for (const auto* p : src.params.all()) {
    if (p->name == "encoder.embedding" || p->name == "decoder.weight") {
      out.params.add(p->name, remap(p->value), p->group);
    } else if (p->name == "decoder.bias") {
      out.params.add(p->name, remap_bias(p->value), p->group);
    } else {
      out.params.add(p->name, p->value, p->group);
    }
  }
  return out;
}

/// Rebuilds the vocabulary from task text and continues language-model
/// training on it.
inline LmTrainResult finetune_lm(const Checkpoint& lm, const std::vector<std::string>& task_texts, const StageConfig& sc,
                                 std::size_t min_count = 3, MetricsLog* log = nullptr) {
  if (lm.kind != CheckpointKind::lm) throw Error("finetune_lm: expected a language-model checkpoint");
  if (task_texts.empty()) throw Error("finetune_lm: no task text");
  const auto texts = tokenize_texts(task_texts);
  const Vocabulary vocab = build_vocab(texts, min_count);
  if (vocab.size() <= kNumReserved) throw Error("finetune_lm: task vocabulary too small");
  LmTrainResult r;
  r.checkpoint = transfer_vocabulary(lm, vocab);
  detail::run_lm_epochs(r.checkpoint, lm_stream(texts, vocab, lm.encoder.direction), sc, log, r.epoch_losses);
  return r;
}

// ---------------------------------------------------------------------------
// Weighted sampling

struct SamplerWeights {
  std::array<double, kNumClasses> weights{0.4, 0.4, 0.4, 0.2};

  static SamplerWeights uniform() { return SamplerWeights{{1.0, 1.0, 1.0, 1.0}}; }
};

/// Draws example indices with replacement, each with probability
/// proportional to its class weight.
class WeightedSampler {
 public:
  WeightedSampler(const std::vector<std::size_t>& labels, const SamplerWeights& w,
                  const std::function<void(const std::string&)>& warn = nullptr) {
    if (labels.empty()) throw Error("weighted_sample: empty dataset");
    std::array<std::size_t, kNumClasses> counts{};
    for (auto l : labels) {
      if (l >= kNumClasses) throw Error("weighted_sample: label id " + std::to_string(l) + " out of range");
      ++counts[l];
    }
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      if (!(w.weights[k] > 0.0)) throw Error("weighted_sample: class weights must be positive");
      if (counts[k] == 0 && warn) {
        warn("class '" + std::string(emotion_name(static_cast<Emotion>(k))) +
             "' has no training examples; sampling weights renormalized over the remaining classes");
      }
    }
    double acc = 0.0;
    for (auto l : labels) cumulative_.push_back(acc += w.weights[l]);
    double total_mass = 0.0;
    for (std::size_t k = 0; k < kNumClasses; ++k) total_mass += static_cast<double>(counts[k]) * w.weights[k];
    for (std::size_t k = 0; k < kNumClasses; ++k) class_mass_[k] = counts[k] * w.weights[k] / total_mass;
  }

  std::size_t draw(Rng& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    if (it == cumulative_.end()) --it;
    return static_cast<std::size_t>(it - cumulative_.begin());
  }

  std::vector<std::size_t> sample(std::size_t n, Rng& rng) const {
    std::vector<std::size_t> out(n);
    for (auto& i : out) i = draw(rng);
    return out;
  }

  /// Probability that a draw comes from each class.
  const std::array<double, kNumClasses>& class_probabilities() const { return class_mass_; }

 private:
  std::vector<double> cumulative_;
  std::array<double, kNumClasses> class_mass_{};
};

inline std::vector<std::size_t> weighted_sample(const std::vector<std::size_t>& labels, const SamplerWeights& w,
                                                std::size_t batch_size, Rng& rng) {
  return WeightedSampler(labels, w).sample(batch_size, rng);
}

// ---------------------------------------------------------------------------
// Classifier

/// Keeps the snapshot with the highest metric; ties keep the earlier one.
template <class Snapshot>
class BestTracker {
 public:
  bool offer(std::size_t epoch, double metric, const Snapshot& snapshot) {
    if (best_ && !(metric > metric_)) return false;
    best_ = snapshot;
    metric_ = metric;
    epoch_ = epoch;
    return true;
  }

  bool has_value() const { return best_.has_value(); }
  const Snapshot& best() const { return best_.value(); }
  std::size_t best_epoch() const { return epoch_; }
  double best_metric() const { return metric_; }

 private:
  std::optional<Snapshot> best_;
  double metric_ = 0.0;
  std::size_t epoch_ = 0;
};

/// The conversation in the token order the model reads.
inline NumericalizedConversation oriented(const NumericalizedConversation& conv, Direction d) {
  return d == Direction::backward ? reverse(conv) : conv;
}

inline std::vector<NumericalizedConversation> numericalize_all(const std::vector<ConversationRecord>& records,
                                                               const Vocabulary& vocab) {
  std::vector<NumericalizedConversation> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(numericalize(r, vocab));
  return out;
}

struct Prediction {
  Probabilities probs{};
  /// Attention over turn 1 and turn 3 in reading order of the original
  /// text; empty for the no-attention variant.
  std::array<std::vector<double>, 2> attention;
};

/// Eval-mode class probabilities and attention scores.
inline std::vector<Prediction> predict(Checkpoint& ck, const std::vector<NumericalizedConversation>& convs,
                                       std::size_t batch_size = 64) {
  if (ck.kind != CheckpointKind::classifier || !ck.classifier) throw Error("predict: expected a classifier checkpoint");
  const auto& cfg = *ck.classifier;
  const bool backward = ck.encoder.direction == Direction::backward;
  std::vector<Prediction> out;
  out.reserve(convs.size());
  Rng rng(0);
  for (std::size_t start = 0; start < convs.size(); start += batch_size) {
    const std::size_t end = std::min(convs.size(), start + batch_size);
    std::vector<NumericalizedConversation> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(oriented(convs[i], ck.encoder.direction));
    std::vector<const NumericalizedConversation*> ptrs;
    for (const auto& c : batch) ptrs.push_back(&c);
    Graph<float> g;
    auto ew = bind_encoder(g, ck.params, ck.encoder);
    auto cw = bind_classifier(g, ck.params);
    auto enc = encode_batch(g, ew, ck.encoder, make_batch(ptrs), Mode::eval, rng);
    auto in = build_input(enc, cw, cfg);
    auto probs = classify(in.x, cw, cfg, Mode::eval, rng);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      Prediction p;
      // renormalized in double so the float rounding of softmax does not
      // leak into sums and ensembles
      double z = 0.0;
      for (std::size_t k = 0; k < kNumClasses; ++k) z += (p.probs[k] = probs.value()(b, k));
      for (auto& v : p.probs) v /= z;
      auto scores_of = [&](const std::optional<AttentionResult<float>>& att, std::size_t turn) {
        std::vector<double> s;
        if (!att) return s;
        const std::size_t n = batch[b].spans[turn].size();
        for (std::size_t j = 0; j < n; ++j) s.push_back(att->scores.value()(b, j));
        if (backward) std::reverse(s.begin(), s.end());
        return s;
      };
      p.attention[0] = scores_of(in.first, 0);
      p.attention[1] = scores_of(in.last, 2);
      out.push_back(std::move(p));
    }
  }
  return out;
}

/// Averaged probabilities (renormalized) and attention of two models.
inline std::vector<Prediction> ensemble(const std::vector<Prediction>& a, const std::vector<Prediction>& b) {
  if (a.size() != b.size()) {
    throw ShapeError("ensemble: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " predictions");
  }
  std::vector<Prediction> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i].probs = ensemble(a[i].probs, b[i].probs);
    for (std::size_t t = 0; t < 2; ++t) {
      const auto& x = a[i].attention[t];
      const auto& y = b[i].attention[t];
      if (x.empty() || y.empty()) {
        out[i].attention[t] = x.empty() ? y : x;
        continue;
      }
      out[i].attention[t] = ensemble(x, y);
    }
  }
  return out;
}

inline std::vector<Emotion> predicted_labels(const std::vector<Prediction>& preds) {
  std::vector<Emotion> out;
  out.reserve(preds.size());
  for (const auto& p : preds) out.push_back(static_cast<Emotion>(argmax(p.probs)));
  return out;
}

inline std::vector<Emotion> gold_labels(const std::vector<NumericalizedConversation>& convs) {
  std::vector<Emotion> out;
  out.reserve(convs.size());
  for (const auto& c : convs) {
    if (!c.label_id) throw Error("conversation '" + c.id + "' has no label");
    out.push_back(static_cast<Emotion>(*c.label_id));
  }
  return out;
}

inline double mean_log_loss(const std::vector<Prediction>& preds, const std::vector<Emotion>& gold) {
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    total -= std::log(std::max(preds[i].probs[static_cast<std::size_t>(gold[i])], 1e-12));
  }
  return preds.empty() ? 0.0 : total / static_cast<double>(preds.size());
}

struct ClassifierTrainOptions {
  MetricsLog* log = nullptr;
  std::function<void(const std::string&)> warn;
  /// Replaces the validation micro-F1 used for model selection.
  std::function<double(std::size_t epoch, double computed)> metric_hook;
  /// Called after each epoch with the current model.
  std::function<void(std::size_t epoch, const Checkpoint&)> on_epoch;
  /// Called after each backward pass, before the optimizer step.
  std::function<void(std::size_t step, const ParamStore<float>&)> after_backward;
  /// Called after each optimizer step.
  std::function<void(std::size_t step, const Optimizer&)> after_step;
};

struct ClassifierTrainResult {
  Checkpoint best;
  std::size_t best_epoch = 0;
  double best_f1 = 0.0;
  std::vector<double> train_loss;
  std::vector<double> val_f1;
};

/// Encoder from the language model; attention and linear block freshly
/// initialized in the head group. The decoder is dropped.
inline Checkpoint make_classifier(const Checkpoint& lm, const ClassifierConfig& cfg, std::uint64_t seed) {
  if (lm.kind != CheckpointKind::lm) throw Error("expected a language-model checkpoint");
  Checkpoint ck;
  ck.kind = CheckpointKind::classifier;
  ck.encoder = lm.encoder;
  ck.classifier = cfg;
  ck.vocab = lm.vocab;
  for (const auto* p : lm.params.all()) {
    if (p->name.rfind("decoder.", 0) == 0) continue;
    ck.params.add(p->name, p->value, p->group);
  }
  init_classifier_params(ck.params, cfg, lm.encoder.output_dim(), lm.encoder.head_group(), Rng(seed));
  return ck;
}

inline ClassifierTrainResult train_classifier(const Checkpoint& lm, const std::vector<ConversationRecord>& train,
                                              const std::vector<ConversationRecord>& val, const ClassifierConfig& cfg,
                                              const StageConfig& sc, const SamplerWeights& weights = {},
                                              const ClassifierTrainOptions& opts = {}) {
  if (train.empty()) throw Error("train_classifier: empty training set");
  if (val.empty()) throw Error("train_classifier: empty validation set");
  Checkpoint ck = make_classifier(lm, cfg, sc.seed);
  const auto train_convs = numericalize_all(train, ck.vocab);
  const auto val_convs = numericalize_all(val, ck.vocab);
  std::vector<NumericalizedConversation> train_read;
  std::vector<std::size_t> labels;
  for (const auto& c : train_convs) {
    if (!c.label_id) throw Error("train_classifier: conversation '" + c.id + "' has no label");
    train_read.push_back(oriented(c, ck.encoder.direction));
    labels.push_back(*c.label_id);
  }
  const auto val_gold = gold_labels(val_convs);
  const WeightedSampler sampler(labels, weights, opts.warn);

  const std::size_t per_epoch = (train_read.size() + sc.batch_size - 1) / sc.batch_size;
  const auto sched = sc.schedule_for(static_cast<std::int64_t>(sc.epochs * per_epoch));
  Optimizer opt(ck.params);
  const Rng root = Rng(sc.seed).split("classify");
  const int head = ck.encoder.head_group();
  BestTracker<Checkpoint> tracker;
  ClassifierTrainResult r;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < sc.epochs; ++epoch) {
    const int min_group = lowest_trainable_group(epoch, head, sc.gradual_unfreeze);
    double total = 0.0;
    for (std::size_t i = 0; i < per_epoch; ++i) {
      Rng rng = root.split(step);
      Rng draw = rng.split("sample");
      const auto idx = sampler.sample(sc.batch_size, draw);
      std::vector<const NumericalizedConversation*> ptrs;
      std::vector<std::size_t> targets;
      for (auto k : idx) {
        ptrs.push_back(&train_read[k]);
        targets.push_back(labels[k]);
      }
      Graph<float> g;
      auto ew = bind_encoder(g, ck.params, ck.encoder);
      auto cw = bind_classifier(g, ck.params);
      auto enc = encode_batch(g, ew, ck.encoder, make_batch(ptrs), Mode::train, rng);
      auto in = build_input(enc, cw, cfg);
      Var<float> loss = cross_entropy_logits(classify_logits(in.x, cw, cfg, Mode::train, rng), targets);
      ck.params.zero_grad();
      g.backward(loss);
      if (opts.after_backward) opts.after_backward(step, ck.params);
      clip_grad_norm(ck.params.all(), sc.clip);
      opt.step(stlr(static_cast<std::int64_t>(step), sched), head, sc.discriminative, sc.group_decay, min_group);
      if (opts.after_step) opts.after_step(step, opt);
      total += loss.value()[0];
      ++step;
    }
    r.train_loss.push_back(total / static_cast<double>(per_epoch));
    const auto preds = predict(ck, val_convs);
    double f1 = micro_f1(confusion_counts(predicted_labels(preds), val_gold));
    if (opts.metric_hook) f1 = opts.metric_hook(epoch + 1, f1);
    r.val_f1.push_back(f1);
    if (opts.log) {
      opts.log->record("classify", epoch + 1, "train", r.train_loss.back());
      opts.log->record("classify", epoch + 1, "val", mean_log_loss(preds, val_gold), f1);
    }
    if (opts.on_epoch) opts.on_epoch(epoch + 1, ck);
    tracker.offer(epoch + 1, f1, ck);
  }
  if (!tracker.has_value()) throw Error("train_classifier: no epochs run");
  r.best = tracker.best();
  r.best_epoch = tracker.best_epoch();
  r.best_f1 = tracker.best_metric();
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

inline MetricsReport evaluate(const std::vector<Prediction>& preds, const std::vector<NumericalizedConversation>& convs) {
  return evaluate_predictions(predicted_labels(preds), gold_labels(convs));
}

/// Top-scored tokens of turns 1 and 3 per conversation, grouped by gold
/// emotion ("others" conversations are skipped).
inline std::map<Emotion, std::vector<std::string>> select_attended_tokens(
    const std::vector<NumericalizedConversation>& convs, const std::vector<Prediction>& preds, double frac = 0.2) {
  if (convs.size() != preds.size()) throw ShapeError("select_attended_tokens: size mismatch");
  std::map<Emotion, std::vector<std::string>> out;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const auto& c = convs[i];
    if (!c.label_id) continue;
    const auto e = static_cast<Emotion>(*c.label_id);
    if (e == Emotion::others) continue;
    auto& bucket = out[e];
    const std::array<std::size_t, 2> turns{0, 2};
    for (std::size_t k = 0; k < 2; ++k) {
      const Span s = c.spans[turns[k]];
      const auto& scores = preds[i].attention[k];
      if (scores.empty()) throw Error("select_attended_tokens: model has no attention scores");
      std::vector<std::string> toks(c.tokens.begin() + static_cast<std::ptrdiff_t>(s.begin),
                                    c.tokens.begin() + static_cast<std::ptrdiff_t>(s.end));
      for (auto& t : top_attention_tokens(toks, scores, frac)) bucket.push_back(std::move(t));
    }
  }
  return out;
}

/// Attention scores as TSV rows: id, turn, position, token, score.
inline void write_attention_tsv(std::ostream& out, const std::vector<NumericalizedConversation>& convs,
                                const std::vector<Prediction>& preds) {
  out << "id\tturn\tposition\ttoken\tscore\n";
  const std::array<std::size_t, 2> turns{0, 2};
  for (std::size_t i = 0; i < convs.size(); ++i) {
    for (std::size_t k = 0; k < 2; ++k) {
      const Span s = convs[i].spans[turns[k]];
      const auto& scores = preds[i].attention[k];
      for (std::size_t j = 0; j < scores.size(); ++j) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", scores[j]);
        out << convs[i].id << "\t" << turns[k] + 1 << "\t" << j << "\t" << convs[i].tokens[s.begin + j] << "\t" << buf
            << "\n";
      }
    }
  }
}

inline void write_predictions(std::ostream& out, const std::vector<NumericalizedConversation>& convs,
                              const std::vector<Prediction>& preds) {
  out << "id\tlabel\tp_happy\tp_sad\tp_angry\tp_others\n";
  for (std::size_t i = 0; i < convs.size(); ++i) {
    out << convs[i].id << "\t" << emotion_name(static_cast<Emotion>(argmax(preds[i].probs)));
    for (double p : preds[i].probs) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.8f", p);
      out << "\t" << buf;
    }
    out << "\n";
  }
}

}  // namespace emoattn
