#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "emoattn/attention.hpp"
#include "emoattn/config.hpp"
#include "emoattn/encoder.hpp"
#include "emoattn/params.hpp"
#include "emoattn/text_pipeline.hpp"

namespace emoattn {

inline constexpr const char* kCheckpointVersion = "emoattn-checkpoint 1";

enum class CheckpointKind { lm, classifier };

/// A trained model: configuration, vocabulary and parameters. Language
/// models carry decoder parameters; classifiers carry attention and linear
/// parameters instead.
struct Checkpoint {
  CheckpointKind kind = CheckpointKind::lm;
  EncoderConfig encoder;
  std::optional<ClassifierConfig> classifier;
  Vocabulary vocab;
  ParamStore<float> params;
};

inline KeyValues encoder_config_kv(const EncoderConfig& c) {
  KeyValues kv;
  kv.set("vocab_size", c.vocab_size);
  kv.set("emb_dim", c.emb_dim);
  kv.set("hidden_dim", c.hidden_dim);
  kv.set("n_layers", c.n_layers);
  kv.set("direction", std::string(direction_name(c.direction)));
  kv.set("weight_drop", c.weight_drop);
  kv.set("embed_drop", c.embed_drop);
  kv.set("inter_drop", c.inter_drop);
  kv.set("tie_weights", c.tie_weights);
  return kv;
}

/// Reads encoder settings; keys may carry a prefix such as "encoder.".
inline EncoderConfig encoder_config_from(const KeyValues& kv, EncoderConfig c = {}, const std::string& prefix = "") {
  c.vocab_size = kv.get_size(prefix + "vocab_size", c.vocab_size);
  c.emb_dim = kv.get_size(prefix + "emb_dim", c.emb_dim);
  c.hidden_dim = kv.get_size(prefix + "hidden_dim", c.hidden_dim);
  c.n_layers = kv.get_size(prefix + "n_layers", c.n_layers);
  if (kv.has(prefix + "direction")) c.direction = parse_direction(kv.get(prefix + "direction"));
  c.weight_drop = kv.get_double(prefix + "weight_drop", c.weight_drop);
  c.embed_drop = kv.get_double(prefix + "embed_drop", c.embed_drop);
  c.inter_drop = kv.get_double(prefix + "inter_drop", c.inter_drop);
  c.tie_weights = kv.get_bool(prefix + "tie_weights", c.tie_weights);
  return c;
}

inline std::string_view pool_mode_name(PoolMode m) { return m == PoolMode::sum ? "sum" : "mean"; }

inline PoolMode parse_pool_mode(std::string_view s) {
  if (s == "mean") return PoolMode::mean;
  if (s == "sum") return PoolMode::sum;
  throw Error("unknown pooling '" + std::string(s) + "'");
}

inline KeyValues classifier_config_kv(const ClassifierConfig& c) {
  KeyValues kv;
  kv.set("variant", std::string(1, variant_name(c.variant)));
  kv.set("hidden_dim", c.hidden_dim);
  kv.set("dropout", c.dropout);
  kv.set("n_classes", c.n_classes);
  kv.set("pooling", std::string(pool_mode_name(c.pooling)));
  return kv;
}

inline ClassifierConfig classifier_config_from(const KeyValues& kv, ClassifierConfig c = {},
                                               const std::string& prefix = "") {
  if (kv.has(prefix + "variant")) c.variant = parse_variant(kv.get(prefix + "variant"));
  c.hidden_dim = kv.get_size(prefix + "hidden_dim", c.hidden_dim);
  c.dropout = kv.get_double(prefix + "dropout", c.dropout);
  c.n_classes = kv.get_size(prefix + "n_classes", c.n_classes);
  if (kv.has(prefix + "pooling")) c.pooling = parse_pool_mode(kv.get(prefix + "pooling"));
  return c;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream v(dir / "VERSION");
    if (!v) throw IoError("cannot write " + (dir / "VERSION").string());
    v << kCheckpointVersion << "\n" << (ckpt.kind == CheckpointKind::lm ? "lm" : "classifier") << "\n";
  }
  encoder_config_kv(ckpt.encoder).save(dir / "encoder.cfg");
  if (ckpt.classifier) classifier_config_kv(*ckpt.classifier).save(dir / "classifier.cfg");
  save_vocab(ckpt.vocab, dir / "vocab.txt");
  save_params(ckpt.params, dir);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream v(dir / "VERSION");
  if (!v) throw IoError("not a checkpoint directory: " + dir.string());
  std::string version, kind;
  std::getline(v, version);
  std::getline(v, kind);
  if (version != kCheckpointVersion) {
    throw Error("incompatible checkpoint version '" + version + "' in " + dir.string() + " (expected '" +
                kCheckpointVersion + "')");
  }
  Checkpoint ckpt;
  if (kind == "lm") {
    ckpt.kind = CheckpointKind::lm;
  } else if (kind == "classifier") {
    ckpt.kind = CheckpointKind::classifier;
  } else {
    throw ParseError(dir.string() + "/VERSION: unknown checkpoint kind '" + kind + "'");
  }
  ckpt.encoder = encoder_config_from(KeyValues::load(dir / "encoder.cfg"));
  if (ckpt.kind == CheckpointKind::classifier) {
    ckpt.classifier = classifier_config_from(KeyValues::load(dir / "classifier.cfg"));
  }
  ckpt.vocab = load_vocab(dir / "vocab.txt");
  ckpt.params = load_params<float>(dir);
  if (ckpt.vocab.size() != ckpt.encoder.vocab_size) {
    throw Error("checkpoint " + dir.string() + ": vocabulary has " + std::to_string(ckpt.vocab.size()) +
                " tokens but encoder.cfg says " + std::to_string(ckpt.encoder.vocab_size));
  }
  return ckpt;
}

}  // namespace emoattn
