#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "emoattn/autodiff.hpp"
#include "emoattn/corpus_io.hpp"
#include "emoattn/encoder.hpp"
#include "emoattn/optim.hpp"
#include "emoattn/params.hpp"

namespace emoattn {

/// Classifier input compositions. A is the full model; B skips attention;
/// C pools the whole conversation; D and E keep one input each; F is A fed
/// by the forward model only.
enum class Variant { A, B, C, D, E, F };

inline Variant parse_variant(std::string_view s) {
  if (s.size() == 1 && s[0] >= 'A' && s[0] <= 'F') return static_cast<Variant>(s[0] - 'A');
  throw Error("unknown variant '" + std::string(s) + "'");
}

inline char variant_name(Variant v) { return static_cast<char>('A' + static_cast<int>(v)); }

struct ClassifierConfig {
  Variant variant = Variant::A;
  std::size_t hidden_dim = 100;
  double dropout = 0.4;
  std::size_t n_classes = kNumClasses;
  PoolMode pooling = PoolMode::mean;

  std::size_t input_dim(std::size_t d_enc) const {
    return (variant == Variant::D || variant == Variant::E) ? d_enc : 2 * d_enc;
  }
  bool uses_attention() const { return variant != Variant::B; }
};

/// Attention and linear-block parameters, all in the head layer group.
template <class T>
void init_classifier_params(ParamStore<T>& store, const ClassifierConfig& cfg, std::size_t d_enc, int group, Rng rng) {
  Rng init = rng.split("classifier-init");
  const double att_range = 1.0 / std::sqrt(static_cast<double>(d_enc));
  store.add("attention.w1", uniform_tensor<T>({d_enc, 1}, att_range, init), group);
  store.add("attention.w3", uniform_tensor<T>({d_enc, 1}, att_range, init), group);
  const std::size_t in = cfg.input_dim(d_enc);
  store.add("classifier.fc1.weight", uniform_tensor<T>({in, cfg.hidden_dim}, 1.0 / std::sqrt(double(in)), init), group);
  store.add("classifier.fc1.bias", Tensor<T>({1, cfg.hidden_dim}), group);
  store.add("classifier.fc2.weight",
            uniform_tensor<T>({cfg.hidden_dim, cfg.n_classes}, 1.0 / std::sqrt(double(cfg.hidden_dim)), init), group);
  store.add("classifier.fc2.bias", Tensor<T>({1, cfg.n_classes}), group);
}

template <class T>
struct ClassifierWeights {
  Var<T> w1;  // d_enc x 1, first-turn scorer
  Var<T> w3;  // d_enc x 1, last-turn scorer
  Var<T> fc1_w, fc1_b, fc2_w, fc2_b;
};

template <class T>
ClassifierWeights<T> bind_classifier(Graph<T>& g, ParamStore<T>& store) {
  return ClassifierWeights<T>{g.param(store.get("attention.w1")),          g.param(store.get("attention.w3")),
                              g.param(store.get("classifier.fc1.weight")), g.param(store.get("classifier.fc1.bias")),
                              g.param(store.get("classifier.fc2.weight")), g.param(store.get("classifier.fc2.bias"))};
}

/// Positions of one turn across a batch, padded to the longest turn.
/// Row b * width + j of the gathered block is position j of batch item b.
struct TurnRows {
  std::vector<std::size_t> rows;
  std::vector<std::uint8_t> mask;  // 1 = padding
  std::size_t batch = 0;
  std::size_t width = 0;
};

template <class T>
TurnRows turn_rows(const EncoderOutput<T>& enc, std::size_t turn) {
  TurnRows tr;
  tr.batch = enc.batch;
  for (const auto& s : enc.spans) tr.width = std::max(tr.width, s[turn].size());
  for (std::size_t b = 0; b < enc.batch; ++b) {
    const Span sp = enc.spans[b][turn];
    if (sp.size() == 0) throw Error("turn " + std::to_string(turn + 1) + " is empty");
    for (std::size_t j = 0; j < tr.width; ++j) {
      const bool live = j < sp.size();
      tr.rows.push_back(enc.row(b, live ? sp.begin + j : sp.begin));
      tr.mask.push_back(live ? 0 : 1);
    }
  }
  return tr;
}

/// Every valid position of each conversation (all three turns).
template <class T>
TurnRows conversation_rows(const EncoderOutput<T>& enc) {
  TurnRows tr;
  tr.batch = enc.batch;
  for (auto len : enc.lengths) tr.width = std::max(tr.width, len);
  for (std::size_t b = 0; b < enc.batch; ++b) {
    for (std::size_t j = 0; j < tr.width; ++j) {
      const bool live = j < enc.lengths[b];
      tr.rows.push_back(enc.row(b, live ? j : 0));
      tr.mask.push_back(live ? 0 : 1);
    }
  }
  return tr;
}

template <class T>
struct AttentionResult {
  Var<T> scores;  // groups x width, rows sum to 1, zero at masked positions
  Var<T> scored;  // (groups * width) x d_enc, row j scaled by its score
};

/// Masked self-attention over one turn: logit_j = W . T_j, scores are the
/// softmax over unmasked positions, scored rows are S_j * T_j.
template <class T>
AttentionResult<T> turn_attention(Var<T> turn_enc, const std::vector<std::uint8_t>& mask, std::size_t groups, Var<T> w) {
  if (groups == 0 || turn_enc.rows() % groups != 0) {
    throw ShapeError("turn_attention: " + std::to_string(groups) + " groups over " + shape_string(turn_enc.shape()));
  }
  if (w.rows() != turn_enc.cols() || w.cols() != 1) detail::shape_mismatch("turn_attention", turn_enc.shape(), w.shape());
  const std::size_t width = turn_enc.rows() / groups;
  Var<T> logits = reshape(matmul(turn_enc, w), Shape{groups, width});
  Var<T> scores = masked_softmax(logits, mask);
  return AttentionResult<T>{scores, scale_rows(turn_enc, scores)};
}

template <class T>
Var<T> avg_pool(Var<T> seq, const std::vector<std::uint8_t>& mask, std::size_t groups, PoolMode mode = PoolMode::mean) {
  return masked_pool(seq, mask, groups, mode);
}

template <class T>
struct ClassifierInput {
  Var<T> x;
  std::optional<AttentionResult<T>> first;
  std::optional<AttentionResult<T>> last;
  TurnRows first_rows;
  TurnRows last_rows;
};

/// Composes the linear-block input for the configured variant.
template <class T>
ClassifierInput<T> build_input(const EncoderOutput<T>& enc, const ClassifierWeights<T>& w, const ClassifierConfig& cfg) {
  ClassifierInput<T> in;
  in.first_rows = turn_rows(enc, 0);
  in.last_rows = turn_rows(enc, 2);
  const std::size_t B = enc.batch;
  Var<T> t1 = gather_rows(enc.vectors, in.first_rows.rows);
  Var<T> t3 = gather_rows(enc.vectors, in.last_rows.rows);

  if (!cfg.uses_attention()) {
    Var<T> p1 = avg_pool(t1, in.first_rows.mask, B);
    Var<T> p3 = avg_pool(t3, in.last_rows.mask, B);
    in.x = concat_cols<T>({sub(p1, p3), p3});
    return in;
  }

  in.first = turn_attention(t1, in.first_rows.mask, B, w.w1);
  in.last = turn_attention(t3, in.last_rows.mask, B, w.w3);
  Var<T> o1 = avg_pool(in.first->scored, in.first_rows.mask, B, cfg.pooling);
  Var<T> o3 = avg_pool(in.last->scored, in.last_rows.mask, B, cfg.pooling);
  switch (cfg.variant) {
    case Variant::A:
    case Variant::F:
      in.x = concat_cols<T>({sub(o1, o3), o3});
      break;
    case Variant::C: {
      TurnRows all = conversation_rows(enc);
      Var<T> pooled = avg_pool(gather_rows(enc.vectors, all.rows), all.mask, B);
      in.x = concat_cols<T>({sub(o1, o3), pooled});
      break;
    }
    case Variant::D:
      in.x = sub(o1, o3);
      break;
    case Variant::E:
      in.x = o3;
      break;
    default:
      throw Error("unknown variant");
  }
  return in;
}

/// dense(in -> hidden) + relu + dropout (train only) + dense(hidden -> classes).
template <class T>
Var<T> classify_logits(Var<T> x, const ClassifierWeights<T>& w, const ClassifierConfig& cfg, Mode mode, Rng& rng) {
  if (x.cols() != w.fc1_w.rows()) detail::shape_mismatch("classify", x.shape(), w.fc1_w.shape());
  Var<T> h = relu(add_row(matmul(x, w.fc1_w), w.fc1_b));
  if (mode == Mode::train) h = dropout(h, cfg.dropout, rng);
  return add_row(matmul(h, w.fc2_w), w.fc2_b);
}

template <class T>
Var<T> classify(Var<T> x, const ClassifierWeights<T>& w, const ClassifierConfig& cfg, Mode mode, Rng& rng) {
  return softmax(classify_logits(x, w, cfg, mode, rng), 1);
}

using Probabilities = std::array<double, kNumClasses>;

/// Mean of two class distributions, renormalized.
inline Probabilities ensemble(const Probabilities& fwd, const Probabilities& bwd) {
  Probabilities out{};
  double z = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) z += (out[i] = 0.5 * (fwd[i] + bwd[i]));
  if (z > 0.0)
    for (auto& v : out) v /= z;
  return out;
}

inline std::vector<double> ensemble(const std::vector<double>& fwd, const std::vector<double>& bwd) {
  if (fwd.size() != bwd.size()) {
    throw ShapeError("ensemble: length mismatch " + std::to_string(fwd.size()) + " vs " + std::to_string(bwd.size()));
  }
  std::vector<double> out(fwd.size());
  double z = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) z += (out[i] = 0.5 * (fwd[i] + bwd[i]));
  if (z > 0.0)
    for (auto& v : out) v /= z;
  return out;
}

inline std::size_t argmax(const Probabilities& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

}  // namespace emoattn
