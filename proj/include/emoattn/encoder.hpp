#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "emoattn/autodiff.hpp"
#include "emoattn/optim.hpp"
#include "emoattn/params.hpp"
#include "emoattn/rng.hpp"
#include "emoattn/text_pipeline.hpp"

namespace emoattn {

enum class Mode { train, eval };

/// forward and backward are both single-direction stacks; backward marks a
/// model fed token-reversed text. bidirectional runs a reversed stack per
/// layer and concatenates both directions.
enum class Direction { forward, backward, bidirectional };

inline std::string_view direction_name(Direction d) {
  switch (d) {
    case Direction::forward: return "forward";
    case Direction::backward: return "backward";
    case Direction::bidirectional: return "bidirectional";
  }
  return "forward";
}

inline Direction parse_direction(std::string_view s) {
  if (s == "forward" || s == "fwd") return Direction::forward;
  if (s == "backward" || s == "bwd") return Direction::backward;
  if (s == "bidirectional" || s == "bi") return Direction::bidirectional;
  throw Error("unknown direction '" + std::string(s) + "'");
}

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t emb_dim = 400;
  std::size_t hidden_dim = 1150;
  std::size_t n_layers = 3;
  Direction direction = Direction::forward;
  double weight_drop = 0.2;
  double embed_drop = 0.25;
  double inter_drop = 0.15;
  bool tie_weights = true;

  std::size_t directions() const { return direction == Direction::bidirectional ? 2 : 1; }
  /// Per-direction width of layer l's output; the top layer returns to emb_dim.
  std::size_t layer_output(std::size_t l) const { return l + 1 == n_layers ? emb_dim : hidden_dim; }
  std::size_t layer_input(std::size_t l) const { return l == 0 ? emb_dim : layer_output(l - 1) * directions(); }
  std::size_t output_dim() const { return emb_dim * directions(); }
  /// Layer groups: embedding, one per recurrent layer, then the head.
  int head_group() const { return static_cast<int>(n_layers) + 1; }
};

/// Small dimensions for tests and laptop runs.
inline EncoderConfig desk_encoder_config(std::size_t vocab_size = 0) {
  EncoderConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.emb_dim = 64;
  cfg.hidden_dim = 128;
  return cfg;
}

inline std::string layer_prefix(std::size_t l, bool reversed) {
  return "encoder.l" + std::to_string(l) + (reversed ? ".rev" : "");
}

template <class T>
Tensor<T> uniform_tensor(Shape shape, double range, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-range, range));
  return t;
}

template <class T>
void init_decoder_params(ParamStore<T>& store, const EncoderConfig& cfg, Rng rng) {
  Rng init = rng.split("decoder-init");
  if (!cfg.tie_weights) {
    store.add("decoder.weight", uniform_tensor<T>({cfg.vocab_size, cfg.output_dim()}, 0.1, init), cfg.head_group());
  }
  store.add("decoder.bias", Tensor<T>({1, cfg.vocab_size}), cfg.head_group());
}

/// Adds encoder and language-model decoder parameters to the store.
template <class T>
void init_encoder_params(ParamStore<T>& store, const EncoderConfig& cfg, Rng rng) {
  if (cfg.vocab_size <= kNumReserved) throw Error("vocabulary too small: needs more than the reserved tokens");
  if (cfg.n_layers == 0) throw Error("encoder needs at least one layer");
  Rng init = rng.split("encoder-init");
  store.add("encoder.embedding", uniform_tensor<T>({cfg.vocab_size, cfg.emb_dim}, 0.1, init), 0);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t d = 0; d < cfg.directions(); ++d) {
      const std::size_t in = cfg.layer_input(l), h = cfg.layer_output(l);
      const double range = 1.0 / std::sqrt(static_cast<double>(h));
      const std::string p = layer_prefix(l, d == 1);
      const int group = static_cast<int>(l) + 1;
      store.add(p + ".w_ih", uniform_tensor<T>({in, 4 * h}, range, init), group);
      store.add(p + ".w_hh", uniform_tensor<T>({h, 4 * h}, range, init), group);
      store.add(p + ".bias", Tensor<T>({1, 4 * h}), group);
    }
  }
  init_decoder_params(store, cfg, rng);
}

template <class T>
struct LstmWeights {
  Var<T> w_ih;
  Var<T> w_hh;
  Var<T> bias;
};

/// Encoder weights bound to one graph.
template <class T>
struct EncoderWeights {
  Var<T> embedding;
  std::vector<LstmWeights<T>> layers;
  std::vector<LstmWeights<T>> reversed_layers;
};

template <class T>
EncoderWeights<T> bind_encoder(Graph<T>& g, ParamStore<T>& store, const EncoderConfig& cfg) {
  EncoderWeights<T> w;
  w.embedding = g.param(store.get("encoder.embedding"));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t d = 0; d < cfg.directions(); ++d) {
      const std::string p = layer_prefix(l, d == 1);
      LstmWeights<T> lw{g.param(store.get(p + ".w_ih")), g.param(store.get(p + ".w_hh")), g.param(store.get(p + ".bias"))};
      (d == 0 ? w.layers : w.reversed_layers).push_back(lw);
    }
  }
  return w;
}

/// Standard LSTM cell on a batch (gate order i, f, g, o):
/// c' = f*c + i*g, h' = o*tanh(c'). DropConnect, when used, is applied to
/// w_hh by the caller.
template <class T>
std::pair<Var<T>, Var<T>> lstm_cell(Var<T> x, Var<T> h, Var<T> c, const LstmWeights<T>& w) {
  const std::size_t hidden = w.w_hh.rows();
  if (x.cols() != w.w_ih.rows()) detail::shape_mismatch("lstm_cell", x.shape(), w.w_ih.shape());
  if (h.shape() != c.shape() || h.cols() != hidden) detail::shape_mismatch("lstm_cell", h.shape(), c.shape());
  Var<T> gx = add_row(matmul(x, w.w_ih), w.bias);
  Var<T> next = lstm_step(gx, concat_cols<T>({h, c}), w.w_hh);
  return {slice_cols(next, 0, hidden), slice_cols(next, hidden, 2 * hidden)};
}

/// Time-major batch of token ids: ids[t * batch + b]. Positions at or past
/// lengths[b] hold <pad>.
struct SequenceBatch {
  std::vector<std::size_t> ids;
  std::size_t steps = 0;
  std::size_t batch = 0;
  std::vector<std::size_t> lengths;
  std::vector<std::array<Span, 3>> spans;

  std::size_t row(std::size_t b, std::size_t pos) const { return pos * batch + b; }
};

inline SequenceBatch make_batch(const std::vector<const NumericalizedConversation*>& convs) {
  SequenceBatch sb;
  sb.batch = convs.size();
  for (const auto* c : convs) sb.steps = std::max(sb.steps, c->ids.size());
  sb.ids.assign(sb.steps * sb.batch, kPadId);
  for (std::size_t b = 0; b < convs.size(); ++b) {
    for (std::size_t t = 0; t < convs[b]->ids.size(); ++t) sb.ids[t * sb.batch + b] = convs[b]->ids[t];
    sb.lengths.push_back(convs[b]->ids.size());
    sb.spans.push_back(convs[b]->spans);
  }
  return sb;
}

/// Per-layer [h | c] states carried between language-model windows.
template <class T>
using EncoderState = std::vector<Tensor<T>>;

template <class T>
struct EncoderOutput {
  Var<T> vectors;  // (steps * batch) x output_dim, time-major rows
  std::size_t steps = 0;
  std::size_t batch = 0;
  std::vector<std::size_t> lengths;
  std::vector<std::array<Span, 3>> spans;

  std::size_t row(std::size_t b, std::size_t pos) const { return pos * batch + b; }
};

namespace detail {

template <class T>
std::pair<Var<T>, Var<T>> run_lstm_layer(Var<T> input, std::size_t steps, std::size_t batch, const LstmWeights<T>& w,
                                         Var<T> w_hh, Var<T> state) {
  const std::size_t hidden = w_hh.rows();
  Var<T> gx_all = add_row(matmul(input, w.w_ih), w.bias);
  std::vector<Var<T>> outputs;
  outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Var<T> gx = slice_rows(gx_all, t * batch, (t + 1) * batch);
    state = lstm_step(gx, state, w_hh);
    outputs.push_back(slice_cols(state, 0, hidden));
  }
  return {concat_rows(outputs), state};
}

/// Row permutation reversing each sequence's valid prefix; padding rows stay.
inline std::vector<std::size_t> reversal_permutation(std::size_t steps, std::size_t batch,
                                                     const std::vector<std::size_t>& lengths) {
  std::vector<std::size_t> perm(steps * batch);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t src = t < lengths[b] ? lengths[b] - 1 - t : t;
      perm[t * batch + b] = src * batch + b;
    }
  }
  return perm;
}

}  // namespace detail

/// Runs the embedding and recurrent stack over a padded batch. In train mode
/// embedding rows are dropped per forward pass, w_hh matrices receive a
/// fresh DropConnect mask, and a time-locked dropout mask sits between
/// layers. `state`, when given, seeds and receives the per-layer states
/// (single-direction stacks only).
template <class T>
EncoderOutput<T> encode_batch(Graph<T>& g, const EncoderWeights<T>& w, const EncoderConfig& cfg,
                              const SequenceBatch& sb, Mode mode, Rng& rng, EncoderState<T>* state = nullptr) {
  if (sb.steps == 0 || sb.batch == 0) throw Error("encode: empty id sequence");
  for (auto id : sb.ids) {
    if (id >= cfg.vocab_size) throw Error("encode: token id " + std::to_string(id) + " >= vocab size");
  }
  if (state && cfg.direction == Direction::bidirectional) {
    throw Error("encode: carried state requires a single-direction encoder");
  }
  const bool train = mode == Mode::train;
  const std::size_t rows = sb.steps * sb.batch;

  Var<T> x = gather_rows(w.embedding, sb.ids);
  if (train && cfg.embed_drop > 0.0) {
    Tensor<T> word_mask = dropout_mask<T>({cfg.vocab_size}, cfg.embed_drop, rng);
    Tensor<T> mask = Tensor<T>::matrix(rows, cfg.emb_dim);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cfg.emb_dim; ++c) mask(r, c) = word_mask[sb.ids[r]];
    x = mul(x, g.constant(std::move(mask)));
  }

  const auto perm = cfg.direction == Direction::bidirectional
                        ? detail::reversal_permutation(sb.steps, sb.batch, sb.lengths)
                        : std::vector<std::size_t>{};
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::size_t h = cfg.layer_output(l);
    auto run = [&](const LstmWeights<T>& lw, Var<T> input, std::size_t slot) {
      Var<T> w_hh = train ? dropconnect(lw.w_hh, cfg.weight_drop, rng) : lw.w_hh;
      Tensor<T> init = (state && slot < state->size()) ? (*state)[slot] : Tensor<T>::matrix(sb.batch, 2 * h);
      auto [out, final_state] = detail::run_lstm_layer(input, sb.steps, sb.batch, lw, w_hh, g.constant(std::move(init)));
      if (state) {
        if (state->size() <= slot) state->resize(slot + 1);
        (*state)[slot] = final_state.value();
      }
      return out;
    };
    Var<T> out = run(w.layers[l], x, l);
    if (cfg.direction == Direction::bidirectional) {
      Var<T> rev = gather_rows(run(w.reversed_layers[l], gather_rows(x, perm), cfg.n_layers + l), perm);
      out = concat_cols<T>({out, rev});
    }
    if (train && cfg.inter_drop > 0.0 && l + 1 < cfg.n_layers) {
      Tensor<T> locked = dropout_mask<T>({sb.batch, out.cols()}, cfg.inter_drop, rng);
      Tensor<T> mask(out.shape());
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) mask(r, c) = locked(r % sb.batch, c);
      out = mul(out, g.constant(std::move(mask)));
    }
    x = out;
  }
  return EncoderOutput<T>{x, sb.steps, sb.batch, sb.lengths, sb.spans};
}

/// Encodes one conversation: one output row per token, spans unchanged.
template <class T>
EncoderOutput<T> encode(Graph<T>& g, const EncoderWeights<T>& w, const EncoderConfig& cfg,
                        const NumericalizedConversation& conv, Mode mode, Rng& rng) {
  if (conv.ids.empty()) throw Error("encode: empty id sequence");
  return encode_batch(g, w, cfg, make_batch({&conv}), mode, rng);
}

template <class T>
struct DecoderWeights {
  Var<T> weight;  // vocab x d_enc (the embedding when tied)
  Var<T> bias;    // 1 x vocab
};

template <class T>
DecoderWeights<T> bind_decoder(Graph<T>& g, ParamStore<T>& store, const EncoderConfig& cfg, const EncoderWeights<T>& enc) {
  if (cfg.direction == Direction::bidirectional) {
    throw Error("language-model decoding requires a single-direction encoder");
  }
  return DecoderWeights<T>{cfg.tie_weights ? enc.embedding : g.param(store.get("decoder.weight")),
                           g.param(store.get("decoder.bias"))};
}

/// Affine map from encoder rows to vocabulary logits.
template <class T>
Var<T> lm_logits(Var<T> encoded, const DecoderWeights<T>& dec) {
  if (encoded.cols() != dec.weight.cols()) detail::shape_mismatch("lm_logits", encoded.shape(), dec.weight.shape());
  return add_row(matmul_nt(encoded, dec.weight), dec.bias);
}

/// Mean next-token cross entropy over the predicted positions.
template <class T>
Var<T> lm_loss(Var<T> logits, const std::vector<std::size_t>& targets) {
  if (logits.rows() != targets.size()) {
    throw ShapeError("lm_loss: " + std::to_string(logits.rows()) + " logit rows for " +
                     std::to_string(targets.size()) + " targets");
  }
  return cross_entropy_logits(logits, targets);
}

}  // namespace emoattn
