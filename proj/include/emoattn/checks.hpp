#pragma once

#include <string>
#include <vector>

#include "emoattn/attention.hpp"
#include "emoattn/encoder.hpp"
#include "emoattn/gradcheck.hpp"

namespace emoattn {

struct NamedGradCheck {
  std::string name;
  GradCheckResult result;
};

namespace detail {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double range = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-range, range);
  return t;
}

/// Two conversations of lengths 7 and 5 (time-major, padded to 7).
inline EncoderOutput<double> toy_encoder_output(Var<double> vectors) {
  EncoderOutput<double> e;
  e.vectors = vectors;
  e.steps = 7;
  e.batch = 2;
  e.lengths = {7, 5};
  e.spans = {std::array<Span, 3>{Span{0, 3}, Span{3, 5}, Span{5, 7}},
             std::array<Span, 3>{Span{0, 1}, Span{1, 2}, Span{2, 5}}};
  return e;
}

}  // namespace detail

/// Finite-difference checks of every differentiable block in 64-bit.
inline std::vector<NamedGradCheck> run_gradient_checks(double eps = 1e-4, std::uint64_t seed = 2024) {
  using Leaves = std::span<const Var<double>>;
  using detail::random_tensor;
  Rng rng(seed);
  std::vector<NamedGradCheck> out;
  auto add = [&](std::string name, const GradCheckOp& op, std::vector<Tensor<double>> inputs) {
    out.push_back({std::move(name), grad_check(op, std::move(inputs), eps, seed)});
  };

  add("lstm_cell",
      [](Graph<double>&, Leaves x) {
        auto [h, c] = lstm_cell(x[0], x[1], x[2], LstmWeights<double>{x[3], x[4], x[5]});
        return concat_cols<double>({h, c});
      },
      {random_tensor({2, 4}, rng), random_tensor({2, 5}, rng), random_tensor({2, 5}, rng),
       random_tensor({4, 20}, rng), random_tensor({5, 20}, rng), random_tensor({1, 20}, rng)});

  add("embedding_lookup",
      [](Graph<double>&, Leaves x) { return tanh(gather_rows(x[0], {3, 0, 3, 6, 1, 3})); },
      {random_tensor({7, 3}, rng)});

  for (Direction dir : {Direction::forward, Direction::bidirectional}) {
    EncoderConfig cfg;
    cfg.vocab_size = 9;
    cfg.emb_dim = 3;
    cfg.hidden_dim = 4;
    cfg.n_layers = 3;
    cfg.direction = dir;
    std::vector<Tensor<double>> inputs{random_tensor({cfg.vocab_size, cfg.emb_dim}, rng, 0.5)};
    for (std::size_t d = 0; d < cfg.directions(); ++d) {
      for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::size_t in = cfg.layer_input(l), h = cfg.layer_output(l);
        inputs.push_back(random_tensor({in, 4 * h}, rng, 0.5));
        inputs.push_back(random_tensor({h, 4 * h}, rng, 0.5));
        inputs.push_back(random_tensor({1, 4 * h}, rng, 0.5));
      }
    }
    add(std::string("encoder_") + std::string(direction_name(dir)),
        [cfg](Graph<double>&, Leaves x) {
          EncoderWeights<double> w;
          w.embedding = x[0];
          std::size_t k = 1;
          for (std::size_t d = 0; d < cfg.directions(); ++d) {
            for (std::size_t l = 0; l < cfg.n_layers; ++l, k += 3) {
              (d == 0 ? w.layers : w.reversed_layers).push_back({x[k], x[k + 1], x[k + 2]});
            }
          }
          NumericalizedConversation a, b;
          a.ids = {2, 7, 7, 8, 1};
          a.spans = {Span{0, 2}, Span{2, 3}, Span{3, 5}};
          b.ids = {2, 6, 5};
          b.spans = {Span{0, 1}, Span{1, 2}, Span{2, 3}};
          Rng unused(0);
          return encode_batch(*x[0].graph, w, cfg, make_batch({&a, &b}), Mode::eval, unused).vectors;
        },
        std::move(inputs));
  }

  {
    // two turns of width 3; the second has one padded position
    const std::vector<std::uint8_t> mask{0, 0, 0, 0, 0, 1};
    add("attention_scores",
        [mask](Graph<double>&, Leaves x) { return turn_attention(x[0], mask, 2, x[1]).scores; },
        {random_tensor({6, 4}, rng), random_tensor({4, 1}, rng)});
    add("attention_scored",
        [mask](Graph<double>&, Leaves x) { return turn_attention(x[0], mask, 2, x[1]).scored; },
        {random_tensor({6, 4}, rng), random_tensor({4, 1}, rng)});
    add("avg_pool_mean", [mask](Graph<double>&, Leaves x) { return avg_pool(x[0], mask, 2, PoolMode::mean); },
        {random_tensor({6, 4}, rng)});
    add("avg_pool_sum", [mask](Graph<double>&, Leaves x) { return avg_pool(x[0], mask, 2, PoolMode::sum); },
        {random_tensor({6, 4}, rng)});
  }

  const std::size_t d = 4;
  for (Variant v : {Variant::A, Variant::B, Variant::C, Variant::D, Variant::E, Variant::F}) {
    ClassifierConfig cfg;
    cfg.variant = v;
    add(std::string("build_input_") + variant_name(v),
        [cfg](Graph<double>& g, Leaves x) {
          ClassifierWeights<double> w{x[1], x[2], g.constant({}), g.constant({}), g.constant({}), g.constant({})};
          return build_input(detail::toy_encoder_output(x[0]), w, cfg).x;
        },
        {random_tensor({14, d}, rng), random_tensor({d, 1}, rng), random_tensor({d, 1}, rng)});
  }

  {
    ClassifierConfig cfg;
    cfg.hidden_dim = 6;
    add("linear_block",
        [cfg](Graph<double>& g, Leaves x) {
          ClassifierWeights<double> w{g.constant({}), g.constant({}), x[1], x[2], x[3], x[4]};
          Rng unused(0);
          return classify(x[0], w, cfg, Mode::eval, unused);
        },
        {random_tensor({3, 8}, rng), random_tensor({8, 6}, rng), random_tensor({1, 6}, rng),
         random_tensor({6, 4}, rng), random_tensor({1, 4}, rng)});
  }

  add("lm_decoder",
      [](Graph<double>&, Leaves x) {
        return lm_loss(lm_logits(x[0], DecoderWeights<double>{x[1], x[2]}), {1, 4, 0, 4, 2});
      },
      {random_tensor({5, 3}, rng), random_tensor({6, 3}, rng), random_tensor({1, 6}, rng)});
  return out;
}

}  // namespace emoattn
