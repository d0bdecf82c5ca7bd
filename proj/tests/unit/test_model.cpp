#include <gtest/gtest.h>

#include <cmath>

#include "t2c/gradcheck.hpp"
#include "t2c/model.hpp"

using namespace t2c;

namespace {

ModelConfig desk_config(std::size_t layers = 1) {
  ModelConfig cfg;
  cfg.src_vocab_size = 9;
  cfg.tgt_vocab_size = 8;
  cfg.embed_dim = 4;
  cfg.hidden_dim = 4;
  cfg.num_layers = layers;
  cfg.dropout = 0.0;
  return cfg;
}

// Wider init than training uses so that every gradient entry is well above
// finite-difference noise.
ModelParams<double> random_params(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.5) {
  auto p = ModelParams<double>::zeros(cfg);
  Rng rng(seed);
  for (auto& nt : p.named()) {
    for (double& v : nt.tensor.data()) v = rng.uniform(-scale, scale);
  }
  return p;
}

Batch random_batch(std::uint64_t seed, std::size_t rows, std::size_t max_len, const ModelConfig& cfg) {
  Rng rng(seed);
  std::vector<EncodedPair> pairs;
  for (std::size_t r = 0; r < rows; ++r) {
    EncodedPair p;
    const std::size_t s = 1 + rng.below(max_len);
    const std::size_t t = 1 + rng.below(max_len);
    for (std::size_t i = 0; i < s; ++i) p.source.push_back(static_cast<TokenId>(4 + rng.below(cfg.src_vocab_size - 4)));
    p.source.push_back(Vocabulary::kEos);
    for (std::size_t i = 0; i < t; ++i) p.target.push_back(static_cast<TokenId>(4 + rng.below(cfg.tgt_vocab_size - 4)));
    p.index = r;
    pairs.push_back(p);
  }
  return make_batch(pairs);
}

// Batch with B=2, S=T=3 once framing is added.
Batch desk_batch() {
  std::vector<EncodedPair> pairs{{{5, 6, Vocabulary::kEos}, {4, 7}, 0}, {{7, Vocabulary::kEos}, {6}, 1}};
  return make_batch(pairs);
}

LstmWeights<double> random_weights(Rng& rng, std::size_t din, std::size_t dh) {
  auto fill = [&rng](Shape s) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = rng.uniform(-0.5, 0.5);
    return Tensor<double>(s, v);
  };
  return {fill({din, 4 * dh}), fill({dh, 4 * dh}), fill({4 * dh})};
}

}  // namespace

TEST(ModelConfig, Validation) {
  auto cfg = desk_config();
  EXPECT_NO_THROW(cfg.validate());
  cfg.hidden_dim = 0;
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = desk_config();
  cfg.dropout = 1.0;
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = desk_config();
  cfg.attention_kind = "dot";
  EXPECT_THROW(cfg.validate(), ContractError);
}

TEST(ModelConfig, JsonRoundTrip) {
  auto cfg = desk_config(2);
  cfg.dropout = 0.25;
  nlohmann::json j = cfg;
  EXPECT_EQ(j.get<ModelConfig>(), cfg);
}

TEST(ModelParams, ShapesNamesAndInit) {
  auto cfg = desk_config(2);
  auto p = ModelParams<float>::initialize(cfg, 13);
  std::vector<std::string> names;
  for (auto& nt : p.named()) names.push_back(nt.name);
  EXPECT_EQ(names, (std::vector<std::string>{"src_embed", "tgt_embed", "enc.l0.Wx", "enc.l0.Wh", "enc.l0.b",
                                             "enc.l1.Wx", "enc.l1.Wh", "enc.l1.b", "dec.l0.Wx", "dec.l0.Wh",
                                             "dec.l0.b", "dec.l1.Wx", "dec.l1.Wh", "dec.l1.b", "attn.Wa",
                                             "combine.Wc", "combine.bc", "out.Wo", "out.bo"}));
  EXPECT_EQ(p.enc[1].wx.shape(), (Shape{4, 16}));
  EXPECT_EQ(p.combine_wc.shape(), (Shape{8, 4}));
  EXPECT_EQ(p.out_wo.shape(), (Shape{4, 8}));
  for (auto& nt : p.named()) {
    for (float v : nt.tensor.data()) {
      EXPECT_LE(std::fabs(v), 1.0f);
    }
  }
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(p.enc[0].b[4 + k], 1.0f);
    EXPECT_EQ(p.dec[1].b[4 + k], 1.0f);
    EXPECT_LE(std::fabs(p.enc[0].b[k]), 0.1f);
    EXPECT_EQ(p.src_embed.at(0, k), 0.0f);
  }
  auto again = ModelParams<float>::initialize(cfg, 13);
  auto other = ModelParams<float>::initialize(cfg, 14);
  EXPECT_TRUE(std::ranges::equal(p.out_wo.data(), again.out_wo.data()));
  EXPECT_FALSE(std::ranges::equal(p.out_wo.data(), other.out_wo.data()));
}

TEST(ModelParams, CloneIsDeep) {
  auto p = ModelParams<float>::initialize(desk_config(), 1);
  auto q = p.clone();
  q.attn_wa.data()[0] += 1.0f;
  EXPECT_NE(p.attn_wa[0], q.attn_wa[0]);
  EXPECT_EQ(p.parameter_count(), q.parameter_count());
}

TEST(LstmCell, ZeroWeightsHandValues) {
  LstmWeights<double> w{Tensor<double>::zeros({3, 8}), Tensor<double>::zeros({2, 8}), Tensor<double>::zeros({8})};
  auto x = Tensor<double>::full({1, 3}, 0.7);
  auto s0 = lstm_cell_step(x, {Tensor<double>::zeros({1, 2}), Tensor<double>::zeros({1, 2})}, w);
  EXPECT_EQ(s0.h[0], 0.0);
  EXPECT_EQ(s0.c[0], 0.0);
  auto s1 = lstm_cell_step(x, {Tensor<double>::zeros({1, 2}), Tensor<double>::full({1, 2}, 1.0)}, w);
  EXPECT_NEAR(s1.c[0], 0.5, 1e-12);
  EXPECT_NEAR(s1.h[1], 0.5 * std::tanh(0.5), 1e-12);
  EXPECT_NEAR(s1.h[1], 0.23106, 1e-5);
}

TEST(LstmCell, GateOrderIsIfgo) {
  // Only the g-block bias is nonzero: c' = sigma(0) * tanh(2) with c = 0.
  LstmWeights<double> w{Tensor<double>::zeros({1, 4}), Tensor<double>::zeros({1, 4}),
                        Tensor<double>({4}, {0.0, 0.0, 2.0, 0.0})};
  auto s = lstm_cell_step(Tensor<double>::zeros({1, 1}), {Tensor<double>::zeros({1, 1}), Tensor<double>::zeros({1, 1})}, w);
  EXPECT_NEAR(s.c[0], 0.5 * std::tanh(2.0), 1e-12);
  EXPECT_NEAR(s.h[0], 0.5 * std::tanh(0.5 * std::tanh(2.0)), 1e-12);
}

TEST(LstmCell, ShapeMismatch) {
  LstmWeights<double> w{Tensor<double>::zeros({3, 8}), Tensor<double>::zeros({2, 8}), Tensor<double>::zeros({8})};
  EXPECT_THROW(lstm_cell_step(Tensor<double>::zeros({1, 4}), {Tensor<double>::zeros({1, 2}), Tensor<double>::zeros({1, 2})}, w),
               DimensionError);
  EXPECT_THROW(lstm_cell_step(Tensor<double>::zeros({1, 3}), {Tensor<double>::zeros({1, 2}), Tensor<double>::zeros({1, 3})}, w),
               DimensionError);
}

TEST(LstmCell, GradientCheck) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    auto w = random_weights(rng, 3, 2);
    std::vector<double> xv(6), hv(4), cv(4);
    for (auto* v : {&xv, &hv, &cv})
      for (auto& e : *v) e = rng.uniform(-1, 1);
    Tensor<double> x({2, 3}, xv), h({2, 2}, hv), c({2, 2}, cv);
    auto f = [&] {
      auto s = lstm_cell_step(x, {h, c}, w);
      return sum(add(mul(s.h, s.h), s.c));
    };
    EXPECT_LT(gradient_check(f, {w.wx, w.wh, w.b, x, h, c}), 1e-4) << "seed " << seed;
  }
}

TEST(Encode, LengthOneFinalStateEqualsStep) {
  auto cfg = desk_config();
  auto p = random_params(cfg, 3);
  std::vector<TokenId> src{5};
  std::vector<std::size_t> len{1};
  auto enc = encode(p, src, len, 1);
  auto x = embedding(p.src_embed, std::span<const TokenId>(src));
  auto s = lstm_cell_step(x, {Tensor<double>::zeros({1, 4}), Tensor<double>::zeros({1, 4})}, p.enc[0]);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_DOUBLE_EQ(enc.final_state[0].h[k], s.h[k]);
    EXPECT_DOUBLE_EQ(enc.memory[k], s.h[k]);
  }
}

TEST(Encode, ZeroParamsGiveZeroOutputs) {
  auto p = ModelParams<double>::zeros(desk_config());
  std::vector<TokenId> src{5, 6, 7, 8};
  std::vector<std::size_t> len{2, 2};
  auto enc = encode(p, src, len, 2);
  for (double v : enc.memory.data()) EXPECT_EQ(v, 0.0);
  for (double v : enc.final_state[0].c.data()) EXPECT_EQ(v, 0.0);
}

TEST(Encode, Errors) {
  auto p = ModelParams<double>::zeros(desk_config());
  std::vector<TokenId> src{5, 6, 7, 8};
  std::vector<std::size_t> too_long{3, 2};
  EXPECT_THROW(encode(p, src, too_long, 2), ContractError);
  std::vector<std::size_t> three{1, 1, 1};
  EXPECT_THROW(encode(p, src, three, 2), DimensionError);
}

TEST(Encode, PaddingInvariance) {
  for (std::size_t layers : {1u, 2u}) {
    auto cfg = desk_config(layers);
    auto p = random_params(cfg, 11 + layers);
    std::vector<TokenId> single{4, 7, 5, Vocabulary::kEos};
    std::vector<std::size_t> len1{4};
    auto alone = encode(p, single, len1, 4);

    // Row 0 is the same sequence followed by PAD; row 1 is longer and sets the width.
    std::vector<TokenId> padded{4, 7, 5, Vocabulary::kEos, Vocabulary::kPad, 4, 7, 5, Vocabulary::kEos, 8};
    std::vector<std::size_t> len2{4, 5};
    auto enc = encode(p, padded, len2, 5);
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_NEAR(enc.final_state[l].h.at(0, k), alone.final_state[l].h.at(0, k), 1e-12);
        EXPECT_NEAR(enc.final_state[l].c.at(0, k), alone.final_state[l].c.at(0, k), 1e-12);
      }
    }
    // PAD positions of memory are zero.
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(enc.memory[(0 * 5 + 4) * 4 + k], 0.0);

    // Decode logits of the padded row match the unpadded encoding.
    std::vector<TokenId> prev{Vocabulary::kSos};
    auto ref = decode_step<double>(prev, initial_decoder_state(alone), alone, p);
    std::vector<TokenId> prev2{Vocabulary::kSos, Vocabulary::kSos};
    auto got = decode_step<double>(prev2, initial_decoder_state(enc), enc, p);
    for (std::size_t v = 0; v < cfg.tgt_vocab_size; ++v) {
      EXPECT_NEAR(got.logits.at(0, v), ref.logits.at(0, v), 1e-6);
    }
  }
}

TEST(Attend, SingletonAndUniform) {
  Tensor<double> memory({1, 1, 3}, {0.3, -0.2, 0.9});
  std::vector<std::uint8_t> mask{1};
  auto wa = Tensor<double>::full({3, 3}, 0.4);
  auto r = attend(Tensor<double>::full({1, 3}, 1.0), memory, mask, wa);
  EXPECT_DOUBLE_EQ(r.weights[0], 1.0);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(r.context[k], memory[k]);

  Tensor<double> mem3({1, 3, 2}, {1, 2, 3, 4, 5, 6});
  std::vector<std::uint8_t> mask3{1, 1, 0};
  auto u = attend(Tensor<double>::full({1, 2}, 1.0), mem3, mask3, Tensor<double>::zeros({2, 2}));
  EXPECT_DOUBLE_EQ(u.weights[0], 0.5);
  EXPECT_DOUBLE_EQ(u.weights[1], 0.5);
  EXPECT_EQ(u.weights[2], 0.0);
  EXPECT_DOUBLE_EQ(u.context[0], 2.0);
}

TEST(Attend, SimplexOverRandomInputs) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 1 + rng.below(3), s = 1 + rng.below(5), d = 1 + rng.below(4);
    std::vector<double> mv(b * s * d), hv(b * d), wv(d * d);
    for (auto* v : {&mv, &hv, &wv})
      for (auto& e : *v) e = rng.uniform(-2, 2);
    std::vector<std::uint8_t> mask(b * s);
    for (std::size_t r = 0; r < b; ++r) {
      const std::size_t len = 1 + rng.below(s);
      for (std::size_t j = 0; j < s; ++j) mask[r * s + j] = j < len;
    }
    auto res = attend(Tensor<double>({b, d}, hv), Tensor<double>({b, s, d}, mv), mask, Tensor<double>({d, d}, wv));
    for (std::size_t r = 0; r < b; ++r) {
      double total = 0;
      for (std::size_t j = 0; j < s; ++j) {
        const double w = res.weights.at(r, j);
        EXPECT_GE(w, 0.0);
        if (!mask[r * s + j]) EXPECT_EQ(w, 0.0);
        total += w;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Attend, FullyMaskedRowRejected) {
  Tensor<double> memory({1, 2, 2}, {1, 2, 3, 4});
  std::vector<std::uint8_t> mask{0, 0};
  EXPECT_THROW(attend(Tensor<double>::zeros({1, 2}), memory, mask, Tensor<double>::zeros({2, 2})), ContractError);
}

TEST(DecodeStep, ZeroParamsUniformAndIdenticalRows) {
  auto cfg = desk_config();
  auto zero = ModelParams<double>::zeros(cfg);
  std::vector<TokenId> src{5, 6, 5, 6};
  std::vector<std::size_t> len{2, 2};
  auto enc = encode(zero, src, len, 2);
  std::vector<TokenId> prev{Vocabulary::kSos, Vocabulary::kSos};
  auto r = decode_step<double>(prev, initial_decoder_state(enc), enc, zero);
  for (double v : r.logits.data()) EXPECT_EQ(v, 0.0);

  auto p = random_params(cfg, 8);
  auto enc2 = encode(p, src, len, 2);
  auto r2 = decode_step<double>(prev, initial_decoder_state(enc2), enc2, p);
  for (std::size_t v = 0; v < cfg.tgt_vocab_size; ++v) EXPECT_EQ(r2.logits.at(0, v), r2.logits.at(1, v));
  std::vector<TokenId> bad{Vocabulary::kSos};
  EXPECT_THROW(decode_step<double>(bad, initial_decoder_state(enc2), enc2, p), DimensionError);
}

TEST(DecodeStep, GradientCheckThroughAttention) {
  auto cfg = desk_config();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto p = random_params(cfg, 100 + seed);
    std::vector<TokenId> src{5, 6, Vocabulary::kEos, 7, Vocabulary::kEos, Vocabulary::kPad};
    std::vector<std::size_t> len{3, 2};
    std::vector<TokenId> prev{Vocabulary::kSos, 4};
    std::vector<TokenId> gold{6, 7};
    auto f = [&] {
      auto enc = encode(p, src, len, 3);
      auto r = decode_step<double>(prev, initial_decoder_state(enc), enc, p);
      return cross_entropy(r.logits, std::span<const TokenId>(gold), Vocabulary::kPad);
    };
    EXPECT_LT(gradient_check(f, p.tensors()), 1e-4) << "seed " << seed;
  }
}

TEST(TeacherForced, ZeroParamsGiveLnV) {
  auto cfg = desk_config();
  auto batch = desk_batch();
  auto r = forward_teacher_forced(batch, ModelParams<double>::zeros(cfg), false, 1);
  EXPECT_NEAR(r.loss.item(), std::log(8.0), 1e-12);
  EXPECT_EQ(r.token_total, batch.mask_count());
  EXPECT_EQ(r.token_total, 5u);

  // Four-word target vocabulary: only EOS can be predicted.
  cfg.tgt_vocab_size = 4;
  std::vector<EncodedPair> pairs{{{5, Vocabulary::kEos}, {}, 0}, {{6, 7, Vocabulary::kEos}, {}, 1}};
  auto small = make_batch(pairs);
  auto r4 = forward_teacher_forced(small, ModelParams<double>::zeros(cfg), false, 1);
  EXPECT_NEAR(r4.loss.item(), std::log(4.0), 1e-12);
  EXPECT_EQ(r4.token_total, 2u);
}

TEST(TeacherForced, MatchesStepwiseDecoding) {
  auto cfg = desk_config(2);
  auto p = random_params(cfg, 21);
  auto batch = random_batch(4, 3, 4, cfg);
  auto tf = forward_teacher_forced(batch, p, false, 0);

  auto enc = encode(p, batch.source, batch.source_lengths, batch.src_len);
  auto state = initial_decoder_state(enc);
  double total = 0;
  std::size_t count = 0, correct = 0;
  for (std::size_t t = 0; t < batch.tgt_len; ++t) {
    std::vector<TokenId> prev, gold;
    for (std::size_t r = 0; r < batch.size; ++r) {
      prev.push_back(batch.tin(r, t));
      gold.push_back(batch.tout(r, t));
    }
    auto step = decode_step<double>(prev, state, enc, p);
    state = step.state;
    auto best = argmax_rows(step.logits);
    std::size_t n = 0;
    for (std::size_t r = 0; r < batch.size; ++r) {
      if (gold[r] == Vocabulary::kPad) continue;
      ++n;
      correct += best[r] == gold[r];
      EXPECT_EQ(tf.predictions[r * batch.tgt_len + t], best[r]);
    }
    if (n > 0) total += cross_entropy(step.logits, std::span<const TokenId>(gold), Vocabulary::kPad).item() * static_cast<double>(n);
    count += n;
  }
  EXPECT_NEAR(tf.loss.item(), total / static_cast<double>(count), 1e-12);
  EXPECT_EQ(tf.token_total, count);
  EXPECT_EQ(tf.token_correct, correct);
}

TEST(TeacherForced, FullModelGradientCheckDeskShapes) {
  auto cfg = desk_config();
  auto batch = desk_batch();
  ASSERT_EQ(batch.size, 2u);
  ASSERT_EQ(batch.src_len, 3u);
  ASSERT_EQ(batch.tgt_len, 3u);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto p = random_params(cfg, seed);
    auto f = [&] { return forward_teacher_forced(batch, p, false, 0).loss; };
    EXPECT_LT(gradient_check(f, p.tensors()), 1e-4) << "seed " << seed;
  }
}

TEST(TeacherForced, EveryParameterGetsFiniteGradient) {
  auto cfg = desk_config(2);
  cfg.dropout = 0.3;
  auto p = ModelParams<float>::initialize(cfg, 5);
  p.set_requires_grad(true);
  auto batch = random_batch(9, 4, 5, cfg);
  Tape<float> tape;
  auto r = forward_teacher_forced(batch, p, true, 77);
  tape.backward(r.loss);
  for (auto& nt : p.named()) {
    ASSERT_TRUE(nt.tensor.has_grad()) << nt.name;
    double mag = 0;
    for (float g : nt.tensor.grad()) {
      EXPECT_TRUE(std::isfinite(g)) << nt.name;
      mag += std::fabs(g);
    }
    EXPECT_GT(mag, 0.0) << nt.name;
  }
}

TEST(TeacherForced, DeterministicWithDropoutOff) {
  auto cfg = desk_config();
  auto p = ModelParams<float>::initialize(cfg, 2);
  auto batch = random_batch(3, 5, 6, cfg);
  auto a = forward_teacher_forced(batch, p, false, 1);
  auto b = forward_teacher_forced(batch, p, false, 999);
  EXPECT_EQ(a.token_correct, b.token_correct);
  EXPECT_EQ(a.loss.item(), b.loss.item());
  EXPECT_EQ(a.predictions, b.predictions);

  cfg.dropout = 0.5;
  p.config = cfg;
  auto d1 = forward_teacher_forced(batch, p, true, 1);
  auto d2 = forward_teacher_forced(batch, p, true, 1);
  auto d3 = forward_teacher_forced(batch, p, true, 2);
  EXPECT_EQ(d1.loss.item(), d2.loss.item());
  EXPECT_NE(d1.loss.item(), d3.loss.item());
}

TEST(CastParams, RoundTripFloatDouble) {
  auto p = ModelParams<float>::initialize(desk_config(), 4);
  auto d = cast_params<double>(p);
  auto back = cast_params<float>(d);
  EXPECT_TRUE(std::ranges::equal(p.combine_wc.data(), back.combine_wc.data()));
}
