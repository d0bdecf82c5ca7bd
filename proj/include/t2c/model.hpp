#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "t2c/corpus.hpp"
#include "t2c/ops.hpp"

namespace t2c {

struct ModelConfig {
  std::size_t src_vocab_size = 0;
  std::size_t tgt_vocab_size = 0;
  std::size_t embed_dim = 128;
  std::size_t hidden_dim = 256;
  std::size_t num_layers = 1;
  double dropout = 0.3;
  std::string attention_kind = "general";

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// One LSTM layer. Gates are packed along the 4*d_h axis as (i, f, g, o).
template <typename T>
struct LstmWeights {
  Tensor<T> wx;  ///< [d_in x 4d_h]
  Tensor<T> wh;  ///< [d_h x 4d_h]
  Tensor<T> b;   ///< [4d_h]
};

template <typename T>
struct LstmState {
  Tensor<T> h;  ///< [B x d_h]
  Tensor<T> c;  ///< [B x d_h]
};

/// Per-layer states, bottom layer first.
template <typename T>
using RnnState = std::vector<LstmState<T>>;

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  Tensor<T> src_embed;   ///< [V_s x d_e]
  Tensor<T> tgt_embed;   ///< [V_t x d_e]
  std::vector<LstmWeights<T>> enc;
  std::vector<LstmWeights<T>> dec;
  Tensor<T> attn_wa;     ///< [d_h x d_h]
  Tensor<T> combine_wc;  ///< [2d_h x d_h], rows ordered [context; h]
  Tensor<T> combine_bc;  ///< [d_h]
  Tensor<T> out_wo;      ///< [d_h x V_t]
  Tensor<T> out_bo;      ///< [V_t]

  /// Canonical names: src_embed, tgt_embed, enc.l{i}.Wx|Wh|b, dec.l{i}.Wx|Wh|b,
  /// attn.Wa, combine.Wc|bc, out.Wo|bo. Handles share storage with *this.
  std::vector<NamedTensor<T>> named() const;
  std::vector<Tensor<T>> tensors() const;
  std::size_t parameter_count() const;

  void set_requires_grad(bool on) const;
  void zero_grads() const;

  /// Zero-valued parameters of the configured shapes.
  static ModelParams zeros(const ModelConfig& config);
  /// uniform(-0.1, 0.1), forget-gate bias 1.0, PAD embedding rows zero.
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);
  ModelParams clone() const;
};

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& params);

/// Dropout applied to embedding outputs and between stacked LSTM layers.
/// A null rng or p == 0 disables it.
template <typename T>
struct DropoutContext {
  T p = T{0};
  Rng* rng = nullptr;
  bool active() const { return rng != nullptr && p > T{0}; }
};

/// z = x.Wx + h.Wh + b; c' = s(f)*c + s(i)*tanh(g); h' = s(o)*tanh(c').
template <typename T>
LstmState<T> lstm_cell_step(const Tensor<T>& x, const LstmState<T>& state, const LstmWeights<T>& w);

template <typename T>
struct EncoderOutput {
  Tensor<T> memory;                 ///< [B x S x d_h], zero at PAD positions
  RnnState<T> final_state;          ///< taken at each row's true length
  std::vector<std::uint8_t> src_mask;  ///< [B x S], 1 on real tokens
  std::size_t batch = 0;
  std::size_t src_len = 0;
};

/// Embeds `source` ([B x S] row-major ids) and runs the stacked
/// unidirectional encoder. PAD steps do not advance a row's state.
template <typename T>
EncoderOutput<T> encode(const ModelParams<T>& params, std::span<const TokenId> source,
                        std::span<const std::size_t> lengths, std::size_t src_len,
                        DropoutContext<T> dropout = {});

template <typename T>
struct AttentionResult {
  Tensor<T> context;  ///< [B x d_h]
  Tensor<T> weights;  ///< [B x S]
};

/// scores_j = dec_h . Wa . enc_j, softmax over unmasked positions.
template <typename T>
AttentionResult<T> attend(const Tensor<T>& dec_h, const Tensor<T>& memory,
                          std::span<const std::uint8_t> src_mask, const Tensor<T>& wa);

template <typename T>
struct DecodeStepResult {
  Tensor<T> logits;  ///< [B x V_t]
  RnnState<T> state;
  Tensor<T> attention;  ///< [B x S]
};

/// Decoder state starts as a copy of the encoder's final state.
template <typename T>
RnnState<T> initial_decoder_state(const EncoderOutput<T>& enc);

template <typename T>
DecodeStepResult<T> decode_step(std::span<const TokenId> prev_tokens, const RnnState<T>& state,
                                const EncoderOutput<T>& enc, const ModelParams<T>& params,
                                DropoutContext<T> dropout = {});

template <typename T>
struct TeacherForcedResult {
  Tensor<T> loss;  ///< mean cross-entropy over mask-1 target positions
  std::size_t token_correct = 0;
  std::size_t token_total = 0;
  std::vector<TokenId> predictions;  ///< [B x T] argmax per position, row-major
};

/// Encodes the batch and decodes every target position feeding the gold
/// previous token.
template <typename T>
TeacherForcedResult<T> forward_teacher_forced(const Batch& batch, const ModelParams<T>& params,
                                              bool dropout_on, std::uint64_t seed);

}  // namespace t2c
