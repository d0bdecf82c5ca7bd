#include "t2c/model.hpp"

#include <algorithm>

namespace t2c {

void ModelConfig::validate() const {
  if (src_vocab_size < 1 || tgt_vocab_size < 1 || embed_dim < 1 || hidden_dim < 1 || num_layers < 1) {
    throw ContractError("model config: every dimension must be >= 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ContractError("model config: dropout must lie in [0, 1)");
  }
  if (attention_kind != "general") {
    throw ContractError("model config: unsupported attention kind '" + attention_kind + "'");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"src_vocab_size", c.src_vocab_size}, {"tgt_vocab_size", c.tgt_vocab_size},
                     {"embed_dim", c.embed_dim},           {"hidden_dim", c.hidden_dim},
                     {"num_layers", c.num_layers},         {"dropout", c.dropout},
                     {"attention_kind", c.attention_kind}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("src_vocab_size").get_to(c.src_vocab_size);
  j.at("tgt_vocab_size").get_to(c.tgt_vocab_size);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("num_layers").get_to(c.num_layers);
  j.at("dropout").get_to(c.dropout);
  j.at("attention_kind").get_to(c.attention_kind);
}

template <typename T>
std::vector<NamedTensor<T>> ModelParams<T>::named() const {
  std::vector<NamedTensor<T>> out;
  out.push_back({"src_embed", src_embed});
  out.push_back({"tgt_embed", tgt_embed});
  auto add_stack = [&out](const std::string& prefix, const std::vector<LstmWeights<T>>& layers) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string base = prefix + ".l" + std::to_string(i) + ".";
      out.push_back({base + "Wx", layers[i].wx});
      out.push_back({base + "Wh", layers[i].wh});
      out.push_back({base + "b", layers[i].b});
    }
  };
  add_stack("enc", enc);
  add_stack("dec", dec);
  out.push_back({"attn.Wa", attn_wa});
  out.push_back({"combine.Wc", combine_wc});
  out.push_back({"combine.bc", combine_bc});
  out.push_back({"out.Wo", out_wo});
  out.push_back({"out.bo", out_bo});
  return out;
}

template <typename T>
std::vector<Tensor<T>> ModelParams<T>::tensors() const {
  std::vector<Tensor<T>> out;
  for (auto& nt : named()) out.push_back(nt.tensor);
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (auto& t : tensors()) n += t.numel();
  return n;
}

template <typename T>
void ModelParams<T>::set_requires_grad(bool on) const {
  for (auto t : tensors()) t.set_requires_grad(on);
}

template <typename T>
void ModelParams<T>::zero_grads() const {
  for (auto t : tensors()) t.zero_grad();
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& config) {
  config.validate();
  const std::size_t de = config.embed_dim;
  const std::size_t dh = config.hidden_dim;
  ModelParams p;
  p.config = config;
  p.src_embed = Tensor<T>::zeros({config.src_vocab_size, de});
  p.tgt_embed = Tensor<T>::zeros({config.tgt_vocab_size, de});
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::size_t din = l == 0 ? de : dh;
    p.enc.push_back({Tensor<T>::zeros({din, 4 * dh}), Tensor<T>::zeros({dh, 4 * dh}),
                     Tensor<T>::zeros({4 * dh})});
    p.dec.push_back({Tensor<T>::zeros({din, 4 * dh}), Tensor<T>::zeros({dh, 4 * dh}),
                     Tensor<T>::zeros({4 * dh})});
  }
  p.attn_wa = Tensor<T>::zeros({dh, dh});
  p.combine_wc = Tensor<T>::zeros({2 * dh, dh});
  p.combine_bc = Tensor<T>::zeros({dh});
  p.out_wo = Tensor<T>::zeros({dh, config.tgt_vocab_size});
  p.out_bo = Tensor<T>::zeros({config.tgt_vocab_size});
  return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::initialize(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zeros(config);
  Rng rng(seed);
  for (auto& nt : p.named()) {
    for (T& v : nt.tensor.data()) v = static_cast<T>(rng.uniform(-0.1, 0.1));
  }
  const std::size_t dh = config.hidden_dim;
  for (auto* stack : {&p.enc, &p.dec}) {
    for (auto& layer : *stack) {
      auto b = layer.b.data();
      std::fill(b.begin() + static_cast<std::ptrdiff_t>(dh), b.begin() + static_cast<std::ptrdiff_t>(2 * dh), T{1});
    }
  }
  for (auto* table : {&p.src_embed, &p.tgt_embed}) {
    auto row = table->data().subspan(0, config.embed_dim);
    std::fill(row.begin(), row.end(), T{0});
  }
  return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::clone() const {
  ModelParams out = zeros(config);
  auto src = named();
  auto dst = out.named();
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), dst[i].tensor.data().begin());
  }
  return out;
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& params) {
  ModelParams<To> out = ModelParams<To>::zeros(params.config);
  auto src = params.named();
  auto dst = out.named();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto s = src[i].tensor.data();
    auto d = dst[i].tensor.data();
    for (std::size_t k = 0; k < s.size(); ++k) d[k] = static_cast<To>(s[k]);
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, DropoutContext<T> dropout) {
  return dropout.active() ? t2c::dropout(x, dropout.p, *dropout.rng) : x;
}

// Gate nonlinearities from the pre-activation z = [i f g o].
template <typename T>
LstmState<T> lstm_gates(const Tensor<T>& z, const Tensor<T>& c) {
  const std::size_t dh = z.cols() / 4;
  if (c.cols() != dh || c.rows() != z.rows()) {
    throw DimensionError("lstm: cell state " + shape_str(c.shape()) + " does not match gates " +
                         shape_str(z.shape()));
  }
  Tensor<T> i = sigmoid(slice_cols(z, 0, dh));
  Tensor<T> f = sigmoid(slice_cols(z, dh, dh));
  Tensor<T> g = t2c::tanh(slice_cols(z, 2 * dh, dh));
  Tensor<T> o = sigmoid(slice_cols(z, 3 * dh, dh));
  Tensor<T> c_next = add(mul(f, c), mul(i, g));
  Tensor<T> h_next = mul(o, t2c::tanh(c_next));
  return {h_next, c_next};
}

// keep rows where mask == 1 from `next`, the rest from `prev`.
template <typename T>
Tensor<T> blend_rows(const Tensor<T>& next, const Tensor<T>& prev, std::span<const T> mask,
                     std::span<const T> inverse) {
  return add(mask_rows(next, mask), mask_rows(prev, inverse));
}

template <typename T>
RnnState<T> zero_state(std::size_t layers, std::size_t batch, std::size_t dh) {
  RnnState<T> s;
  for (std::size_t l = 0; l < layers; ++l) {
    s.push_back({Tensor<T>::zeros({batch, dh}), Tensor<T>::zeros({batch, dh})});
  }
  return s;
}

// Runs one decoder step from an already projected layer-0 input
// (x.Wx + b) and returns the attentional combined vector.
template <typename T>
struct DecoderHidden {
  Tensor<T> combined;
  RnnState<T> state;
  Tensor<T> attention;
};

template <typename T>
DecoderHidden<T> decoder_hidden(const Tensor<T>& layer0_proj, const RnnState<T>& state,
                                const EncoderOutput<T>& enc, const ModelParams<T>& params,
                                DropoutContext<T> dropout) {
  RnnState<T> next;
  next.reserve(state.size());
  Tensor<T> x;
  for (std::size_t l = 0; l < params.dec.size(); ++l) {
    const auto& w = params.dec[l];
    Tensor<T> z = l == 0 ? add(layer0_proj, matmul(state[l].h, w.wh))
                         : add(add(matmul(x, w.wx), matmul(state[l].h, w.wh)), w.b);
    LstmState<T> s = lstm_gates(z, state[l].c);
    next.push_back(s);
    x = l + 1 < params.dec.size() ? maybe_dropout(s.h, dropout) : s.h;
  }
  const Tensor<T>& top = next.back().h;
  AttentionResult<T> att = attend(top, enc.memory, enc.src_mask, params.attn_wa);
  Tensor<T> combined =
      t2c::tanh(add(matmul(concat_cols<T>({att.context, top}), params.combine_wc), params.combine_bc));
  return {combined, std::move(next), att.weights};
}

}  // namespace

template <typename T>
LstmState<T> lstm_cell_step(const Tensor<T>& x, const LstmState<T>& state, const LstmWeights<T>& w) {
  Tensor<T> z = add(add(matmul(x, w.wx), matmul(state.h, w.wh)), w.b);
  return lstm_gates(z, state.c);
}

template <typename T>
EncoderOutput<T> encode(const ModelParams<T>& params, std::span<const TokenId> source,
                        std::span<const std::size_t> lengths, std::size_t src_len,
                        DropoutContext<T> dropout) {
  const std::size_t batch = lengths.size();
  const std::size_t dh = params.config.hidden_dim;
  if (batch == 0 || src_len == 0 || source.size() != batch * src_len) {
    throw DimensionError("encode: " + std::to_string(source.size()) + " ids for " +
                         std::to_string(batch) + " rows of width " + std::to_string(src_len));
  }
  EncoderOutput<T> out;
  out.batch = batch;
  out.src_len = src_len;
  out.src_mask.assign(batch * src_len, 0);
  for (std::size_t r = 0; r < batch; ++r) {
    if (lengths[r] > src_len) {
      throw ContractError("encode: row " + std::to_string(r) + " length " + std::to_string(lengths[r]) +
                          " exceeds matrix width " + std::to_string(src_len));
    }
    if (lengths[r] == 0) {
      throw ContractError("encode: row " + std::to_string(r) + " is empty");
    }
    for (std::size_t t = 0; t < lengths[r]; ++t) out.src_mask[r * src_len + t] = 1;
  }

  // Time-major ids so that step t occupies rows [t*B, (t+1)*B).
  std::vector<TokenId> ids_tm(batch * src_len);
  for (std::size_t t = 0; t < src_len; ++t)
    for (std::size_t r = 0; r < batch; ++r) ids_tm[t * batch + r] = source[r * src_len + t];

  std::vector<std::vector<T>> step_mask(src_len, std::vector<T>(batch));
  std::vector<std::vector<T>> step_keep(src_len, std::vector<T>(batch));
  std::vector<bool> step_full(src_len, true);
  for (std::size_t t = 0; t < src_len; ++t) {
    for (std::size_t r = 0; r < batch; ++r) {
      const bool on = t < lengths[r];
      step_mask[t][r] = on ? T{1} : T{0};
      step_keep[t][r] = on ? T{0} : T{1};
      step_full[t] = step_full[t] && on;
    }
  }

  Tensor<T> layer_input = maybe_dropout(embedding(params.src_embed, ids_tm), dropout);
  RnnState<T> state = zero_state<T>(params.enc.size(), batch, dh);
  std::vector<Tensor<T>> outputs;
  for (std::size_t l = 0; l < params.enc.size(); ++l) {
    const auto& w = params.enc[l];
    Tensor<T> proj = add(matmul(layer_input, w.wx), w.b);
    outputs.clear();
    LstmState<T> s = state[l];
    for (std::size_t t = 0; t < src_len; ++t) {
      Tensor<T> z = add(slice_rows(proj, t * batch, batch), matmul(s.h, w.wh));
      LstmState<T> n = lstm_gates(z, s.c);
      if (step_full[t]) {
        s = n;
        outputs.push_back(n.h);
      } else {
        s = {blend_rows<T>(n.h, s.h, step_mask[t], step_keep[t]),
             blend_rows<T>(n.c, s.c, step_mask[t], step_keep[t])};
        outputs.push_back(mask_rows<T>(n.h, step_mask[t]));
      }
    }
    state[l] = s;
    if (l + 1 < params.enc.size()) {
      layer_input = maybe_dropout(concat_rows(outputs), dropout);
    }
  }
  out.memory = stack_steps(outputs);
  out.final_state = std::move(state);
  return out;
}

template <typename T>
AttentionResult<T> attend(const Tensor<T>& dec_h, const Tensor<T>& memory,
                          std::span<const std::uint8_t> src_mask, const Tensor<T>& wa) {
  Tensor<T> query = matmul(dec_h, wa);
  Tensor<T> scores = batched_dot(memory, query);
  Tensor<T> weights = masked_softmax_rows(scores, src_mask);
  return {batched_weighted_sum(weights, memory), weights};
}

template <typename T>
RnnState<T> initial_decoder_state(const EncoderOutput<T>& enc) {
  return enc.final_state;
}

template <typename T>
DecodeStepResult<T> decode_step(std::span<const TokenId> prev_tokens, const RnnState<T>& state,
                                const EncoderOutput<T>& enc, const ModelParams<T>& params,
                                DropoutContext<T> dropout) {
  if (prev_tokens.size() != enc.batch || state.size() != params.dec.size()) {
    throw DimensionError("decode_step: " + std::to_string(prev_tokens.size()) + " tokens and " +
                         std::to_string(state.size()) + " layer states for batch " +
                         std::to_string(enc.batch));
  }
  const auto& w0 = params.dec.front();
  Tensor<T> x = maybe_dropout(embedding(params.tgt_embed, prev_tokens), dropout);
  Tensor<T> proj = add(matmul(x, w0.wx), w0.b);
  DecoderHidden<T> hidden = decoder_hidden(proj, state, enc, params, dropout);
  Tensor<T> logits = add(matmul(hidden.combined, params.out_wo), params.out_bo);
  return {logits, std::move(hidden.state), hidden.attention};
}

template <typename T>
TeacherForcedResult<T> forward_teacher_forced(const Batch& batch, const ModelParams<T>& params,
                                              bool dropout_on, std::uint64_t seed) {
  Rng rng(seed);
  DropoutContext<T> dropout;
  if (dropout_on) {
    dropout.p = static_cast<T>(params.config.dropout);
    dropout.rng = &rng;
  }
  const std::size_t b = batch.size;
  const std::size_t steps = batch.tgt_len;
  EncoderOutput<T> enc = encode(params, batch.source, batch.source_lengths, batch.src_len, dropout);

  std::vector<TokenId> tin_tm(b * steps);
  std::vector<TokenId> tout_tm(b * steps);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t r = 0; r < b; ++r) {
      tin_tm[t * b + r] = batch.tin(r, t);
      tout_tm[t * b + r] = batch.tout(r, t);
    }
  }
  const auto& w0 = params.dec.front();
  Tensor<T> emb = maybe_dropout(embedding(params.tgt_embed, tin_tm), dropout);
  Tensor<T> proj = add(matmul(emb, w0.wx), w0.b);

  RnnState<T> state = initial_decoder_state(enc);
  std::vector<Tensor<T>> combined;
  combined.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    DecoderHidden<T> hidden = decoder_hidden(slice_rows(proj, t * b, b), state, enc, params, dropout);
    combined.push_back(hidden.combined);
    state = std::move(hidden.state);
  }
  Tensor<T> logits = add(matmul(concat_rows(combined), params.out_wo), params.out_bo);

  TeacherForcedResult<T> result;
  result.loss = cross_entropy(logits, tout_tm, Vocabulary::kPad);
  const std::vector<TokenId> best = argmax_rows(logits);
  result.predictions.assign(b * steps, Vocabulary::kPad);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t r = 0; r < b; ++r) {
      result.predictions[r * steps + t] = best[t * b + r];
      if (batch.target_mask[r * steps + t]) {
        ++result.token_total;
        result.token_correct += best[t * b + r] == tout_tm[t * b + r] ? 1 : 0;
      }
    }
  }
  return result;
}

#define T2C_INSTANTIATE_MODEL(T)                                                                    \
  template struct ModelParams<T>;                                                                   \
  template LstmState<T> lstm_cell_step(const Tensor<T>&, const LstmState<T>&, const LstmWeights<T>&); \
  template EncoderOutput<T> encode(const ModelParams<T>&, std::span<const TokenId>,                 \
                                   std::span<const std::size_t>, std::size_t, DropoutContext<T>);   \
  template AttentionResult<T> attend(const Tensor<T>&, const Tensor<T>&,                            \
                                     std::span<const std::uint8_t>, const Tensor<T>&);              \
  template RnnState<T> initial_decoder_state(const EncoderOutput<T>&);                              \
  template DecodeStepResult<T> decode_step(std::span<const TokenId>, const RnnState<T>&,            \
                                           const EncoderOutput<T>&, const ModelParams<T>&,          \
                                           DropoutContext<T>);                                      \
  template TeacherForcedResult<T> forward_teacher_forced(const Batch&, const ModelParams<T>&, bool, \
                                                         std::uint64_t);

T2C_INSTANTIATE_MODEL(float)
T2C_INSTANTIATE_MODEL(double)

template ModelParams<double> cast_params(const ModelParams<float>&);
template ModelParams<float> cast_params(const ModelParams<double>&);

}  // namespace t2c
