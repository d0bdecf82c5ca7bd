#include "t2c/config.hpp"

#include <cmath>
#include <functional>
#include <map>

namespace t2c {

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ContractError("train config: batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ContractError("train config: lr must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ContractError("train config: lr_decay must lie in (0, 1]");
  if (decay_start_epoch < 1) throw ContractError("train config: decay_start_epoch must be >= 1");
  if (!(clip_norm > 0.0)) throw ContractError("train config: clip_norm must be > 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("train config: dropout must lie in [0, 1)");
  if (max_src_len < 1 || max_tgt_len < 1) throw ContractError("train config: length caps must be >= 1");
  if (min_freq < 1) throw ContractError("train config: min_freq must be >= 1");
  if (max_vocab_size != 0 && max_vocab_size < Vocabulary::kSpecials) {
    throw ContractError("train config: max_vocab_size must be 0 or >= 4");
  }
  model_config(Vocabulary::kSpecials, Vocabulary::kSpecials).validate();
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double rate = lr;
  for (std::size_t e = decay_start_epoch; e <= epoch; ++e) rate *= lr_decay;
  return rate;
}

ModelConfig TrainConfig::model_config(std::size_t src_vocab_size, std::size_t tgt_vocab_size) const {
  ModelConfig m;
  m.src_vocab_size = src_vocab_size;
  m.tgt_vocab_size = tgt_vocab_size;
  m.embed_dim = embed_dim;
  m.hidden_dim = hidden_dim;
  m.num_layers = num_layers;
  m.dropout = dropout;
  return m;
}

std::optional<std::size_t> TrainConfig::vocab_cap() const {
  if (max_vocab_size == 0) return std::nullopt;
  return max_vocab_size;
}

namespace {

using Field = std::function<void(const nlohmann::json&, TrainConfig&)>;

template <typename M>
Field field(M TrainConfig::*member) {
  return [member](const nlohmann::json& v, TrainConfig& c) { v.get_to(c.*member); };
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table{
      {"epochs", field(&TrainConfig::epochs)},
      {"batch_size", field(&TrainConfig::batch_size)},
      {"lr", field(&TrainConfig::lr)},
      {"lr_decay", field(&TrainConfig::lr_decay)},
      {"decay_start_epoch", field(&TrainConfig::decay_start_epoch)},
      {"clip_norm", field(&TrainConfig::clip_norm)},
      {"dropout", field(&TrainConfig::dropout)},
      {"n_val", field(&TrainConfig::n_val)},
      {"seed", field(&TrainConfig::seed)},
      {"max_src_len", field(&TrainConfig::max_src_len)},
      {"max_tgt_len", field(&TrainConfig::max_tgt_len)},
      {"embed_dim", field(&TrainConfig::embed_dim)},
      {"hidden_dim", field(&TrainConfig::hidden_dim)},
      {"num_layers", field(&TrainConfig::num_layers)},
      {"pretrain_embeddings", field(&TrainConfig::pretrain_embeddings)},
      {"min_freq", field(&TrainConfig::min_freq)},
      {"max_vocab_size", field(&TrainConfig::max_vocab_size)},
      {"log_wall_time", field(&TrainConfig::log_wall_time)},
  };
  return table;
}

}  // namespace

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"lr_decay", c.lr_decay},
                     {"decay_start_epoch", c.decay_start_epoch},
                     {"clip_norm", c.clip_norm},
                     {"dropout", c.dropout},
                     {"n_val", c.n_val},
                     {"seed", c.seed},
                     {"max_src_len", c.max_src_len},
                     {"max_tgt_len", c.max_tgt_len},
                     {"embed_dim", c.embed_dim},
                     {"hidden_dim", c.hidden_dim},
                     {"num_layers", c.num_layers},
                     {"pretrain_embeddings", c.pretrain_embeddings},
                     {"min_freq", c.min_freq},
                     {"max_vocab_size", c.max_vocab_size},
                     {"log_wall_time", c.log_wall_time}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw FormatError("train config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = fields().find(key);
    if (it == fields().end()) throw FormatError("train config: unknown key '" + key + "'");
    try {
      it->second(value, c);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("train config: bad value for '" + key + "': " + e.what());
    }
  }
}

}  // namespace t2c
