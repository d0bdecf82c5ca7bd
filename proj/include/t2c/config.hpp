#pragma once

#include <cstdint>
#include <optional>

#include "json.hpp"

#include "t2c/model.hpp"

namespace t2c {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double lr = 1.0;
  double lr_decay = 0.5;
  std::size_t decay_start_epoch = 8;  ///< 1-based; lr *= lr_decay from this epoch on
  double clip_norm = 5.0;
  double dropout = 0.3;
  std::size_t n_val = 500;
  std::uint64_t seed = 13;
  std::size_t max_src_len = 60;
  std::size_t max_tgt_len = 60;
  std::size_t embed_dim = 128;
  std::size_t hidden_dim = 256;
  std::size_t num_layers = 1;
  bool pretrain_embeddings = false;
  std::uint64_t min_freq = 1;
  std::size_t max_vocab_size = 0;  ///< 0 keeps every token
  /// When false the metrics log records 0 seconds, making logs byte-comparable.
  bool log_wall_time = true;

  void validate() const;
  /// Learning rate used during `epoch` (1-based).
  double lr_at(std::size_t epoch) const;
  ModelConfig model_config(std::size_t src_vocab_size, std::size_t tgt_vocab_size) const;
  std::optional<std::size_t> vocab_cap() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are a FormatError.
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace t2c
