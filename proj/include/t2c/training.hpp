#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "t2c/checkpoint.hpp"
#include "t2c/config.hpp"
#include "t2c/corpus.hpp"
#include "t2c/model.hpp"

namespace t2c {

/// Scales every gradient by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the applied factor (1.0 when nothing was clipped).
double clip_gradients(const ModelParams<float>& params, double max_norm);

/// p -= lr * grad for every parameter, then zeroes the gradients.
void sgd_step(const ModelParams<float>& params, double lr);

struct EvalResult {
  double loss = 0.0;  ///< token-mean cross-entropy
  double perplexity = 0.0;
  double token_accuracy = 0.0;
  std::size_t token_correct = 0;
  std::size_t token_total = 0;
};

/// Teacher-forced evaluation with dropout off.
EvalResult evaluate(const ModelParams<float>& params, std::span<const Batch> batches);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_ppl = 0.0;
  double val_token_acc = 0.0;
  double seconds = 0.0;
};

/// One JSON object with keys in log order, no trailing newline.
std::string metrics_line(const EpochMetrics& m);
EpochMetrics parse_metrics_line(std::string_view line);

/// Everything train() derives from the corpus before the first epoch.
struct PreparedData {
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
  CorpusSplit pairs;
  std::vector<EncodedPair> train;
  std::vector<EncodedPair> validation;
  LoadStats load_stats;
};

/// Loads the corpus, builds both vocabularies on all pairs and holds out
/// `n_val` pairs for validation.
PreparedData prepare_data(const TrainConfig& config, const std::filesystem::path& src_path,
                          const std::filesystem::path& tgt_path);

struct FitHooks {
  /// Called after each epoch's evaluation with the current parameters.
  std::function<void(const EpochMetrics&, const ModelParams<float>&)> on_epoch;
};

struct FitResult {
  ModelParams<float> params;
  std::vector<EpochMetrics> metrics;
  std::size_t best_epoch = 0;
  ModelParams<float> best_params;
};

/// The epoch loop over already encoded pairs. `initial` overrides the seeded
/// initialization (used for pretrained embeddings).
FitResult fit(const TrainConfig& config, const ModelConfig& model_config, std::span<const EncodedPair> train,
              std::span<const EncodedPair> validation, const FitHooks& hooks = {},
              std::optional<ModelParams<float>> initial = std::nullopt);

/// Pretrains both embedding tables with skip-gram on the training pairs and
/// copies them into freshly initialized parameters.
ModelParams<float> pretrained_init(const TrainConfig& config, const ModelConfig& model_config,
                                   std::span<const EncodedPair> train);

struct TrainOutcome {
  Checkpoint final_checkpoint;
  std::vector<EpochMetrics> metrics;
  std::size_t best_epoch = 0;
  std::filesystem::path metrics_path;
  std::filesystem::path best_checkpoint_path;
};

/// Full pipeline. Writes src.vocab, tgt.vocab, metrics.jsonl, epoch-N.ckpt
/// for every epoch and best.ckpt into `out_dir`.
TrainOutcome train(const TrainConfig& config, const std::filesystem::path& src_path,
                   const std::filesystem::path& tgt_path, const std::filesystem::path& out_dir,
                   const std::function<void(const EpochMetrics&)>& on_epoch = {});

}  // namespace t2c
