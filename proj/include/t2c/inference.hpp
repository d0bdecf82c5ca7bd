#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "t2c/model.hpp"
#include "t2c/textpipe.hpp"

namespace t2c {

struct DecodeOptions {
  std::size_t max_len = 60;  ///< cap on emitted tokens, EOS not counted
  std::size_t beam = 5;
  double alpha = 0.6;  ///< length normalization exponent
};

/// Next-token log-probabilities for a set of live prefixes. Decoders talk to
/// the model only through this interface.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  /// Log-probabilities after the empty prefix (the decoder has seen only SOS).
  virtual std::vector<double> start() = 0;
  /// New live set: row i extends row `parents[i]` of the previous call with
  /// `tokens[i]`. Returns one log-probability row per new row.
  virtual std::vector<std::vector<double>> extend(std::span<const std::size_t> parents,
                                                  std::span<const TokenId> tokens) = 0;
};

/// Scores prefixes with a plain function; convenient for hand-built models.
class PrefixScorer : public StepScorer {
 public:
  using Fn = std::function<std::vector<double>(std::span<const TokenId> prefix)>;
  PrefixScorer(std::size_t vocab_size, Fn fn);
  std::size_t vocab_size() const override { return vocab_size_; }
  std::vector<double> start() override;
  std::vector<std::vector<double>> extend(std::span<const std::size_t> parents,
                                          std::span<const TokenId> tokens) override;

 private:
  std::size_t vocab_size_;
  Fn fn_;
  std::vector<std::vector<TokenId>> live_;
};

/// Runs the encoder once for one source and decodes incrementally.
class ModelScorer : public StepScorer {
 public:
  ModelScorer(const ModelParams<float>& params, std::span<const TokenId> source_ids);
  std::size_t vocab_size() const override { return params_.config.tgt_vocab_size; }
  std::vector<double> start() override;
  std::vector<std::vector<double>> extend(std::span<const std::size_t> parents,
                                          std::span<const TokenId> tokens) override;

 private:
  std::vector<std::vector<double>> step(std::span<const TokenId> prev);
  const EncoderOutput<float>& replicated(std::size_t rows);

  const ModelParams<float>& params_;
  EncoderOutput<float> enc_;
  std::vector<EncoderOutput<float>> cache_;  ///< index = rows - 1
  RnnState<float> state_;
};

/// Row-wise log-softmax in double precision.
std::vector<std::vector<double>> log_softmax_rows(const Tensor<float>& logits);

struct Hypothesis {
  std::vector<TokenId> tokens;  ///< no SOS, no EOS
  double log_prob = 0.0;
  bool finished = false;  ///< EOS was emitted
};

/// Ranking score logP / len^alpha, where len counts tokens plus the EOS.
double normalized_score(const Hypothesis& h, double alpha);

/// Argmax decoding; ties go to the lowest id. PAD and SOS are never chosen.
Hypothesis greedy_search(StepScorer& scorer, std::size_t max_len);

/// Beam search. Returns every retained hypothesis, best first.
std::vector<Hypothesis> beam_search(StepScorer& scorer, const DecodeOptions& options);

struct Translator {
  const ModelParams<float>& params;
  const Vocabulary& src_vocab;
  const Vocabulary& tgt_vocab;
};

/// Source text to id sequence with EOS appended. Throws InputError when the
/// line has no tokens.
std::vector<TokenId> encode_source(std::string_view line, const Vocabulary& src_vocab);

std::string greedy_decode(std::string_view source, const Translator& model, std::size_t max_len = 60);
std::string beam_decode(std::string_view source, const Translator& model, const DecodeOptions& options);

/// Beam width 1 takes the greedy path.
std::string translate_line(std::string_view source, const Translator& model, const DecodeOptions& options);

/// Line i of the output is the translation of line i of the input; blank
/// lines stay blank. Failures name the offending line.
void translate_file(const std::filesystem::path& input, const std::filesystem::path& output,
                    const Translator& model, const DecodeOptions& options);

}  // namespace t2c
