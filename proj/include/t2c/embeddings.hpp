#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "t2c/textpipe.hpp"

namespace t2c {

struct EmbeddingMatrix {
  Side side = Side::source;
  Tensor<float> vectors;  ///< [V x d]

  std::size_t vocab_size() const { return vectors.rows(); }
  std::size_t dim() const { return vectors.cols(); }
};

using SkipGramPair = std::pair<TokenId, TokenId>;  ///< (center, context)

/// All (ids[i], ids[j]) with 0 < |i - j| <= window, scanning centers left to
/// right and contexts left to right. PAD, SOS and EOS are removed first.
std::vector<SkipGramPair> generate_skipgram_pairs(std::span<const TokenId> ids, std::size_t window);

struct SkipGramOptions {
  std::size_t dim = 128;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double lr = 0.025;
  double min_lr = 0.0001;  ///< lr decays linearly to this over the whole run
  std::uint64_t seed = 13;
};

struct SkipGramResult {
  EmbeddingMatrix embeddings;
  std::vector<double> epoch_losses;  ///< mean per-pair loss, measured before each update
};

/// Skip-gram with negative sampling, trained by SGD. Negatives come from the
/// corpus unigram distribution raised to 0.75. Returns the center vectors.
SkipGramResult train_skipgram(std::span<const std::vector<TokenId>> corpus, std::size_t vocab_size,
                              const SkipGramOptions& options, Side side = Side::source);

struct Neighbor {
  TokenId id;
  double similarity;
};

/// k nearest ids by cosine similarity, excluding the query and the special ids.
std::vector<Neighbor> nearest_neighbors(const EmbeddingMatrix& m, TokenId query, std::size_t k);

double cosine_similarity(const EmbeddingMatrix& m, TokenId a, TokenId b);

}  // namespace t2c
